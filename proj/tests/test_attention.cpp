#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "ctan/attention.hpp"
#include "ctan/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace cta;

namespace {

template <class S>
ChannelAttentionParamsT<S> channel_params(std::int64_t c, std::int64_t r, std::uint64_t seed) {
    Rng rng(seed);
    return ChannelAttentionParamsT<S>::make(c, r, rng);
}

template <class S>
TemporalAttentionParamsT<S> temporal_params(std::int64_t t, std::int64_t r, std::uint64_t seed) {
    Rng rng(seed);
    return TemporalAttentionParamsT<S>::make(t, r, rng);
}

}  // namespace

TEST_CASE("channel attention: forced zero gate returns the input bitwise") {
    Tape tape;
    Rng rng(101);
    auto x = Tensor::random_uniform({2, 4, 8, 3, 3}, -2.0, 2.0, rng);
    auto p = channel_params<float>(8, 4, 7);
    auto zero_gate = Tensor::zeros({2, 1, 8, 1, 1});
    auto out = channel_attention(tape, x, p, &zero_gate);
    CHECK(bitwise_equal(out.output, x));
}

TEST_CASE("channel attention: forced unit gate doubles the input exactly") {
    Tape tape;
    Rng rng(103);
    auto x = Tensor::random_uniform({2, 4, 8, 3, 3}, -2.0, 2.0, rng);
    auto p = channel_params<float>(8, 4, 7);
    auto ones = Tensor::filled({2, 1, 8, 1, 1}, 1.0f);
    auto out = channel_attention(tape, x, p, &ones);
    const auto ov = out.output.values();
    const auto xv = x.values();
    for (std::size_t i = 0; i < ov.size(); ++i) CHECK(ov[i] == 2.0f * xv[i]);
}

TEST_CASE("channel attention matches the straight-line equation oracle") {
    Rng rng(107);
    for (int trial = 0; trial < 10; ++trial) {
        TapeT<double> tape;
        auto x = TensorT<double>::random_uniform({2, 4, 8, 3, 3}, -1.0, 1.0, rng);
        auto p = channel_params<double>(8, 4, 200 + trial);
        auto got = channel_attention(tape, x, p);
        const auto want = oracle::channel_attention_brute(x, p.w1, p.b1, p.w2, p.b2);
        CHECK(got.output.shape() == x.shape());
        CHECK(oracle::max_abs_diff(got.output, want) < 1e-6);
    }
}

TEST_CASE("temporal attention matches the straight-line equation oracle") {
    Rng rng(109);
    for (int trial = 0; trial < 10; ++trial) {
        TapeT<double> tape;
        auto x = TensorT<double>::random_uniform({2, 8, 4, 3, 3}, -1.0, 1.0, rng);
        auto p = temporal_params<double>(8, 2, 300 + trial);
        auto got = temporal_attention(tape, x, p);
        const auto want = oracle::temporal_attention_brute(x, p.w1, p.b1, p.w2, p.b2);
        CHECK(got.output.shape() == x.shape());
        CHECK(oracle::max_abs_diff(got.output, want) < 1e-6);
    }
}

TEST_CASE("temporal attention: constant-over-time input gives a uniform gate") {
    Tape tape;
    Rng rng(113);
    auto frame = Tensor::random_uniform({1, 1, 4, 3, 3}, -1.0, 1.0, rng);
    std::vector<float> tiled;
    for (int t = 0; t < 8; ++t) {
        tiled.insert(tiled.end(), frame.values().begin(), frame.values().end());
    }
    auto x = Tensor::from_values({1, 8, 4, 3, 3}, std::move(tiled));
    auto p = temporal_params<float>(8, 2, 11);
    auto got = temporal_attention(tape, x, p);
    const auto gv = got.gate.values();
    for (std::size_t i = 1; i < gv.size(); ++i) CHECK(gv[i] == doctest::Approx(gv[0]));
}

TEST_CASE("temporal attention tolerates frame counts not divisible by r") {
    Tape tape;
    Rng rng(127);
    auto x = Tensor::random_uniform({1, 6, 4, 2, 2}, -1.0, 1.0, rng);
    auto p = temporal_params<float>(6, 4, 13);  // reduced extent max(1, 6/4) = 1
    CHECK(p.w1.extent(0) == 1);
    auto got = temporal_attention(tape, x, p);
    CHECK(got.output.shape() == x.shape());
}

TEST_CASE("parameter validation") {
    Rng rng(1);
    CHECK_THROWS_AS(ChannelAttentionParamsT<float>::make(6, 4, rng), std::invalid_argument);

    Tape tape;
    auto x = Tensor::zeros({1, 4, 8, 2, 2});
    auto wrong_c = channel_params<float>(4, 2, 3);
    CHECK_THROWS_AS(channel_attention(tape, x, wrong_c), std::invalid_argument);
    auto wrong_t = temporal_params<float>(6, 2, 3);
    CHECK_THROWS_AS(temporal_attention(tape, x, wrong_t), std::invalid_argument);

    auto p = channel_params<float>(8, 4, 3);
    auto bad_gate = Tensor::zeros({1, 1, 4, 1, 1});
    CHECK_THROWS_AS(channel_attention(tape, x, p, &bad_gate), std::invalid_argument);
}

TEST_CASE("gates lie strictly inside (0, 1)") {
    Tape tape;
    Rng rng(131);
    auto x = Tensor::random_uniform({2, 8, 8, 3, 3}, -2.0, 2.0, rng);
    auto cp = channel_params<float>(8, 4, 17);
    auto tp = temporal_params<float>(8, 2, 19);
    auto c = channel_attention(tape, x, cp);
    auto t = temporal_attention(tape, x, tp);
    for (const auto v : c.gate.values()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    for (const auto v : t.gate.values()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("channel gate is invariant under permutations along T, H, W") {
    Rng rng(137);
    auto x = Tensor::random_uniform({1, 4, 6, 3, 3}, -1.0, 1.0, rng);
    auto p = channel_params<float>(6, 2, 23);

    // Reverse the temporal axis and swap two spatial rows.
    std::vector<float> permuted(x.numel());
    const auto xv = x.values();
    const std::int64_t t_n = 4, c_n = 6, h_n = 3, w_n = 3;
    for (std::int64_t t = 0; t < t_n; ++t)
        for (std::int64_t c = 0; c < c_n; ++c)
            for (std::int64_t h = 0; h < h_n; ++h)
                for (std::int64_t w = 0; w < w_n; ++w) {
                    const std::int64_t src = ((t * c_n + c) * h_n + h) * w_n + w;
                    const std::int64_t ph = h == 0 ? 1 : (h == 1 ? 0 : h);
                    const std::int64_t dst = (((t_n - 1 - t) * c_n + c) * h_n + ph) * w_n + w;
                    permuted[dst] = xv[src];
                }
    auto xp = Tensor::from_values(x.shape(), std::move(permuted));

    Tape tape;
    auto a = channel_attention(tape, x, p);
    auto b = channel_attention(tape, xp, p);
    for (std::size_t i = 0; i < a.gate.values().size(); ++i) {
        CHECK(a.gate.values()[i] == doctest::Approx(b.gate.values()[i]).epsilon(1e-6));
    }
}

TEST_CASE("channel-permutation equivariance") {
    // Permuting input channels by pi while permuting w1's columns and w2's
    // rows by pi permutes the output channels by pi.
    Rng rng(139);
    const std::int64_t c_n = 6;
    auto x = Tensor::random_uniform({1, 3, c_n, 2, 2}, -1.0, 1.0, rng);
    auto p = channel_params<float>(c_n, 2, 29);
    const std::vector<std::int64_t> pi{2, 0, 1, 4, 5, 3};

    auto xp = Tensor::zeros(x.shape());
    {
        const auto src = x.values();
        auto dst = xp.values_mut();
        for (std::int64_t t = 0; t < 3; ++t)
            for (std::int64_t c = 0; c < c_n; ++c)
                for (std::int64_t s = 0; s < 4; ++s)
                    dst[(t * c_n + pi[c]) * 4 + s] = src[(t * c_n + c) * 4 + s];
    }

    auto pp = p;
    pp.w1 = Tensor::zeros(p.w1.shape());
    pp.w2 = Tensor::zeros(p.w2.shape());
    {
        const auto w1 = p.w1.values();
        auto w1p = pp.w1.values_mut();
        const std::int64_t hidden = p.w1.extent(0);
        for (std::int64_t h = 0; h < hidden; ++h)
            for (std::int64_t c = 0; c < c_n; ++c) w1p[h * c_n + pi[c]] = w1[h * c_n + c];
        const auto w2 = p.w2.values();
        auto w2p = pp.w2.values_mut();
        for (std::int64_t c = 0; c < c_n; ++c)
            for (std::int64_t h = 0; h < hidden; ++h) w2p[pi[c] * hidden + h] = w2[c * hidden + h];
        // b2 rows permute alongside w2; zero-init keeps b1 unchanged.
        auto b2p = p.b2.clone();
        auto b2m = b2p.values_mut();
        const auto b2 = p.b2.values();
        for (std::int64_t c = 0; c < c_n; ++c) b2m[pi[c]] = b2[c];
        pp.b2 = b2p;
    }

    Tape tape;
    auto base = channel_attention(tape, x, p).output;
    auto perm = channel_attention(tape, xp, pp).output;
    const auto bv = base.values();
    const auto pv = perm.values();
    for (std::int64_t t = 0; t < 3; ++t)
        for (std::int64_t c = 0; c < c_n; ++c)
            for (std::int64_t s = 0; s < 4; ++s) {
                CHECK(pv[(t * c_n + pi[c]) * 4 + s] ==
                      doctest::Approx(bv[(t * c_n + c) * 4 + s]).epsilon(1e-6));
            }
}

TEST_CASE("block variants compose as specified") {
    Rng rng(149);
    auto x = Tensor::random_uniform({2, 4, 8, 3, 3}, -1.0, 1.0, rng);

    Rng block_rng(31);
    auto ct = CtaBlockParamsT<float>::make(BlockVariant::CT, 8, 4, 4, block_rng);

    Tape tape;
    auto composed = cta_forward(tape, x, ct);
    auto step1 = channel_attention(tape, x, ct.channel).output;
    auto step2 = temporal_attention(tape, step1, ct.temporal).output;
    CHECK(bitwise_equal(composed, step2));

    // CT and TC genuinely differ on generic input.
    Rng block_rng2(31);
    auto tc = CtaBlockParamsT<float>::make(BlockVariant::TC, 8, 4, 4, block_rng2);
    auto other = cta_forward(tape, x, tc);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < other.values().size(); ++i) {
        max_diff = std::max(max_diff, std::abs(static_cast<double>(other.values()[i]) -
                                               static_cast<double>(composed.values()[i])));
    }
    CHECK(max_diff > 0.0);
}

TEST_CASE("every variant preserves shape and honors forced gates") {
    Rng rng(151);
    auto x = Tensor::random_uniform({2, 4, 8, 3, 3}, -1.0, 1.0, rng);
    auto zero_c = Tensor::zeros({2, 1, 8, 1, 1});
    auto zero_t = Tensor::zeros({2, 4, 1, 1, 1});
    auto one_c = Tensor::filled({2, 1, 8, 1, 1}, 1.0f);
    auto one_t = Tensor::filled({2, 4, 1, 1, 1}, 1.0f);

    for (const auto variant :
         {BlockVariant::C, BlockVariant::T, BlockVariant::TC, BlockVariant::CT}) {
        Rng block_rng(37);
        auto p = CtaBlockParamsT<float>::make(variant, 8, 4, 4, block_rng);
        Tape tape;
        auto out = cta_forward(tape, x, p);
        CHECK(out.shape() == x.shape());

        // Zero gates reduce every module to its residual path.
        auto idty = cta_forward(tape, x, p, &zero_c, &zero_t);
        CHECK(bitwise_equal(idty, x));

        // Unit gates double per module: single-module variants give 2x,
        // two-module variants 4x.
        const float factor =
            (variant == BlockVariant::C || variant == BlockVariant::T) ? 2.0f : 4.0f;
        auto doubled = cta_forward(tape, x, p, &one_c, &one_t);
        for (std::size_t i = 0; i < doubled.values().size(); ++i) {
            CHECK(doubled.values()[i] == factor * x.values()[i]);
        }
    }
}

TEST_CASE("full-block gradients match finite differences at rel 1e-4") {
    Rng seed_rng(157);
    GradCheckCase c;
    c.name = "cta-block";
    auto x = TensorT<double>::random_uniform({2, 4, 6, 2, 2}, 0.1, 1.0, seed_rng);
    Rng block_rng(41);
    auto p = CtaBlockParamsT<double>::make(BlockVariant::CT, 6, 4, 2, block_rng);
    // All six weight matrices plus biases are check inputs.
    c.inputs = {p.channel.w1,  p.channel.b1,  p.channel.w2,  p.channel.b2,
                p.temporal.w1, p.temporal.b1, p.temporal.w2, p.temporal.b2};
    std::vector<double> w(static_cast<std::size_t>(x.numel()));
    for (auto& v : w) v = seed_rng.next_uniform(-1.0, 1.0);
    c.build = [x, p, w](TapeT<double>& tape, std::vector<TensorT<double>>& in) {
        auto q = p;
        q.channel.w1 = in[0];
        q.channel.b1 = in[1];
        q.channel.w2 = in[2];
        q.channel.b2 = in[3];
        q.temporal.w1 = in[4];
        q.temporal.b1 = in[5];
        q.temporal.w2 = in[6];
        q.temporal.b2 = in[7];
        return inner(tape, cta_forward(tape, x, q), w);
    };
    CHECK(max_rel_error(c) < 1e-4);
}
