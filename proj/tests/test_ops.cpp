#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctan/ops.hpp"
#include "support/oracles.hpp"

using namespace cta;

TEST_CASE("avg_pool_axes: constants, single axis, and the loop oracle") {
    Tape tape;
    auto constant = Tensor::filled({2, 3, 4, 2, 2}, 7.0f);
    auto pooled = avg_pool_axes(tape, constant, {1, 3, 4});
    for (const auto v : pooled.values()) CHECK(v == 7.0f);

    auto vec = Tensor::from_values({4}, {1.0f, 2.0f, 3.0f, 4.0f});
    CHECK(avg_pool_axes(tape, vec, {0}).item() == 2.5f);

    Rng rng(11);
    auto x = Tensor::random_uniform({2, 3, 4, 2, 2}, -1.0, 1.0, rng);
    auto got = avg_pool_axes(tape, x, {1, 3, 4});
    CHECK(got.shape() == Shape{2, 1, 4, 1, 1});
    CHECK(oracle::max_abs_diff(got, oracle::pool_thw(x)) < 1e-12 + 1e-6);  // f32 storage
}

TEST_CASE("avg_pool_axes in double matches the loop oracle to 1e-12") {
    TapeT<double> tape;
    Rng rng(11);
    auto x = TensorT<double>::random_uniform({2, 3, 4, 2, 2}, -1.0, 1.0, rng);
    auto got = avg_pool_axes(tape, x, {1, 3, 4});
    CHECK(oracle::max_abs_diff(got, oracle::pool_thw(x)) < 1e-12);
}

TEST_CASE("avg_pool_axes is invariant under axis permutation and validates input") {
    Tape tape;
    Rng rng(3);
    auto x = Tensor::random_uniform({2, 3, 4, 2, 2}, -1.0, 1.0, rng);
    auto a = avg_pool_axes(tape, x, {1, 3, 4});
    auto b = avg_pool_axes(tape, x, {4, 1, 3});
    CHECK(bitwise_equal(a, b));

    CHECK_THROWS_AS(avg_pool_axes(tape, x, {}), std::invalid_argument);
    CHECK_THROWS_AS(avg_pool_axes(tape, x, {5}), std::invalid_argument);
    CHECK_THROWS_AS(avg_pool_axes(tape, Tensor(), {0}), std::invalid_argument);
}

TEST_CASE("linear: identity, hand arithmetic, and the matmul oracle") {
    Tape tape;
    auto eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto zero_b = Tensor::zeros({3});
    auto x = Tensor::from_values({3}, {1.0f, 2.0f, 3.0f});
    auto y = linear(tape, eye, zero_b, x);
    CHECK(bitwise_equal(y, x));

    auto w = Tensor::from_values({2, 2}, {1, 1, 2, 0});
    auto b = Tensor::from_values({2}, {0, 1});
    auto v = Tensor::from_values({2}, {3, 4});
    auto out = linear(tape, w, b, v);
    CHECK(out.values()[0] == 7.0f);
    CHECK(out.values()[1] == 7.0f);

    Rng rng(7);
    auto wr = TensorT<double>::random_uniform({4, 6}, -1.0, 1.0, rng);
    auto br = TensorT<double>::random_uniform({4}, -1.0, 1.0, rng);
    auto xr = TensorT<double>::random_uniform({2, 5, 6}, -1.0, 1.0, rng);
    TapeT<double> dtape;
    auto got = linear(dtape, wr, br, xr);
    CHECK(got.shape() == Shape{2, 5, 4});
    const auto want = oracle::matmul_bias(oracle::to_doubles(wr), oracle::to_doubles(br),
                                          oracle::to_doubles(xr), 10, 4, 6);
    CHECK(oracle::max_abs_diff(got, want) < 1e-12);

    CHECK_THROWS_AS(linear(tape, w, b, x), std::invalid_argument);  // 2x2 against length 3
}

TEST_CASE("relu and sigmoid forward values") {
    Tape tape;
    auto x = Tensor::from_values({3}, {-1.0f, 0.0f, 2.0f});
    auto y = relu(tape, x);
    CHECK(y.values()[0] == 0.0f);
    CHECK(y.values()[1] == 0.0f);
    CHECK(y.values()[2] == 2.0f);

    auto all_neg = relu(tape, Tensor::filled({4}, -3.0f));
    for (const auto v : all_neg.values()) CHECK(v == 0.0f);

    CHECK(sigmoid(tape, Tensor::scalar_value(0.0f)).item() == 0.5f);
    const float saturated = sigmoid(tape, Tensor::scalar_value(40.0f)).item();
    CHECK(saturated == 1.0f);  // within f32 rounding, no overflow
    CHECK(std::isfinite(sigmoid(tape, Tensor::scalar_value(-200.0f)).item()));
}

TEST_CASE("broadcast_mul: identities and the loop oracle") {
    Tape tape;
    Rng rng(13);
    auto x = Tensor::random_uniform({2, 4, 3, 2, 2}, -1.0, 1.0, rng);
    auto ones = Tensor::filled({2, 1, 3, 1, 1}, 1.0f);
    CHECK(bitwise_equal(broadcast_mul(tape, ones, x), x));

    auto zeros = Tensor::zeros({2, 1, 3, 1, 1});
    auto gated = broadcast_mul(tape, zeros, x);
    for (const auto v : gated.values()) CHECK(v == 0.0f);

    TapeT<double> dtape;
    auto a = TensorT<double>::random_uniform({2, 1, 3, 1, 1}, -1.0, 1.0, rng);
    auto xd = TensorT<double>::random_uniform({2, 4, 3, 2, 2}, -1.0, 1.0, rng);
    auto got = broadcast_mul(dtape, a, xd);
    const auto av = a.values();
    const auto xv = xd.values();
    double worst = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
        for (std::int64_t t = 0; t < 4; ++t)
            for (std::int64_t c = 0; c < 3; ++c)
                for (std::int64_t h = 0; h < 2; ++h)
                    for (std::int64_t w = 0; w < 2; ++w) {
                        const auto idx = (((n * 4 + t) * 3 + c) * 2 + h) * 2 + w;
                        const double want = av[n * 3 + c] * xv[idx];
                        worst = std::max(worst, std::abs(got.values()[idx] - want));
                    }
    CHECK(worst < 1e-12);

    auto bad = Tensor::zeros({2, 2, 3, 1, 1});
    CHECK_THROWS_AS(broadcast_mul(tape, bad, x), std::invalid_argument);
}

TEST_CASE("add: identity and shape checks") {
    Tape tape;
    Rng rng(17);
    auto a = Tensor::random_uniform({3, 2}, -1.0, 1.0, rng);
    CHECK(bitwise_equal(add(tape, a, Tensor::zeros({3, 2})), a));

    auto s = add(tape, Tensor::from_values({2}, {1, 2}), Tensor::from_values({2}, {3, 4}));
    CHECK(s.values()[0] == 4.0f);
    CHECK(s.values()[1] == 6.0f);

    CHECK_THROWS_AS(add(tape, a, Tensor::zeros({2, 3})), std::invalid_argument);
}

TEST_CASE("conv3d: identity kernel, counting kernel, and the brute-force oracle") {
    Tape tape;
    Rng rng(19);
    auto x = Tensor::random_uniform({1, 3, 1, 4, 4}, -1.0, 1.0, rng);
    auto identity = Tensor::filled({1, 1, 1, 1, 1}, 1.0f);
    auto y = conv3d(tape, x, identity, Tensor(), {1, 1, 1}, {0, 0, 0});
    CHECK(bitwise_equal(y, x));

    // All-ones 3x3x3 kernel on all-ones input, no padding: every cell sums 27.
    auto ones = Tensor::filled({1, 5, 1, 5, 5}, 1.0f);
    auto k27 = Tensor::filled({1, 1, 3, 3, 3}, 1.0f);
    auto counted = conv3d(tape, ones, k27, Tensor(), {1, 1, 1}, {0, 0, 0});
    CHECK(counted.shape() == Shape{1, 3, 1, 3, 3});
    for (const auto v : counted.values()) CHECK(v == 27.0f);

    TapeT<double> dtape;
    auto xd = TensorT<double>::random_uniform({1, 5, 2, 6, 6}, -1.0, 1.0, rng);
    auto kd = TensorT<double>::random_uniform({3, 2, 3, 3, 3}, -1.0, 1.0, rng);
    auto bd = TensorT<double>::random_uniform({3}, -1.0, 1.0, rng);
    auto got = conv3d(dtape, xd, kd, bd, {1, 1, 1}, {1, 1, 1});
    const auto want = oracle::conv3d_brute(xd, kd, bd, 1, 1, 1, 1, 1, 1);
    CHECK(got.shape() == Shape{1, 5, 3, 6, 6});
    CHECK(oracle::max_abs_diff(got, want) < 1e-10);
}

TEST_CASE("conv3d rejects impossible geometry") {
    Tape tape;
    auto x = Tensor::zeros({1, 2, 1, 4, 4});
    auto k = Tensor::zeros({1, 1, 3, 3, 3});
    CHECK_THROWS_WITH_AS(conv3d(tape, x, k, Tensor(), {1, 1, 1}, {0, 0, 0}),
                         doctest::Contains("larger than padded input"), std::invalid_argument);
    auto wrong_c = Tensor::zeros({1, 2, 3, 3, 3});
    CHECK_THROWS_AS(conv3d(tape, x, wrong_c, Tensor(), {1, 1, 1}, {1, 1, 1}),
                    std::invalid_argument);
}

TEST_CASE("softmax_cross_entropy: uniform logits, saturation, and bounds") {
    Tape tape;
    auto uniform = Tensor::filled({3, 4}, 0.25f);
    const float loss = softmax_cross_entropy(tape, uniform, {0, 1, 2}).item();
    CHECK(loss == static_cast<float>(std::log(4.0)));  // exactly ln K

    auto hot = Tensor::zeros({1, 3});
    hot.values_mut()[1] = 1000.0f;
    const float saturated = softmax_cross_entropy(tape, hot, {1}).item();
    CHECK(saturated == 0.0f);
    CHECK(std::isfinite(saturated));

    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = Tensor::random_uniform({4, 5}, -4.0, 4.0, rng);
        CHECK(softmax_cross_entropy(tape, logits, {0, 1, 2, 3}).item() >= 0.0f);
    }

    CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, {0, 1, 4}), std::invalid_argument);
    CHECK_THROWS_AS(softmax_cross_entropy(tape, uniform, {0, 1}), std::invalid_argument);
}

TEST_CASE("grad_reverse: forward identity, zero and negated gradients") {
    Rng rng(29);
    auto x = Tensor::random_uniform({2, 3}, -1.0, 1.0, rng);
    x.set_requires_grad(true);
    {
        Tape tape;
        auto y = grad_reverse(tape, x, GrlCoefficient(0.37));
        CHECK(bitwise_equal(y, x));
    }
    {
        Tape tape;
        auto loss = sum_all(tape, grad_reverse(tape, x, GrlCoefficient(0.0)));
        tape.backward(loss);
        for (const auto g : x.grad()) CHECK(g == 0.0f);
        x.clear_grad();
    }
    {
        Tape tape;
        auto loss = sum_all(tape, grad_reverse(tape, x, GrlCoefficient(1.0)));
        tape.backward(loss);
        for (const auto g : x.grad()) CHECK(g == -1.0f);
        x.clear_grad();
    }
    CHECK_THROWS_AS(GrlCoefficient(1.5), std::invalid_argument);
    CHECK_THROWS_AS(GrlCoefficient(-0.1), std::invalid_argument);
}

TEST_CASE("grad_reverse composed with itself at lambda 1 is gradient-identity") {
    Rng rng(31);
    auto x = Tensor::random_uniform({4}, -1.0, 1.0, rng);
    x.set_requires_grad(true);
    Tape tape;
    auto twice = grad_reverse(tape, grad_reverse(tape, x, GrlCoefficient(1.0)), GrlCoefficient(1.0));
    auto loss = inner(tape, twice, {0.5f, -1.0f, 2.0f, 3.0f});
    tape.backward(loss);
    CHECK(x.grad()[0] == 0.5f);
    CHECK(x.grad()[1] == -1.0f);
    CHECK(x.grad()[2] == 2.0f);
    CHECK(x.grad()[3] == 3.0f);
}

TEST_CASE("dropout: eval identity, train scaling, deterministic masks") {
    Tape tape;
    Rng rng(37);
    auto x = Tensor::random_uniform({100}, 1.0, 2.0, rng);

    Rng unused(0);
    auto eval_out = dropout(tape, x, 0.5, false, unused);
    CHECK(bitwise_equal(eval_out, x));

    Rng mask_a(99);
    Rng mask_b(99);
    auto train_a = dropout(tape, x, 0.5, true, mask_a);
    auto train_b = dropout(tape, x, 0.5, true, mask_b);
    CHECK(bitwise_equal(train_a, train_b));

    // Every surviving cell is scaled by exactly 1/(1-p).
    int kept = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        const float v = train_a.values()[i];
        if (v != 0.0f) {
            CHECK(v == doctest::Approx(x.values()[i] * 2.0f));
            ++kept;
        }
    }
    CHECK(kept > 20);
    CHECK(kept < 80);

    CHECK_THROWS_AS(dropout(tape, x, 1.0, true, mask_a), std::invalid_argument);
}

TEST_CASE("concat_rows stacks and splits gradients") {
    Tape tape;
    auto a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from_values({1, 2}, {5, 6});
    a.set_requires_grad(true);
    auto y = concat_rows(tape, a, b);
    CHECK(y.shape() == Shape{3, 2});
    CHECK(y.values()[4] == 5.0f);
    auto loss = sum_all(tape, y);
    tape.backward(loss);
    CHECK(a.grad()[3] == 1.0f);

    CHECK_THROWS_AS(concat_rows(tape, a, Tensor::zeros({2, 3})), std::invalid_argument);
}
