#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctan/gradcheck.hpp"
#include "ctan/ops.hpp"
#include "ctan/sgd.hpp"
#include "support/oracles.hpp"

using namespace cta;

TEST_CASE("loss = sum(x) gives all-ones gradient") {
    auto x = Tensor::filled({3, 2}, 0.5f);
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(sum_all(tape, x));
    for (const auto g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("loss = sum(x*x) gives 2x") {
    Rng rng(41);
    auto x = Tensor::random_uniform({5}, -2.0, 2.0, rng);
    x.set_requires_grad(true);
    Tape tape;
    tape.backward(sum_all(tape, broadcast_mul(tape, x, x)));
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(2.0f * x.values()[i]));
    }
}

TEST_CASE("a tensor used k times accumulates k-fold") {
    auto x = Tensor::filled({4}, 1.25f);
    x.set_requires_grad(true);
    Tape tape;
    auto y = add(tape, x, x);
    tape.backward(sum_all(tape, y));
    for (const auto g : x.grad()) CHECK(g == 2.0f);
}

TEST_CASE("conv3d with the identity kernel is the identity forward and backward") {
    Rng rng(43);
    auto x = Tensor::random_uniform({1, 3, 2, 3, 3}, -1.0, 1.0, rng);
    x.set_requires_grad(true);
    auto k = Tensor::zeros({2, 2, 1, 1, 1});
    k.values_mut()[0] = 1.0f;  // k[0,0]
    k.values_mut()[3] = 1.0f;  // k[1,1]
    Tape tape;
    auto y = conv3d(tape, x, k, Tensor(), {1, 1, 1}, {0, 0, 0});
    CHECK(bitwise_equal(y, x));

    std::vector<float> probe(static_cast<std::size_t>(x.numel()));
    Rng prng(44);
    for (auto& v : probe) v = static_cast<float>(prng.next_uniform(-1.0, 1.0));
    tape.backward(inner(tape, y, probe));
    for (std::size_t i = 0; i < probe.size(); ++i) CHECK(x.grad()[i] == probe[i]);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    TapeT<double> tape;
    Rng rng(47);
    std::vector<double> vals(12);
    for (auto& v : vals) {
        const double mag = rng.next_uniform(0.2, 1.0);
        v = rng.next_uniform() < 0.5 ? -mag : mag;
    }
    auto x = TensorT<double>::from_values({3, 4}, vals);
    x.set_requires_grad(true);
    std::vector<double> w(12);
    for (auto& v : w) v = rng.next_uniform(-1.0, 1.0);

    auto loss = inner(tape, relu(tape, x), w);
    tape.backward(loss);
    for (std::size_t i = 0; i < 12; ++i) {
        const double fd = oracle::fd_grad(x, i, [&] {
            TapeT<double> t2;
            t2.set_recording(false);
            return inner(t2, relu(t2, x), w).item();
        }, 1e-5);
        CHECK(grad_rel_err(fd, x.grad()[i]) < 1e-6);
    }
}

TEST_CASE("sigmoid gradient matches finite differences") {
    TapeT<double> tape;
    Rng rng(53);
    auto x = TensorT<double>::random_uniform({2, 5}, -3.0, 3.0, rng);
    x.set_requires_grad(true);
    // Probe weights bounded away from zero keep the relative error
    // well-conditioned.
    std::vector<double> w(10);
    for (auto& v : w) {
        const double mag = rng.next_uniform(0.3, 1.0);
        v = rng.next_uniform() < 0.5 ? -mag : mag;
    }

    auto loss = inner(tape, sigmoid(tape, x), w);
    tape.backward(loss);
    for (std::size_t i = 0; i < 10; ++i) {
        const double fd = oracle::fd_grad(x, i, [&] {
            TapeT<double> t2;
            t2.set_recording(false);
            return inner(t2, sigmoid(t2, x), w).item();
        }, 1e-5);
        CHECK(grad_rel_err(fd, x.grad()[i]) < 1e-6);
    }
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(59);
    auto logits = TensorT<double>::random_uniform({3, 4}, -2.0, 2.0, rng);
    logits.set_requires_grad(true);
    const std::vector<std::int64_t> labels{2, 0, 3};

    TapeT<double> tape;
    tape.backward(softmax_cross_entropy(tape, logits, labels));
    for (std::size_t i = 0; i < 12; ++i) {
        const double fd = oracle::fd_grad(logits, i, [&] {
            TapeT<double> t2;
            t2.set_recording(false);
            return softmax_cross_entropy(t2, logits, labels).item();
        }, 1e-5);
        CHECK(grad_rel_err(fd, logits.grad()[i]) < 1e-5);
    }
}

TEST_CASE("the full gradcheck suite passes at 1e-4") {
    const auto reports = run_gradcheck_suite();
    CHECK(reports.size() >= 14);
    for (const auto& r : reports) {
        INFO(r.name, " err=", r.max_rel_err);
        CHECK(r.pass);
    }
}

TEST_CASE("gradcheck flags a deliberately wrong backward rule") {
    // A sigmoid whose backward rule is corrupted by +0.1: the checker must
    // report it.
    GradCheckCase c;
    c.name = "broken-sigmoid";
    Rng rng(61);
    auto x = TensorT<double>::random_uniform({6}, -2.0, 2.0, rng);
    x.set_requires_grad(true);
    c.inputs = {x};
    c.build = [](TapeT<double>& tape, std::vector<TensorT<double>>& in) {
        auto y = sigmoid(tape, in[0]);
        if (tape.recording()) {
            auto xp = in[0].payload();
            auto yp = y.payload();
            tape.record(y, [xp, yp] {
                if (yp->grad.empty()) return;
                if (xp->grad.empty()) xp->grad.assign(xp->values.size(), 0.0);
                for (std::size_t i = 0; i < xp->grad.size(); ++i) xp->grad[i] += 0.1 * yp->grad[i];
            });
        }
        return sum_all(tape, y);
    };
    CHECK(max_rel_error(c) > kGradCheckTolerance);
}

TEST_CASE("sgd: plain descent, velocity decay, two-step recursion") {
    const auto make_param = [](float value) {
        auto p = Tensor::filled({1}, value);
        p.set_requires_grad(true);
        return p;
    };

    {
        SgdOptimizer<float> opt(0.1, 0.0, 0.0);
        ParamSet<float> params{{"p", make_param(1.0f)}};
        params[0].tensor.accumulate_grad(std::vector<float>{0.5f});
        opt.step(params);
        CHECK(params[0].tensor.values()[0] == doctest::Approx(1.0f - 0.1f * 0.5f));
    }
    {
        // Zero gradient with prior velocity 1: the parameter keeps sliding by
        // lr * momentum.
        SgdOptimizer<float> opt(0.1, 0.9, 0.0);
        ParamSet<float> params{{"p", make_param(0.0f)}};
        params[0].tensor.accumulate_grad(std::vector<float>{1.0f});
        opt.step(params);  // v = 1
        const float after_first = params[0].tensor.values()[0];
        params[0].tensor.accumulate_grad(std::vector<float>{0.0f});
        opt.step(params);  // v = 0.9
        CHECK(params[0].tensor.values()[0] == doctest::Approx(after_first - 0.1f * 0.9f));
    }
    {
        // Constant gradient g over two steps: displacement lr*g*(1 + 1.9).
        SgdOptimizer<float> opt(0.01, 0.9, 0.0);
        ParamSet<float> params{{"p", make_param(2.0f)}};
        const float g = 0.7f;
        for (int i = 0; i < 2; ++i) {
            params[0].tensor.accumulate_grad(std::vector<float>{g});
            opt.step(params);
        }
        CHECK(params[0].tensor.values()[0] == doctest::Approx(2.0f - 0.01f * g * (1.0f + 1.9f)));
    }
    {
        SgdOptimizer<float> opt(0.1, 0.9, 0.0);
        ParamSet<float> params{{"p", make_param(1.0f)}};
        CHECK_THROWS_WITH_AS(opt.step(params), doctest::Contains("missing gradient"),
                             std::runtime_error);
    }
}

TEST_CASE("sgd applies weight decay through the velocity") {
    SgdOptimizer<float> opt(0.1, 0.0, 0.01);
    auto p = Tensor::filled({1}, 2.0f);
    p.set_requires_grad(true);
    ParamSet<float> params{{"p", p}};
    params[0].tensor.accumulate_grad(std::vector<float>{0.0f});
    opt.step(params);
    // v = 0 + (0 + 0.01 * 2) = 0.02; p = 2 - 0.1 * 0.02
    CHECK(p.values()[0] == doctest::Approx(2.0f - 0.002f));
}
