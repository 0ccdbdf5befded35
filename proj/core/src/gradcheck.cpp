#include "ctan/gradcheck.hpp"

#include <cmath>

#include "ctan/backbone.hpp"

namespace cta {

namespace {

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

std::vector<double> probe_weights(std::int64_t n, Rng& rng) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (auto& v : w) v = rng.next_uniform(-1.0, 1.0);
    return w;
}

double eval_loss(const GradCheckCase& c, std::vector<DTensor>& inputs) {
    DTape tape;
    tape.set_recording(false);
    return c.build(tape, inputs).item();
}

}  // namespace

double max_rel_error(const GradCheckCase& c, double step) {
    auto inputs = c.inputs;
    DTape tape;
    auto loss = c.build(tape, inputs);
    tape.backward(loss);

    double worst = 0.0;
    for (auto& input : inputs) {
        const auto analytic = input.grad();
        auto values = input.values_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = eval_loss(c, inputs);
            values[i] = saved - step;
            const double down = eval_loss(c, inputs);
            values[i] = saved;
            const double fd = (up - down) / (2.0 * step);
            worst = std::max(worst, grad_rel_err(c.expected_scale * fd, analytic[i]));
        }
    }
    return worst;
}

namespace {

DTensor leaf(Shape shape, double lo, double hi, Rng& rng) {
    auto t = DTensor::random_uniform(std::move(shape), lo, hi, rng);
    t.set_requires_grad(true);
    return t;
}

// Magnitudes bounded away from zero so finite differences never straddle the
// ReLU kink.
DTensor relu_safe_leaf(Shape shape, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& e : v) {
        const double mag = rng.next_uniform(0.1, 1.0);
        e = rng.next_uniform() < 0.5 ? -mag : mag;
    }
    auto t = DTensor::from_values(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

OpReport run_case(const GradCheckCase& c, double tol) {
    const double err = max_rel_error(c);
    return {c.name, err, err < tol};
}

OpReport composite_case(std::uint64_t seed, double tol) {
    // Conv stages around a CT attention block, pooled into both heads, with
    // the discriminator behind the reversal layer. Finite differences use the
    // effective objective of each parameter group.
    BackboneConfig cfg;
    cfg.in_frames = 4;
    cfg.in_channels = 2;
    cfg.in_height = 6;
    cfg.in_width = 6;
    cfg.stages = {
        {4, 1, 1, 1, {1, 1, 1}, {0, 0, 0}},
        {8, 3, 3, 3, {1, 2, 2}, {1, 1, 1}},
        {8, 1, 1, 1, {1, 1, 1}, {0, 0, 0}},
    };
    cfg.cta_after = {1};
    cfg.variant = BlockVariant::CT;
    cfg.reduction = 2;
    cfg.hidden_y = 8;
    cfg.hidden_d = 8;
    cfg.dropout_p = 0.5;

    const std::int64_t num_classes = 3;
    auto bundle = init_model<double>(cfg, num_classes, seed);

    // Central differences are only valid on a smooth neighborhood. Every
    // weight feeding a ReLU is made nonnegative and its bias positive, so all
    // pre-activations sit at least 0.1 away from the kink no matter the seed;
    // step-1e-4 probes cannot straddle it. ReLU's own two-sided behavior is
    // exercised by the dedicated op case above.
    const auto positify = [](TensorT<double>& w) {
        for (auto& v : w.values_mut()) v = std::abs(v);
    };
    const auto lift = [](TensorT<double>& b) {
        for (auto& v : b.values_mut()) v = 0.1;
    };
    for (auto& s : bundle.stages) {
        positify(s.kernels);
        lift(s.bias);
    }
    for (auto& [idx, block] : bundle.cta) {
        positify(block.channel.w1);
        lift(block.channel.b1);
        positify(block.temporal.w1);
        lift(block.temporal.b1);
    }
    positify(bundle.action1.w);
    lift(bundle.action1.b);
    positify(bundle.domain1.w);
    lift(bundle.domain1.b);

    Rng rng(seed);
    auto data_rng = rng.split("composite.x");
    auto x = DTensor::random_uniform({3, cfg.in_frames, cfg.in_channels, cfg.in_height, cfg.in_width},
                                     0.0, 1.0, data_rng);
    const std::vector<std::int64_t> labels{0, 1, 2};
    const std::vector<std::int64_t> domains{1, 0, 1};
    const GrlCoefficient lambda(0.7);

    const auto forward = [&](DTape& tape, double& l_task, double& l_domain) {
        auto features = extract_features(tape, x, bundle, true);
        Rng dropout_rng(4242);  // fixed mask across every evaluation
        auto action = classify_action(tape, features, bundle, true, &dropout_rng);
        auto ly = softmax_cross_entropy(tape, action, labels);
        auto domain = discriminate_domain(tape, features, bundle, lambda);
        auto ld = softmax_cross_entropy(tape, domain, domains);
        l_task = ly.item();
        l_domain = ld.item();
        return add(tape, ly, ld);
    };

    DTape tape;
    double lt0 = 0.0, ld0 = 0.0;
    auto total = forward(tape, lt0, ld0);
    tape.backward(total);

    const auto objective = [&](const std::string& name) {
        // Extractor parameters feel l_task - lambda * l_domain through the
        // reversal layer; the discriminator descends l_domain; the classifier
        // sees only l_task (adding the constant l_domain changes nothing).
        const bool domain_head = name.rfind("domain.", 0) == 0;
        const bool action_head = name.rfind("action.", 0) == 0;
        return [&, domain_head, action_head](double l_task, double l_domain) {
            if (domain_head || action_head) return l_task + l_domain;
            return l_task - lambda.lambda * l_domain;
        };
    };

    double worst = 0.0;
    auto params = bundle.parameters();
    for (auto& p : params) {
        const auto combine = objective(p.name);
        const auto analytic = p.tensor.grad();
        auto values = p.tensor.values_mut();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            double lt = 0.0, ld = 0.0;
            values[i] = saved + kGradCheckStep;
            {
                DTape t2;
                t2.set_recording(false);
                forward(t2, lt, ld);
            }
            const double up = combine(lt, ld);
            values[i] = saved - kGradCheckStep;
            {
                DTape t2;
                t2.set_recording(false);
                forward(t2, lt, ld);
            }
            const double down = combine(lt, ld);
            values[i] = saved;
            const double fd = (up - down) / (2.0 * kGradCheckStep);
            worst = std::max(worst, grad_rel_err(fd, analytic[i]));
        }
    }
    return {"composite(cta+heads)", worst, worst < tol};
}

}  // namespace

std::vector<OpReport> run_gradcheck_suite(std::uint64_t seed, double tol) {
    Rng root(seed);
    std::vector<OpReport> reports;

    {
        auto r = root.split("avg_pool_axes");
        GradCheckCase c;
        c.name = "avg_pool_axes";
        c.inputs = {leaf({2, 3, 4, 2, 2}, -1.0, 1.0, r)};
        auto w = probe_weights(2 * 1 * 4 * 1 * 1, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, avg_pool_axes(t, in[0], {1, 3, 4}), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("linear");
        GradCheckCase c;
        c.name = "linear";
        c.inputs = {leaf({4, 6}, -1.0, 1.0, r), leaf({4}, -0.5, 0.5, r),
                    leaf({2, 5, 6}, -1.0, 1.0, r)};
        auto w = probe_weights(2 * 5 * 4, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, linear(t, in[0], in[1], in[2]), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("relu");
        GradCheckCase c;
        c.name = "relu";
        c.inputs = {relu_safe_leaf({3, 7}, r)};
        auto w = probe_weights(21, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) { return inner(t, relu(t, in[0]), w); };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("sigmoid");
        GradCheckCase c;
        c.name = "sigmoid";
        c.inputs = {leaf({3, 4}, -3.0, 3.0, r)};
        auto w = probe_weights(12, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, sigmoid(t, in[0]), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("broadcast_mul");
        GradCheckCase c;
        c.name = "broadcast_mul";
        c.inputs = {leaf({2, 1, 3, 1, 1}, -1.0, 1.0, r), leaf({2, 4, 3, 2, 2}, -1.0, 1.0, r)};
        auto w = probe_weights(2 * 4 * 3 * 2 * 2, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, broadcast_mul(t, in[0], in[1]), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("add");
        GradCheckCase c;
        c.name = "add";
        c.inputs = {leaf({3, 3}, -1.0, 1.0, r), leaf({3, 3}, -1.0, 1.0, r)};
        auto w = probe_weights(9, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, add(t, in[0], in[1]), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("conv3d");
        GradCheckCase c;
        c.name = "conv3d";
        c.inputs = {leaf({1, 5, 2, 6, 6}, -1.0, 1.0, r), leaf({3, 2, 3, 3, 3}, -0.5, 0.5, r),
                    leaf({3}, -0.5, 0.5, r)};
        auto w = probe_weights(1 * 5 * 3 * 6 * 6, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, conv3d(t, in[0], in[1], in[2], {1, 1, 1}, {1, 1, 1}), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("softmax_cross_entropy");
        GradCheckCase c;
        c.name = "softmax_cross_entropy";
        c.inputs = {leaf({4, 5}, -2.0, 2.0, r)};
        c.build = [](DTape& t, std::vector<DTensor>& in) {
            return softmax_cross_entropy(t, in[0], {0, 3, 2, 4});
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("grad_reverse");
        GradCheckCase c;
        c.name = "grad_reverse";
        c.inputs = {leaf({3, 4}, -1.0, 1.0, r)};
        auto w = probe_weights(12, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, grad_reverse(t, in[0], GrlCoefficient(0.6)), w);
        };
        c.expected_scale = -0.6;  // forward is the identity; the tape reverses
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("dropout");
        GradCheckCase c;
        c.name = "dropout";
        c.inputs = {leaf({4, 5}, -1.0, 1.0, r)};
        auto w = probe_weights(20, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            Rng mask_rng(777);  // identical mask on every evaluation
            return inner(t, dropout(t, in[0], 0.4, true, mask_rng), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("reshape");
        GradCheckCase c;
        c.name = "reshape";
        c.inputs = {leaf({2, 6}, -1.0, 1.0, r)};
        auto w = probe_weights(12, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, reshape(t, in[0], {3, 4}), w);
        };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("sum_all");
        GradCheckCase c;
        c.name = "sum_all";
        c.inputs = {leaf({3, 5}, -1.0, 1.0, r)};
        c.build = [](DTape& t, std::vector<DTensor>& in) { return sum_all(t, in[0]); };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("inner");
        GradCheckCase c;
        c.name = "inner";
        c.inputs = {leaf({7}, -1.0, 1.0, r)};
        auto w = probe_weights(7, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) { return inner(t, in[0], w); };
        reports.push_back(run_case(c, tol));
    }
    {
        auto r = root.split("concat_rows");
        GradCheckCase c;
        c.name = "concat_rows";
        c.inputs = {leaf({2, 3}, -1.0, 1.0, r), leaf({4, 3}, -1.0, 1.0, r)};
        auto w = probe_weights(18, r);
        c.build = [w](DTape& t, std::vector<DTensor>& in) {
            return inner(t, concat_rows(t, in[0], in[1]), w);
        };
        reports.push_back(run_case(c, tol));
    }

    reports.push_back(composite_case(seed, tol));
    return reports;
}

}  // namespace cta
