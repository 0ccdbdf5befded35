#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctan/attention.hpp"
#include "ctan/ops.hpp"
#include "ctan/sgd.hpp"

namespace cta {

struct StageConfig {
    std::int64_t out_channels = 0;
    std::int64_t kernel_t = 3, kernel_h = 3, kernel_w = 3;
    Stride3 stride{1, 1, 1};
    Pad3 padding{0, 0, 0};
};

/// Geometry and head widths for the mini 3-D CNN extractor. Attention blocks
/// may only be inserted after middle stages (never the first or last one).
struct BackboneConfig {
    std::int64_t in_frames = 16;
    std::int64_t in_channels = 1;
    std::int64_t in_height = 28;
    std::int64_t in_width = 28;
    std::vector<StageConfig> stages;
    std::set<int> cta_after;
    BlockVariant variant = BlockVariant::CT;
    std::int64_t reduction = 4;
    std::int64_t hidden_y = 32;
    std::int64_t hidden_d = 32;
    double dropout_p = 0.5;

    std::int64_t feature_dim() const {
        return stages.empty() ? 0 : stages.back().out_channels;
    }

    void validate() const {
        if (stages.empty()) throw std::invalid_argument("backbone: at least one stage required");
        if (in_frames <= 0 || in_channels <= 0 || in_height <= 0 || in_width <= 0) {
            throw std::invalid_argument("backbone: input extents must be positive");
        }
        for (const auto& s : stages) {
            if (s.out_channels <= 0) throw std::invalid_argument("backbone: stage channels must be positive");
            if (s.kernel_t <= 0 || s.kernel_h <= 0 || s.kernel_w <= 0) {
                throw std::invalid_argument("backbone: kernel extents must be positive");
            }
        }
        const int last = static_cast<int>(stages.size()) - 1;
        for (const int idx : cta_after) {
            if (idx < 0 || idx > last) {
                throw std::invalid_argument("backbone: cta_after references a missing stage");
            }
            if (idx == 0 || idx == last) {
                throw std::invalid_argument(
                    "backbone: attention blocks go after middle stages only, not the first or last");
            }
        }
        if (reduction <= 0) throw std::invalid_argument("backbone: reduction must be positive");
        if (hidden_y <= 0 || hidden_d <= 0) throw std::invalid_argument("backbone: head widths must be positive");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            throw std::invalid_argument("backbone: dropout must lie in [0, 1)");
        }
    }

    /// Three stages of (8, 16, 32) channels, 3x3x3 kernels, spatial stride 2,
    /// one attention block after the middle stage.
    static BackboneConfig desk_default() {
        BackboneConfig c;
        c.stages = {
            {8, 3, 3, 3, {1, 2, 2}, {1, 1, 1}},
            {16, 3, 3, 3, {1, 2, 2}, {1, 1, 1}},
            {32, 3, 3, 3, {1, 2, 2}, {1, 1, 1}},
        };
        c.cta_after = {1};
        return c;
    }

    bool operator==(const BackboneConfig&) const = default;
};

inline bool operator==(const StageConfig& a, const StageConfig& b) {
    return a.out_channels == b.out_channels && a.kernel_t == b.kernel_t &&
           a.kernel_h == b.kernel_h && a.kernel_w == b.kernel_w && a.stride.t == b.stride.t &&
           a.stride.h == b.stride.h && a.stride.w == b.stride.w && a.padding.t == b.padding.t &&
           a.padding.h == b.padding.h && a.padding.w == b.padding.w;
}
inline bool operator==(const Stride3& a, const Stride3& b) {
    return a.t == b.t && a.h == b.h && a.w == b.w;
}
inline bool operator==(const Pad3& a, const Pad3& b) { return a.t == b.t && a.h == b.h && a.w == b.w; }

template <class S>
struct ConvStageT {
    TensorT<S> kernels;
    TensorT<S> bias;
    Stride3 stride;
    Pad3 padding;
};

template <class S>
struct AffineT {
    TensorT<S> w;
    TensorT<S> b;
};

/// The full model: shared feature extractor G_f (conv stages + attention
/// blocks), action classifier G_y and domain discriminator G_d.
template <class S>
struct ModelBundleT {
    BackboneConfig config;
    std::int64_t num_classes = 0;
    std::vector<ConvStageT<S>> stages;
    std::map<int, CtaBlockParamsT<S>> cta;  // keyed by insertion stage index
    AffineT<S> action1, action2;
    AffineT<S> domain1, domain2;

    /// Every trainable tensor with its stable checkpoint name, in a fixed
    /// order: stages, attention blocks by index, action head, domain head.
    ParamSet<S> parameters() const {
        ParamSet<S> out;
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::string prefix = "stage" + std::to_string(i);
            out.push_back({prefix + ".kernels", stages[i].kernels});
            out.push_back({prefix + ".bias", stages[i].bias});
        }
        for (const auto& [idx, block] : cta) {
            block.append_params("cta" + std::to_string(idx), out);
        }
        out.push_back({"action.w1", action1.w});
        out.push_back({"action.b1", action1.b});
        out.push_back({"action.w2", action2.w});
        out.push_back({"action.b2", action2.b});
        out.push_back({"domain.w1", domain1.w});
        out.push_back({"domain.b1", domain1.b});
        out.push_back({"domain.w2", domain2.w});
        out.push_back({"domain.b2", domain2.b});
        return out;
    }

    ModelBundleT clone() const {
        ModelBundleT copy = *this;
        for (auto& s : copy.stages) {
            s.kernels = s.kernels.clone();
            s.bias = s.bias.clone();
        }
        for (auto& [idx, block] : copy.cta) {
            if (block.has_channel) {
                block.channel.w1 = block.channel.w1.clone();
                block.channel.b1 = block.channel.b1.clone();
                block.channel.w2 = block.channel.w2.clone();
                block.channel.b2 = block.channel.b2.clone();
            }
            if (block.has_temporal) {
                block.temporal.w1 = block.temporal.w1.clone();
                block.temporal.b1 = block.temporal.b1.clone();
                block.temporal.w2 = block.temporal.w2.clone();
                block.temporal.b2 = block.temporal.b2.clone();
            }
        }
        for (auto* a : {&copy.action1, &copy.action2, &copy.domain1, &copy.domain2}) {
            a->w = a->w.clone();
            a->b = a->b.clone();
        }
        return copy;
    }
};

using ModelBundle = ModelBundleT<float>;

namespace detail {

template <class S>
AffineT<S> make_affine(std::int64_t out_dim, std::int64_t in_dim, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(in_dim));
    AffineT<S> a;
    a.w = TensorT<S>::random_uniform({out_dim, in_dim}, -bound, bound, rng);
    a.b = TensorT<S>::zeros({out_dim});
    a.w.set_requires_grad(true);
    a.b.set_requires_grad(true);
    return a;
}

}  // namespace detail

/// Temporal extent entering the block after stage `idx`, given the input
/// geometry and the strides of stages 0..idx.
inline std::int64_t frames_after_stage(const BackboneConfig& cfg, int idx) {
    std::int64_t t = cfg.in_frames;
    for (int i = 0; i <= idx; ++i) {
        const auto& s = cfg.stages[i];
        const std::int64_t span = t + 2 * s.padding.t - s.kernel_t;
        if (span < 0) throw std::invalid_argument("backbone: temporal extent underflows at stage " + std::to_string(i));
        t = span / s.stride.t + 1;
    }
    return t;
}

/// Deterministic initialization: the same (config, num_classes, seed) always
/// produces bitwise-identical parameters. Every parameter draws from its own
/// name-keyed stream, so shared layers initialize identically across variants.
template <class S>
ModelBundleT<S> init_model(const BackboneConfig& config, std::int64_t num_classes,
                           std::uint64_t seed) {
    config.validate();
    if (num_classes <= 0) throw std::invalid_argument("init_model: need a positive class count");

    ModelBundleT<S> m;
    m.config = config;
    m.num_classes = num_classes;
    Rng root(seed);
    auto init_rng = root.split("init");

    std::int64_t channels = config.in_channels;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        const auto& s = config.stages[i];
        const std::int64_t fan_in = channels * s.kernel_t * s.kernel_h * s.kernel_w;
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        auto rk = init_rng.split("stage" + std::to_string(i) + ".kernels");
        ConvStageT<S> stage;
        stage.kernels = TensorT<S>::random_uniform(
            {s.out_channels, channels, s.kernel_t, s.kernel_h, s.kernel_w}, -bound, bound, rk);
        stage.bias = TensorT<S>::zeros({s.out_channels});
        stage.kernels.set_requires_grad(true);
        stage.bias.set_requires_grad(true);
        stage.stride = s.stride;
        stage.padding = s.padding;
        m.stages.push_back(std::move(stage));
        channels = s.out_channels;
    }

    std::int64_t stage_channels = config.in_channels;
    for (int i = 0; i < static_cast<int>(config.stages.size()); ++i) {
        stage_channels = config.stages[i].out_channels;
        if (config.cta_after.count(i)) {
            auto rb = init_rng.split("cta" + std::to_string(i));
            m.cta.emplace(i, CtaBlockParamsT<S>::make(config.variant, stage_channels,
                                                      frames_after_stage(config, i),
                                                      config.reduction, rb));
        }
    }

    const std::int64_t d = config.feature_dim();
    auto ra1 = init_rng.split("action.w1");
    auto ra2 = init_rng.split("action.w2");
    auto rd1 = init_rng.split("domain.w1");
    auto rd2 = init_rng.split("domain.w2");
    m.action1 = detail::make_affine<S>(config.hidden_y, d, ra1);
    m.action2 = detail::make_affine<S>(num_classes, config.hidden_y, ra2);
    m.domain1 = detail::make_affine<S>(config.hidden_d, d, rd1);
    m.domain2 = detail::make_affine<S>(2, config.hidden_d, rd2);
    return m;
}

/// G_f: per stage conv3d -> ReLU -> optional attention block, then global
/// average pooling over (T,H,W) down to one embedding row per sample. The
/// same parameters apply regardless of which domain a sample comes from.
template <class S>
TensorT<S> extract_features(TapeT<S>& tape, const TensorT<S>& x, const ModelBundleT<S>& m,
                            bool /*train_mode*/ = false) {
    if (x.rank() != 5) throw std::invalid_argument("extract_features: input must be (N,T,C,H,W)");
    TensorT<S> h = x;
    for (std::size_t i = 0; i < m.stages.size(); ++i) {
        const auto& s = m.stages[i];
        h = relu(tape, conv3d(tape, h, s.kernels, s.bias, s.stride, s.padding));
        const auto it = m.cta.find(static_cast<int>(i));
        if (it != m.cta.end()) h = cta_forward(tape, h, it->second);
    }
    auto pooled = avg_pool_axes(tape, h, {kAxisT, kAxisH, kAxisW});
    return reshape(tape, pooled, {x.extent(kAxisN), m.config.feature_dim()});
}

/// G_y: affine -> ReLU -> dropout -> affine. Logits only; softmax lives in
/// the loss and in the argmax at inference. dropout_rng is required in train
/// mode.
template <class S>
TensorT<S> classify_action(TapeT<S>& tape, const TensorT<S>& features, const ModelBundleT<S>& m,
                           bool train_mode, Rng* dropout_rng = nullptr) {
    if (features.rank() != 2 || features.extent(1) != m.config.feature_dim()) {
        throw std::invalid_argument("classify_action: feature extent does not match the head");
    }
    if (train_mode && dropout_rng == nullptr) {
        throw std::invalid_argument("classify_action: train mode needs a dropout rng");
    }
    auto h = relu(tape, linear(tape, m.action1.w, m.action1.b, features));
    auto d = train_mode ? dropout(tape, h, m.config.dropout_p, true, *dropout_rng) : h;
    return linear(tape, m.action2.w, m.action2.b, d);
}

/// Discriminator head without the reversal layer; the seam the GRL contract
/// checks compare against.
template <class S>
TensorT<S> domain_head_forward(TapeT<S>& tape, const TensorT<S>& features,
                               const ModelBundleT<S>& m) {
    if (features.rank() != 2 || features.extent(1) != m.config.feature_dim()) {
        throw std::invalid_argument("discriminate_domain: feature extent does not match the head");
    }
    auto h = relu(tape, linear(tape, m.domain1.w, m.domain1.b, features));
    return linear(tape, m.domain2.w, m.domain2.b, h);
}

/// G_d: gradient reversal at `coeff`, then the two-layer discriminator. The
/// forward value is independent of coeff; the backward pass into the
/// extractor is scaled by -coeff.lambda.
template <class S>
TensorT<S> discriminate_domain(TapeT<S>& tape, const TensorT<S>& features,
                               const ModelBundleT<S>& m, GrlCoefficient coeff) {
    if (features.rank() != 2 || features.extent(1) != m.config.feature_dim()) {
        throw std::invalid_argument("discriminate_domain: feature extent does not match the head");
    }
    return domain_head_forward(tape, grad_reverse(tape, features, coeff), m);
}

/// Checkpoints: u32 parameter count, then {u16 name length, name bytes,
/// tensor record} per parameter, each record in the binary tensor format.
void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle);
void load_checkpoint(const std::filesystem::path& path, ModelBundle& bundle);

}  // namespace cta
