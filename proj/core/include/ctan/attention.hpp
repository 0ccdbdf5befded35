#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include "ctan/ops.hpp"
#include "ctan/sgd.hpp"

namespace cta {

enum class BlockVariant { C, T, TC, CT };

inline const char* to_string(BlockVariant v) {
    switch (v) {
        case BlockVariant::C: return "C";
        case BlockVariant::T: return "T";
        case BlockVariant::TC: return "TC";
        case BlockVariant::CT: return "CT";
    }
    return "?";
}

inline BlockVariant parse_block_variant(const std::string& s) {
    if (s == "C") return BlockVariant::C;
    if (s == "T") return BlockVariant::T;
    if (s == "TC") return BlockVariant::TC;
    if (s == "CT") return BlockVariant::CT;
    throw std::invalid_argument("unknown block variant: " + s);
}

/// Bottleneck MLP for the channel gate: w1 is (C/r x C), w2 is (C x C/r).
/// Biases start at zero, so freshly built parameters behave like the
/// bias-free formulation.
template <class S>
struct ChannelAttentionParamsT {
    TensorT<S> w1, b1, w2, b2;
    std::int64_t channels = 0;
    std::int64_t reduction = 1;

    static ChannelAttentionParamsT make(std::int64_t channels, std::int64_t reduction, Rng& rng) {
        if (channels <= 0 || reduction <= 0) {
            throw std::invalid_argument("channel attention: extents must be positive");
        }
        if (channels % reduction != 0) {
            throw std::invalid_argument("channel attention: C must be divisible by r");
        }
        const std::int64_t hidden = channels / reduction;
        ChannelAttentionParamsT p;
        p.channels = channels;
        p.reduction = reduction;
        const double bound1 = std::sqrt(1.0 / static_cast<double>(channels));
        const double bound2 = std::sqrt(1.0 / static_cast<double>(hidden));
        auto r1 = rng.split("w1");
        auto r2 = rng.split("w2");
        p.w1 = TensorT<S>::random_uniform({hidden, channels}, -bound1, bound1, r1);
        p.b1 = TensorT<S>::zeros({hidden});
        p.w2 = TensorT<S>::random_uniform({channels, hidden}, -bound2, bound2, r2);
        p.b2 = TensorT<S>::zeros({channels});
        mark_trainable(p);
        return p;
    }

    static void mark_trainable(ChannelAttentionParamsT& p) {
        p.w1.set_requires_grad(true);
        p.b1.set_requires_grad(true);
        p.w2.set_requires_grad(true);
        p.b2.set_requires_grad(true);
    }

    void append_params(const std::string& prefix, ParamSet<S>& out) const {
        out.push_back({prefix + ".w1", w1});
        out.push_back({prefix + ".b1", b1});
        out.push_back({prefix + ".w2", w2});
        out.push_back({prefix + ".b2", b2});
    }
};

/// Bottleneck MLP for the temporal gate. The reduced extent is
/// max(1, floor(T/r)); divisibility is not required on the temporal path.
template <class S>
struct TemporalAttentionParamsT {
    TensorT<S> w1, b1, w2, b2;
    std::int64_t frames = 0;
    std::int64_t reduction = 1;

    static TemporalAttentionParamsT make(std::int64_t frames, std::int64_t reduction, Rng& rng) {
        if (frames <= 0 || reduction <= 0) {
            throw std::invalid_argument("temporal attention: extents must be positive");
        }
        const std::int64_t hidden = std::max<std::int64_t>(1, frames / reduction);
        TemporalAttentionParamsT p;
        p.frames = frames;
        p.reduction = reduction;
        const double bound1 = std::sqrt(1.0 / static_cast<double>(frames));
        const double bound2 = std::sqrt(1.0 / static_cast<double>(hidden));
        auto r1 = rng.split("w1");
        auto r2 = rng.split("w2");
        p.w1 = TensorT<S>::random_uniform({hidden, frames}, -bound1, bound1, r1);
        p.b1 = TensorT<S>::zeros({hidden});
        p.w2 = TensorT<S>::random_uniform({frames, hidden}, -bound2, bound2, r2);
        p.b2 = TensorT<S>::zeros({frames});
        mark_trainable(p);
        return p;
    }

    static void mark_trainable(TemporalAttentionParamsT& p) {
        p.w1.set_requires_grad(true);
        p.b1.set_requires_grad(true);
        p.w2.set_requires_grad(true);
        p.b2.set_requires_grad(true);
    }

    void append_params(const std::string& prefix, ParamSet<S>& out) const {
        out.push_back({prefix + ".w1", w1});
        out.push_back({prefix + ".b1", b1});
        out.push_back({prefix + ".w2", w2});
        out.push_back({prefix + ".b2", b2});
    }
};

template <class S>
struct AttentionResult {
    TensorT<S> output;
    TensorT<S> gate;
};

/// Channel-wise excitation: pool over (T,H,W), squeeze-excite through the
/// bottleneck MLP, sigmoid gate per channel, then x + gate (.) x. When
/// force_gate is supplied it replaces the computed gate verbatim.
template <class S>
AttentionResult<S> channel_attention(TapeT<S>& tape, const TensorT<S>& x,
                                     const ChannelAttentionParamsT<S>& p,
                                     const TensorT<S>* force_gate = nullptr) {
    if (x.rank() != 5) throw std::invalid_argument("channel_attention: input must be (N,T,C,H,W)");
    const std::int64_t batch = x.extent(kAxisN);
    const std::int64_t channels = x.extent(kAxisC);
    if (channels != p.channels) {
        throw std::invalid_argument("channel_attention: channel extent does not match parameters");
    }
    if (p.channels % p.reduction != 0) {
        throw std::invalid_argument("channel_attention: C must be divisible by r");
    }

    TensorT<S> gate;
    if (force_gate) {
        const Shape expected{batch, 1, channels, 1, 1};
        if (force_gate->shape() != expected) {
            throw std::invalid_argument("channel_attention: force_gate must be (N,1,C,1,1)");
        }
        gate = *force_gate;
    } else {
        auto pooled = avg_pool_axes(tape, x, {kAxisT, kAxisH, kAxisW});  // (N,1,C,1,1)
        auto flat = reshape(tape, pooled, {batch, channels});
        auto squeezed = relu(tape, linear(tape, p.w1, p.b1, flat));
        auto weights = sigmoid(tape, linear(tape, p.w2, p.b2, squeezed));
        gate = reshape(tape, weights, {batch, 1, channels, 1, 1});
    }
    auto out = add(tape, x, broadcast_mul(tape, gate, x));
    return {out, gate};
}

/// Temporal-wise excitation: pool over (C,H,W), bottleneck MLP over the frame
/// axis, sigmoid gate per frame, then x + gate (.) x.
template <class S>
AttentionResult<S> temporal_attention(TapeT<S>& tape, const TensorT<S>& x,
                                      const TemporalAttentionParamsT<S>& p,
                                      const TensorT<S>* force_gate = nullptr) {
    if (x.rank() != 5) throw std::invalid_argument("temporal_attention: input must be (N,T,C,H,W)");
    const std::int64_t batch = x.extent(kAxisN);
    const std::int64_t frames = x.extent(kAxisT);
    if (frames != p.frames) {
        throw std::invalid_argument("temporal_attention: temporal extent does not match parameters");
    }

    TensorT<S> gate;
    if (force_gate) {
        const Shape expected{batch, frames, 1, 1, 1};
        if (force_gate->shape() != expected) {
            throw std::invalid_argument("temporal_attention: force_gate must be (N,T,1,1,1)");
        }
        gate = *force_gate;
    } else {
        auto pooled = avg_pool_axes(tape, x, {kAxisC, kAxisH, kAxisW});  // (N,T,1,1,1)
        auto flat = reshape(tape, pooled, {batch, frames});
        auto squeezed = relu(tape, linear(tape, p.w1, p.b1, flat));
        auto weights = sigmoid(tape, linear(tape, p.w2, p.b2, squeezed));
        gate = reshape(tape, weights, {batch, frames, 1, 1, 1});
    }
    auto out = add(tape, x, broadcast_mul(tape, gate, x));
    return {out, gate};
}

/// One attention block: variant selects which modules run and in what order.
template <class S>
struct CtaBlockParamsT {
    BlockVariant variant = BlockVariant::CT;
    ChannelAttentionParamsT<S> channel;   // present for C, TC, CT
    TemporalAttentionParamsT<S> temporal; // present for T, TC, CT
    bool has_channel = false;
    bool has_temporal = false;

    static CtaBlockParamsT make(BlockVariant variant, std::int64_t channels, std::int64_t frames,
                                std::int64_t reduction, Rng& rng) {
        CtaBlockParamsT p;
        p.variant = variant;
        p.has_channel = variant != BlockVariant::T;
        p.has_temporal = variant != BlockVariant::C;
        if (p.has_channel) {
            auto rc = rng.split("channel");
            p.channel = ChannelAttentionParamsT<S>::make(channels, reduction, rc);
        }
        if (p.has_temporal) {
            auto rt = rng.split("temporal");
            p.temporal = TemporalAttentionParamsT<S>::make(frames, reduction, rt);
        }
        return p;
    }

    void append_params(const std::string& prefix, ParamSet<S>& out) const {
        if (has_channel) channel.append_params(prefix + ".channel", out);
        if (has_temporal) temporal.append_params(prefix + ".temporal", out);
    }
};

/// Applies the block variant: C and T run a single module, CT runs channel
/// then temporal, TC the reverse. Output shape always equals input shape.
/// force_gate_c / force_gate_t are test hooks forwarded to the submodules.
template <class S>
TensorT<S> cta_forward(TapeT<S>& tape, const TensorT<S>& x, const CtaBlockParamsT<S>& p,
                       const TensorT<S>* force_gate_c = nullptr,
                       const TensorT<S>* force_gate_t = nullptr) {
    switch (p.variant) {
        case BlockVariant::C:
            return channel_attention(tape, x, p.channel, force_gate_c).output;
        case BlockVariant::T:
            return temporal_attention(tape, x, p.temporal, force_gate_t).output;
        case BlockVariant::CT: {
            auto mid = channel_attention(tape, x, p.channel, force_gate_c).output;
            return temporal_attention(tape, mid, p.temporal, force_gate_t).output;
        }
        case BlockVariant::TC: {
            auto mid = temporal_attention(tape, x, p.temporal, force_gate_t).output;
            return channel_attention(tape, mid, p.channel, force_gate_c).output;
        }
    }
    throw std::logic_error("cta_forward: unreachable variant");
}

}  // namespace cta
