#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctan/rng.hpp"

namespace cta {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (const auto e : shape) n *= e;
    return n;
}

inline std::vector<std::int64_t> row_major_strides(const Shape& shape) {
    std::vector<std::int64_t> strides(shape.size(), 1);
    for (int d = static_cast<int>(shape.size()) - 2; d >= 0; --d) {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    return strides;
}

/// Dense row-major tensor handle over a shared buffer. Copying a TensorT
/// copies the handle, not the data. Values are treated as immutable during a
/// forward/backward pass; values_mut() exists for builders and the optimizer,
/// which run between passes.
template <class S>
class TensorT {
public:
    struct Payload {
        Shape shape;
        std::vector<S> values;
        std::vector<S> grad;  // empty until the backward sweep touches it
        bool requires_grad = false;
        const void* tape_tag = nullptr;  // producing tape; null for leaves
        std::int64_t node_index = -1;
    };

    TensorT() = default;

    static TensorT zeros(Shape shape) { return filled(std::move(shape), S(0)); }

    static TensorT filled(Shape shape, S value) {
        validate_shape(shape);
        auto p = std::make_shared<Payload>();
        p->values.assign(static_cast<std::size_t>(shape_numel(shape)), value);
        p->shape = std::move(shape);
        return TensorT(std::move(p));
    }

    static TensorT from_values(Shape shape, std::vector<S> values) {
        validate_shape(shape);
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
            throw std::invalid_argument("tensor: value count does not match shape");
        }
        auto p = std::make_shared<Payload>();
        p->shape = std::move(shape);
        p->values = std::move(values);
        return TensorT(std::move(p));
    }

    static TensorT scalar_value(S value) { return from_values({1}, {value}); }

    static TensorT random_uniform(Shape shape, double lo, double hi, Rng& rng) {
        validate_shape(shape);
        std::vector<S> v(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& e : v) e = static_cast<S>(rng.next_uniform(lo, hi));
        return from_values(std::move(shape), std::move(v));
    }

    bool defined() const { return static_cast<bool>(p_); }

    const Shape& shape() const { return checked().shape; }
    int rank() const { return static_cast<int>(checked().shape.size()); }
    std::int64_t extent(int axis) const { return checked().shape.at(axis); }
    std::int64_t numel() const { return static_cast<std::int64_t>(checked().values.size()); }

    std::span<const S> values() const { return {checked().values.data(), checked().values.size()}; }
    std::span<S> values_mut() { return {checked().values.data(), checked().values.size()}; }

    S item() const {
        if (numel() != 1) throw std::invalid_argument("tensor: item() requires a single element");
        return checked().values[0];
    }

    S at(std::initializer_list<std::int64_t> index) const {
        const auto& pl = checked();
        if (index.size() != pl.shape.size()) {
            throw std::invalid_argument("tensor: index rank mismatch");
        }
        const auto strides = row_major_strides(pl.shape);
        std::int64_t flat = 0;
        int d = 0;
        for (const auto i : index) {
            if (i < 0 || i >= pl.shape[d]) throw std::out_of_range("tensor: index out of range");
            flat += i * strides[d];
            ++d;
        }
        return pl.values[static_cast<std::size_t>(flat)];
    }

    bool requires_grad() const { return checked().requires_grad; }
    TensorT& set_requires_grad(bool flag) {
        checked().requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return defined() && !p_->grad.empty(); }
    std::span<const S> grad() const {
        const auto& pl = checked();
        if (pl.grad.empty()) throw std::runtime_error("tensor: gradient has not been populated");
        return {pl.grad.data(), pl.grad.size()};
    }

    /// Zero-filled gradient buffer, allocated on first use.
    void ensure_grad() {
        auto& pl = checked();
        if (pl.grad.empty()) pl.grad.assign(pl.values.size(), S(0));
    }

    void clear_grad() { checked().grad.clear(); }

    void accumulate_grad(std::span<const S> g) {
        ensure_grad();
        auto& buf = p_->grad;
        if (g.size() != buf.size()) throw std::invalid_argument("tensor: gradient size mismatch");
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    }

    /// Deep copy of values (grad and tape linkage are not carried over).
    TensorT clone() const {
        const auto& pl = checked();
        auto t = from_values(pl.shape, pl.values);
        t.p_->requires_grad = pl.requires_grad;
        return t;
    }

    bool all_finite() const {
        for (const auto v : checked().values) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    const std::shared_ptr<Payload>& payload() const {
        checked();
        return p_;
    }

private:
    explicit TensorT(std::shared_ptr<Payload> p) : p_(std::move(p)) {}

    static void validate_shape(const Shape& shape) {
        for (const auto e : shape) {
            if (e <= 0) throw std::invalid_argument("tensor: extents must be positive");
        }
    }

    Payload& checked() {
        if (!p_) throw std::invalid_argument("tensor: undefined");
        return *p_;
    }
    const Payload& checked() const {
        if (!p_) throw std::invalid_argument("tensor: undefined");
        return *p_;
    }

    std::shared_ptr<Payload> p_;
};

using Tensor = TensorT<float>;

template <class S>
bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
    return a.shape() == b.shape();
}

template <class S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
    if (!same_shape(a, b)) return false;
    return std::memcmp(a.values().data(), b.values().data(), a.values().size_bytes()) == 0;
}

template <class S>
void assert_all_finite(const TensorT<S>& t, const std::string& context) {
    if (!t.all_finite()) {
        throw std::runtime_error("non-finite values detected in " + context);
    }
}

}  // namespace cta
