#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ctan/tensor.hpp"

namespace cta {

template <class S>
struct NamedParam {
    std::string name;
    TensorT<S> tensor;
};

template <class S>
using ParamSet = std::vector<NamedParam<S>>;

/// SGD with momentum and decoupled-from-nothing weight decay folded into the
/// gradient: v <- momentum*v + (grad + weight_decay*param), param <- param - lr*v.
/// Velocity buffers are keyed by parameter name and start at zero. Gradients
/// are cleared after each step.
template <class S>
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum, double weight_decay)
        : lr_(static_cast<S>(lr)),
          momentum_(static_cast<S>(momentum)),
          weight_decay_(static_cast<S>(weight_decay)) {
        if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
    }

    void set_learning_rate(double lr) {
        if (!(lr > 0.0)) throw std::invalid_argument("sgd: learning rate must be positive");
        lr_ = static_cast<S>(lr);
    }
    double learning_rate() const { return static_cast<double>(lr_); }

    void step(ParamSet<S>& params) {
        for (auto& p : params) {
            if (!p.tensor.has_grad()) {
                throw std::runtime_error("sgd: missing gradient for parameter " + p.name);
            }
            auto values = p.tensor.values_mut();
            const auto grad = p.tensor.grad();
            auto& vel = velocity_[p.name];
            if (vel.size() != values.size()) vel.assign(values.size(), S(0));
            for (std::size_t i = 0; i < values.size(); ++i) {
                vel[i] = momentum_ * vel[i] + (grad[i] + weight_decay_ * values[i]);
                values[i] -= lr_ * vel[i];
            }
            p.tensor.clear_grad();
        }
    }

private:
    S lr_, momentum_, weight_decay_;
    std::unordered_map<std::string, std::vector<S>> velocity_;
};

}  // namespace cta
