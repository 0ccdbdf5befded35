#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ctan/tensor.hpp"

namespace cta {

/// Define-by-run gradient tape. Ops append one node per recorded operation;
/// nodes end up in topological order because recording follows execution.
/// A backward sweep visits every node exactly once, in reverse recording
/// order. The tape must not be shared across threads.
template <class S>
class TapeT {
public:
    using Node = std::function<void()>;

    bool recording() const { return recording_; }
    void set_recording(bool flag) { recording_ = flag; }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    /// Registers the backward rule for an op output and tags the output as
    /// produced on this tape.
    void record(const TensorT<S>& output, Node backward_rule) {
        output.payload()->tape_tag = this;
        output.payload()->node_index = static_cast<std::int64_t>(nodes_.size());
        nodes_.push_back(std::move(backward_rule));
    }

    /// Seeds d(loss)/d(loss) = 1 and sweeps all nodes in reverse order.
    /// Returns the number of nodes visited.
    std::size_t backward(const TensorT<S>& loss) {
        if (loss.numel() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar tensor");
        }
        const auto& pl = loss.payload();
        if (pl->tape_tag != this || pl->node_index < 0) {
            throw std::invalid_argument("backward: loss is not recorded on this tape");
        }
        const_cast<TensorT<S>&>(loss).ensure_grad();
        pl->grad[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
        return nodes_.size();
    }

private:
    std::vector<Node> nodes_;
    bool recording_ = true;
};

using Tape = TapeT<float>;

/// Populates d(loss)/d(t) for every requires_grad tensor reachable from the
/// loss; repeated uses of a tensor accumulate additively.
template <class S>
std::size_t backward(TapeT<S>& tape, const TensorT<S>& loss) {
    return tape.backward(loss);
}

}  // namespace cta
