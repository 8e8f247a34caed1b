#pragma once

#include <functional>
#include <vector>

#include "mcst/tensor.hpp"

namespace mcst {

/// Append-only record of executed ops for reverse-mode differentiation.
///
/// Constructing a Tape makes it the active tape for the current thread
/// (tapes nest as a stack; destruction pops). Ops record a backward
/// closure when any input requires grad. Execution order is topological
/// by construction, so backward() is one reverse sweep, each node visited
/// exactly once.
///
/// A tape and the model it records are confined to one thread; forward
/// passes with no active tape record nothing and allocate no grads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  size_t node_count() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and sweeps all nodes in reverse, populating
  /// grads of every requires_grad ancestor. `loss` must be a scalar that
  /// was produced (or is a leaf) under grad tracking.
  void backward(Tensor& loss);

  /// Drops all recorded nodes and the activations their closures hold.
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
  Tape* prev_ = nullptr;
};

/// backward() on the active tape; ContractError when no tape is active.
void backward(Tensor& loss);

}  // namespace mcst
