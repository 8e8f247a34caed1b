#include "mcst/tape.hpp"

namespace mcst {

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (!loss.requires_grad() || !loss.has_grad())
    throw ContractError(
        "backward() on a detached tensor: loss was not produced under grad "
        "tracking");
  loss.grad()[0] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
}

void backward(Tensor& loss) {
  Tape* t = Tape::active();
  if (!t) throw ContractError("backward() with no active tape");
  t->backward(loss);
}

}  // namespace mcst
