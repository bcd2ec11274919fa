#pragma once

#include <torch/torch.h>

#include <vector>

namespace cam::branch {

/// Records the discrete decisions of piecewise ops (ReLU masks, pooling
/// argmaxes, clamp regions, bilinear cells) during one forward pass and
/// replays them in later passes. Replaying keeps a perturbed evaluation on
/// the same smooth piece as the recorded one, which is what finite-difference
/// gradient checks of piecewise-smooth networks need.
class Tape {
 public:
  enum class Mode { Record, Replay };

  torch::Tensor decide(const torch::Tensor& computed) {
    if (mode_ == Mode::Record) {
      decisions_.push_back(computed.detach().clone());
      return computed;
    }
    TORCH_CHECK(cursor_ < decisions_.size(), "branch tape replay ran past the recorded pass");
    return decisions_[cursor_++];
  }

  void set_mode(Mode m) {
    mode_ = m;
    cursor_ = 0;
    if (m == Mode::Record) decisions_.clear();
  }

  size_t size() const { return decisions_.size(); }

 private:
  Mode mode_ = Mode::Record;
  std::vector<torch::Tensor> decisions_;
  size_t cursor_ = 0;
};

inline Tape*& active_tape() {
  thread_local Tape* tape = nullptr;
  return tape;
}

/// Activates a tape for the current thread in the given mode.
class Scope {
 public:
  Scope(Tape& tape, Tape::Mode mode) : previous_(active_tape()) {
    tape.set_mode(mode);
    active_tape() = &tape;
  }
  ~Scope() { active_tape() = previous_; }
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

 private:
  Tape* previous_;
};

inline torch::Tensor relu(const torch::Tensor& x) {
  Tape* tape = active_tape();
  if (!tape) return torch::relu(x);
  return x * tape->decide(x > 0).to(x.scalar_type());
}

inline torch::Tensor clamp(const torch::Tensor& x, double lo, double hi) {
  Tape* tape = active_tape();
  if (!tape) return x.clamp(lo, hi);
  auto region = tape->decide(torch::stack({x < lo, x > hi}));
  return torch::where(region[0], torch::full_like(x, lo), torch::where(region[1], torch::full_like(x, hi), x));
}

/// Non-overlapping k x k max pooling.
inline torch::Tensor max_pool2d(const torch::Tensor& x, int64_t k) {
  Tape* tape = active_tape();
  if (!tape) return torch::max_pool2d(x, k);
  auto [values, indices] = torch::max_pool2d_with_indices(x, k);
  auto idx = tape->decide(indices);
  return x.flatten(2).gather(2, idx.flatten(2)).view(idx.sizes());
}

/// floor() of a coordinate tensor, detached.
inline torch::Tensor floor(const torch::Tensor& x) {
  Tape* tape = active_tape();
  auto f = x.detach().floor();
  return tape ? tape->decide(f) : f;
}

}  // namespace cam::branch
