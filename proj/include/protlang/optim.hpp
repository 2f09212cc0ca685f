#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protlang/tensor.hpp"

namespace protlang {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;  // decoupled, applied directly to the weights
};

// Piecewise schedule: linear 0 -> peak over warmup steps, cosine peak -> min_lr
// until total_steps, min_lr afterwards.
double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double peak_lr, double min_lr,
                 std::uint64_t warmup_steps);

// Holds first/second moments per parameter.  Parameters whose requires_grad
// flag is off are skipped entirely, so frozen weights stay bit-identical.
template <class S>
class AdamW {
 public:
  explicit AdamW(std::vector<NamedTensor<S>> params, AdamWConfig cfg = {});

  // One update using each parameter's accumulated grad (missing grad == 0).
  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

  // Moments flattened for checkpoints, named opt.<param>.m / opt.<param>.v.
  std::vector<NamedTensor<S>> state() const;
  void load_state(const std::vector<NamedTensor<S>>& entries);

 private:
  struct Slot {
    std::string name;
    Tensor<S> param;
    std::vector<S> m, v;
  };
  std::vector<Slot> slots_;
  AdamWConfig cfg_;
  std::uint64_t t_ = 0;
};

}  // namespace protlang
