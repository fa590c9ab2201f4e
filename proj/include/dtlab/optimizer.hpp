#pragma once

#include <cstddef>
#include <vector>

#include "dtlab/autodiff.hpp"

namespace dtlab {

/// Linear warmup then constant: base * k / warmup for 1-based step k < warmup,
/// base afterwards.
double warmup_lr(double base, std::size_t step, std::size_t warmup);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// AdamW with decoupled weight decay over one or more parameter groups.
/// Non-trainable parameters are skipped entirely.
class AdamW {
 public:
  explicit AdamW(std::size_t warmup = 0, AdamWConfig config = {}) : config_(config), warmup_(warmup) {}

  void add_group(ParameterSet<float>& params, double lr, double weight_decay);

  /// One update; step k (1-based) uses warmup_lr(group lr, k, warmup).
  void step();
  std::size_t steps_taken() const { return t_; }

 private:
  struct State {
    Parameter<float>* param;
    std::vector<double> m, v;
  };
  struct Group {
    double lr;
    double weight_decay;
    std::vector<State> states;
  };
  AdamWConfig config_;
  std::size_t warmup_;
  std::vector<Group> groups_;
  std::size_t t_ = 0;
};

/// Global L2 norm over the gradients of trainable parameters.
double grad_norm(const std::vector<const ParameterSet<float>*>& sets);

}  // namespace dtlab
