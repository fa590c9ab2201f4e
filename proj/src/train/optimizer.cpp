#include "dtlab/optimizer.hpp"

#include <cmath>

namespace dtlab {

double warmup_lr(double base, std::size_t step, std::size_t warmup) {
  if (warmup == 0 || step >= warmup) return base;
  return base * static_cast<double>(step) / static_cast<double>(warmup);
}

void AdamW::add_group(ParameterSet<float>& params, double lr, double weight_decay) {
  Group g{lr, weight_decay, {}};
  for (auto& p : params) {
    if (!p.trainable) continue;
    g.states.push_back({&p, std::vector<double>(p.value.size(), 0.0), std::vector<double>(p.value.size(), 0.0)});
  }
  groups_.push_back(std::move(g));
}

void AdamW::step() {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& g : groups_) {
    const double glr = warmup_lr(g.lr, t_, warmup_);
    for (auto& s : g.states) {
      auto& value = s.param->value;
      const auto& grad = s.param->grad;
      const bool has_grad = !grad.empty();
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gi = has_grad ? grad[i] : 0.0;
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * gi;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * gi * gi;
        const double update = (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.eps);
        const double p = value[i];
        value[i] = static_cast<float>(p - glr * (update + g.weight_decay * p));
      }
    }
  }
}

double grad_norm(const std::vector<const ParameterSet<float>*>& sets) {
  double sum = 0.0;
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      if (!p.trainable || p.grad.empty()) continue;
      for (float g : p.grad.values()) sum += static_cast<double>(g) * g;
    }
  }
  return std::sqrt(sum);
}

}  // namespace dtlab
