#include "dtlab/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dtlab {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape<double> tape;
  const Var v = loss(tape);
  return tape.value(v)[0];
}

}  // namespace

GradCheckReport grad_check(ParameterSet<double>& params, const LossBuilder& loss, const GradCheckOptions& opt) {
  params.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  for (auto& p : params) {
    if (!p.trainable) continue;
    GradCheckEntry e;
    e.name = p.name;
    const std::size_t n = p.value.size();
    const std::size_t stride = (opt.max_elements == 0 || n <= opt.max_elements) ? 1 : n / opt.max_elements;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p.value[i];
      p.value[i] = saved + opt.step;
      const double up = evaluate(loss);
      p.value[i] = saved - opt.step;
      const double down = evaluate(loss);
      p.value[i] = saved;

      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = p.grad.empty() ? 0.0 : p.grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.denom_floor});
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, abs_err / denom);
      ++e.checked;
    }
    e.passed = e.max_rel_error < opt.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.passed = report.passed && e.passed;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace dtlab
