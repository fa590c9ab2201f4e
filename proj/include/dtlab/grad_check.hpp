#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dtlab/autodiff.hpp"

namespace dtlab {

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  /// Denominator floor for the relative error, so elements whose true
  /// gradient is numerically zero compare on an absolute scale.
  double denom_floor = 1e-6;
  /// Elements checked per parameter; 0 checks every element.
  std::size_t max_elements = 0;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

/// Builds the scalar loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Compares reverse-mode gradients of every trainable parameter against
/// central finite differences. Parameter values are restored afterwards.
GradCheckReport grad_check(ParameterSet<double>& params, const LossBuilder& loss, const GradCheckOptions& options = {});

}  // namespace dtlab
