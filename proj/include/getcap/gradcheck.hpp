#pragma once

#include <functional>
#include <string>
#include <vector>

#include "getcap/tensor.hpp"

namespace getcap {

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error: |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-5;
};

// Compares the tape gradient of `loss_fn` against central differences for
// every entry of every parameter. `loss_fn` is evaluated both with and
// without an active tape and must be deterministic (reseed any RNG inside).
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const ParamList& params,
                                  const GradCheckOptions& opts = {});

}  // namespace getcap
