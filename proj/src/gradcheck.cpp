#include "getcap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace getcap {

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const ParamList& params,
                                  const GradCheckOptions& opts) {
  std::vector<Tensor> leaves;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
    t.set_requires_grad(true);
    leaves.push_back(t);
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = leaves[k];
    const std::vector<double> analytic = t.grad();
    GradCheckEntry entry;
    entry.name = params[k].name;
    entry.count = t.numel();
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + opts.step;
      const double up = loss_fn().item();
      data[i] = saved - opts.step;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.abs_floor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    entry.passed = entry.max_rel_error < opts.tol;
    report.passed = report.passed && entry.passed;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
    t.zero_grad();
  }
  return report;
}

}  // namespace getcap
