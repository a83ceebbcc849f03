#pragma once

// Central finite differences against tape gradients.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "pfseg/tensor.hpp"

namespace pfseg {

struct GradCheckEntry {
  std::size_t param = 0;  // index into the params list
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_param;
};

/// Compares the tape gradient of the scalar `f` with central differences
/// (f(p+eps) - f(p-eps)) / 2eps for every coordinate of every tensor in
/// `params`. The error per coordinate is |g_tape - g_fd| / max(1, |g_fd|).
///
/// `f` must build its graph on whatever tape is active; it is evaluated once
/// with a tape (for the analytic gradient) and otherwise without one.
inline GradCheckReport finite_difference_report(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                                double eps = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) {
    throw ConfigError("finite_difference_check: epsilon " + std::to_string(eps) + " outside [1e-7, 1e-4]");
  }
  auto eval = [&f] {
    NoGradScope no_grad;
    const Tensor v = f();
    if (v.numel() != 1) throw DimensionError("finite_difference_check: f must be scalar-valued");
    return v.item();
  };

  const double base_a = eval();
  const double base_b = eval();
  if (std::memcmp(&base_a, &base_b, sizeof(double)) != 0) {
    throw OracleError("finite_difference_check: f is not deterministic (" + std::to_string(base_a) + " vs " +
                      std::to_string(base_b) + ")");
  }

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    GradientTape tape;
    TapeScope scope(&tape);
    const Tensor loss = f();
    tape.backward(loss);
  }
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry entry;
    entry.param = pi;
    auto data = params[pi].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = eval();
      data[i] = saved - eps;
      const double down = eval();
      data[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      if (err > entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_coordinate = i;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_param.push_back(entry);
  }
  return report;
}

inline double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                      double eps = 1e-6) {
  return finite_difference_report(f, std::move(params), eps).max_rel_error;
}

}  // namespace pfseg
