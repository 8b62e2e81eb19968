// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/gradcheck.hpp"

#include "agseg/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace agseg::gradcheck {

const Entry* Report::worst() const {
  if (entries.empty()) {
    return nullptr;
  }
  return &*std::max_element(entries.begin(), entries.end(),
                            [](const Entry& a, const Entry& b) { return a.rel_error < b.rel_error; });
}

double relative_error(double analytic, double numeric, double abs_floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / denom;
}

double projected_sum(const Tensor& y, const Tensor& r) {
  if (y.shape() != r.shape()) {
    throw ShapeError("projected_sum: " + to_string(y.shape()) + " vs " + to_string(r.shape()));
  }
  const auto yv = y.data(), rv = r.data();
  double s = 0.0;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    s += static_cast<double>(yv[i]) * rv[i];
  }
  return s;
}

Report check(const std::function<Tensor()>& tape_loss,
             const std::function<double()>& numeric_loss, const std::vector<Target>& targets,
             const Options& options) {
  for (const auto& [name, t] : targets) {
    if (!t.is_leaf() || !t.requires_grad()) {
      throw std::invalid_argument("gradcheck target '" + name + "' must be a leaf requiring grad");
    }
  }
  for (auto [name, t] : targets) {
    t.clear_grad();
  }
  tape_loss().backward();

  Report report;
  Rng rng(options.sample_seed);
  for (auto [name, t] : targets) {
    const auto grad = t.grad_tensor();
    std::vector<std::size_t> indices(static_cast<std::size_t>(t.numel()));
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_tensor != 0 && indices.size() > options.max_entries_per_tensor) {
      rng.shuffle(indices);
      indices.resize(options.max_entries_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    auto values = t.mutable_data();
    for (auto i : indices) {
      const float original = values[i];
      const float up = static_cast<float>(original + options.step);
      const float down = static_cast<float>(original - options.step);
      values[i] = up;
      const double f_up = numeric_loss();
      values[i] = down;
      const double f_down = numeric_loss();
      values[i] = original;
      if (!std::isfinite(f_up) || !std::isfinite(f_down)) {
        ++report.skipped;
        continue;
      }
      // Divide by the step actually representable in float.
      const double numeric = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
      const double analytic = grad.data()[i];
      Entry e{name, i, analytic, numeric, relative_error(analytic, numeric, options.abs_floor)};
      report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      report.entries.push_back(std::move(e));
    }
    t.clear_grad();
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

} // namespace agseg::gradcheck
