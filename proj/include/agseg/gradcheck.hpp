// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of tape gradients.

#pragma once

#include "agseg/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace agseg::gradcheck {

struct Options {
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-2;
  /// Entries checked per tensor; 0 checks every entry.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

struct Entry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct Report {
  std::vector<Entry> entries;
  double max_rel_error = 0.0;
  /// Entries whose numeric loss was not finite on either side of the step.
  std::size_t skipped = 0;
  bool passed = true;

  const Entry* worst() const;
};

using Target = std::pair<std::string, Tensor>;

/// `tape_loss` builds the scalar on the tape (gradients are taken with
/// backward); `numeric_loss` evaluates the same function forward-only in
/// double precision and is what the central differences are taken of. A
/// non-finite numeric loss marks a step that crossed a kink; that entry is
/// skipped. Each target must be a leaf that requires a gradient; its gradient
/// is reset.
Report check(const std::function<Tensor()>& tape_loss,
             const std::function<double()>& numeric_loss, const std::vector<Target>& targets,
             const Options& options = {});

/// sum(y (.) r) accumulated in double.
double projected_sum(const Tensor& y, const Tensor& r);

double relative_error(double analytic, double numeric, double abs_floor);

} // namespace agseg::gradcheck
