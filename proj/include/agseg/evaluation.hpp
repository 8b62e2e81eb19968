// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Pixel metrics, confusion matrices and subject-wise fold planning.

#pragma once

#include "agseg/data.hpp"
#include "agseg/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace agseg::eval {

struct ConfusionMatrix {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b);

struct MetricsReport {
  double iou = 0.0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double bce = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

/// A pixel is predicted positive iff pred_prob >= threshold.
ConfusionMatrix confusion(const Tensor& pred_prob, const Tensor& mask, double threshold = 0.5);

/// Ratios from counts. Empty prediction and empty mask give 1 for iou,
/// precision, recall and f1; exactly one of them empty gives 0.
MetricsReport metrics_from_counts(const ConfusionMatrix& cm, double bce);

/// Counts-derived metrics plus the mean BCE of pred_prob against mask.
MetricsReport metrics(const ConfusionMatrix& cm, const Tensor& pred_prob, const Tensor& mask);

struct FoldPlan {
  int k = 0;
  bool subject_wise = true;
  std::map<std::string, int> subject_folds; // subject-wise plans
  std::vector<int> record_folds;            // fold of each manifest record

  /// Indices of manifest records in `fold`.
  std::vector<std::size_t> records_in(int fold) const;
};

class FoldError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Shuffles subjects (or records when subject_wise is false) with `seed` and
/// deals them round-robin into k folds.
FoldPlan kfold_plan(const data::Manifest& manifest, int k, std::uint64_t seed, bool subject_wise = true);

struct Split {
  std::vector<std::size_t> train, validation, test; // manifest record indices
};

/// Ten subject-wise portions: 0-5 train, 6-7 validation, 8-9 test.
Split split_622(const data::Manifest& manifest, std::uint64_t seed);

} // namespace agseg::eval
