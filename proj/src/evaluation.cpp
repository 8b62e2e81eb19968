// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/evaluation.hpp"

#include "agseg/nn.hpp"
#include "agseg/random.hpp"

#include <algorithm>
#include <stdexcept>

namespace agseg::eval {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  tp += other.tp;
  fp += other.fp;
  fn += other.fn;
  tn += other.tn;
  return *this;
}

ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }

ConfusionMatrix confusion(const Tensor& pred_prob, const Tensor& mask, double threshold) {
  if (pred_prob.shape() != mask.shape()) {
    throw ShapeError("confusion: prediction " + to_string(pred_prob.shape()) + " and mask " +
                     to_string(mask.shape()) + " differ");
  }
  ConfusionMatrix cm;
  const auto p = pred_prob.data(), m = mask.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (m[i] != 0.0f && m[i] != 1.0f) {
      throw std::invalid_argument("confusion: mask must be binary, found value " + std::to_string(m[i]));
    }
    const bool predicted = p[i] >= threshold;
    const bool actual = m[i] == 1.0f;
    if (predicted) {
      (actual ? cm.tp : cm.fp) += 1;
    } else {
      (actual ? cm.fn : cm.tn) += 1;
    }
  }
  return cm;
}

MetricsReport metrics_from_counts(const ConfusionMatrix& cm, double bce) {
  MetricsReport r;
  r.bce = bce;
  const auto tp = static_cast<double>(cm.tp), fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);
  const bool pred_empty = cm.tp + cm.fp == 0;
  const bool mask_empty = cm.tp + cm.fn == 0;
  r.accuracy = cm.total() == 0 ? 1.0 : static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  if (pred_empty && mask_empty) {
    r.iou = r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.iou = tp / (tp + fp + fn);
  r.precision = pred_empty ? 0.0 : tp / (tp + fp);
  r.recall = mask_empty ? 0.0 : tp / (tp + fn);
  r.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
  return r;
}

MetricsReport metrics(const ConfusionMatrix& cm, const Tensor& pred_prob, const Tensor& mask) {
  NoGradGuard guard;
  return metrics_from_counts(cm, nn::bce_loss(pred_prob, mask).item());
}

std::vector<std::size_t> FoldPlan::records_in(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < record_folds.size(); ++i) {
    if (record_folds[i] == fold) {
      out.push_back(i);
    }
  }
  return out;
}

FoldPlan kfold_plan(const data::Manifest& manifest, int k, std::uint64_t seed, bool subject_wise) {
  if (k < 2) {
    throw FoldError("k must be >= 2, got " + std::to_string(k));
  }
  FoldPlan plan;
  plan.k = k;
  plan.subject_wise = subject_wise;
  Rng rng(seed);
  if (subject_wise) {
    auto subjects = manifest.subjects();
    if (static_cast<std::size_t>(k) > subjects.size()) {
      throw FoldError("k = " + std::to_string(k) + " exceeds the number of subjects (" +
                      std::to_string(subjects.size()) + ")");
    }
    std::sort(subjects.begin(), subjects.end());
    rng.shuffle(subjects);
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      plan.subject_folds[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
    plan.record_folds.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
      plan.record_folds.push_back(plan.subject_folds.at(r.subject_id));
    }
  } else {
    const auto n = manifest.records.size();
    if (static_cast<std::size_t>(k) > n) {
      throw FoldError("k = " + std::to_string(k) + " exceeds the number of records (" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
      order[i] = i;
    }
    rng.shuffle(order);
    plan.record_folds.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      plan.record_folds[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    }
  }
  return plan;
}

Split split_622(const data::Manifest& manifest, std::uint64_t seed) {
  const auto subjects = manifest.subjects().size();
  if (subjects < 10) {
    throw FoldError("the 6/2/2 split needs at least 10 subjects, manifest has " + std::to_string(subjects));
  }
  const auto plan = kfold_plan(manifest, 10, seed, true);
  Split split;
  for (std::size_t i = 0; i < plan.record_folds.size(); ++i) {
    const int portion = plan.record_folds[i];
    (portion < 6 ? split.train : portion < 8 ? split.validation : split.test).push_back(i);
  }
  return split;
}

} // namespace agseg::eval
