// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Trainable parameters, Glorot initialization, Adam and the segmentation losses.

#pragma once

#include "agseg/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace agseg::nn {

/// Named trainable tensors in insertion order. Names are hierarchical paths
/// such as "enc.block1.conv1.weight"; a trailing ".bias" marks a bias.
class ParamStore {
public:
  Tensor& add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t parameter_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();

private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

bool is_bias_name(const std::string& name);

/// Uniform draws in [-sqrt(6 / (fan_in + fan_out)), +sqrt(6 / (fan_in + fan_out))].
Tensor glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::uint64_t seed);

double glorot_bound(std::int64_t fan_in, std::int64_t fan_out);

struct AdamConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step_count = 0;
  std::map<std::string, std::vector<float>> first_moment;
  std::map<std::string, std::vector<float>> second_moment;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update of every parameter, then clears gradients.
/// Throws if any parameter has no gradient.
void adam_step(ParamStore& params, AdamState& state);

inline constexpr double kProbabilityClamp = 1e-7;

struct LossConfig {
  double gamma = 2.0;
  /// Positive-class weight; unset means negatives/positives of each batch.
  std::optional<double> pos_weight;
  double lambda_edge = 1.0;
  double lambda_reg = 0.004;

  bool operator==(const LossConfig&) const = default;
};

/// Mean binary cross-entropy of clamped probabilities against {0,1} targets.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

/// Mean of -[w*y*(1-p)^g*log p + (1-y)*p^g*log(1-p)].
Tensor focal_bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg);

/// Class weight used by focal_bce_loss for this target batch.
double resolve_pos_weight(const Tensor& target, const LossConfig& cfg);

/// lambda * sum of squared weights; biases are exempt.
Tensor l2_penalty(const ParamStore& params, double lambda);

} // namespace agseg::nn
