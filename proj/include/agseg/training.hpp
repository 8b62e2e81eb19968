// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Epoch loop, early stopping, cross-validated runs and the grid search.

#pragma once

#include "agseg/data.hpp"
#include "agseg/evaluation.hpp"
#include "agseg/network.hpp"
#include "agseg/nn.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace agseg::train {

struct HyperConfig {
  double learning_rate = 4e-4;
  /// Widest encoder filter count; the schedule halves per block. Unset keeps
  /// the network config's explicit filter lists.
  std::optional<std::int64_t> filter_size;
  std::int64_t batch_size = 16;
  int k = 10;
  int epochs_cap = 50;
  std::uint64_t seed = 0;

  std::vector<std::string> validate() const;
  bool operator==(const HyperConfig&) const = default;
};

/// Everything that determines a run.
struct RunSettings {
  NetworkConfig network;
  HyperConfig hyper;
  nn::LossConfig loss;
  data::AugmentationSpec augmentation;
  double threshold = 0.5;
  int patience_epochs = 1;

  bool operator==(const RunSettings&) const = default;
};

/// Network config with the filter schedule implied by hyper.filter_size:
/// encoder [f, f/2, f/4, f/8], decoder the reverse.
NetworkConfig apply_filter_size(NetworkConfig network, const HyperConfig& hyper);

struct EarlyStopPolicy {
  int patience_epochs = 1;
};

/// True iff the last `patience_epochs` consecutive deltas are all strictly
/// positive.
bool check_early_stop(const std::vector<double>& history, const EarlyStopPolicy& policy);

/// Samples loaded and prepared at network resolution, in manifest order.
std::vector<data::Sample> load_dataset(const data::Manifest& manifest, const NetworkConfig& network);

std::vector<data::Sample> select(const std::vector<data::Sample>& all, const std::vector<std::size_t>& indices);

/// One shuffled pass of mini-batch Adam. Returns the sample-weighted mean
/// total loss.
double train_epoch(NetworkState& state, const std::vector<data::Sample>& samples, const HyperConfig& hyper,
                   nn::AdamState& adam, const data::AugmentationSpec& aug, const nn::LossConfig& loss,
                   int epoch_index);

struct Evaluation {
  eval::ConfusionMatrix confusion;
  double bce = 0.0;  // pixel-mean BCE of the segmentation output
  double loss = 0.0; // sample-weighted mean total loss
  eval::MetricsReport metrics;
};

Evaluation evaluate(const NetworkState& state, const std::vector<data::Sample>& samples,
                    const nn::LossConfig& loss, double threshold, std::int64_t batch_size);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct FoldReport {
  int fold = 0;
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
  std::size_t train_records = 0;
  std::size_t validation_records = 0;
  std::size_t test_records = 0;
  eval::ConfusionMatrix confusion;
  eval::MetricsReport metrics;

  bool operator==(const FoldReport&) const = default;
};

struct TrainRunReport {
  std::string mode; // "train" or "cv"
  RunSettings settings;
  std::vector<FoldReport> folds;
  eval::ConfusionMatrix aggregate_confusion;
  eval::MetricsReport aggregate;
  /// Kept out of the report file so reports are byte-reproducible.
  double wall_seconds = 0.0;
};

struct FitResult {
  std::vector<EpochRecord> epochs;
  bool early_stopped = false;
};

/// Trains until early stopping on the validation loss or epochs_cap.
FitResult fit(NetworkState& state, const std::vector<data::Sample>& train, const std::vector<data::Sample>& validation,
              const RunSettings& settings);

/// Trains on the 6/2/2 split and evaluates on its test portion. The trained
/// network is returned through `trained` when given.
TrainRunReport run_train(const data::Manifest& manifest, const RunSettings& settings,
                         NetworkState* trained = nullptr);

/// k-fold cross-validation with a fresh network per fold (seed + fold).
TrainRunReport run_cv(const data::Manifest& manifest, const RunSettings& settings, int jobs = 1);

struct TuneResult {
  std::size_t grid_index = 0;
  HyperConfig config;
  double final_bce = std::numeric_limits<double>::infinity();
  std::string error; // non-empty when the configuration failed
  int epochs_trained = 0;
};

/// Ascending final BCE; ties by lower learning rate, then smaller filter
/// size, then grid order. Failed configurations rank last.
std::vector<TuneResult> rank_results(std::vector<TuneResult> results);

using ConfigEvaluator = std::function<double(const HyperConfig&, std::size_t grid_index)>;

/// Evaluates every grid entry (failures recorded, search continues) and ranks.
std::vector<TuneResult> hyper_search(const std::vector<HyperConfig>& grid, const ConfigEvaluator& evaluate_config,
                                     int jobs = 1);

/// Trains each configuration for exactly one epoch on the 6/2/2 training split
/// and scores the validation BCE.
std::vector<TuneResult> hyper_search(const data::Manifest& manifest, const std::vector<HyperConfig>& grid,
                                     const RunSettings& settings, int jobs = 1);

/// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first failure.
void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

} // namespace agseg::train
