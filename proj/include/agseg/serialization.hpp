// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// JSON and CSV encodings of configs, run reports and tuning tables.
//
// Parsing is strict: unknown keys and mistyped values are errors, every error
// in a document is collected before throwing, and missing keys take their
// defaults. Encoders always write every field.

#pragma once

#include "agseg/evaluation.hpp"
#include "agseg/network.hpp"
#include "agseg/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace agseg {

using Json = nlohmann::ordered_json;

class ConfigError : public std::invalid_argument {
public:
  ConfigError(const std::string& context, std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

private:
  std::vector<std::string> errors_;
};

Json to_json(const NetworkConfig& config);
Json to_json(const nn::LossConfig& config);
Json to_json(const data::AugmentationSpec& spec);
Json to_json(const train::HyperConfig& config);
Json to_json(const train::RunSettings& settings);
Json to_json(const eval::ConfusionMatrix& cm);
Json to_json(const eval::MetricsReport& report);
Json to_json(const train::TrainRunReport& report);
Json to_json(const train::TuneResult& result);

NetworkConfig network_config_from_json(const Json& j);
nn::LossConfig loss_config_from_json(const Json& j);
data::AugmentationSpec augmentation_from_json(const Json& j);
train::HyperConfig hyper_config_from_json(const Json& j);
train::RunSettings run_settings_from_json(const Json& j);
eval::ConfusionMatrix confusion_from_json(const Json& j);
eval::MetricsReport metrics_from_json(const Json& j);
train::TrainRunReport report_from_json(const Json& j);

/// A complete experiment: run settings plus where to read data and write
/// results. Relative paths are resolved against the config file's directory.
struct RunConfigFile {
  train::RunSettings settings;
  std::string manifest;
  std::string output_dir;

  bool operator==(const RunConfigFile&) const = default;
};

Json to_json(const RunConfigFile& config);
RunConfigFile run_config_from_json(const Json& j);
RunConfigFile load_run_config(const std::filesystem::path& path);

/// A grid file is a JSON array of HyperConfig objects.
std::vector<train::HyperConfig> grid_from_json(const Json& j);
std::vector<train::HyperConfig> load_grid(const std::filesystem::path& path);

Json read_json_file(const std::filesystem::path& path);
/// Pretty-printed JSON with a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// fold,epoch,train_loss,val_loss
std::string loss_csv(const train::TrainRunReport& report);
/// One row per fold plus an "aggregate" row: counts then metrics.
std::string metrics_csv(const train::TrainRunReport& report);
/// rank,round,learning_rate,filter_size,batch_size,k,final_bce,error
std::string tune_csv(const std::vector<train::TuneResult>& ranked);

} // namespace agseg
