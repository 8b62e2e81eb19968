// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/serialization.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

namespace agseg {

namespace {

std::string join_errors(const std::string& context, const std::vector<std::string>& errors) {
  std::string msg = context;
  for (const auto& e : errors) {
    msg += "\n  " + e;
  }
  return msg;
}

std::string type_name(const Json& j) { return j.type_name(); }

// Typed extraction; each returns an error description or nothing.
std::optional<std::string> read_value(const Json& j, double& out) {
  if (!j.is_number()) {
    return "expected a number, got " + type_name(j);
  }
  out = j.get<double>();
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, std::int64_t& out) {
  if (!j.is_number_integer()) {
    return "expected an integer, got " + type_name(j);
  }
  if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    return "integer out of range";
  }
  out = j.get<std::int64_t>();
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, int& out) {
  std::int64_t v = 0;
  if (auto err = read_value(j, v)) {
    return err;
  }
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    return "integer out of range";
  }
  out = static_cast<int>(v);
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, std::uint64_t& out) {
  if (!j.is_number_integer()) {
    return "expected a non-negative integer, got " + type_name(j);
  }
  if (!j.is_number_unsigned() && j.get<std::int64_t>() < 0) {
    return "expected a non-negative integer";
  }
  out = j.get<std::uint64_t>();
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, bool& out) {
  if (!j.is_boolean()) {
    return "expected a boolean, got " + type_name(j);
  }
  out = j.get<bool>();
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, std::string& out) {
  if (!j.is_string()) {
    return "expected a string, got " + type_name(j);
  }
  out = j.get<std::string>();
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, std::vector<std::int64_t>& out) {
  if (!j.is_array()) {
    return "expected an array of integers, got " + type_name(j);
  }
  std::vector<std::int64_t> values;
  for (const auto& item : j) {
    std::int64_t v = 0;
    if (read_value(item, v)) {
      return "expected an array of integers";
    }
    values.push_back(v);
  }
  out = std::move(values);
  return std::nullopt;
}

template <typename T>
std::optional<std::string> read_value(const Json& j, std::optional<T>& out) {
  if (j.is_null()) {
    out.reset();
    return std::nullopt;
  }
  T v{};
  if (auto err = read_value(j, v)) {
    return *err + " or null";
  }
  out = v;
  return std::nullopt;
}

std::optional<std::string> read_value(const Json& j, DecoderUpsampling& out) {
  if (j == "transpose_conv") {
    out = DecoderUpsampling::transpose_conv;
  } else if (j == "nearest_conv") {
    out = DecoderUpsampling::nearest_conv;
  } else {
    return "expected \"transpose_conv\" or \"nearest_conv\"";
  }
  return std::nullopt;
}

const char* upsampling_name(DecoderUpsampling u) {
  return u == DecoderUpsampling::transpose_conv ? "transpose_conv" : "nearest_conv";
}

// Walks one JSON object, recording which keys were consumed.
class ObjectReader {
public:
  ObjectReader(const Json& j, std::string path, std::vector<std::string>& errors)
      : json_(j), path_(std::move(path)), errors_(errors) {
    if (!j.is_object()) {
      errors_.push_back(label() + "expected an object, got " + type_name(j));
      valid_ = false;
    }
  }

  bool valid() const { return valid_; }

  template <typename T> void optional(const std::string& key, T& out) {
    seen_.insert(key);
    if (!valid_ || !json_.contains(key)) {
      return;
    }
    if (auto err = read_value(json_.at(key), out)) {
      errors_.push_back(child(key) + ": " + *err);
    }
  }

  template <typename T> void required(const std::string& key, T& out) {
    if (valid_ && !json_.contains(key)) {
      errors_.push_back(child(key) + ": missing required key");
    }
    optional(key, out);
  }

  /// The sub-object at `key`, or nullptr when absent.
  const Json* object(const std::string& key) {
    seen_.insert(key);
    if (!valid_ || !json_.contains(key)) {
      return nullptr;
    }
    return &json_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() {
    if (!valid_) {
      return;
    }
    for (const auto& [key, value] : json_.items()) {
      if (!seen_.count(key)) {
        errors_.push_back(child(key) + ": unknown key");
      }
    }
  }

private:
  std::string label() const { return path_.empty() ? "" : path_ + ": "; }

  const Json& json_;
  std::string path_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
  bool valid_ = true;
};

void append_prefixed(std::vector<std::string>& errors, const std::string& prefix,
                     const std::vector<std::string>& more) {
  for (const auto& e : more) {
    errors.push_back(prefix.empty() ? e : prefix + ": " + e);
  }
}

void parse_into(const Json& j, const std::string& path, NetworkConfig& c, std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.optional("input_channels", c.input_channels);
  r.optional("input_size", c.input_size);
  r.optional("encoder_filters", c.encoder_filters);
  r.optional("decoder_filters", c.decoder_filters);
  r.optional("base_filter_scale", c.base_filter_scale);
  r.optional("ag_after_block", c.ag_after_block);
  r.optional("ea_tap_block", c.ea_tap_block);
  r.optional("kernel_size", c.kernel_size);
  r.optional("upsampling", c.upsampling);
  r.optional("seed", c.seed);
  r.finish();
  if (r.valid()) {
    append_prefixed(errors, path, c.validate());
  }
}

void parse_into(const Json& j, const std::string& path, nn::LossConfig& c, std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.optional("gamma", c.gamma);
  r.optional("pos_weight", c.pos_weight);
  r.optional("lambda_edge", c.lambda_edge);
  r.optional("lambda_reg", c.lambda_reg);
  r.finish();
  if (!(c.gamma >= 0.0)) {
    errors.push_back(r.child("gamma") + ": must be >= 0");
  }
  if (c.pos_weight && !(*c.pos_weight > 0.0)) {
    errors.push_back(r.child("pos_weight") + ": must be > 0");
  }
  if (!(c.lambda_edge >= 0.0)) {
    errors.push_back(r.child("lambda_edge") + ": must be >= 0");
  }
  if (!(c.lambda_reg >= 0.0)) {
    errors.push_back(r.child("lambda_reg") + ": must be >= 0");
  }
}

void parse_into(const Json& j, const std::string& path, data::AugmentationSpec& s,
                std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.optional("rotation_degrees", s.rotation_degrees);
  r.optional("shear_range", s.shear_range);
  r.optional("scale_min", s.scale_min);
  r.optional("scale_max", s.scale_max);
  r.optional("crop_fraction", s.crop_fraction);
  r.optional("height_shift_fraction", s.height_shift_fraction);
  r.optional("seed", s.seed);
  r.optional("enabled", s.enabled);
  r.finish();
  if (r.valid()) {
    append_prefixed(errors, path, s.validate());
  }
}

void parse_into(const Json& j, const std::string& path, train::HyperConfig& c, std::vector<std::string>& errors) {
  ObjectReader r(j, path, errors);
  r.optional("learning_rate", c.learning_rate);
  r.optional("filter_size", c.filter_size);
  r.optional("batch_size", c.batch_size);
  r.optional("k", c.k);
  r.optional("epochs_cap", c.epochs_cap);
  r.optional("seed", c.seed);
  r.finish();
  if (r.valid()) {
    append_prefixed(errors, path, c.validate());
  }
}

template <typename T> void parse_section(ObjectReader& r, const std::string& key, T& out, std::vector<std::string>& errors) {
  if (const Json* sub = r.object(key)) {
    parse_into(*sub, r.child(key), out, errors);
  }
}

void parse_settings_fields(ObjectReader& r, train::RunSettings& s, std::vector<std::string>& errors) {
  parse_section(r, "network", s.network, errors);
  parse_section(r, "hyper", s.hyper, errors);
  parse_section(r, "loss", s.loss, errors);
  parse_section(r, "augmentation", s.augmentation, errors);
  r.optional("threshold", s.threshold);
  r.optional("patience_epochs", s.patience_epochs);
  if (!(s.threshold > 0.0 && s.threshold < 1.0)) {
    errors.push_back(r.child("threshold") + ": must lie in (0, 1)");
  }
  if (s.patience_epochs < 1) {
    errors.push_back(r.child("patience_epochs") + ": must be >= 1");
  }
}

template <typename T> T parse_or_throw(const Json& j, const std::string& what) {
  std::vector<std::string> errors;
  T out;
  parse_into(j, "", out, errors);
  if (!errors.empty()) {
    throw ConfigError("invalid " + what + ":", errors);
  }
  return out;
}

// Report documents are machine-written; a missing or mistyped field is a
// format error rather than something to default.
template <typename T> T field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw std::invalid_argument(std::string("report: missing field '") + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw std::invalid_argument(std::string("report: field '") + key + "' has the wrong type");
  }
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    out += c;
    if (c == '"') {
      out += '"';
    }
  }
  return out + "\"";
}

} // namespace

ConfigError::ConfigError(const std::string& context, std::vector<std::string> errors)
    : std::invalid_argument(join_errors(context, errors)), errors_(std::move(errors)) {}

Json to_json(const NetworkConfig& c) {
  return Json{{"input_channels", c.input_channels},
              {"input_size", c.input_size},
              {"encoder_filters", c.encoder_filters},
              {"decoder_filters", c.decoder_filters},
              {"base_filter_scale", c.base_filter_scale},
              {"ag_after_block", c.ag_after_block},
              {"ea_tap_block", c.ea_tap_block},
              {"kernel_size", c.kernel_size},
              {"upsampling", upsampling_name(c.upsampling)},
              {"seed", c.seed}};
}

Json to_json(const nn::LossConfig& c) {
  Json j{{"gamma", c.gamma}};
  j["pos_weight"] = c.pos_weight ? Json(*c.pos_weight) : Json(nullptr);
  j["lambda_edge"] = c.lambda_edge;
  j["lambda_reg"] = c.lambda_reg;
  return j;
}

Json to_json(const data::AugmentationSpec& s) {
  return Json{{"rotation_degrees", s.rotation_degrees},
              {"shear_range", s.shear_range},
              {"scale_min", s.scale_min},
              {"scale_max", s.scale_max},
              {"crop_fraction", s.crop_fraction},
              {"height_shift_fraction", s.height_shift_fraction},
              {"seed", s.seed},
              {"enabled", s.enabled}};
}

Json to_json(const train::HyperConfig& c) {
  Json j{{"learning_rate", c.learning_rate}};
  j["filter_size"] = c.filter_size ? Json(*c.filter_size) : Json(nullptr);
  j["batch_size"] = c.batch_size;
  j["k"] = c.k;
  j["epochs_cap"] = c.epochs_cap;
  j["seed"] = c.seed;
  return j;
}

Json to_json(const train::RunSettings& s) {
  return Json{{"network", to_json(s.network)},
              {"hyper", to_json(s.hyper)},
              {"loss", to_json(s.loss)},
              {"augmentation", to_json(s.augmentation)},
              {"threshold", s.threshold},
              {"patience_epochs", s.patience_epochs}};
}

Json to_json(const eval::ConfusionMatrix& cm) {
  return Json{{"tp", cm.tp}, {"fp", cm.fp}, {"fn", cm.fn}, {"tn", cm.tn}};
}

Json to_json(const eval::MetricsReport& m) {
  return Json{{"iou", m.iou},       {"accuracy", m.accuracy}, {"precision", m.precision},
              {"recall", m.recall}, {"f1", m.f1},             {"bce", m.bce}};
}

Json to_json(const train::TrainRunReport& report) {
  Json folds = Json::array();
  for (const auto& f : report.folds) {
    Json epochs = Json::array();
    for (const auto& e : f.epochs) {
      epochs.push_back(Json{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
    }
    folds.push_back(Json{{"fold", f.fold},
                         {"epochs", std::move(epochs)},
                         {"early_stopped", f.early_stopped},
                         {"train_records", f.train_records},
                         {"validation_records", f.validation_records},
                         {"test_records", f.test_records},
                         {"confusion", to_json(f.confusion)},
                         {"metrics", to_json(f.metrics)}});
  }
  return Json{{"format", "agseg-report"},
              {"version", 1},
              {"mode", report.mode},
              {"config", to_json(report.settings)},
              {"folds", std::move(folds)},
              {"aggregate_confusion", to_json(report.aggregate_confusion)},
              {"aggregate", to_json(report.aggregate)}};
}

Json to_json(const train::TuneResult& r) {
  Json j{{"grid_index", r.grid_index}, {"config", to_json(r.config)}};
  j["final_bce"] = std::isfinite(r.final_bce) ? Json(r.final_bce) : Json(nullptr);
  j["epochs_trained"] = r.epochs_trained;
  j["error"] = r.error;
  return j;
}

NetworkConfig network_config_from_json(const Json& j) { return parse_or_throw<NetworkConfig>(j, "network config"); }

nn::LossConfig loss_config_from_json(const Json& j) { return parse_or_throw<nn::LossConfig>(j, "loss config"); }

data::AugmentationSpec augmentation_from_json(const Json& j) {
  return parse_or_throw<data::AugmentationSpec>(j, "augmentation spec");
}

train::HyperConfig hyper_config_from_json(const Json& j) {
  return parse_or_throw<train::HyperConfig>(j, "hyper config");
}

train::RunSettings run_settings_from_json(const Json& j) {
  std::vector<std::string> errors;
  train::RunSettings s;
  ObjectReader r(j, "", errors);
  parse_settings_fields(r, s, errors);
  r.finish();
  if (!errors.empty()) {
    throw ConfigError("invalid run settings:", errors);
  }
  return s;
}

eval::ConfusionMatrix confusion_from_json(const Json& j) {
  eval::ConfusionMatrix cm;
  cm.tp = field<std::int64_t>(j, "tp");
  cm.fp = field<std::int64_t>(j, "fp");
  cm.fn = field<std::int64_t>(j, "fn");
  cm.tn = field<std::int64_t>(j, "tn");
  return cm;
}

eval::MetricsReport metrics_from_json(const Json& j) {
  eval::MetricsReport m;
  m.iou = field<double>(j, "iou");
  m.accuracy = field<double>(j, "accuracy");
  m.precision = field<double>(j, "precision");
  m.recall = field<double>(j, "recall");
  m.f1 = field<double>(j, "f1");
  m.bce = field<double>(j, "bce");
  return m;
}

train::TrainRunReport report_from_json(const Json& j) {
  if (field<std::string>(j, "format") != "agseg-report" || field<int>(j, "version") != 1) {
    throw std::invalid_argument("report: unsupported format");
  }
  train::TrainRunReport report;
  report.mode = field<std::string>(j, "mode");
  report.settings = run_settings_from_json(j.at("config"));
  for (const auto& fj : field<Json>(j, "folds")) {
    train::FoldReport f;
    f.fold = field<int>(fj, "fold");
    for (const auto& ej : field<Json>(fj, "epochs")) {
      f.epochs.push_back({field<int>(ej, "epoch"), field<double>(ej, "train_loss"), field<double>(ej, "val_loss")});
    }
    f.early_stopped = field<bool>(fj, "early_stopped");
    f.train_records = field<std::size_t>(fj, "train_records");
    f.validation_records = field<std::size_t>(fj, "validation_records");
    f.test_records = field<std::size_t>(fj, "test_records");
    f.confusion = confusion_from_json(field<Json>(fj, "confusion"));
    f.metrics = metrics_from_json(field<Json>(fj, "metrics"));
    report.folds.push_back(std::move(f));
  }
  report.aggregate_confusion = confusion_from_json(field<Json>(j, "aggregate_confusion"));
  report.aggregate = metrics_from_json(field<Json>(j, "aggregate"));
  return report;
}

Json to_json(const RunConfigFile& c) {
  Json j = to_json(c.settings);
  j["manifest"] = c.manifest;
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfigFile run_config_from_json(const Json& j) {
  std::vector<std::string> errors;
  RunConfigFile c;
  ObjectReader r(j, "", errors);
  parse_settings_fields(r, c.settings, errors);
  r.required("manifest", c.manifest);
  r.required("output_dir", c.output_dir);
  r.finish();
  if (!errors.empty()) {
    throw ConfigError("invalid run config:", errors);
  }
  return c;
}

RunConfigFile load_run_config(const std::filesystem::path& path) {
  RunConfigFile c;
  try {
    c = run_config_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": invalid run config:", e.errors());
  }
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) {
      p = (base / p).lexically_normal().string();
    }
  };
  resolve(c.manifest);
  resolve(c.output_dir);
  return c;
}

std::vector<train::HyperConfig> grid_from_json(const Json& j) {
  std::vector<std::string> errors;
  std::vector<train::HyperConfig> grid;
  if (!j.is_array()) {
    throw ConfigError("invalid grid:", {"expected an array of hyper configs, got " + type_name(j)});
  }
  for (std::size_t i = 0; i < j.size(); ++i) {
    train::HyperConfig c;
    parse_into(j[i], "[" + std::to_string(i) + "]", c, errors);
    grid.push_back(c);
  }
  if (grid.empty()) {
    errors.push_back("grid is empty");
  }
  if (!errors.empty()) {
    throw ConfigError("invalid grid:", errors);
  }
  return grid;
}

std::vector<train::HyperConfig> load_grid(const std::filesystem::path& path) {
  try {
    return grid_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": invalid grid:", e.errors());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) {
    throw std::runtime_error("cannot open " + path.string());
  }
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  os << text;
  if (!os) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

std::string format_double(double value) {
  if (std::isnan(value)) {
    return "nan";
  }
  if (std::isinf(value)) {
    return value > 0 ? "inf" : "-inf";
  }
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string loss_csv(const train::TrainRunReport& report) {
  std::ostringstream os;
  os << "fold,epoch,train_loss,val_loss\n";
  for (const auto& f : report.folds) {
    for (const auto& e : f.epochs) {
      os << f.fold << ',' << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss)
         << '\n';
    }
  }
  return os.str();
}

std::string metrics_csv(const train::TrainRunReport& report) {
  std::ostringstream os;
  os << "fold,tp,fp,fn,tn,iou,accuracy,precision,recall,f1,bce\n";
  auto row = [&](const std::string& label, const eval::ConfusionMatrix& cm, const eval::MetricsReport& m) {
    os << label << ',' << cm.tp << ',' << cm.fp << ',' << cm.fn << ',' << cm.tn << ',' << format_double(m.iou)
       << ',' << format_double(m.accuracy) << ',' << format_double(m.precision) << ','
       << format_double(m.recall) << ',' << format_double(m.f1) << ',' << format_double(m.bce) << '\n';
  };
  for (const auto& f : report.folds) {
    row(std::to_string(f.fold), f.confusion, f.metrics);
  }
  row("aggregate", report.aggregate_confusion, report.aggregate);
  return os.str();
}

std::string tune_csv(const std::vector<train::TuneResult>& ranked) {
  std::ostringstream os;
  os << "rank,round,learning_rate,filter_size,batch_size,k,final_bce,error\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    os << i + 1 << ',' << r.grid_index + 1 << ',' << format_double(r.config.learning_rate) << ','
       << (r.config.filter_size ? std::to_string(*r.config.filter_size) : "") << ',' << r.config.batch_size << ','
       << r.config.k << ',' << (r.error.empty() ? format_double(r.final_bce) : "") << ',' << csv_escape(r.error)
       << '\n';
  }
  return os.str();
}

} // namespace agseg
