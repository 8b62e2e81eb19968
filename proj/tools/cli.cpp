// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "agseg/data.hpp"
#include "agseg/edge_attention.hpp"
#include "agseg/image_io.hpp"
#include "agseg/network.hpp"
#include "agseg/plot.hpp"
#include "agseg/serialization.hpp"
#include "agseg/training.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace agseg::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("AGSEG_SEED");
  if (!raw || !*raw) {
    return std::nullopt;
  }
  const std::string text(raw);
  std::uint64_t value = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw UsageError("AGSEG_SEED must be a non-negative integer, got '" + text + "'");
  }
  return value;
}

void apply_seed_override(train::RunSettings& s) {
  if (const auto seed = env_seed()) {
    s.network.seed = *seed;
    s.hyper.seed = *seed;
    s.augmentation.seed = *seed;
  }
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  }
}

RunConfigFile load_config(const std::string& path, const std::string& out_override) {
  auto cfg = load_run_config(path);
  apply_seed_override(cfg.settings);
  if (!out_override.empty()) {
    cfg.output_dir = out_override;
  }
  return cfg;
}

void write_run_outputs(const fs::path& dir, const RunConfigFile& cfg, const train::TrainRunReport& report) {
  write_json_file(dir / "config.json", to_json(cfg));
  write_json_file(dir / "report.json", to_json(report));
  write_text_file(dir / "losses.csv", loss_csv(report));
  write_text_file(dir / "metrics.csv", metrics_csv(report));
  write_json_file(dir / "timing.json", Json{{"wall_seconds", report.wall_seconds}});
}

void print_summary(std::ostream& out, const train::TrainRunReport& report) {
  const auto& m = report.aggregate;
  out << report.mode << ": " << report.folds.size() << " fold(s); iou " << format_double(m.iou) << ", accuracy "
      << format_double(m.accuracy) << ", precision " << format_double(m.precision) << ", recall "
      << format_double(m.recall) << ", f1 " << format_double(m.f1) << ", bce " << format_double(m.bce) << '\n';
}

struct SynthArgs {
  std::int64_t n = 8;
  std::int64_t size = 32;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto manifest = data::synth_corpus(a.n, a.size, a.seed, a.out);
  out << "wrote " << manifest.records.size() << " samples and manifest.csv to " << a.out << '\n';
  return kExitOk;
}

struct EdgesArgs {
  std::string masks;
  std::string out;
  int factor = 1;
};

int cmd_edges(const EdgesArgs& a, std::ostream& out) {
  std::vector<fs::path> inputs;
  if (fs::is_directory(a.masks)) {
    for (const auto& entry : fs::directory_iterator(a.masks)) {
      if (entry.is_regular_file() && entry.path().extension() == ".png") {
        inputs.push_back(entry.path());
      }
    }
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.emplace_back(a.masks);
  }
  if (inputs.empty()) {
    throw std::runtime_error("--masks " + a.masks + ": no PNG masks found");
  }
  make_output_dir(a.out);
  for (const auto& path : inputs) {
    try {
      const auto mask = data::mask_to_tensor(io::read_png(path.string()));
      const auto h = mask.shape()[1], w = mask.shape()[2];
      auto target = edge::edge_target_from_mask(mask.reshape({1, 1, h, w}));
      if (a.factor > 1) {
        target = edge::downsample_target(target, a.factor);
      }
      const auto& s = target.shape();
      const auto img = data::tensor_to_image(target.reshape({1, s[2], s[3]}));
      io::write_png((fs::path(a.out) / (path.stem().string() + "_edge.png")).string(), img);
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": " + e.what());
    }
  }
  out << "wrote " << inputs.size() << " edge target(s) to " << a.out << '\n';
  return kExitOk;
}

struct RunArgs {
  std::string config;
  std::string grid;
  std::string out;
  int jobs = 1;
};

int cmd_train(const RunArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config, a.out);
  const auto manifest = data::load_manifest(cfg.manifest);
  make_output_dir(cfg.output_dir);
  NetworkState trained;
  const auto report = train::run_train(manifest, cfg.settings, &trained);
  const fs::path dir(cfg.output_dir);
  save_checkpoint((dir / "model.ckpt").string(), trained);
  write_run_outputs(dir, cfg, report);
  print_summary(out, report);
  return kExitOk;
}

int cmd_cv(const RunArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config, a.out);
  const auto manifest = data::load_manifest(cfg.manifest);
  make_output_dir(cfg.output_dir);
  const auto report = train::run_cv(manifest, cfg.settings, a.jobs);
  write_run_outputs(cfg.output_dir, cfg, report);
  print_summary(out, report);
  return kExitOk;
}

int cmd_tune(const RunArgs& a, std::ostream& out) {
  const auto cfg = load_config(a.config, a.out);
  auto grid = load_grid(a.grid);
  if (const auto seed = env_seed()) {
    for (auto& g : grid) {
      g.seed = *seed;
    }
  }
  const auto manifest = data::load_manifest(cfg.manifest);
  make_output_dir(cfg.output_dir);
  const auto ranked = train::hyper_search(manifest, grid, cfg.settings, a.jobs);
  const fs::path dir(cfg.output_dir);
  write_json_file(dir / "config.json", to_json(cfg));
  Json results = Json::array();
  for (const auto& r : ranked) {
    results.push_back(to_json(r));
  }
  write_json_file(dir / "tune.json", results);
  const auto table = tune_csv(ranked);
  write_text_file(dir / "tune.csv", table);
  out << table;
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string out;
  double threshold = 0.5;
};

io::Image8 map_to_image(const Tensor& nchw, bool binarize, double threshold) {
  const auto& s = nchw.shape();
  Tensor map({1, s[2], s[3]}, 0.0f);
  auto dst = map.mutable_data();
  const auto src = nchw.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = binarize ? (src[i] >= threshold ? 1.0f : 0.0f) : src[i];
  }
  return data::tensor_to_image(map);
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto state = load_checkpoint(a.checkpoint);
  io::Image8 raw;
  try {
    raw = io::read_png(a.image);
  } catch (const std::exception& e) {
    throw std::runtime_error("--image " + a.image + ": " + e.what());
  }
  const auto image = data::image_to_tensor(raw);
  const data::Sample sample{image, Tensor({1, image.shape()[1], image.shape()[2]}, 0.0f)};
  const auto& cfg = state.config;
  const auto prepared = data::prepare_sample(sample, cfg.input_size, cfg.input_channels);
  ForwardOutput result;
  {
    NoGradGuard guard;
    result = forward(state, data::stack({prepared.image}));
  }
  make_output_dir(a.out);
  const fs::path dir(a.out);
  io::write_png((dir / "mask.png").string(), map_to_image(result.seg_prob, true, a.threshold));
  io::write_png((dir / "prob.png").string(), map_to_image(result.seg_prob, false, 0.0));
  io::write_png((dir / "edge.png").string(), map_to_image(result.edge_prob, false, 0.0));
  if (result.alpha.defined()) {
    io::write_png((dir / "alpha.png").string(), map_to_image(result.alpha, false, 0.0));
  }
  out << "wrote mask.png, prob.png, alpha.png and edge.png to " << a.out << '\n';
  return kExitOk;
}

struct PlotArgs {
  std::string report;
  std::string out;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  train::TrainRunReport report;
  try {
    report = report_from_json(read_json_file(a.report));
  } catch (const std::exception& e) {
    throw std::runtime_error("--report " + a.report + ": " + e.what());
  }
  make_output_dir(a.out);
  const auto figures = plot::render_report(report);
  for (const auto& [name, svg] : figures) {
    write_text_file(fs::path(a.out) / name, svg);
  }
  out << "wrote " << figures.size() << " figure(s) to " << a.out << '\n';
  return kExitOk;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-gated, edge-supervised segmentation of tumor masks"};
  app.name("agseg");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic ellipse corpus with manifest.csv");
  synth_cmd->add_option("--n", synth.n, "Number of image/mask pairs")->check(CLI::PositiveNumber)->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "Image side in pixels (>= 8)")->check(CLI::Range(8, 4096))->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();

  EdgesArgs edges;
  auto* edges_cmd = app.add_subcommand("edges", "Write the boundary target of each mask as a PNG");
  edges_cmd->add_option("--masks", edges.masks, "A mask PNG or a directory of mask PNGs")->required()->check(CLI::ExistingPath);
  edges_cmd->add_option("--out", edges.out, "Output directory")->required();
  edges_cmd->add_option("--factor", edges.factor, "Max-pool downsampling factor")->check(CLI::PositiveNumber)->capture_default_str();

  RunArgs train_args, cv_args, tune_args;
  auto add_run_options = [](CLI::App* cmd, RunArgs& a) {
    cmd->add_option("--config", a.config, "Run config JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", a.out, "Output directory (overrides output_dir)");
  };
  auto* train_cmd = app.add_subcommand("train", "Train on the 6/2/2 split; write checkpoint and report");
  add_run_options(train_cmd, train_args);
  auto* cv_cmd = app.add_subcommand("cv", "Subject-wise k-fold cross-validation");
  add_run_options(cv_cmd, cv_args);
  cv_cmd->add_option("--jobs", cv_args.jobs, "Folds trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();
  auto* tune_cmd = app.add_subcommand("tune", "One-epoch grid search ranked by validation BCE");
  add_run_options(tune_cmd, tune_args);
  tune_cmd->add_option("--grid", tune_args.grid, "Grid JSON (array of hyper configs)")->required()->check(CLI::ExistingFile);
  tune_cmd->add_option("--jobs", tune_args.jobs, "Configurations trained in parallel")->check(CLI::PositiveNumber)->capture_default_str();

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "Segment one image with a checkpoint");
  predict_cmd->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--image", predict.image, "Input PNG")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--out", predict.out, "Output directory")->required();
  predict_cmd->add_option("--threshold", predict.threshold, "Mask threshold on the probability")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  PlotArgs plot_args;
  auto* plot_cmd = app.add_subcommand("plot", "Render SVG loss curves, confusion heatmaps and metric bars");
  plot_cmd->add_option("--report", plot_args.report, "report.json from train or cv")->required()->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot_args.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      return cmd_synth(synth, out);
    }
    if (edges_cmd->parsed()) {
      return cmd_edges(edges, out);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train_args, out);
    }
    if (cv_cmd->parsed()) {
      return cmd_cv(cv_args, out);
    }
    if (tune_cmd->parsed()) {
      return cmd_tune(tune_args, out);
    }
    if (predict_cmd->parsed()) {
      return cmd_predict(predict, out);
    }
    if (plot_cmd->parsed()) {
      return cmd_plot(plot_args, out);
    }
  } catch (const UsageError& e) {
    err << "agseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "agseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidConfig& e) {
    err << "agseg: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "agseg: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

} // namespace agseg::cli
