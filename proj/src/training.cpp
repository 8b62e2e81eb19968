// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/training.hpp"

#include "agseg/random.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace agseg::train {

std::vector<std::string> HyperConfig::validate() const {
  std::vector<std::string> errors;
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    errors.push_back("learning_rate must be a positive real");
  }
  if (filter_size) {
    const auto f = *filter_size;
    if (f < 8 || f > 512 || (f & (f - 1)) != 0) {
      errors.push_back("filter_size must be a power of 2 between 8 and 512");
    }
  }
  if (batch_size < 1) {
    errors.push_back("batch_size must be positive");
  }
  if (k < 2) {
    errors.push_back("k must be >= 2");
  }
  if (epochs_cap < 1) {
    errors.push_back("epochs_cap must be positive");
  }
  return errors;
}

NetworkConfig apply_filter_size(NetworkConfig network, const HyperConfig& hyper) {
  if (!hyper.filter_size) {
    return network;
  }
  const auto f = *hyper.filter_size;
  network.encoder_filters = {f, f / 2, f / 4, f / 8};
  network.decoder_filters = {f / 8, f / 4, f / 2, f};
  return network;
}

bool check_early_stop(const std::vector<double>& history, const EarlyStopPolicy& policy) {
  if (history.empty()) {
    throw std::invalid_argument("check_early_stop: empty history");
  }
  if (policy.patience_epochs < 1) {
    throw std::invalid_argument("check_early_stop: patience must be >= 1");
  }
  const auto patience = static_cast<std::size_t>(policy.patience_epochs);
  if (history.size() < patience + 1) {
    return false;
  }
  for (std::size_t i = history.size() - patience; i < history.size(); ++i) {
    if (!(history[i] > history[i - 1])) {
      return false;
    }
  }
  return true;
}

std::vector<data::Sample> load_dataset(const data::Manifest& manifest, const NetworkConfig& network) {
  std::vector<data::Sample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    out.push_back(data::prepare_sample(data::load_sample(manifest, r), network.input_size, network.input_channels));
  }
  return out;
}

std::vector<data::Sample> select(const std::vector<data::Sample>& all, const std::vector<std::size_t>& indices) {
  std::vector<data::Sample> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    out.push_back(all.at(i));
  }
  return out;
}

double train_epoch(NetworkState& state, const std::vector<data::Sample>& samples, const HyperConfig& hyper,
                   nn::AdamState& adam, const data::AugmentationSpec& aug, const nn::LossConfig& loss,
                   int epoch_index) {
  if (samples.empty()) {
    throw std::invalid_argument("train_epoch: no training records");
  }
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(hyper.seed, static_cast<std::uint64_t>(epoch_index)));
  rng.shuffle(order);

  const auto batch = static_cast<std::size_t>(hyper.batch_size);
  double weighted = 0.0;
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += batch, ++batch_index) {
    const auto end = std::min(order.size(), start + batch);
    try {
      std::vector<Tensor> images, masks;
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = samples[order[i]];
        const auto draw = static_cast<std::uint64_t>(epoch_index) * samples.size() + order[i];
        auto [img, msk] = data::augment(s.image, s.mask, aug, draw);
        images.push_back(std::move(img));
        masks.push_back(std::move(msk));
      }
      const auto x = data::stack(images);
      const auto y = data::stack(masks);
      const auto out = forward(state, x);
      const auto l = total_loss(out.seg_prob, out.edge_prob, y, loss, state.params);
      const double value = l.total.item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("non-finite loss");
      }
      l.total.backward();
      nn::adam_step(state.params, adam);
      weighted += value * static_cast<double>(end - start);
    } catch (const std::exception& e) {
      throw std::runtime_error("epoch " + std::to_string(epoch_index) + ", batch " + std::to_string(batch_index) +
                               ": " + e.what());
    }
  }
  return weighted / static_cast<double>(samples.size());
}

Evaluation evaluate(const NetworkState& state, const std::vector<data::Sample>& samples, const nn::LossConfig& loss,
                    double threshold, std::int64_t batch_size) {
  NoGradGuard guard;
  Evaluation ev;
  if (samples.empty()) {
    ev.metrics = eval::metrics_from_counts(ev.confusion, 0.0);
    return ev;
  }
  double bce_sum = 0.0, loss_sum = 0.0;
  std::int64_t pixels = 0;
  const auto batch = static_cast<std::size_t>(std::max<std::int64_t>(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const auto end = std::min(samples.size(), start + batch);
    std::vector<Tensor> images, masks;
    for (std::size_t i = start; i < end; ++i) {
      images.push_back(samples[i].image);
      masks.push_back(samples[i].mask);
    }
    const auto x = data::stack(images);
    const auto y = data::stack(masks);
    const auto out = forward(state, x);
    ev.confusion += eval::confusion(out.seg_prob, y, threshold);
    bce_sum += nn::bce_loss(out.seg_prob, y).item() * static_cast<double>(y.numel());
    pixels += y.numel();
    loss_sum += total_loss(out.seg_prob, out.edge_prob, y, loss, state.params).total.item() *
                static_cast<double>(end - start);
  }
  ev.bce = bce_sum / static_cast<double>(pixels);
  ev.loss = loss_sum / static_cast<double>(samples.size());
  ev.metrics = eval::metrics_from_counts(ev.confusion, ev.bce);
  return ev;
}

FitResult fit(NetworkState& state, const std::vector<data::Sample>& train, const std::vector<data::Sample>& validation,
              const RunSettings& settings) {
  FitResult result;
  nn::AdamState adam(nn::AdamConfig{settings.hyper.learning_rate});
  const EarlyStopPolicy policy{settings.patience_epochs};
  std::vector<double> history;
  for (int epoch = 0; epoch < settings.hyper.epochs_cap; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_epoch(state, train, settings.hyper, adam, settings.augmentation, settings.loss, epoch);
    const auto& monitored = validation.empty() ? train : validation;
    rec.val_loss = evaluate(state, monitored, settings.loss, settings.threshold, settings.hyper.batch_size).loss;
    result.epochs.push_back(rec);
    history.push_back(rec.val_loss);
    if (check_early_stop(history, policy)) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

namespace {

void check_settings(const RunSettings& settings) {
  std::vector<std::string> errors = settings.network.validate();
  for (auto& e : settings.hyper.validate()) {
    errors.push_back(std::move(e));
  }
  for (auto& e : settings.augmentation.validate()) {
    errors.push_back(std::move(e));
  }
  if (!errors.empty()) {
    std::string msg = "invalid run settings:";
    for (const auto& e : errors) {
      msg += "\n  " + e;
    }
    throw InvalidConfig(msg);
  }
}

eval::MetricsReport aggregate_metrics(const std::vector<FoldReport>& folds, const eval::ConfusionMatrix& merged) {
  // Pixel-weighted mean BCE, i.e. the BCE over the union of test pixels.
  double bce = 0.0;
  std::int64_t pixels = 0;
  for (const auto& f : folds) {
    bce += f.metrics.bce * static_cast<double>(f.confusion.total());
    pixels += f.confusion.total();
  }
  return eval::metrics_from_counts(merged, pixels ? bce / static_cast<double>(pixels) : 0.0);
}

} // namespace

TrainRunReport run_train(const data::Manifest& manifest, const RunSettings& settings, NetworkState* trained) {
  check_settings(settings);
  const auto start = std::chrono::steady_clock::now();
  const auto network_config = apply_filter_size(settings.network, settings.hyper);
  const auto all = load_dataset(manifest, network_config);
  const auto split = eval::split_622(manifest, settings.hyper.seed);

  auto state = build_network(network_config);
  const auto train_set = select(all, split.train);
  const auto val_set = select(all, split.validation);
  const auto test_set = select(all, split.test);
  const auto fitted = fit(state, train_set, val_set, settings);
  const auto ev = evaluate(state, test_set, settings.loss, settings.threshold, settings.hyper.batch_size);

  TrainRunReport report;
  report.mode = "train";
  report.settings = settings;
  FoldReport fold;
  fold.fold = 0;
  fold.epochs = fitted.epochs;
  fold.early_stopped = fitted.early_stopped;
  fold.train_records = train_set.size();
  fold.validation_records = val_set.size();
  fold.test_records = test_set.size();
  fold.confusion = ev.confusion;
  fold.metrics = ev.metrics;
  report.folds.push_back(fold);
  report.aggregate_confusion = ev.confusion;
  report.aggregate = ev.metrics;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) {
    *trained = std::move(state);
  }
  return report;
}

TrainRunReport run_cv(const data::Manifest& manifest, const RunSettings& settings, int jobs) {
  check_settings(settings);
  const auto start = std::chrono::steady_clock::now();
  const int k = settings.hyper.k;
  const auto plan = eval::kfold_plan(manifest, k, settings.hyper.seed, true);
  const auto network_config = apply_filter_size(settings.network, settings.hyper);
  const auto all = load_dataset(manifest, network_config);

  std::vector<FoldReport> folds(static_cast<std::size_t>(k));
  run_jobs(folds.size(), jobs, [&](std::size_t f) {
    const int fold = static_cast<int>(f);
    const auto test_idx = plan.records_in(fold);
    std::vector<std::size_t> train_idx, val_idx;
    if (k >= 3) {
      // One of the k - 1 training folds is held out for early stopping.
      const int val_fold = (fold + 1) % k;
      for (int g = 0; g < k; ++g) {
        if (g == fold) {
          continue;
        }
        auto idx = plan.records_in(g);
        auto& dst = g == val_fold ? val_idx : train_idx;
        dst.insert(dst.end(), idx.begin(), idx.end());
      }
    } else {
      // A single training fold: hold out half of its subjects (in plan order)
      // for validation, or validate on the training data when it has only one.
      const int other = 1 - fold;
      std::vector<std::string> subjects;
      for (const auto& [subject, g] : plan.subject_folds) {
        if (g == other) {
          subjects.push_back(subject);
        }
      }
      const auto held = subjects.size() / 2;
      for (auto i : plan.records_in(other)) {
        const auto& s = manifest.records[i].subject_id;
        const auto pos = static_cast<std::size_t>(std::find(subjects.begin(), subjects.end(), s) - subjects.begin());
        (pos < held ? val_idx : train_idx).push_back(i);
      }
    }
    auto fold_network = network_config;
    fold_network.seed = network_config.seed + f;
    auto state = build_network(fold_network);
    const auto train_set = select(all, train_idx);
    const auto val_set = select(all, val_idx);
    const auto test_set = select(all, test_idx);
    auto fold_settings = settings;
    fold_settings.hyper.seed = mix_seed(settings.hyper.seed, f);
    const auto fitted = fit(state, train_set, val_set, fold_settings);
    const auto ev = evaluate(state, test_set, settings.loss, settings.threshold, settings.hyper.batch_size);

    FoldReport& rep = folds[f];
    rep.fold = fold;
    rep.epochs = fitted.epochs;
    rep.early_stopped = fitted.early_stopped;
    rep.train_records = train_set.size();
    rep.validation_records = val_set.size();
    rep.test_records = test_set.size();
    rep.confusion = ev.confusion;
    rep.metrics = ev.metrics;
  });

  TrainRunReport report;
  report.mode = "cv";
  report.settings = settings;
  report.folds = std::move(folds);
  for (const auto& f : report.folds) {
    report.aggregate_confusion += f.confusion;
  }
  report.aggregate = aggregate_metrics(report.folds, report.aggregate_confusion);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::vector<TuneResult> rank_results(std::vector<TuneResult> results) {
  auto filter_key = [](const HyperConfig& c) { return c.filter_size.value_or(0); };
  std::stable_sort(results.begin(), results.end(), [&](const TuneResult& a, const TuneResult& b) {
    const bool a_ok = a.error.empty(), b_ok = b.error.empty();
    if (a_ok != b_ok) {
      return a_ok;
    }
    if (a.final_bce != b.final_bce) {
      return a.final_bce < b.final_bce;
    }
    if (a.config.learning_rate != b.config.learning_rate) {
      return a.config.learning_rate < b.config.learning_rate;
    }
    if (filter_key(a.config) != filter_key(b.config)) {
      return filter_key(a.config) < filter_key(b.config);
    }
    return a.grid_index < b.grid_index;
  });
  return results;
}

std::vector<TuneResult> hyper_search(const std::vector<HyperConfig>& grid, const ConfigEvaluator& evaluate_config,
                                     int jobs) {
  if (grid.empty()) {
    throw std::invalid_argument("hyper_search: empty grid");
  }
  std::vector<TuneResult> results(grid.size());
  run_jobs(grid.size(), jobs, [&](std::size_t i) {
    auto& r = results[i];
    r.grid_index = i;
    r.config = grid[i];
    try {
      if (auto errors = grid[i].validate(); !errors.empty()) {
        throw InvalidConfig(errors.front());
      }
      r.final_bce = evaluate_config(grid[i], i);
      if (!std::isfinite(r.final_bce)) {
        throw std::runtime_error("non-finite validation BCE");
      }
      r.epochs_trained = 1;
    } catch (const std::exception& e) {
      r.error = e.what();
      r.final_bce = std::numeric_limits<double>::infinity();
    }
  });
  return rank_results(std::move(results));
}

std::vector<TuneResult> hyper_search(const data::Manifest& manifest, const std::vector<HyperConfig>& grid,
                                     const RunSettings& settings, int jobs) {
  check_settings(settings);
  const auto split = eval::split_622(manifest, settings.hyper.seed);
  const auto all = load_dataset(manifest, settings.network);
  const auto train_set = select(all, split.train);
  const auto val_set = select(all, split.validation);
  return hyper_search(
      grid,
      [&](const HyperConfig& hyper, std::size_t) {
        auto state = build_network(apply_filter_size(settings.network, hyper));
        nn::AdamState adam(nn::AdamConfig{hyper.learning_rate});
        train_epoch(state, train_set, hyper, adam, settings.augmentation, settings.loss, 0);
        return evaluate(state, val_set, settings.loss, settings.threshold, hyper.batch_size).bce;
      },
      jobs);
}

void run_jobs(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      fn(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (auto i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) {
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
}

} // namespace agseg::train
