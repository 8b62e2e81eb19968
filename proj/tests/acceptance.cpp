// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include "test_util.hpp"

#include "cli.hpp"

#include "agseg/attention_gate.hpp"
#include "agseg/data.hpp"
#include "agseg/edge_attention.hpp"
#include "agseg/evaluation.hpp"
#include "agseg/network.hpp"
#include "agseg/nn.hpp"
#include "agseg/serialization.hpp"
#include "agseg/training.hpp"

#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace agseg;
namespace fs = std::filesystem;
using testutil::oracle_check;
using testutil::random_leaf;

namespace {

// Tolerances and limits.
constexpr double kGradStep = 1e-3;
constexpr double kGradTolerance = 1e-3;
constexpr double kNetworkGradTolerance = 1e-2;
constexpr double kNetworkGradStep = 1e-4;
constexpr int kGradInstances = 20;
constexpr int kNetworkGradSeeds = 5;
constexpr double kConvTolerance = 1e-5;
constexpr int kConvCases = 50;
constexpr int kMetricPairs = 100;
constexpr int kRandomEdgeMasks = 50;
constexpr int kOverfitSteps = 500;
constexpr double kOverfitLearningRate = 1e-3;
constexpr double kOverfitMaxLoss = 0.05;
constexpr double kOverfitMinIou = 0.90;
constexpr double kHalfAlphaTolerance = 1e-7;
constexpr int kFoldTriples = 200;
constexpr std::size_t kGridRows = 5;
constexpr double kSecondsLimit[8] = {0, 120, 60, 300, 0, 0, 0, 0};

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool condition, const std::string& what) {
    if (!condition) {
      if (pass) {
        detail << "failed: ";
      } else {
        detail << "; ";
      }
      detail << what;
      pass = false;
    }
  }
};

// -- shared helpers ---------------------------------------------------------

struct ConvCase {
  std::int64_t n, cin, cout, h, w, k;
  int stride, pad;
};

ConvCase random_conv_case(Rng& rng) {
  ConvCase c{};
  c.n = 1 + static_cast<std::int64_t>(rng.below(2));
  c.cin = 1 + static_cast<std::int64_t>(rng.below(3));
  c.cout = 1 + static_cast<std::int64_t>(rng.below(3));
  c.k = 1 + static_cast<std::int64_t>(rng.below(3));
  c.stride = 1 + static_cast<int>(rng.below(2));
  c.pad = static_cast<int>(rng.below(2));
  c.h = c.k + static_cast<std::int64_t>(rng.below(5));
  c.w = c.k + static_cast<std::int64_t>(rng.below(5));
  return c;
}

Tensor random_mask(Shape shape, std::uint64_t seed, double density) {
  Rng rng(seed);
  Tensor m(std::move(shape));
  for (auto& v : m.mutable_data()) {
    v = rng.uniform() < density ? 1.0f : 0.0f;
  }
  return m;
}

Tensor probabilities(Shape shape, std::uint64_t seed) { return random_leaf(std::move(shape), seed, 0.05, 0.95); }

Tensor blob_mask(std::int64_t size, std::uint64_t seed) {
  Rng rng(seed);
  Tensor m({1, 1, size, size});
  auto d = m.mutable_data();
  const double cy = rng.uniform(0.3, 0.7) * size, cx = rng.uniform(0.3, 0.7) * size;
  const double r = rng.uniform(0.15, 0.3) * size;
  for (std::int64_t i = 0; i < size; ++i) {
    for (std::int64_t j = 0; j < size; ++j) {
      const double dy = i + 0.5 - cy, dx = j + 0.5 - cx;
      d[static_cast<std::size_t>(i * size + j)] = dy * dy + dx * dx <= r * r ? 1.0f : 0.0f;
    }
  }
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

bool params_bit_equal(const nn::ParamStore& a, const nn::ParamStore& b) {
  if (a.size() != b.size()) {
    return false;
  }
  for (const auto& [name, t] : a) {
    if (!b.contains(name) || !bit_equal(t, b.get(name))) {
      return false;
    }
  }
  return true;
}

NetworkConfig toy_network() {
  NetworkConfig c;
  c.input_channels = 1;
  c.input_size = 32;
  c.encoder_filters = {8, 8, 8, 8};
  c.decoder_filters = {8, 8, 8, 8};
  c.seed = 0;
  return c;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// -- 1: gradient correctness ------------------------------------------------

void criterion_gradients(Outcome& o) {
  gradcheck::Options opt;
  opt.step = kGradStep;
  opt.tolerance = kGradTolerance;
  std::map<std::string, int> passed;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& op, const gradcheck::Report& r) {
    passed[op] += r.passed && !r.entries.empty();
    worst[op] = std::max(worst[op], r.max_rel_error);
  };

  for (int seed = 0; seed < kGradInstances; ++seed) {
    {
      Rng rng(mix_seed(1, seed));
      const auto c = random_conv_case(rng);
      auto x = random_leaf({c.n, c.cin, c.h, c.w}, mix_seed(2, seed));
      auto w = random_leaf({c.cout, c.cin, c.k, c.k}, mix_seed(3, seed));
      auto b = random_leaf({c.cout}, mix_seed(4, seed));
      const auto r = uniform_tensor(ops::conv2d(x, w, b, c.stride, c.pad).shape(), mix_seed(5, seed));
      record("conv2d", oracle_check(
                           [&] { return testutil::project(ops::conv2d(x, w, b, c.stride, c.pad), r); },
                           [&](oracle::KinkPattern*) {
                             return testutil::dot(oracle::conv2d(oracle::from(x), oracle::from(w), oracle::values(b),
                                                                 c.stride, c.pad),
                                                  r);
                           },
                           {{"x", x}, {"w", w}, {"b", b}}, opt));
    }
    {
      Rng rng(mix_seed(6, seed));
      const auto c = random_conv_case(rng);
      auto x = random_leaf({c.n, c.cin, c.h, c.w}, mix_seed(7, seed));
      auto w = random_leaf({c.cin, c.cout, c.k, c.k}, mix_seed(8, seed));
      auto b = random_leaf({c.cout}, mix_seed(9, seed));
      const auto r = uniform_tensor(ops::conv_transpose2d(x, w, b, c.stride, 0).shape(), mix_seed(10, seed));
      record("conv_transpose2d",
             oracle_check([&] { return testutil::project(ops::conv_transpose2d(x, w, b, c.stride, 0), r); },
                          [&](oracle::KinkPattern*) {
                            return testutil::dot(oracle::conv_transpose2d(oracle::from(x), oracle::from(w),
                                                                          oracle::values(b), c.stride, 0),
                                                 r);
                          },
                          {{"x", x}, {"w", w}, {"b", b}}, opt));
    }
    {
      auto x = random_leaf({1, 2, 6, 6}, mix_seed(11, seed));
      const auto r = uniform_tensor({1, 2, 3, 3}, mix_seed(12, seed));
      record("maxpool2d", oracle_check([&] { return testutil::project(ops::maxpool2d(x, 2, 2), r); },
                                       [&](oracle::KinkPattern* p) {
                                         return testutil::dot(oracle::maxpool(oracle::from(x), 2, 2, p), r);
                                       },
                                       {{"x", x}}, opt));
    }
    {
      auto x = random_leaf({1, 2, 3, 3}, mix_seed(13, seed));
      const auto r = uniform_tensor({1, 2, 6, 6}, mix_seed(14, seed));
      record("upsample",
             oracle_check([&] { return testutil::project(ops::upsample_nearest(x, 2), r); },
                          [&](oracle::KinkPattern*) { return testutil::dot(oracle::upsample(oracle::from(x), 2), r); },
                          {{"x", x}}, opt));
    }
    {
      auto x = random_leaf({1, 2, 4, 4}, mix_seed(15, seed), -4, 4);
      const auto r = uniform_tensor({1, 2, 4, 4}, mix_seed(16, seed));
      record("sigmoid",
             oracle_check([&] { return testutil::project(ops::sigmoid(x), r); },
                          [&](oracle::KinkPattern*) { return testutil::dot(oracle::sigmoid(oracle::from(x)), r); },
                          {{"x", x}}, opt));
    }
    {
      auto x = random_leaf({1, 2, 4, 4}, mix_seed(17, seed));
      const auto r = uniform_tensor({1, 2, 4, 4}, mix_seed(18, seed));
      record("relu",
             oracle_check([&] { return testutil::project(ops::relu(x), r); },
                          [&](oracle::KinkPattern* p) { return testutil::dot(oracle::relu(oracle::from(x), p), r); },
                          {{"x", x}}, opt));
    }
    {
      const auto s = static_cast<std::uint64_t>(seed);
      auto p = attention::AttentionGateParams::create(2, 3, 2, s);
      p.b_g = uniform_tensor({2}, s + 50, -0.5, 0.5);
      p.b_psi = uniform_tensor({1}, s + 60, -0.5, 0.5);
      const auto x = uniform_tensor({1, 2, 8, 8}, s + 70);
      const auto g = uniform_tensor({1, 3, 2, 2}, s + 80);
      record("attention_gate", attention::ag_gradcheck(p, x, g, s, opt));
    }
    {
      const auto s = static_cast<std::uint64_t>(seed);
      auto p = edge::EdgeHeadParams::create(3, s);
      p.b_e = uniform_tensor({1}, s + 1);
      p.w_e.set_requires_grad(true);
      p.b_e.set_requires_grad(true);
      const auto feat = uniform_tensor({1, 3, 4, 4}, s + 2);
      const auto r1 = uniform_tensor({1, 1, 4, 4}, s + 3);
      const auto r2 = uniform_tensor({1, 3, 4, 4}, s + 4);
      auto tape = [&] {
        const auto out = edge::ea_forward(feat, p);
        return ops::add(testutil::project(out.edge_prob, r1), testutil::project(out.conditioned, r2));
      };
      auto numeric = [&] {
        const auto e =
            oracle::sigmoid(oracle::conv2d(oracle::from(feat), oracle::from(p.w_e), oracle::values(p.b_e), 1, 0));
        const auto f = oracle::from(feat);
        const auto r2a = oracle::from(r2);
        double sum = testutil::dot(e, r1);
        for (std::int64_t c = 0; c < 3; ++c) {
          for (std::int64_t i = 0; i < 4; ++i) {
            for (std::int64_t j = 0; j < 4; ++j) {
              sum += r2a(0, c, i, j) * f(0, c, i, j) * (1.0 + e(0, 0, i, j));
            }
          }
        }
        return sum;
      };
      record("edge_head", gradcheck::check(tape, numeric, {{"w_e", p.w_e}, {"b_e", p.b_e}}, opt));
    }
    {
      auto p = probabilities({1, 1, 4, 4}, mix_seed(21, seed));
      const auto y = random_mask({1, 1, 4, 4}, mix_seed(22, seed), 0.4);
      record("bce", oracle_check([&] { return nn::bce_loss(p, y); },
                                 [&](oracle::KinkPattern*) { return oracle::bce(oracle::values(p), oracle::values(y)); },
                                 {{"p", p}}, opt));
    }
    {
      auto p = probabilities({1, 1, 4, 4}, mix_seed(23, seed));
      auto y = random_mask({1, 1, 4, 4}, mix_seed(24, seed), 0.4);
      y.mutable_data()[0] = 1.0f; // at least one positive for the automatic weight
      nn::LossConfig cfg;
      cfg.gamma = seed % 2 == 0 ? 2.0 : 0.5;
      if (seed % 3 == 0) {
        cfg.pos_weight = 2.5;
      }
      record("focal", oracle_check([&] { return nn::focal_bce_loss(p, y, cfg); },
                                   [&](oracle::KinkPattern*) {
                                     const auto yv = oracle::values(y);
                                     return oracle::focal(oracle::values(p), yv, cfg.gamma,
                                                          cfg.pos_weight.value_or(oracle::auto_pos_weight(yv)));
                                   },
                                   {{"p", p}}, opt));
    }
  }
  for (const auto& [op, count] : passed) {
    o.require(count == kGradInstances, op + " " + std::to_string(count) + "/" + std::to_string(kGradInstances));
  }

  // Full network, sampled parameters.
  int net_passed = 0;
  double net_worst = 0.0;
  for (int seed = 0; seed < kNetworkGradSeeds; ++seed) {
    NetworkConfig c;
    c.input_channels = 1;
    c.input_size = 32;
    c.encoder_filters = {4, 4, 4, 4};
    c.decoder_filters = {4, 4, 4, 4};
    c.seed = static_cast<std::uint64_t>(seed);
    auto state = build_network(c);
    for (auto& [name, t] : state.params) {
      if (nn::is_bias_name(name)) {
        const auto r = uniform_tensor(t.shape(), mix_seed(seed, 99), -0.1, 0.1);
        std::copy(r.data().begin(), r.data().end(), t.mutable_data().begin());
      }
    }
    const auto image = uniform_tensor({1, 1, 32, 32}, static_cast<std::uint64_t>(seed) + 40, 0.0, 1.0);
    const auto mask = blob_mask(32, static_cast<std::uint64_t>(seed) + 50);
    const nn::LossConfig cfg;
    std::vector<gradcheck::Target> targets;
    for (const auto& [name, t] : state.params) {
      targets.emplace_back(name, t);
    }
    gradcheck::Options nopt;
    nopt.tolerance = kNetworkGradTolerance;
    nopt.step = kNetworkGradStep;
    nopt.max_entries_per_tensor = 3;
    nopt.sample_seed = static_cast<std::uint64_t>(seed);
    const auto report = oracle_check(
        [&] {
          const auto out = forward(state, image);
          return total_loss(out.seg_prob, out.edge_prob, mask, cfg, state.params).total;
        },
        [&](oracle::KinkPattern* p) { return oracle::network(state, image, mask, cfg, p).total; }, targets, nopt);
    net_passed += report.passed && report.entries.size() > report.skipped;
    net_worst = std::max(net_worst, report.max_rel_error);
  }
  o.require(net_passed == kNetworkGradSeeds, "network " + std::to_string(net_passed) + "/" +
                                                 std::to_string(kNetworkGradSeeds));
  double layer_worst = 0.0;
  for (const auto& [op, w] : worst) {
    layer_worst = std::max(layer_worst, w);
  }
  o.detail << (o.pass ? "" : "; ") << passed.size() << " ops x " << kGradInstances << " instances, max rel "
           << layer_worst << "; network max rel " << net_worst;
}

// -- 2: oracle equivalence --------------------------------------------------

void criterion_oracles(Outcome& o) {
  Rng rng(2024);
  double conv_worst = 0.0;
  for (int trial = 0; trial < kConvCases; ++trial) {
    const auto c = random_conv_case(rng);
    const auto x = uniform_tensor({c.n, c.cin, c.h, c.w}, 100 + trial);
    const auto w = uniform_tensor({c.cout, c.cin, c.k, c.k}, 200 + trial);
    const auto b = uniform_tensor({c.cout}, 300 + trial);
    const auto y = ops::conv2d(x, w, b, c.stride, c.pad);
    const auto ref = oracle::conv2d(oracle::from(x), oracle::from(w), oracle::values(b), c.stride, c.pad);
    if (y.shape() != Shape{ref.n, ref.c, ref.h, ref.w}) {
      o.require(false, "conv2d shape, trial " + std::to_string(trial));
      continue;
    }
    for (std::size_t i = 0; i < ref.v.size(); ++i) {
      conv_worst = std::max(conv_worst, std::abs(y.data()[i] - ref.v[i]));
    }
  }
  o.require(conv_worst < kConvTolerance, "conv2d max abs error " + std::to_string(conv_worst));

  int metric_mismatches = 0;
  for (int seed = 0; seed < kMetricPairs; ++seed) {
    const auto s = static_cast<std::uint64_t>(seed);
    const auto p = uniform_tensor({1, 1, 16, 16}, s + 50, 0.0, 1.0 - 0.01 * static_cast<double>(seed % 60));
    const auto y = random_mask({1, 1, 16, 16}, s + 500, 0.02 * static_cast<double>(seed % 30));
    const auto cm = eval::confusion(p, y);
    const auto ref = oracle::count_pixels(oracle::values(p), oracle::values(y), 0.5);
    const auto m = eval::metrics_from_counts(cm, 0.0);
    bool ok = cm == eval::ConfusionMatrix{ref.tp, ref.fp, ref.fn, ref.tn};
    auto ratio = [](std::int64_t num, std::int64_t den) {
      return static_cast<double>(num) / static_cast<double>(den);
    };
    ok = ok && m.accuracy == ratio(ref.tp + ref.tn, 256);
    if (ref.tp + ref.fp + ref.fn == 0) {
      ok = ok && m.iou == 1.0 && m.f1 == 1.0;
    } else {
      ok = ok && m.iou == ratio(ref.tp, ref.tp + ref.fp + ref.fn) &&
           m.f1 == ratio(2 * ref.tp, 2 * ref.tp + ref.fp + ref.fn);
      ok = ok && m.precision == (ref.tp + ref.fp == 0 ? 0.0 : ratio(ref.tp, ref.tp + ref.fp));
      ok = ok && m.recall == (ref.tp + ref.fn == 0 ? 0.0 : ratio(ref.tp, ref.tp + ref.fn));
    }
    metric_mismatches += !ok;
  }
  o.require(metric_mismatches == 0, std::to_string(metric_mismatches) + " metric mismatches");

  auto matches_scan = [](const Tensor& mask) {
    const auto got = edge::edge_target_from_mask(mask);
    const auto ref = oracle::edge_target(oracle::from(mask));
    for (std::size_t i = 0; i < ref.v.size(); ++i) {
      if (static_cast<double>(got.data()[i]) != ref.v[i]) {
        return false;
      }
    }
    return true;
  };
  int rectangles = 0, rect_mismatches = 0;
  constexpr std::int64_t size = 10;
  for (std::int64_t h = 2; h <= 6; ++h) {
    for (std::int64_t w = 2; w <= 6; ++w) {
      for (std::int64_t top = 0; top + h <= size; ++top) {
        for (std::int64_t left = 0; left + w <= size; ++left) {
          Tensor m({1, 1, size, size});
          for (std::int64_t i = top; i < top + h; ++i) {
            for (std::int64_t j = left; j < left + w; ++j) {
              m.mutable_data()[static_cast<std::size_t>(i * size + j)] = 1.0f;
            }
          }
          ++rectangles;
          rect_mismatches += !matches_scan(m);
        }
      }
    }
  }
  o.require(rect_mismatches == 0, std::to_string(rect_mismatches) + " rectangle edge mismatches");
  int random_mismatches = 0;
  for (int seed = 0; seed < kRandomEdgeMasks; ++seed) {
    random_mismatches += !matches_scan(random_mask({1, 1, 12, 12}, 7000 + seed, 0.1 + 0.015 * seed));
  }
  o.require(random_mismatches == 0, std::to_string(random_mismatches) + " random edge mismatches");
  if (o.pass) {
    o.detail << kConvCases << " conv cases (max abs " << conv_worst << "), " << kMetricPairs << " metric pairs, "
             << rectangles << " rectangles, " << kRandomEdgeMasks << " random masks";
  }
}

// -- 3: overfit convergence -------------------------------------------------

struct OverfitResult {
  double loss = 0.0;
  double iou = 0.0;
  double focal = 0.0, edge = 0.0, l2 = 0.0;
  NetworkState state;
};

OverfitResult overfit(const std::vector<data::Sample>& samples) {
  OverfitResult r;
  r.state = build_network(toy_network());
  train::HyperConfig hyper;
  hyper.learning_rate = kOverfitLearningRate;
  hyper.batch_size = static_cast<std::int64_t>(samples.size()); // one Adam step per pass
  hyper.seed = 0;
  nn::AdamConfig adam_cfg;
  adam_cfg.learning_rate = kOverfitLearningRate;
  nn::AdamState adam(adam_cfg);
  data::AugmentationSpec aug;
  aug.enabled = false;
  const nn::LossConfig loss;
  for (int step = 0; step < kOverfitSteps; ++step) {
    train::train_epoch(r.state, samples, hyper, adam, aug, loss, step);
  }
  const auto e = train::evaluate(r.state, samples, loss, 0.5, hyper.batch_size);
  r.loss = e.loss;
  r.iou = e.metrics.iou;
  NoGradGuard guard;
  std::vector<Tensor> images, masks;
  for (const auto& smp : samples) {
    images.push_back(smp.image);
    masks.push_back(smp.mask);
  }
  const auto out = forward(r.state, data::stack(images));
  const auto parts = total_loss(out.seg_prob, out.edge_prob, data::stack(masks), loss, r.state.params);
  r.focal = parts.focal;
  r.edge = parts.edge;
  r.l2 = parts.l2;
  return r;
}

void criterion_overfit(Outcome& o) {
  const auto dir = testutil::scratch_dir("acceptance_overfit");
  const auto manifest = data::synth_corpus(8, 32, 0, dir);
  const auto samples = train::load_dataset(manifest, toy_network());
  const auto a = overfit(samples);
  const auto b = overfit(samples);
  o.require(a.loss < kOverfitMaxLoss, "training total_loss " + std::to_string(a.loss) + " >= 0.05");
  o.require(a.iou > kOverfitMinIou, "training IoU " + std::to_string(a.iou) + " <= 0.90");
  o.require(a.loss == b.loss && a.iou == b.iou && params_bit_equal(a.state.params, b.state.params),
            "rerun differs");
  o.detail << (o.pass ? "" : "; ") << kOverfitSteps << " steps: total_loss " << a.loss << " (focal " << a.focal
           << ", edge " << a.edge << ", l2 " << a.l2 << "), IoU " << a.iou;
}

// -- 4: identity-gate equivalence -------------------------------------------

void criterion_identity_gate(Outcome& o) {
  auto c = toy_network();
  c.input_channels = 3;
  const auto image = uniform_tensor({2, 3, 32, 32}, 11, 0.0, 1.0);
  for (auto up : {DecoderUpsampling::transpose_conv, DecoderUpsampling::nearest_conv}) {
    c.upsampling = up;
    auto state = build_network(c);
    const auto ungated = forward(state, image, {GateMode::bypass});
    const auto forced = forward(state, image, {GateMode::identity});
    o.require(bit_equal(forced.seg_prob, ungated.seg_prob), "forced alpha=1 differs from the ungated output");
    // Saturating the gate bias drives the learned alpha to exactly 1.
    state.params.get("ag.psi.bias").mutable_data()[0] = 100.0f;
    const auto saturated = forward(state, image);
    o.require(bit_equal(saturated.seg_prob, ungated.seg_prob), "saturated gate differs from the ungated output");

    auto zeroed = build_network(c);
    for (const char* name : {"ag.psi.weight", "ag.psi.bias"}) {
      auto d = zeroed.params.get(name).mutable_data();
      std::fill(d.begin(), d.end(), 0.0f);
    }
    const auto out = forward(zeroed, image);
    double dev = 0.0;
    for (float a : out.alpha.data()) {
      dev = std::max(dev, std::abs(static_cast<double>(a) - 0.5));
    }
    o.require(dev <= kHalfAlphaTolerance, "zero psi gives |alpha - 0.5| = " + std::to_string(dev));
  }
  if (o.pass) {
    o.detail << "bypass, forced and saturated outputs bit-equal; zero psi gives alpha = 0.5";
  }
}

// -- 5: CV discipline -------------------------------------------------------

data::Manifest random_manifest(Rng& rng, std::int64_t subjects) {
  data::Manifest m;
  for (std::int64_t s = 0; s < subjects; ++s) {
    const auto records = 1 + rng.below(3);
    for (std::uint64_t r = 0; r < records; ++r) {
      const auto id = "s" + std::to_string(s) + "_" + std::to_string(r);
      m.records.push_back({"subject" + std::to_string(s), id + ".png", id + "_mask.png"});
    }
  }
  return m;
}

void criterion_cv(Outcome& o) {
  Rng rng(5);
  int bad_plans = 0;
  for (int t = 0; t < kFoldTriples; ++t) {
    const auto subjects = static_cast<std::int64_t>(2 + rng.below(119));
    const int k = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min<std::int64_t>(subjects, 12) - 1)));
    const auto seed = rng.below(1u << 30);
    const auto m = random_manifest(rng, subjects);
    const auto plan = eval::kfold_plan(m, k, seed);
    bool ok = plan.record_folds.size() == m.records.size();
    std::vector<int> seen(m.records.size(), 0);
    std::vector<std::set<std::string>> fold_subjects(static_cast<std::size_t>(k));
    std::map<std::string, std::set<int>> subject_fold_sets;
    for (int f = 0; f < k; ++f) {
      for (auto i : plan.records_in(f)) {
        ++seen[i];
        fold_subjects[static_cast<std::size_t>(f)].insert(m.records[i].subject_id);
        subject_fold_sets[m.records[i].subject_id].insert(f);
      }
    }
    ok = ok && std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; });
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& s : fold_subjects) {
      lo = std::min(lo, s.size());
      hi = std::max(hi, s.size());
    }
    ok = ok && hi - lo <= 1;
    for (const auto& [id, folds] : subject_fold_sets) {
      ok = ok && folds.size() == 1;
    }
    ok = ok && static_cast<std::int64_t>(subject_fold_sets.size()) == subjects;
    bad_plans += !ok;

    if (subjects >= 10) {
      const auto split = eval::split_622(m, seed);
      std::map<std::string, std::set<int>> where;
      std::size_t total = 0;
      int part = 0;
      for (const auto* indices : {&split.train, &split.validation, &split.test}) {
        for (auto i : *indices) {
          where[m.records[i].subject_id].insert(part);
        }
        total += indices->size();
        ++part;
      }
      bool split_ok = total == m.records.size() && static_cast<std::int64_t>(where.size()) == subjects;
      for (const auto& [id, parts] : where) {
        split_ok = split_ok && parts.size() == 1;
      }
      bad_plans += !split_ok;
    }
  }
  o.require(bad_plans == 0, std::to_string(bad_plans) + " plans violate partition, balance or disjointness");

  Rng rng110(110);
  const auto m = random_manifest(rng110, 110);
  const auto split = eval::split_622(m, 0);
  auto subjects_of = [&](const std::vector<std::size_t>& indices) {
    std::set<std::string> s;
    for (auto i : indices) {
      s.insert(m.records[i].subject_id);
    }
    return s.size();
  };
  const auto tr = subjects_of(split.train), va = subjects_of(split.validation), te = subjects_of(split.test);
  o.require(tr == 66 && va == 22 && te == 22,
            "110 subjects split " + std::to_string(tr) + "/" + std::to_string(va) + "/" + std::to_string(te));
  if (o.pass) {
    o.detail << kFoldTriples << " triples clean; 110 subjects split " << tr << "/" << va << "/" << te;
  }
}

// -- 6: tuning procedure ----------------------------------------------------

int run_cli(std::vector<std::string> args, std::string& err_text) {
  args.insert(args.begin(), "agseg");
  std::vector<const char*> argv;
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  err_text = err.str();
  return code;
}

void criterion_tuning(Outcome& o) {
  const auto dir = testutil::scratch_dir("acceptance_tune");
  std::string err;
  o.require(run_cli({"synth", "--n", "20", "--size", "16", "--seed", "0", "--out", (dir / "corpus").string()}, err) ==
                0,
            "synth: " + err);
  const Json config{{"network",
                     {{"input_channels", 1},
                      {"input_size", 16},
                      {"encoder_filters", {4, 4, 4, 4}},
                      {"decoder_filters", {4, 4, 4, 4}},
                      {"base_filter_scale", 1.0 / 64.0}}},
                    {"augmentation", {{"enabled", false}}},
                    {"manifest", "corpus/manifest.csv"},
                    {"output_dir", "out"}};
  write_json_file(dir / "config.json", config);
  const auto grid = fs::path(AGSEG_SOURCE_DIR) / "configs" / "tuning_grid.json";
  for (const char* run : {"t1", "t2"}) {
    o.require(run_cli({"tune", "--config", (dir / "config.json").string(), "--grid", grid.string(), "--out",
                       (dir / run).string()},
                      err) == 0,
              std::string("tune ") + run + ": " + err);
  }
  if (!o.pass) {
    return;
  }
  const auto results = read_json_file(dir / "t1" / "tune.json");
  o.require(results.size() == kGridRows, "tune.json has " + std::to_string(results.size()) + " rows");
  for (const auto& row : results) {
    o.require(row["epochs_trained"] == 1 && row["error"] == "", "row not a clean one-epoch run: " + row.dump());
  }
  const auto csv = read_bytes(dir / "t1" / "tune.csv");
  o.require(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(kGridRows + 1), "tune.csv row count");
  o.require(csv == read_bytes(dir / "t2" / "tune.csv") &&
                read_bytes(dir / "t1" / "tune.json") == read_bytes(dir / "t2" / "tune.json"),
            "tuning table not deterministic");

  // Equal losses fall back to the tie-break: lower rate, smaller filter size,
  // then grid order.
  const auto shipped = load_grid(grid);
  std::size_t calls = 0;
  const auto ranked = train::hyper_search(
      shipped, [&](const train::HyperConfig&, std::size_t) {
        ++calls;
        return 0.25;
      });
  std::vector<std::size_t> order;
  for (const auto& r : ranked) {
    order.push_back(r.grid_index);
  }
  o.require(calls == kGridRows, "stub evaluated " + std::to_string(calls) + " times");
  o.require(order == std::vector<std::size_t>{0, 1, 3, 2, 4}, "equal-loss ranking out of tie-break order");
  if (o.pass) {
    o.detail << kGridRows << " one-epoch trainings, identical tables across runs, tie-break order 0,1,3,2,4";
  }
}

// -- 7: format round-trips --------------------------------------------------

void criterion_round_trips(Outcome& o) {
  const auto dir = testutil::scratch_dir("acceptance_formats");
  auto c = toy_network();
  c.input_channels = 3;
  c.upsampling = DecoderUpsampling::nearest_conv;
  auto state = build_network(c);
  // Move off the initial point so the file carries non-trivial biases.
  for (auto& [name, t] : state.params) {
    const auto r = uniform_tensor(t.shape(), mix_seed(7, t.numel()), -0.2, 0.2);
    auto d = t.mutable_data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += r.data()[i];
    }
  }
  save_checkpoint((dir / "model.ckpt").string(), state);
  const auto loaded = load_checkpoint((dir / "model.ckpt").string());
  const auto image = uniform_tensor({2, 3, 32, 32}, 3, 0.0, 1.0);
  const auto a = forward(state, image), b = forward(loaded, image);
  o.require(loaded.config == state.config, "checkpoint config differs");
  o.require(bit_equal(a.seg_prob, b.seg_prob) && bit_equal(a.edge_prob, b.edge_prob) && bit_equal(a.alpha, b.alpha),
            "checkpoint forward not bit-exact");

  const auto manifest = data::synth_corpus(6, 16, 1, dir / "corpus");
  const auto reread = data::load_manifest(dir / "corpus" / "manifest.csv");
  o.require(reread.records == manifest.records, "manifest re-parse differs");
  data::write_manifest(dir / "copy.csv", reread);
  o.require(read_bytes(dir / "copy.csv") == read_bytes(dir / "corpus" / "manifest.csv"), "manifest rewrite differs");

  train::TrainRunReport report;
  report.mode = "cv";
  report.settings.network = c;
  report.settings.hyper.filter_size = 64;
  report.settings.loss.pos_weight = 3.0;
  report.settings.threshold = 0.4;
  Rng rng(9);
  for (int f = 0; f < 3; ++f) {
    train::FoldReport fold;
    fold.fold = f;
    for (int e = 0; e < 4; ++e) {
      fold.epochs.push_back({e, rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)});
    }
    fold.early_stopped = f == 1;
    fold.train_records = 10 + f;
    fold.validation_records = 3;
    fold.test_records = 4;
    fold.confusion = {static_cast<std::int64_t>(rng.below(100)), 3, 4, 1000};
    fold.metrics = eval::metrics_from_counts(fold.confusion, rng.uniform());
    report.aggregate_confusion += fold.confusion;
    report.folds.push_back(fold);
  }
  report.aggregate = eval::metrics_from_counts(report.aggregate_confusion, 1.0 / 3.0);
  write_json_file(dir / "report.json", to_json(report));
  const auto back = report_from_json(read_json_file(dir / "report.json"));
  o.require(back.mode == report.mode && back.settings == report.settings && back.folds == report.folds &&
                back.aggregate_confusion == report.aggregate_confusion && back.aggregate == report.aggregate,
            "report re-parse differs");

  RunConfigFile rc{report.settings, (dir / "corpus" / "manifest.csv").string(), (dir / "out").string()};
  write_json_file(dir / "run.json", to_json(rc));
  o.require(load_run_config(dir / "run.json") == rc, "run config re-parse differs");
  if (o.pass) {
    o.detail << "checkpoint forward bit-exact; manifest, report and config re-parse equal";
  }
}

} // namespace

// With arguments, only the listed criterion numbers run.
int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    only.insert(std::atoi(argv[i]));
  }
  struct Criterion {
    int id;
    const char* name;
    void (*fn)(Outcome&);
  };
  const Criterion criteria[] = {
      {1, "gradient correctness", criterion_gradients},
      {2, "oracle equivalence", criterion_oracles},
      {3, "overfit convergence", criterion_overfit},
      {4, "identity-gate equivalence", criterion_identity_gate},
      {5, "CV discipline", criterion_cv},
      {6, "tuning procedure", criterion_tuning},
      {7, "format round-trips", criterion_round_trips},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) {
      continue;
    }
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.fn(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const double limit = kSecondsLimit[c.id];
    if (limit > 0 && seconds >= limit) {
      o.require(false, "runtime " + std::to_string(seconds) + " s over the " + std::to_string(limit) + " s limit");
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << " [" << std::fixed << std::setprecision(1) << seconds << " s]" << std::defaultfloat << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
