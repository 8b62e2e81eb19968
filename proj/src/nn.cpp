// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/nn.hpp"

#include "agseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace agseg::nn {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (name.empty()) {
    throw std::invalid_argument("parameter name must not be empty");
  }
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  value.set_requires_grad(true);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::out_of_range("unknown parameter: " + name);
  }
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, t] : entries_) {
    total += t.numel();
  }
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) {
    t.clear_grad();
  }
}

bool is_bias_name(const std::string& name) {
  constexpr std::string_view suffix = ".bias";
  if (name == "bias") {
    return true;
  }
  return name.size() >= suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

double glorot_bound(std::int64_t fan_in, std::int64_t fan_out) {
  if (fan_in < 1 || fan_out < 1) {
    throw std::invalid_argument("glorot: fan_in and fan_out must be >= 1");
  }
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_uniform(Shape shape, std::int64_t fan_in, std::int64_t fan_out, std::uint64_t seed) {
  const double bound = glorot_bound(fan_in, fan_out);
  std::mt19937_64 rng(seed);
  std::vector<float> values(static_cast<std::size_t>(numel_of(shape)));
  for (auto& v : values) {
    // 53 random bits mapped to [0, 1), then to [-bound, bound).
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<float>((2.0 * u - 1.0) * bound);
  }
  return Tensor(std::move(shape), std::move(values));
}

void adam_step(ParamStore& params, AdamState& state) {
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) {
      throw std::runtime_error("adam_step: parameter '" + name + "' has no gradient");
    }
  }
  const auto& cfg = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (auto& [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    const auto n = static_cast<std::size_t>(p.numel());
    if (m.size() != n) {
      m.assign(n, 0.0f);
      v.assign(n, 0.0f);
    }
    const auto g = p.grad();
    auto theta = p.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      theta[i] = static_cast<float>(theta[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
    }
    p.clear_grad();
  }
}

namespace {

void require_same_shape(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape()) {
    throw ShapeError(std::string(what) + ": prediction " + to_string(pred.shape()) +
                     " and target " + to_string(target.shape()) + " differ");
  }
}

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

bool inside_clamp(double p) { return p > kProbabilityClamp && p < 1.0 - kProbabilityClamp; }

} // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "bce_loss");
  const auto pv = pred.data(), yv = target.data();
  const double count = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = clamp_probability(pv[i]);
    const double y = yv[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return detail::record({1}, {static_cast<float>(total / count)}, {pred},
                        [pred, target, count](std::span<const float> g, detail::GradSink& sink) {
                          auto gp = sink.buffer(pred);
                          const auto pv = pred.data(), yv = target.data();
                          for (std::size_t i = 0; i < gp.size(); ++i) {
                            const double p = pv[i];
                            if (!inside_clamp(p)) {
                              continue;
                            }
                            const double y = yv[i];
                            const double d = -y / p + (1.0 - y) / (1.0 - p);
                            gp[i] += static_cast<float>(g[0] * d / count);
                          }
                        });
}

double resolve_pos_weight(const Tensor& target, const LossConfig& cfg) {
  if (cfg.pos_weight) {
    if (*cfg.pos_weight <= 0.0) {
      throw std::invalid_argument("pos_weight must be positive");
    }
    return *cfg.pos_weight;
  }
  double positives = 0.0;
  for (float y : target.data()) {
    positives += y;
  }
  const double negatives = static_cast<double>(target.numel()) - positives;
  if (positives <= 0.0 || negatives <= 0.0) {
    return 1.0;
  }
  return negatives / positives;
}

Tensor focal_bce_loss(const Tensor& pred, const Tensor& target, const LossConfig& cfg) {
  require_same_shape(pred, target, "focal_bce_loss");
  if (cfg.gamma < 0.0) {
    throw std::invalid_argument("focal gamma must be non-negative");
  }
  const double gamma = cfg.gamma;
  const double weight = resolve_pos_weight(target, cfg);
  const auto pv = pred.data(), yv = target.data();
  const double count = static_cast<double>(pv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = clamp_probability(pv[i]);
    const double y = yv[i];
    total -= weight * y * std::pow(1.0 - p, gamma) * std::log(p) +
             (1.0 - y) * std::pow(p, gamma) * std::log(1.0 - p);
  }
  return detail::record(
      {1}, {static_cast<float>(total / count)}, {pred},
      [pred, target, count, gamma, weight](std::span<const float> g, detail::GradSink& sink) {
        auto gp = sink.buffer(pred);
        const auto pv = pred.data(), yv = target.data();
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double p = pv[i];
          if (!inside_clamp(p)) {
            continue;
          }
          const double y = yv[i];
          const double q = 1.0 - p;
          // d/dp of the positive and negative terms; the gamma * x^(gamma-1)
          // factors vanish when gamma == 0.
          double pos = std::pow(q, gamma) / p;
          double neg = -std::pow(p, gamma) / q;
          if (gamma != 0.0) {
            pos -= gamma * std::pow(q, gamma - 1.0) * std::log(p);
            neg += gamma * std::pow(p, gamma - 1.0) * std::log(q);
          }
          const double d = -(weight * y * pos + (1.0 - y) * neg);
          gp[i] += static_cast<float>(g[0] * d / count);
        }
      });
}

Tensor l2_penalty(const ParamStore& params, double lambda) {
  if (lambda < 0.0) {
    throw std::invalid_argument("l2 factor must be non-negative");
  }
  Tensor total = Tensor::scalar(0.0f);
  for (const auto& [name, p] : params) {
    if (is_bias_name(name)) {
      continue;
    }
    total = ops::add(total, ops::sum_squares(p));
  }
  return ops::scale(total, static_cast<float>(lambda));
}

} // namespace agseg::nn
