// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/edge_attention.hpp"

#include "agseg/ops.hpp"
#include "agseg/random.hpp"

#include <algorithm>
#include <stdexcept>

namespace agseg::edge {

EdgeHeadParams EdgeHeadParams::create(std::int64_t channels, std::uint64_t seed) {
  return {nn::glorot_uniform({1, channels, 1, 1}, channels, 1, mix_seed(seed, 1)), Tensor::zeros({1})};
}

EdgeHeadParams EdgeHeadParams::zeros(std::int64_t channels) {
  return {Tensor::zeros({1, channels, 1, 1}), Tensor::zeros({1})};
}

void EdgeHeadParams::register_in(nn::ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".weight", w_e);
  store.add(prefix + ".bias", b_e);
}

EdgeHeadParams EdgeHeadParams::bind(const nn::ParamStore& store, const std::string& prefix) {
  return {store.get(prefix + ".weight"), store.get(prefix + ".bias")};
}

EdgeOutput ea_forward(const Tensor& feature, const EdgeHeadParams& params) {
  auto edge_prob = ops::sigmoid(ops::conv2d(feature, params.w_e, params.b_e));
  auto conditioned = ops::mul(feature, ops::add_scalar(edge_prob, 1.0f));
  return {std::move(edge_prob), std::move(conditioned)};
}

Tensor edge_target_from_mask(const Tensor& mask) {
  if (mask.rank() != 4 || mask.dim(1) != 1) {
    throw ShapeError("edge target: mask must be N x 1 x H x W, got " + to_string(mask.shape()));
  }
  const auto m = mask.data();
  for (float v : m) {
    if (v != 0.0f && v != 1.0f) {
      throw std::invalid_argument("edge target: mask must be binary, found value " + std::to_string(v));
    }
  }
  const auto n = mask.dim(0), h = mask.dim(2), w = mask.dim(3);
  std::vector<float> out(m.size(), 0.0f);
  for (std::int64_t b = 0; b < n; ++b) {
    const float* plane = m.data() + b * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        float dilated = 0.0f, eroded = 1.0f;
        for (std::int64_t di = std::max<std::int64_t>(0, i - 1); di <= std::min(h - 1, i + 1); ++di) {
          for (std::int64_t dj = std::max<std::int64_t>(0, j - 1); dj <= std::min(w - 1, j + 1); ++dj) {
            const float v = plane[di * w + dj];
            dilated = std::max(dilated, v);
            eroded = std::min(eroded, v);
          }
        }
        out[static_cast<std::size_t>((b * h + i) * w + j)] = dilated - eroded;
      }
    }
  }
  return Tensor(mask.shape(), std::move(out));
}

Tensor downsample_target(const Tensor& target, int factor) {
  if (factor == 1) {
    return target;
  }
  NoGradGuard guard;
  return ops::maxpool2d(target, factor, factor).detach();
}

Tensor edge_loss(const Tensor& edge_prob, const Tensor& target) { return nn::bce_loss(edge_prob, target); }

} // namespace agseg::edge
