// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Gated edge detector: a 1x1 edge head on a low-level feature, supervised with
// BCE against the morphological gradient of the ground-truth mask. The edge
// probability also re-weights the tapped feature as feat * (1 + edge).

#pragma once

#include "agseg/nn.hpp"
#include "agseg/tensor.hpp"

#include <cstdint>
#include <string>

namespace agseg::edge {

struct EdgeHeadParams {
  Tensor w_e; // 1 x C x 1 x 1
  Tensor b_e; // 1

  static EdgeHeadParams create(std::int64_t channels, std::uint64_t seed);
  static EdgeHeadParams zeros(std::int64_t channels);
  void register_in(nn::ParamStore& store, const std::string& prefix) const;
  static EdgeHeadParams bind(const nn::ParamStore& store, const std::string& prefix);
};

struct EdgeOutput {
  Tensor edge_prob;   // N x 1 x H x W
  Tensor conditioned; // N x C x H x W
};

EdgeOutput ea_forward(const Tensor& feature, const EdgeHeadParams& params);

/// 3x3 morphological gradient (dilation minus erosion) of a binary
/// N x 1 x H x W mask. Neighbourhoods are clipped to the image, so a pixel is
/// a boundary pixel exactly when its in-image 3x3 neighbourhood holds both
/// labels. Throws on non-binary input.
Tensor edge_target_from_mask(const Tensor& mask);

/// Max-pools a boundary map down by `factor` so thin boundaries survive.
Tensor downsample_target(const Tensor& target, int factor);

Tensor edge_loss(const Tensor& edge_prob, const Tensor& target);

} // namespace agseg::edge
