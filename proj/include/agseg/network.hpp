// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// The attention-gated, edge-supervised encoder-decoder.
//
// Encoder block b (1..4): conv3x3 -> relu -> conv3x3 -> relu -> maxpool2.
// The edge head taps the pooled output of block `ea_tap_block` (0 = the input
// image) and its conditioned feature replaces that output downstream. The
// pre-pool feature of block `ag_after_block` is sent across a skip connection
// through the attention gate, gated by the decoder feature one level coarser.
// Decoder block j (1..4): stride-2 transposed conv (or nearest x2 + conv3x3),
// concatenation with the gated skip when resolutions meet, conv3x3 -> relu.
// A final 1x1 conv and sigmoid give the segmentation probability map.

#pragma once

#include "agseg/attention_gate.hpp"
#include "agseg/edge_attention.hpp"
#include "agseg/nn.hpp"
#include "agseg/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace agseg {

enum class DecoderUpsampling { transpose_conv, nearest_conv };

struct NetworkConfig {
  std::int64_t input_channels = 3;
  std::int64_t input_size = 128;
  std::vector<std::int64_t> encoder_filters{512, 256, 128, 64};
  std::vector<std::int64_t> decoder_filters{64, 128, 256, 512};
  double base_filter_scale = 1.0;
  int ag_after_block = 2;
  int ea_tap_block = 1;
  int kernel_size = 3;
  DecoderUpsampling upsampling = DecoderUpsampling::transpose_conv;
  std::uint64_t seed = 0;

  /// Every violated invariant, one message each; empty when valid.
  std::vector<std::string> validate() const;
  /// Filter counts after applying base_filter_scale (at least 1 each).
  std::vector<std::int64_t> scaled_encoder_filters() const;
  std::vector<std::int64_t> scaled_decoder_filters() const;

  bool operator==(const NetworkConfig&) const = default;
};

inline constexpr int kDepth = 4;

class InvalidConfig : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct NetworkState {
  NetworkConfig config;
  nn::ParamStore params;
};

/// Builds and Glorot-initializes every parameter from config.seed.
NetworkState build_network(const NetworkConfig& config);

enum class GateMode {
  learned,  // alpha from the attention gate
  identity, // alpha forced to all ones, gate still in the data path
  bypass,   // skip feature passed through ungated
};

struct ForwardOptions {
  GateMode gate = GateMode::learned;
};

struct ForwardOutput {
  Tensor seg_prob;  // N x 1 x S x S
  Tensor edge_prob; // N x 1 x S/2^t x S/2^t for tap block t
  Tensor alpha;     // N x 1 at the skip resolution; undefined without a gate
};

ForwardOutput forward(const NetworkState& state, const Tensor& image, const ForwardOptions& options = {});

/// Spatial extent at which the edge head operates.
std::int64_t edge_resolution(const NetworkConfig& config);

struct LossBreakdown {
  Tensor total;
  double focal = 0.0;
  double edge = 0.0;
  double l2 = 0.0;
};

/// focal(seg, mask) + lambda_edge * bce(edge, pooled boundary of mask)
///   + lambda_reg * sum of squared weights.
LossBreakdown total_loss(const Tensor& seg_prob, const Tensor& edge_prob, const Tensor& mask,
                         const nn::LossConfig& cfg, const nn::ParamStore& params);

/// Checkpoint: one line of JSON header (config, parameter names, shapes, byte
/// offsets), a newline, then the raw little-endian float32 values.
void save_checkpoint(const std::string& path, const NetworkState& state);
NetworkState load_checkpoint(const std::string& path);

} // namespace agseg
