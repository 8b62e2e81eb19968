// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Additive grid attention gate on a skip connection.
//
// Given a skip feature x (N x Cx x H x W) and a coarser gating signal g
// (N x Cg x Hg x Wg, H a multiple of Hg), the gate computes
//
//   q     = relu(Wx * x + up(Wg * g + b_g))
//   alpha = sigmoid(psi * q + b_psi)            (N x 1 x H x W)
//   gated = x (.) alpha                         (alpha broadcast over channels)
//
// where every "*" is a 1x1 convolution and up() is nearest-neighbour
// upsampling by H / Hg. The coefficients are therefore computed independently
// per grid location.

#pragma once

#include "agseg/gradcheck.hpp"
#include "agseg/nn.hpp"
#include "agseg/tensor.hpp"

#include <cstdint>
#include <string>

namespace agseg::attention {

struct AttentionGateParams {
  Tensor w_x;   // F_int x Cx x 1 x 1
  Tensor w_g;   // F_int x Cg x 1 x 1
  Tensor b_g;   // F_int
  Tensor psi;   // 1 x F_int x 1 x 1
  Tensor b_psi; // 1
  std::int64_t f_int = 1;

  /// Glorot-initialized weights and zero biases.
  static AttentionGateParams create(std::int64_t skip_channels, std::int64_t gate_channels,
                                    std::int64_t f_int, std::uint64_t seed);
  /// F_int default: half the skip channels, at least one.
  static std::int64_t default_f_int(std::int64_t skip_channels);

  /// Adds the five tensors to `store` under `prefix` (sharing storage).
  void register_in(nn::ParamStore& store, const std::string& prefix) const;
  /// Rebinds the handles to tensors previously registered under `prefix`.
  static AttentionGateParams bind(const nn::ParamStore& store, const std::string& prefix);
};

struct AttentionOutput {
  Tensor gated;
  Tensor alpha;
};

AttentionOutput ag_forward(const Tensor& x_skip, const Tensor& gate, const AttentionGateParams& params);

/// Scales x by a single-channel coefficient map broadcast over channels.
Tensor apply_gate(const Tensor& x_skip, const Tensor& alpha);

/// Finite-difference check of every gate parameter for the scalar
/// sum(r1 (.) gated) + sum(r2 (.) alpha) with fixed random projections r1, r2.
/// The differences are taken of a double-precision evaluation of the gate;
/// steps that flip the sign of a relu input are skipped.
gradcheck::Report ag_gradcheck(const AttentionGateParams& params, const Tensor& x_skip,
                               const Tensor& gate, std::uint64_t projection_seed = 0,
                               const gradcheck::Options& options = {});

} // namespace agseg::attention
