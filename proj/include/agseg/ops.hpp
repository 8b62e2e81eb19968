// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Image-like tensors use N x C x H x W layout.

#pragma once

#include "agseg/tensor.hpp"

#include <vector>

namespace agseg::ops {

/// Cross-correlation (no kernel flip). `weight` is Cout x Cin x kh x kw and
/// `bias` (optional) has Cout entries. Sums are accumulated in double.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              int stride = 1, int padding = 0);

/// Adjoint of conv2d with respect to its input. `weight` is Cin x Cout x kh x kw;
/// output extent is (H - 1) * stride - 2 * padding + kh.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
                        int stride = 1, int padding = 0);

/// Window maximum. Ties route the gradient to the first element in row-major
/// window order.
Tensor maxpool2d(const Tensor& input, int window, int stride);

/// Replicates every pixel into a factor x factor block.
Tensor upsample_nearest(const Tensor& input, int factor);

// Binary operations accept equal shapes, a per-channel vector `b` of shape [C],
// or a single-channel map `b` of shape [N,1,H,W] broadcast over the channels of
// `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_squares(const Tensor& x);

/// Concatenates N x Ci x H x W tensors along the channel axis.
Tensor concat_channels(const std::vector<Tensor>& parts);

enum class Elementwise { add, mul, relu, sigmoid };

/// Dispatches to the named elementwise operation; unary ops ignore `b`.
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = {});

/// Numerically stable logistic function shared by the forward pass and tests.
float stable_sigmoid(float x);

} // namespace agseg::ops
