// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float tensor with define-by-run reverse-mode differentiation.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agseg {

using Shape = std::vector<std::int64_t>;

/// Thrown whenever operand shapes are incompatible with an operation.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

std::int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

class Tensor;

namespace detail {

struct TensorImpl;

/// Collects gradient buffers for the inputs of an operation during backward.
class GradSink {
public:
  /// Zero-initialized gradient buffer for `input`, or an empty span when the
  /// input does not take part in differentiation.
  std::span<float> buffer(const Tensor& input);

private:
  friend void run_backward(const Tensor& root);
  std::function<std::span<float>(TensorImpl*)> lookup_;
};

using BackwardFn = std::function<void(std::span<const float> grad_out, GradSink& sink)>;

/// Wraps freshly computed output values in a Tensor and, when gradient
/// recording is active and any input requires a gradient, attaches the
/// backward rule to it.
Tensor record(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
              BackwardFn backward);

void run_backward(const Tensor& root);

} // namespace detail

/// Shared handle to an immutable buffer of 32-bit reals. Copies alias the same
/// storage; only gradients (and optimizer updates) mutate it in place.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor full(Shape shape, float value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(float value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const float> data() const;
  /// In-place access for optimizers and loaders; never call while a graph
  /// that captured this tensor is still to be differentiated.
  std::span<float> mutable_data();
  float item() const;
  float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const float> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();
  void clear_grad();

  /// Differentiates this scalar with respect to every reachable tensor that
  /// requires a gradient. Repeated calls accumulate.
  void backward() const;

  /// Copy of the values, cut from any graph.
  Tensor detach() const;
  /// Same storage viewed under a different shape with equal element count.
  Tensor reshape(Shape shape) const;

  bool is_leaf() const;
  const void* identity() const { return impl_.get(); }

private:
  friend Tensor detail::record(Shape, std::vector<float>, std::vector<Tensor>, detail::BackwardFn);
  friend void detail::run_backward(const Tensor&);
  friend class detail::GradSink;
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

bool grad_mode_enabled();

} // namespace agseg
