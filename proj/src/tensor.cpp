// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace agseg {

namespace detail {

struct Node {
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> values;
  bool requires_grad = false;
  std::vector<float> grad;
  std::shared_ptr<Node> node;
  std::uint64_t sequence = 0;
};

namespace {

std::atomic<std::uint64_t> g_sequence{0};
thread_local bool t_grad_enabled = true;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<float> values) {
  const auto count = numel_of(shape);
  if (static_cast<std::int64_t>(values.size()) != count) {
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " + std::to_string(count) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::make_shared<std::vector<float>>(std::move(values));
  impl->sequence = g_sequence.fetch_add(1, std::memory_order_relaxed);
  return impl;
}

} // namespace

std::span<float> GradSink::buffer(const Tensor& input) {
  if (!input.defined() || !input.requires_grad()) {
    return {};
  }
  return lookup_(input.impl_.get());
}

Tensor record(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
              BackwardFn backward) {
  auto impl = make_impl(std::move(shape), std::move(values));
  if (t_grad_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      impl->requires_grad = true;
      impl->node = std::make_shared<Node>(Node{std::move(inputs), std::move(backward)});
    }
  }
  return Tensor(std::move(impl));
}

void run_backward(const Tensor& root) {
  if (!root.defined()) {
    throw std::invalid_argument("backward on an undefined tensor");
  }
  if (root.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(root.shape()));
  }
  if (!root.requires_grad()) {
    return;
  }

  // Creation sequence numbers are a topological order: every input was created
  // before the operation that consumed it.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{root.impl_.get()};
  while (!stack.empty()) {
    auto* impl = stack.back();
    stack.pop_back();
    if (!seen.insert(impl).second) {
      continue;
    }
    order.push_back(impl);
    if (impl->node) {
      for (const auto& in : impl->node->inputs) {
        if (in.defined() && in.requires_grad()) {
          stack.push_back(in.impl_.get());
        }
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->sequence > b->sequence; });

  std::unordered_map<TensorImpl*, std::vector<float>> grads;
  grads[root.impl_.get()] = std::vector<float>(1, 1.0f);

  GradSink sink;
  sink.lookup_ = [&grads](TensorImpl* impl) -> std::span<float> {
    auto& buf = grads[impl];
    if (buf.empty()) {
      buf.assign(static_cast<std::size_t>(numel_of(impl->shape)), 0.0f);
    }
    return buf;
  };

  for (auto* impl : order) {
    auto it = grads.find(impl);
    if (it == grads.end()) {
      continue;
    }
    if (impl->node) {
      // Move the buffer out: intermediate gradients are not retained.
      std::vector<float> g = std::move(it->second);
      grads.erase(it);
      impl->node->backward(g, sink);
    } else {
      auto& acc = impl->grad;
      if (acc.empty()) {
        acc.assign(it->second.size(), 0.0f);
      }
      for (std::size_t i = 0; i < acc.size(); ++i) {
        acc[i] += it->second[i];
      }
    }
  }
}

} // namespace detail

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) {
      throw ShapeError("non-positive extent in shape " + to_string(shape));
    }
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) {
  const auto n = numel_of(shape);
  impl_ = detail::make_impl(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), fill));
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : impl_(detail::make_impl(std::move(shape), std::move(values))) {}

const Shape& Tensor::shape() const {
  if (!impl_) {
    throw std::logic_error("access to an undefined tensor");
  }
  return impl_->shape;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_ ? impl_->values->size() : 0); }

std::span<const float> Tensor::data() const {
  shape();
  return *impl_->values;
}

std::span<float> Tensor::mutable_data() {
  shape();
  return *impl_->values;
}

float Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + to_string(shape()));
  }
  return (*impl_->values)[0];
}

float Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const auto& s = shape();
  if (s.size() != 4) {
    throw ShapeError("at(n,c,h,w) on tensor of shape " + to_string(s));
  }
  return (*impl_->values)[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  shape();
  if (impl_->node) {
    throw std::logic_error("requires_grad can only be set on leaf tensors");
  }
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const {
  shape();
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) {
    return Tensor::zeros(shape());
  }
  return Tensor(shape(), impl_->grad);
}

void Tensor::zero_grad() {
  shape();
  impl_->grad.assign(impl_->values->size(), 0.0f);
}

void Tensor::clear_grad() {
  shape();
  impl_->grad.clear();
}

void Tensor::backward() const { detail::run_backward(*this); }

Tensor Tensor::detach() const { return Tensor(shape(), *impl_->values); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (numel_of(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape()) + " to " + to_string(new_shape));
  }
  auto in = *this;
  return detail::record(std::move(new_shape), *impl_->values, {in},
                        [in](std::span<const float> g, detail::GradSink& sink) {
                          auto gi = sink.buffer(in);
                          for (std::size_t i = 0; i < gi.size(); ++i) {
                            gi[i] += g[i];
                          }
                        });
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

NoGradGuard::NoGradGuard() : previous_(detail::t_grad_enabled) { detail::t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::t_grad_enabled = previous_; }

bool grad_mode_enabled() { return detail::t_grad_enabled; }

} // namespace agseg
