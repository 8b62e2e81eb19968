// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace agseg::ops {

namespace {

using detail::GradSink;
using detail::record;

struct ConvGeometry {
  std::int64_t batch, in_ch, in_h, in_w;
  std::int64_t out_ch, k_h, k_w;
  std::int64_t stride, pad;
  std::int64_t out_h, out_w;
};

// Range of output positions o with o*stride - pad + k inside [0, extent).
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t k, std::int64_t extent,
                                                  std::int64_t out_extent, std::int64_t stride,
                                                  std::int64_t pad) {
  std::int64_t lo = pad - k;
  lo = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  std::int64_t hi_num = extent - 1 + pad - k;
  if (hi_num < 0) {
    return {0, 0};
  }
  std::int64_t hi = std::min(out_extent, hi_num / stride + 1);
  return {lo, std::max(lo, hi)};
}

std::vector<float> conv_forward(std::span<const float> x, std::span<const float> w,
                                std::span<const float> bias, const ConvGeometry& g) {
  const auto plane = g.out_h * g.out_w;
  std::vector<float> y(static_cast<std::size_t>(g.batch * g.out_ch * plane));
  std::vector<double> acc(static_cast<std::size_t>(plane));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t co = 0; co < g.out_ch; ++co) {
      std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : static_cast<double>(bias[co]));
      for (std::int64_t ci = 0; ci < g.in_ch; ++ci) {
        const float* xin = x.data() + (n * g.in_ch + ci) * g.in_h * g.in_w;
        const float* wk = w.data() + (co * g.in_ch + ci) * g.k_h * g.k_w;
        for (std::int64_t ki = 0; ki < g.k_h; ++ki) {
          const auto [oh0, oh1] = valid_range(ki, g.in_h, g.out_h, g.stride, g.pad);
          for (std::int64_t kj = 0; kj < g.k_w; ++kj) {
            const auto [ow0, ow1] = valid_range(kj, g.in_w, g.out_w, g.stride, g.pad);
            const double wv = wk[ki * g.k_w + kj];
            if (wv == 0.0) {
              continue;
            }
            for (std::int64_t oh = oh0; oh < oh1; ++oh) {
              const std::int64_t base = (oh * g.stride - g.pad + ki) * g.in_w - g.pad + kj;
              double* out = acc.data() + oh * g.out_w;
              if (g.stride == 1) {
                const float* row = xin + base + ow0;
                for (std::int64_t ow = 0; ow < ow1 - ow0; ++ow) {
                  out[ow0 + ow] += wv * row[ow];
                }
              } else {
                for (std::int64_t ow = ow0; ow < ow1; ++ow) {
                  out[ow] += wv * xin[base + ow * g.stride];
                }
              }
            }
          }
        }
      }
      float* dst = y.data() + (n * g.out_ch + co) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
      }
    }
  }
  return y;
}

// Gradient of conv_forward with respect to x (equivalently, transposed conv).
std::vector<float> conv_input_grad(std::span<const float> gy, std::span<const float> w,
                                   const ConvGeometry& g) {
  const auto plane = g.in_h * g.in_w;
  std::vector<float> gx(static_cast<std::size_t>(g.batch * g.in_ch * plane));
  std::vector<double> acc(static_cast<std::size_t>(plane));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    for (std::int64_t ci = 0; ci < g.in_ch; ++ci) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::int64_t co = 0; co < g.out_ch; ++co) {
        const float* gyp = gy.data() + (n * g.out_ch + co) * g.out_h * g.out_w;
        const float* wk = w.data() + (co * g.in_ch + ci) * g.k_h * g.k_w;
        for (std::int64_t ki = 0; ki < g.k_h; ++ki) {
          const auto [oh0, oh1] = valid_range(ki, g.in_h, g.out_h, g.stride, g.pad);
          for (std::int64_t kj = 0; kj < g.k_w; ++kj) {
            const auto [ow0, ow1] = valid_range(kj, g.in_w, g.out_w, g.stride, g.pad);
            const double wv = wk[ki * g.k_w + kj];
            if (wv == 0.0) {
              continue;
            }
            for (std::int64_t oh = oh0; oh < oh1; ++oh) {
              const std::int64_t base = (oh * g.stride - g.pad + ki) * g.in_w - g.pad + kj;
              const float* src = gyp + oh * g.out_w;
              for (std::int64_t ow = ow0; ow < ow1; ++ow) {
                acc[static_cast<std::size_t>(base + ow * g.stride)] += wv * src[ow];
              }
            }
          }
        }
      }
      float* dst = gx.data() + (n * g.in_ch + ci) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        dst[i] = static_cast<float>(acc[static_cast<std::size_t>(i)]);
      }
    }
  }
  return gx;
}

std::vector<float> conv_weight_grad(std::span<const float> x, std::span<const float> gy,
                                    const ConvGeometry& g) {
  std::vector<float> gw(static_cast<std::size_t>(g.out_ch * g.in_ch * g.k_h * g.k_w));
  for (std::int64_t co = 0; co < g.out_ch; ++co) {
    for (std::int64_t ci = 0; ci < g.in_ch; ++ci) {
      for (std::int64_t ki = 0; ki < g.k_h; ++ki) {
        const auto [oh0, oh1] = valid_range(ki, g.in_h, g.out_h, g.stride, g.pad);
        for (std::int64_t kj = 0; kj < g.k_w; ++kj) {
          const auto [ow0, ow1] = valid_range(kj, g.in_w, g.out_w, g.stride, g.pad);
          double s = 0.0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const float* xin = x.data() + (n * g.in_ch + ci) * g.in_h * g.in_w;
            const float* gyp = gy.data() + (n * g.out_ch + co) * g.out_h * g.out_w;
            for (std::int64_t oh = oh0; oh < oh1; ++oh) {
              const std::int64_t base = (oh * g.stride - g.pad + ki) * g.in_w - g.pad + kj;
              const float* src = gyp + oh * g.out_w;
              for (std::int64_t ow = ow0; ow < ow1; ++ow) {
                s += static_cast<double>(src[ow]) * xin[base + ow * g.stride];
              }
            }
          }
          gw[static_cast<std::size_t>(((co * g.in_ch + ci) * g.k_h + ki) * g.k_w + kj)] =
              static_cast<float>(s);
        }
      }
    }
  }
  return gw;
}

std::vector<float> channel_sums(std::span<const float> g, std::int64_t batch, std::int64_t ch,
                                std::int64_t plane) {
  std::vector<float> out(static_cast<std::size_t>(ch));
  for (std::int64_t c = 0; c < ch; ++c) {
    double s = 0.0;
    for (std::int64_t n = 0; n < batch; ++n) {
      const float* p = g.data() + (n * ch + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        s += p[i];
      }
    }
    out[static_cast<std::size_t>(c)] = static_cast<float>(s);
  }
  return out;
}

void accumulate(std::span<float> dst, const std::vector<float>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be N x C x H x W, got " + to_string(t.shape()));
  }
}

void check_bias(const Tensor& bias, std::int64_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + to_string(bias.shape()) +
                     " does not match " + std::to_string(channels) + " output channels");
  }
}

enum class Broadcast { same, channel_vector, spatial_map };

Broadcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) {
    return Broadcast::same;
  }
  if (a.rank() == 4 && b.rank() == 1 && b.dim(0) == a.dim(1)) {
    return Broadcast::channel_vector;
  }
  if (a.rank() == 4 && b.rank() == 4 && b.dim(1) == 1 && b.dim(0) == a.dim(0) &&
      b.dim(2) == a.dim(2) && b.dim(3) == a.dim(3)) {
    return Broadcast::spatial_map;
  }
  throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                   to_string(b.shape()) + " are not broadcast-compatible");
}

// Index of b's element paired with a's flat index i.
struct BroadcastIndex {
  Broadcast mode;
  std::int64_t channels = 1, plane = 1;
  std::size_t operator()(std::size_t i) const {
    const auto k = static_cast<std::int64_t>(i);
    switch (mode) {
    case Broadcast::same:
      return i;
    case Broadcast::channel_vector:
      return static_cast<std::size_t>((k / plane) % channels);
    case Broadcast::spatial_map:
      return static_cast<std::size_t>((k / (plane * channels)) * plane + k % plane);
    }
    return i;
  }
};

BroadcastIndex make_index(const Tensor& a, Broadcast mode) {
  BroadcastIndex idx{mode};
  if (mode != Broadcast::same) {
    idx.channels = a.dim(1);
    idx.plane = a.dim(2) * a.dim(3);
  }
  return idx;
}

} // namespace

float stable_sigmoid(float x) {
  if (x >= 0.0f) {
    const float z = std::exp(-x);
    return 1.0f / (1.0f + z);
  }
  const float z = std::exp(x);
  return z / (1.0f + z);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
  require_rank4(input, "conv2d input");
  require_rank4(weight, "conv2d weight");
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                 weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (g.k_h > g.in_h + 2 * g.pad || g.k_w > g.in_w + 2 * g.pad) {
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) +
                     " larger than padded input " + to_string(input.shape()));
  }
  check_bias(bias, g.out_ch, "conv2d");
  g.out_h = (g.in_h + 2 * g.pad - g.k_h) / g.stride + 1;
  g.out_w = (g.in_w + 2 * g.pad - g.k_w) / g.stride + 1;

  auto y = conv_forward(input.data(), weight.data(),
                        bias.defined() ? bias.data() : std::span<const float>{}, g);
  return record({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(y), {input, weight, bias},
                [input, weight, bias, g](std::span<const float> gy, GradSink& sink) {
                  if (auto gi = sink.buffer(input); !gi.empty()) {
                    accumulate(gi, conv_input_grad(gy, weight.data(), g));
                  }
                  if (auto gw = sink.buffer(weight); !gw.empty()) {
                    accumulate(gw, conv_weight_grad(input.data(), gy, g));
                  }
                  if (auto gb = sink.buffer(bias); !gb.empty()) {
                    accumulate(gb, channel_sums(gy, g.batch, g.out_ch, g.out_h * g.out_w));
                  }
                });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                        int padding) {
  require_rank4(input, "conv_transpose2d input");
  require_rank4(weight, "conv_transpose2d weight");
  if (stride < 1 || padding < 0) {
    throw std::invalid_argument("conv_transpose2d: stride must be >= 1 and padding >= 0");
  }
  if (input.dim(1) != weight.dim(0)) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(input.dim(1)) +
                     " channels but weight " + to_string(weight.shape()) + " expects " +
                     std::to_string(weight.dim(0)));
  }
  const std::int64_t out_h = (input.dim(2) - 1) * stride - 2 * padding + weight.dim(2);
  const std::int64_t out_w = (input.dim(3) - 1) * stride - 2 * padding + weight.dim(3);
  if (out_h <= 0 || out_w <= 0) {
    throw ShapeError("conv_transpose2d: resulting extent " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " is not positive");
  }
  const std::int64_t out_ch = weight.dim(1);
  check_bias(bias, out_ch, "conv_transpose2d");

  // Geometry of the conv2d this operation is the input-adjoint of: the
  // transposed output plays the conv input, our input plays the conv output.
  ConvGeometry g{input.dim(0), out_ch, out_h, out_w, input.dim(1), weight.dim(2), weight.dim(3),
                 stride, padding, input.dim(2), input.dim(3)};

  auto y = conv_input_grad(input.data(), weight.data(), g);
  if (bias.defined()) {
    const auto plane = out_h * out_w;
    const auto b = bias.data();
    for (std::int64_t n = 0; n < g.batch; ++n) {
      for (std::int64_t c = 0; c < out_ch; ++c) {
        float* p = y.data() + (n * out_ch + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          p[i] += b[c];
        }
      }
    }
  }
  return record({g.batch, out_ch, out_h, out_w}, std::move(y), {input, weight, bias},
                [input, weight, bias, g](std::span<const float> gy, GradSink& sink) {
                  if (auto gi = sink.buffer(input); !gi.empty()) {
                    accumulate(gi, conv_forward(gy, weight.data(), {}, g));
                  }
                  if (auto gw = sink.buffer(weight); !gw.empty()) {
                    accumulate(gw, conv_weight_grad(gy, input.data(), g));
                  }
                  if (auto gb = sink.buffer(bias); !gb.empty()) {
                    accumulate(gb, channel_sums(gy, g.batch, g.in_ch, g.in_h * g.in_w));
                  }
                });
}

Tensor maxpool2d(const Tensor& input, int window, int stride) {
  require_rank4(input, "maxpool2d input");
  if (window < 1 || stride < 1) {
    throw std::invalid_argument("maxpool2d: window and stride must be >= 1");
  }
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " exceeds input " +
                     to_string(input.shape()));
  }
  const auto oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
  std::vector<float> y(static_cast<std::size_t>(n * c * oh * ow));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
  const auto x = input.data();
  std::size_t o = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const std::int64_t base = p * h * w;
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j, ++o) {
        std::int64_t best = base + (i * stride) * w + j * stride;
        for (std::int64_t di = 0; di < window; ++di) {
          for (std::int64_t dj = 0; dj < window; ++dj) {
            const auto idx = base + (i * stride + di) * w + j * stride + dj;
            if (x[static_cast<std::size_t>(idx)] > x[static_cast<std::size_t>(best)]) {
              best = idx;
            }
          }
        }
        y[o] = x[static_cast<std::size_t>(best)];
        (*argmax)[o] = best;
      }
    }
  }
  return record({n, c, oh, ow}, std::move(y), {input},
                [input, argmax](std::span<const float> gy, GradSink& sink) {
                  auto gi = sink.buffer(input);
                  if (gi.empty()) {
                    return;
                  }
                  for (std::size_t i = 0; i < gy.size(); ++i) {
                    gi[static_cast<std::size_t>((*argmax)[i])] += gy[i];
                  }
                });
}

Tensor upsample_nearest(const Tensor& input, int factor) {
  require_rank4(input, "upsample_nearest input");
  if (factor < 1) {
    throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  }
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto oh = h * factor, ow = w * factor;
  std::vector<float> y(static_cast<std::size_t>(n * c * oh * ow));
  const auto x = input.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    for (std::int64_t i = 0; i < oh; ++i) {
      for (std::int64_t j = 0; j < ow; ++j) {
        y[static_cast<std::size_t>((p * oh + i) * ow + j)] =
            x[static_cast<std::size_t>((p * h + i / factor) * w + j / factor)];
      }
    }
  }
  return record({n, c, oh, ow}, std::move(y), {input},
                [input, n, c, h, w, factor](std::span<const float> gy, GradSink& sink) {
                  auto gi = sink.buffer(input);
                  if (gi.empty()) {
                    return;
                  }
                  const auto oh = h * factor, ow = w * factor;
                  for (std::int64_t p = 0; p < n * c; ++p) {
                    for (std::int64_t i = 0; i < oh; ++i) {
                      for (std::int64_t j = 0; j < ow; ++j) {
                        gi[static_cast<std::size_t>((p * h + i / factor) * w + j / factor)] +=
                            gy[static_cast<std::size_t>((p * oh + i) * ow + j)];
                      }
                    }
                  }
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto idx = make_index(a, classify(a, b, "add"));
  const auto av = a.data(), bv = b.data();
  std::vector<float> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = av[i] + bv[idx(i)];
  }
  return record(a.shape(), std::move(y), {a, b},
                [a, b, idx](std::span<const float> g, GradSink& sink) {
                  if (auto ga = sink.buffer(a); !ga.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga[i] += g[i];
                    }
                  }
                  if (auto gb = sink.buffer(b); !gb.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      gb[idx(i)] += g[i];
                    }
                  }
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto idx = make_index(a, classify(a, b, "mul"));
  const auto av = a.data(), bv = b.data();
  std::vector<float> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = av[i] * bv[idx(i)];
  }
  return record(a.shape(), std::move(y), {a, b},
                [a, b, idx](std::span<const float> g, GradSink& sink) {
                  const auto av = a.data(), bv = b.data();
                  if (auto ga = sink.buffer(a); !ga.empty()) {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga[i] += g[i] * bv[idx(i)];
                    }
                  }
                  if (auto gb = sink.buffer(b); !gb.empty()) {
                    if (idx.mode == Broadcast::same) {
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        gb[i] += g[i] * av[i];
                      }
                    } else {
                      std::vector<double> acc(gb.size(), 0.0);
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        acc[idx(i)] += static_cast<double>(g[i]) * av[i];
                      }
                      for (std::size_t j = 0; j < gb.size(); ++j) {
                        gb[j] += static_cast<float>(acc[j]);
                      }
                    }
                  }
                });
}

Tensor relu(const Tensor& x) {
  const auto xv = x.data();
  std::vector<float> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  }
  return record(x.shape(), std::move(y), {x}, [x](std::span<const float> g, GradSink& sink) {
    auto gx = sink.buffer(x);
    const auto xv = x.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0f) {
        gx[i] += g[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  const auto xv = x.data();
  auto y = std::make_shared<std::vector<float>>(xv.size());
  for (std::size_t i = 0; i < y->size(); ++i) {
    (*y)[i] = stable_sigmoid(xv[i]);
  }
  return record(x.shape(), *y, {x}, [x, y](std::span<const float> g, GradSink& sink) {
    auto gx = sink.buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const float s = (*y)[i];
      gx[i] += g[i] * s * (1.0f - s);
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  const auto xv = x.data();
  std::vector<float> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = xv[i] * factor;
  }
  return record(x.shape(), std::move(y), {x},
                [x, factor](std::span<const float> g, GradSink& sink) {
                  auto gx = sink.buffer(x);
                  for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += g[i] * factor;
                  }
                });
}

Tensor add_scalar(const Tensor& x, float value) {
  const auto xv = x.data();
  std::vector<float> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = xv[i] + value;
  }
  return record(x.shape(), std::move(y), {x}, [x](std::span<const float> g, GradSink& sink) {
    auto gx = sink.buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += g[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) {
    s += v;
  }
  return record({1}, {static_cast<float>(s)}, {x},
                [x](std::span<const float> g, GradSink& sink) {
                  auto gx = sink.buffer(x);
                  for (auto& v : gx) {
                    v += g[0];
                  }
                });
}

Tensor mean(const Tensor& x) {
  const auto count = static_cast<double>(x.numel());
  double s = 0.0;
  for (float v : x.data()) {
    s += v;
  }
  return record({1}, {static_cast<float>(s / count)}, {x},
                [x, count](std::span<const float> g, GradSink& sink) {
                  auto gx = sink.buffer(x);
                  const auto d = static_cast<float>(g[0] / count);
                  for (auto& v : gx) {
                    v += d;
                  }
                });
}

Tensor sum_squares(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) {
    s += static_cast<double>(v) * v;
  }
  return record({1}, {static_cast<float>(s)}, {x},
                [x](std::span<const float> g, GradSink& sink) {
                  auto gx = sink.buffer(x);
                  const auto xv = x.data();
                  for (std::size_t i = 0; i < gx.size(); ++i) {
                    gx[i] += 2.0f * g[0] * xv[i];
                  }
                });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) {
    throw std::invalid_argument("concat_channels: nothing to concatenate");
  }
  const auto& first = parts.front();
  require_rank4(first, "concat_channels part");
  std::int64_t channels = 0;
  for (const auto& p : parts) {
    require_rank4(p, "concat_channels part");
    if (p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
      throw ShapeError("concat_channels: " + to_string(p.shape()) + " incompatible with " +
                       to_string(first.shape()));
    }
    channels += p.dim(1);
  }
  const auto n = first.dim(0), plane = first.dim(2) * first.dim(3);
  std::vector<float> y(static_cast<std::size_t>(n * channels * plane));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const auto c = p.dim(1);
    const auto src = p.data();
    for (std::int64_t b = 0; b < n; ++b) {
      std::copy_n(src.begin() + b * c * plane, c * plane,
                  y.begin() + (b * channels + offset) * plane);
    }
    offset += c;
  }
  return record({n, channels, first.dim(2), first.dim(3)}, std::move(y), parts,
                [parts, n, channels, plane](std::span<const float> g, GradSink& sink) {
                  std::int64_t offset = 0;
                  for (const auto& p : parts) {
                    const auto c = p.dim(1);
                    if (auto gp = sink.buffer(p); !gp.empty()) {
                      for (std::int64_t b = 0; b < n; ++b) {
                        for (std::int64_t i = 0; i < c * plane; ++i) {
                          gp[static_cast<std::size_t>(b * c * plane + i)] +=
                              g[static_cast<std::size_t>((b * channels + offset) * plane + i)];
                        }
                      }
                    }
                    offset += c;
                  }
                });
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  switch (op) {
  case Elementwise::add:
    return add(a, b);
  case Elementwise::mul:
    return mul(a, b);
  case Elementwise::relu:
    return relu(a);
  case Elementwise::sigmoid:
    return sigmoid(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

} // namespace agseg::ops
