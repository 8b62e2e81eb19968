// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/attention_gate.hpp"

#include "agseg/ops.hpp"
#include "agseg/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace agseg::attention {

AttentionGateParams AttentionGateParams::create(std::int64_t skip_channels,
                                                std::int64_t gate_channels, std::int64_t f_int,
                                                std::uint64_t seed) {
  if (skip_channels < 1 || gate_channels < 1 || f_int < 1) {
    throw std::invalid_argument("attention gate channel counts must be positive");
  }
  AttentionGateParams p;
  p.f_int = f_int;
  p.w_x = nn::glorot_uniform({f_int, skip_channels, 1, 1}, skip_channels, f_int, mix_seed(seed, 1));
  p.w_g = nn::glorot_uniform({f_int, gate_channels, 1, 1}, gate_channels, f_int, mix_seed(seed, 2));
  p.b_g = Tensor::zeros({f_int});
  p.psi = nn::glorot_uniform({1, f_int, 1, 1}, f_int, 1, mix_seed(seed, 3));
  p.b_psi = Tensor::zeros({1});
  return p;
}

std::int64_t AttentionGateParams::default_f_int(std::int64_t skip_channels) {
  return std::max<std::int64_t>(1, skip_channels / 2);
}

void AttentionGateParams::register_in(nn::ParamStore& store, const std::string& prefix) const {
  store.add(prefix + ".theta_x.weight", w_x);
  store.add(prefix + ".phi_g.weight", w_g);
  store.add(prefix + ".phi_g.bias", b_g);
  store.add(prefix + ".psi.weight", psi);
  store.add(prefix + ".psi.bias", b_psi);
}

AttentionGateParams AttentionGateParams::bind(const nn::ParamStore& store, const std::string& prefix) {
  AttentionGateParams p;
  p.w_x = store.get(prefix + ".theta_x.weight");
  p.w_g = store.get(prefix + ".phi_g.weight");
  p.b_g = store.get(prefix + ".phi_g.bias");
  p.psi = store.get(prefix + ".psi.weight");
  p.b_psi = store.get(prefix + ".psi.bias");
  p.f_int = p.w_x.dim(0);
  return p;
}

Tensor apply_gate(const Tensor& x_skip, const Tensor& alpha) { return ops::mul(x_skip, alpha); }

AttentionOutput ag_forward(const Tensor& x_skip, const Tensor& gate, const AttentionGateParams& params) {
  if (x_skip.rank() != 4 || gate.rank() != 4 || x_skip.dim(0) != gate.dim(0)) {
    throw ShapeError("attention gate: skip " + to_string(x_skip.shape()) + " and gate " +
                     to_string(gate.shape()) + " must be N x C x H x W with equal N");
  }
  const auto h = x_skip.dim(2), w = x_skip.dim(3);
  const auto hg = gate.dim(2), wg = gate.dim(3);
  if (hg > h || wg > w || h % hg != 0 || w % wg != 0 || h / hg != w / wg) {
    throw ShapeError("attention gate: skip extent " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not an integer multiple of gating extent " + std::to_string(hg) + "x" +
                     std::to_string(wg));
  }
  const auto factor = static_cast<int>(h / hg);

  const auto theta_x = ops::conv2d(x_skip, params.w_x);
  auto phi_g = ops::conv2d(gate, params.w_g, params.b_g);
  if (factor > 1) {
    phi_g = ops::upsample_nearest(phi_g, factor);
  }
  const auto q = ops::relu(ops::add(theta_x, phi_g));
  auto alpha = ops::sigmoid(ops::conv2d(q, params.psi, params.b_psi));
  auto gated = apply_gate(x_skip, alpha);
  return {std::move(gated), std::move(alpha)};
}

namespace {

// Double-precision evaluation of sum(gated * r_gated) + sum(alpha * r_alpha),
// the numeric side of ag_gradcheck. Records the sign of every relu input in
// `signs`; when `reference` is given and a sign differs, the step crossed a
// kink and NaN is returned.
double reference_projection(const Tensor& x_skip, const Tensor& gate, const AttentionGateParams& p,
                            const Tensor& r_gated, const Tensor& r_alpha, std::vector<char>& signs,
                            const std::vector<char>* reference) {
  const auto n = x_skip.dim(0), cx = x_skip.dim(1), h = x_skip.dim(2), w = x_skip.dim(3);
  const auto cg = gate.dim(1), hg = gate.dim(2), wg = gate.dim(3);
  const auto factor = h / hg;
  const auto f_int = p.w_x.dim(0);
  const auto x = x_skip.data(), g = gate.data();
  const auto wx = p.w_x.data(), wgt = p.w_g.data(), bg = p.b_g.data(), psi = p.psi.data();
  const double b_psi = p.b_psi.data()[0];
  const auto rg = r_gated.data(), ra = r_alpha.data();
  signs.clear();
  double total = 0.0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < h; ++i) {
      for (std::int64_t j = 0; j < w; ++j) {
        double s = b_psi;
        for (std::int64_t f = 0; f < f_int; ++f) {
          double v = bg[f];
          for (std::int64_t c = 0; c < cx; ++c) {
            v += static_cast<double>(wx[f * cx + c]) * x[((b * cx + c) * h + i) * w + j];
          }
          for (std::int64_t c = 0; c < cg; ++c) {
            v += static_cast<double>(wgt[f * cg + c]) * g[((b * cg + c) * hg + i / factor) * wg + j / factor];
          }
          signs.push_back(v > 0.0 ? 1 : 0);
          if (reference && signs.back() != (*reference)[signs.size() - 1]) {
            return std::numeric_limits<double>::quiet_NaN();
          }
          s += static_cast<double>(psi[f]) * std::max(v, 0.0);
        }
        const double alpha = 1.0 / (1.0 + std::exp(-s));
        total += alpha * ra[(b * h + i) * w + j];
        for (std::int64_t c = 0; c < cx; ++c) {
          const auto idx = ((b * cx + c) * h + i) * w + j;
          total += static_cast<double>(x[idx]) * alpha * rg[idx];
        }
      }
    }
  }
  return total;
}

} // namespace

gradcheck::Report ag_gradcheck(const AttentionGateParams& params, const Tensor& x_skip,
                               const Tensor& gate, std::uint64_t projection_seed,
                               const gradcheck::Options& options) {
  // Work on private leaf copies so callers' tensors keep their grad state.
  AttentionGateParams local;
  local.f_int = params.f_int;
  local.w_x = params.w_x.detach().set_requires_grad(true);
  local.w_g = params.w_g.detach().set_requires_grad(true);
  local.b_g = params.b_g.detach().set_requires_grad(true);
  local.psi = params.psi.detach().set_requires_grad(true);
  local.b_psi = params.b_psi.detach().set_requires_grad(true);

  const auto probe = ag_forward(x_skip, gate, local);
  const auto r_gated = uniform_tensor(probe.gated.shape(), mix_seed(projection_seed, 11));
  const auto r_alpha = uniform_tensor(probe.alpha.shape(), mix_seed(projection_seed, 12));

  std::vector<char> centre, scratch;
  reference_projection(x_skip, gate, local, r_gated, r_alpha, centre, nullptr);

  auto tape_loss = [&] {
    const auto out = ag_forward(x_skip, gate, local);
    return ops::add(ops::sum(ops::mul(out.gated, r_gated)), ops::sum(ops::mul(out.alpha, r_alpha)));
  };
  auto numeric_loss = [&] { return reference_projection(x_skip, gate, local, r_gated, r_alpha, scratch, &centre); };
  return gradcheck::check(tape_loss, numeric_loss,
                          {{"theta_x.weight", local.w_x},
                           {"phi_g.weight", local.w_g},
                           {"phi_g.bias", local.b_g},
                           {"psi.weight", local.psi},
                           {"psi.bias", local.b_psi}},
                          options);
}

} // namespace agseg::attention
