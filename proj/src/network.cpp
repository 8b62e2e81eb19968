// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/network.hpp"

#include "agseg/ops.hpp"
#include "agseg/random.hpp"
#include "agseg/serialization.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

namespace agseg {

namespace {

std::vector<std::int64_t> scale_filters(const std::vector<std::int64_t>& filters, double scale) {
  std::vector<std::int64_t> out;
  out.reserve(filters.size());
  for (auto f : filters) {
    out.push_back(std::max<std::int64_t>(1, std::llround(static_cast<double>(f) * scale)));
  }
  return out;
}

std::string block_name(const char* part, int index) {
  return std::string(part) + ".block" + std::to_string(index);
}

// Decoder block whose upsampled output matches the pre-pool resolution of
// encoder block b.
int decoder_block_for_skip(int encoder_block) { return kDepth + 1 - encoder_block; }

class ParamBuilder {
public:
  ParamBuilder(nn::ParamStore& store, std::uint64_t seed) : store_(store), seed_(seed) {}

  std::uint64_t next_seed() { return mix_seed(seed_, ++counter_); }

  void conv(const std::string& name, Shape weight_shape, std::int64_t fan_in, std::int64_t fan_out,
            std::int64_t bias_size) {
    store_.add(name + ".weight", nn::glorot_uniform(std::move(weight_shape), fan_in, fan_out, next_seed()));
    store_.add(name + ".bias", Tensor::zeros({bias_size}));
  }

private:
  nn::ParamStore& store_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::int64_t gate_channels(const NetworkConfig& config) {
  const int j = decoder_block_for_skip(config.ag_after_block);
  return j == 1 ? config.scaled_encoder_filters().back() : config.scaled_decoder_filters()[j - 2];
}

} // namespace

std::vector<std::string> NetworkConfig::validate() const {
  std::vector<std::string> errors;
  if (input_channels < 1) {
    errors.push_back("input_channels must be positive");
  }
  if (input_size < 1 || input_size % (1 << kDepth) != 0) {
    errors.push_back("input_size must be a positive multiple of 16 (four pooling stages)");
  }
  if (encoder_filters.size() != kDepth) {
    errors.push_back("encoder_filters must list exactly 4 filter counts");
  }
  if (decoder_filters.size() != kDepth) {
    errors.push_back("decoder_filters must list exactly 4 filter counts");
  }
  for (auto f : encoder_filters) {
    if (f < 1) {
      errors.push_back("encoder_filters entries must be positive");
      break;
    }
  }
  for (auto f : decoder_filters) {
    if (f < 1) {
      errors.push_back("decoder_filters entries must be positive");
      break;
    }
  }
  if (!(base_filter_scale > 0.0) || !std::isfinite(base_filter_scale)) {
    errors.push_back("base_filter_scale must be a positive real");
  }
  if (ag_after_block < 0 || ag_after_block > kDepth) {
    errors.push_back("ag_after_block must be in [0, 4] (0 disables the attention gate)");
  }
  if (ea_tap_block < 0 || ea_tap_block > kDepth) {
    errors.push_back("ea_tap_block must be in [0, 4] (0 taps the input image)");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    errors.push_back("kernel_size must be a positive odd integer");
  }
  return errors;
}

std::vector<std::int64_t> NetworkConfig::scaled_encoder_filters() const {
  return scale_filters(encoder_filters, base_filter_scale);
}

std::vector<std::int64_t> NetworkConfig::scaled_decoder_filters() const {
  return scale_filters(decoder_filters, base_filter_scale);
}

std::int64_t edge_resolution(const NetworkConfig& config) {
  return config.input_size >> config.ea_tap_block;
}

NetworkState build_network(const NetworkConfig& config) {
  if (auto errors = config.validate(); !errors.empty()) {
    std::string msg = "invalid network config:";
    for (const auto& e : errors) {
      msg += "\n  " + e;
    }
    throw InvalidConfig(msg);
  }
  NetworkState state{config, {}};
  ParamBuilder builder(state.params, config.seed);
  const auto enc = config.scaled_encoder_filters();
  const auto dec = config.scaled_decoder_filters();
  const std::int64_t k = config.kernel_size;

  std::int64_t in_ch = config.input_channels;
  for (int b = 1; b <= kDepth; ++b) {
    const auto f = enc[b - 1];
    builder.conv(block_name("enc", b) + ".conv1", {f, in_ch, k, k}, in_ch * k * k, f * k * k, f);
    builder.conv(block_name("enc", b) + ".conv2", {f, f, k, k}, f * k * k, f * k * k, f);
    in_ch = f;
  }

  const auto tap_channels = config.ea_tap_block == 0 ? config.input_channels : enc[config.ea_tap_block - 1];
  edge::EdgeHeadParams::create(tap_channels, builder.next_seed()).register_in(state.params, "ea.head");

  in_ch = enc.back();
  for (int j = 1; j <= kDepth; ++j) {
    const auto f = dec[j - 1];
    const auto name = block_name("dec", j);
    if (config.upsampling == DecoderUpsampling::transpose_conv) {
      builder.conv(name + ".up", {in_ch, f, 2, 2}, in_ch * 4, f * 4, f);
    } else {
      builder.conv(name + ".up", {f, in_ch, k, k}, in_ch * k * k, f * k * k, f);
    }
    std::int64_t merged = f;
    if (config.ag_after_block > 0 && j == decoder_block_for_skip(config.ag_after_block)) {
      merged += enc[config.ag_after_block - 1];
    }
    builder.conv(name + ".conv", {f, merged, k, k}, merged * k * k, f * k * k, f);
    in_ch = f;
  }

  if (config.ag_after_block > 0) {
    const auto skip_ch = enc[config.ag_after_block - 1];
    attention::AttentionGateParams::create(skip_ch, gate_channels(config),
                                           attention::AttentionGateParams::default_f_int(skip_ch),
                                           builder.next_seed())
        .register_in(state.params, "ag");
  }

  builder.conv("head", {1, dec.back(), 1, 1}, dec.back(), 1, 1);
  return state;
}

ForwardOutput forward(const NetworkState& state, const Tensor& image, const ForwardOptions& options) {
  const auto& cfg = state.config;
  const auto& p = state.params;
  if (image.rank() != 4 || image.dim(1) != cfg.input_channels || image.dim(2) != cfg.input_size ||
      image.dim(3) != cfg.input_size) {
    throw ShapeError("network expects N x " + std::to_string(cfg.input_channels) + " x " +
                     std::to_string(cfg.input_size) + " x " + std::to_string(cfg.input_size) +
                     " input, got " + to_string(image.shape()));
  }
  const int pad = cfg.kernel_size / 2;
  auto conv = [&](const Tensor& x, const std::string& name, int stride, int padding) {
    return ops::conv2d(x, p.get(name + ".weight"), p.get(name + ".bias"), stride, padding);
  };

  ForwardOutput out;
  auto tap = [&](Tensor& x) {
    const auto ea = edge::ea_forward(x, edge::EdgeHeadParams::bind(p, "ea.head"));
    out.edge_prob = ea.edge_prob;
    x = ea.conditioned;
  };

  Tensor x = image;
  if (cfg.ea_tap_block == 0) {
    tap(x);
  }
  Tensor skip;
  for (int b = 1; b <= kDepth; ++b) {
    x = ops::relu(conv(x, block_name("enc", b) + ".conv1", 1, pad));
    x = ops::relu(conv(x, block_name("enc", b) + ".conv2", 1, pad));
    if (b == cfg.ag_after_block) {
      skip = x;
    }
    x = ops::maxpool2d(x, 2, 2);
    if (b == cfg.ea_tap_block) {
      tap(x);
    }
  }

  for (int j = 1; j <= kDepth; ++j) {
    const auto name = block_name("dec", j);
    Tensor up;
    if (cfg.upsampling == DecoderUpsampling::transpose_conv) {
      up = ops::conv_transpose2d(x, p.get(name + ".up.weight"), p.get(name + ".up.bias"), 2, 0);
    } else {
      up = conv(ops::upsample_nearest(x, 2), name + ".up", 1, pad);
    }
    if (cfg.ag_after_block > 0 && j == decoder_block_for_skip(cfg.ag_after_block)) {
      Tensor gated;
      switch (options.gate) {
      case GateMode::learned: {
        auto ag = attention::ag_forward(skip, x, attention::AttentionGateParams::bind(p, "ag"));
        gated = ag.gated;
        out.alpha = ag.alpha;
        break;
      }
      case GateMode::identity: {
        out.alpha = Tensor::full({skip.dim(0), 1, skip.dim(2), skip.dim(3)}, 1.0f);
        gated = attention::apply_gate(skip, out.alpha);
        break;
      }
      case GateMode::bypass:
        gated = skip;
        break;
      }
      up = ops::concat_channels({up, gated});
    }
    x = ops::relu(conv(up, name + ".conv", 1, pad));
  }
  out.seg_prob = ops::sigmoid(conv(x, "head", 1, 0));
  return out;
}

LossBreakdown total_loss(const Tensor& seg_prob, const Tensor& edge_prob, const Tensor& mask,
                         const nn::LossConfig& cfg, const nn::ParamStore& params) {
  if (cfg.lambda_edge < 0.0) {
    throw std::invalid_argument("lambda_edge must be non-negative");
  }
  if (mask.shape() != seg_prob.shape()) {
    throw ShapeError("total_loss: mask " + to_string(mask.shape()) + " does not match prediction " +
                     to_string(seg_prob.shape()));
  }
  LossBreakdown out;
  auto focal = nn::focal_bce_loss(seg_prob, mask, cfg);
  out.focal = focal.item();
  Tensor total = focal;

  if (edge_prob.defined()) {
    const auto full = edge::edge_target_from_mask(mask);
    const auto factor = mask.dim(2) / edge_prob.dim(2);
    if (factor < 1 || mask.dim(2) % edge_prob.dim(2) != 0) {
      throw ShapeError("total_loss: edge map " + to_string(edge_prob.shape()) +
                       " does not divide the mask resolution");
    }
    const auto target = edge::downsample_target(full, static_cast<int>(factor));
    auto e = edge::edge_loss(edge_prob, target);
    out.edge = e.item();
    total = ops::add(total, ops::scale(e, static_cast<float>(cfg.lambda_edge)));
  }
  auto l2 = nn::l2_penalty(params, cfg.lambda_reg);
  out.l2 = l2.item();
  out.total = ops::add(total, l2);
  return out;
}

namespace {

constexpr const char* kCheckpointFormat = "agseg-checkpoint";

void write_le_floats(std::ostream& os, std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

void save_checkpoint(const std::string& path, const NetworkState& state) {
  nlohmann::ordered_json header;
  header["format"] = kCheckpointFormat;
  header["version"] = 1;
  header["config"] = to_json(state.config);
  auto& entries = header["params"] = nlohmann::ordered_json::array();
  std::int64_t offset = 0;
  for (const auto& [name, t] : state.params) {
    const auto bytes = t.numel() * 4;
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  header["data_bytes"] = offset;

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw std::runtime_error("cannot open checkpoint for writing: " + path);
  }
  os << header.dump() << '\n';
  for (const auto& [name, t] : state.params) {
    write_le_floats(os, t.data());
  }
  if (!os) {
    throw std::runtime_error("failed writing checkpoint: " + path);
  }
}

NetworkState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw std::runtime_error("cannot open checkpoint: " + path);
  }
  std::string line;
  if (!std::getline(is, line)) {
    throw std::runtime_error("checkpoint " + path + " has no header line");
  }
  Json header;
  try {
    header = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path + ": malformed header: " + e.what());
  }
  if (header.value("format", "") != kCheckpointFormat || header.value("version", 0) != 1) {
    throw std::runtime_error("checkpoint " + path + ": unsupported format");
  }
  auto state = build_network(network_config_from_json(header.at("config")));
  const auto data_bytes = header.at("data_bytes").get<std::int64_t>();
  std::string data(static_cast<std::size_t>(data_bytes), '\0');
  is.read(data.data(), data_bytes);
  if (is.gcount() != data_bytes) {
    throw std::runtime_error("checkpoint " + path + ": truncated data section");
  }
  const auto& entries = header.at("params");
  if (entries.size() != state.params.size()) {
    throw std::runtime_error("checkpoint " + path + ": parameter count does not match its config");
  }
  std::size_t i = 0;
  for (auto& [name, t] : state.params) {
    const auto& e = entries[i++];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape()) {
      throw std::runtime_error("checkpoint " + path + ": entry '" + e.at("name").get<std::string>() +
                               "' does not match expected parameter '" + name + "'");
    }
    const auto offset = e.at("offset").get<std::int64_t>();
    const auto bytes = e.at("bytes").get<std::int64_t>();
    if (bytes != t.numel() * 4 || offset < 0 || offset + bytes > data_bytes) {
      throw std::runtime_error("checkpoint " + path + ": bad extent for '" + name + "'");
    }
    auto values = t.mutable_data();
    for (std::int64_t v = 0; v < t.numel(); ++v) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[offset + v * 4 + b])) << (8 * b);
      }
      values[v] = std::bit_cast<float>(bits);
    }
  }
  return state;
}

} // namespace agseg
