// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "agseg/data.hpp"

#include "agseg/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <unordered_set>

namespace agseg::data {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestHeader = "subject_id,image,mask";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

} // namespace

std::vector<std::string> Manifest::subjects() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (seen.insert(r.subject_id).second) {
      out.push_back(r.subject_id);
    }
  }
  return out;
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw ManifestError("cannot open manifest: " + path.string());
  }
  Manifest manifest;
  manifest.root = path.parent_path();
  std::string line;
  if (!std::getline(is, line)) {
    throw ManifestError(path.string() + ": empty file, expected header '" + kManifestHeader + "'");
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != kManifestHeader) {
    throw ManifestError(path.string() + ": line 1: header must be '" + kManifestHeader + "', got '" + line + "'");
  }
  std::set<std::pair<std::string, std::string>> pairs;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    const auto where = path.string() + ": line " + std::to_string(line_no) + ": ";
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) {
      throw ManifestError(where + "expected 3 fields (subject_id,image,mask), got " + std::to_string(fields.size()));
    }
    SampleRecord r{fields[0], fields[1], fields[2]};
    if (r.subject_id.empty()) {
      throw ManifestError(where + "field 'subject_id' is empty");
    }
    if (r.image_path.empty()) {
      throw ManifestError(where + "field 'image' is empty");
    }
    if (r.mask_path.empty()) {
      throw ManifestError(where + "field 'mask' is empty");
    }
    if (!fs::is_regular_file(manifest.resolve(r.image_path))) {
      throw ManifestError(where + "field 'image': file '" + r.image_path + "' not found");
    }
    if (!fs::is_regular_file(manifest.resolve(r.mask_path))) {
      throw ManifestError(where + "field 'mask': file '" + r.mask_path + "' not found");
    }
    if (!pairs.emplace(r.image_path, r.mask_path).second) {
      throw ManifestError(where + "duplicate image/mask pair '" + r.image_path + "', '" + r.mask_path + "'");
    }
    manifest.records.push_back(std::move(r));
  }
  return manifest;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw ManifestError("cannot write manifest: " + path.string());
  }
  os << kManifestHeader << '\n';
  for (const auto& r : manifest.records) {
    for (const auto* field : {&r.subject_id, &r.image_path, &r.mask_path}) {
      if (field->find_first_of(",\n\r") != std::string::npos) {
        throw ManifestError("manifest field contains a separator: '" + *field + "'");
      }
    }
    os << r.subject_id << ',' << r.image_path << ',' << r.mask_path << '\n';
  }
  if (!os) {
    throw ManifestError("failed writing manifest: " + path.string());
  }
}

Tensor image_to_tensor(const io::Image8& image) {
  const std::int64_t c = image.channels, h = image.height, w = image.width;
  std::vector<float> values(static_cast<std::size_t>(c * h * w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        values[static_cast<std::size_t>((ch * h + y) * w + x)] =
            static_cast<float>(image.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(ch))) / 255.0f;
      }
    }
  }
  return Tensor({c, h, w}, std::move(values));
}

Tensor mask_to_tensor(const io::Image8& image) {
  const std::int64_t h = image.height, w = image.width;
  std::vector<float> values(static_cast<std::size_t>(h * w));
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      values[static_cast<std::size_t>(y * w + x)] =
          image.at(static_cast<int>(y), static_cast<int>(x), 0) > 127.5 ? 1.0f : 0.0f;
    }
  }
  return Tensor({1, h, w}, std::move(values));
}

io::Image8 tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
    throw ShapeError("tensor_to_image expects 1 x H x W or 3 x H x W, got " + to_string(chw.shape()));
  }
  io::Image8 image;
  image.channels = static_cast<int>(chw.dim(0));
  image.height = static_cast<int>(chw.dim(1));
  image.width = static_cast<int>(chw.dim(2));
  image.pixels.resize(static_cast<std::size_t>(chw.numel()));
  const auto v = chw.data();
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const float f = v[static_cast<std::size_t>((c * image.height + y) * image.width + x)];
        const float clamped = std::isfinite(f) ? std::clamp(f, 0.0f, 1.0f) : 0.0f;
        image.at(y, x, c) = static_cast<std::uint8_t>(std::lround(clamped * 255.0f));
      }
    }
  }
  return image;
}

Sample load_sample(const Manifest& manifest, const SampleRecord& record) {
  const auto image = io::read_png(manifest.resolve(record.image_path).string());
  const auto mask = io::read_png(manifest.resolve(record.mask_path).string());
  if (image.width != mask.width || image.height != mask.height) {
    throw io::ImageError("mask '" + record.mask_path + "' is " + std::to_string(mask.width) + "x" +
                         std::to_string(mask.height) + " but image '" + record.image_path + "' is " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  return {image_to_tensor(image), mask_to_tensor(mask)};
}

Tensor resize(const Tensor& chw, std::int64_t target, Interpolation mode) {
  if (chw.rank() != 3) {
    throw ShapeError("resize expects C x H x W, got " + to_string(chw.shape()));
  }
  if (target < 1) {
    throw std::invalid_argument("resize target must be >= 1");
  }
  const auto c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (h == target && w == target) {
    return chw.detach();
  }
  const auto src = chw.data();
  std::vector<float> out(static_cast<std::size_t>(c * target * target));
  const double sy = static_cast<double>(h) / static_cast<double>(target);
  const double sx = static_cast<double>(w) / static_cast<double>(target);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const float* plane = src.data() + ch * h * w;
    for (std::int64_t i = 0; i < target; ++i) {
      for (std::int64_t j = 0; j < target; ++j) {
        float value;
        if (mode == Interpolation::nearest) {
          const auto yi = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::floor((i + 0.5) * sy)));
          const auto xj = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::floor((j + 0.5) * sx)));
          value = plane[yi * w + xj];
        } else {
          const double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
          const double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
          const auto y0 = static_cast<std::int64_t>(std::floor(y));
          const auto x0 = static_cast<std::int64_t>(std::floor(x));
          const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
          const double top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
          const double bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
          value = static_cast<float>(top * (1.0 - fy) + bottom * fy);
        }
        out[static_cast<std::size_t>((ch * target + i) * target + j)] = value;
      }
    }
  }
  return Tensor({c, target, target}, std::move(out));
}

Sample prepare_sample(const Sample& sample, std::int64_t size, std::int64_t channels) {
  auto image = resize(sample.image, size, Interpolation::bilinear);
  auto mask = resize(sample.mask, size, Interpolation::nearest);
  const auto have = image.dim(0);
  if (have != channels) {
    const auto plane = size * size;
    const auto src = image.data();
    std::vector<float> out(static_cast<std::size_t>(channels * plane));
    if (have == 1) {
      for (std::int64_t c = 0; c < channels; ++c) {
        std::copy(src.begin(), src.end(), out.begin() + c * plane);
      }
    } else if (channels == 1) {
      for (std::int64_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (std::int64_t c = 0; c < have; ++c) {
          s += src[static_cast<std::size_t>(c * plane + i)];
        }
        out[static_cast<std::size_t>(i)] = static_cast<float>(s / static_cast<double>(have));
      }
    } else {
      throw ShapeError("cannot adapt a " + std::to_string(have) + "-channel image to " +
                       std::to_string(channels) + " channels");
    }
    image = Tensor({channels, size, size}, std::move(out));
  }
  return {image, mask};
}

AugmentationSpec AugmentationSpec::identity() {
  AugmentationSpec s;
  s.rotation_degrees = 0.0;
  s.shear_range = 0.0;
  s.scale_min = 1.0;
  s.scale_max = 1.0;
  s.crop_fraction = 1.0;
  s.height_shift_fraction = 0.0;
  return s;
}

std::vector<std::string> AugmentationSpec::validate() const {
  std::vector<std::string> errors;
  if (rotation_degrees < 0.0 || rotation_degrees > 180.0) {
    errors.push_back("rotation_degrees must be in [0, 180]");
  }
  if (shear_range < 0.0 || shear_range >= 1.0) {
    errors.push_back("shear_range must be in [0, 1)");
  }
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    errors.push_back("scale range must satisfy 0 < scale_min <= scale_max");
  }
  if (!(crop_fraction > 0.0) || crop_fraction > 1.0) {
    errors.push_back("crop_fraction must be in (0, 1]");
  }
  if (height_shift_fraction < 0.0 || height_shift_fraction >= 1.0) {
    errors.push_back("height_shift_fraction must be in [0, 1)");
  }
  return errors;
}

bool AugmentationDraw::is_identity() const {
  return angle_degrees == 0.0 && shear == 0.0 && scale == 1.0 && shift_fraction == 0.0 && crop_fraction == 1.0;
}

AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::uint64_t draw_index) {
  AugmentationDraw d;
  if (!spec.enabled) {
    return d;
  }
  Rng rng(mix_seed(spec.seed, draw_index));
  // Draw order is fixed so every parameter consumes the same stream position.
  d.angle_degrees = rng.uniform(-spec.rotation_degrees, spec.rotation_degrees);
  d.shear = rng.uniform(-spec.shear_range, spec.shear_range);
  d.scale = rng.uniform(spec.scale_min, spec.scale_max);
  d.shift_fraction = rng.uniform(-spec.height_shift_fraction, spec.height_shift_fraction);
  d.crop_fraction = rng.uniform(spec.crop_fraction, 1.0);
  d.crop_x = rng.uniform();
  d.crop_y = rng.uniform();
  return d;
}

namespace {

Tensor warp(const Tensor& chw, const AugmentationDraw& d, bool binarize) {
  const auto c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double rad = d.angle_degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  // Forward map M = scale * shear * rotation; invert it analytically.
  // R^-1 = [[cs, sn], [-sn, cs]], Sh^-1 = [[1, -k], [0, 1]], S^-1 = I / s.
  const double k = d.shear, inv_s = 1.0 / d.scale;
  const double a00 = cs * inv_s, a01 = (cs * -k + sn) * inv_s;
  const double a10 = -sn * inv_s, a11 = (-sn * -k + cs) * inv_s;
  const double ty = d.shift_fraction * static_cast<double>(h);
  const double crop_w = d.crop_fraction * static_cast<double>(w);
  const double crop_h = d.crop_fraction * static_cast<double>(h);
  const double ox = d.crop_x * (static_cast<double>(w) - crop_w);
  const double oy = d.crop_y * (static_cast<double>(h) - crop_h);

  const auto src = chw.data();
  std::vector<float> out(src.size(), 0.0f);
  for (std::int64_t i = 0; i < h; ++i) {
    for (std::int64_t j = 0; j < w; ++j) {
      const double xc = ox + (static_cast<double>(j) + 0.5) * crop_w / static_cast<double>(w) - 0.5;
      const double yc = oy + (static_cast<double>(i) + 0.5) * crop_h / static_cast<double>(h) - 0.5;
      const double u = xc - cx, v = yc - cy - ty;
      const double x = a00 * u + a01 * v + cx;
      const double y = a10 * u + a11 * v + cy;
      const double fx0 = std::floor(x), fy0 = std::floor(y);
      const auto x0 = static_cast<std::int64_t>(fx0), y0 = static_cast<std::int64_t>(fy0);
      const double fx = x - fx0, fy = y - fy0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const float* plane = src.data() + ch * h * w;
        auto pick = [&](std::int64_t yy, std::int64_t xx) -> double {
          return (yy < 0 || yy >= h || xx < 0 || xx >= w) ? 0.0 : plane[yy * w + xx];
        };
        double value = pick(y0, x0) * (1.0 - fx) * (1.0 - fy);
        if (fx != 0.0) {
          value += pick(y0, x0 + 1) * fx * (1.0 - fy);
        }
        if (fy != 0.0) {
          value += pick(y0 + 1, x0) * (1.0 - fx) * fy;
          if (fx != 0.0) {
            value += pick(y0 + 1, x0 + 1) * fx * fy;
          }
        }
        auto& dst = out[static_cast<std::size_t>((ch * h + i) * w + j)];
        dst = binarize ? (value >= 0.5 ? 1.0f : 0.0f) : static_cast<float>(value);
      }
    }
  }
  return Tensor(chw.shape(), std::move(out));
}

} // namespace

std::pair<Tensor, Tensor> apply_augmentation(const Tensor& image, const Tensor& mask, const AugmentationDraw& draw) {
  if (image.rank() != 3 || mask.rank() != 3 || image.dim(1) != mask.dim(1) || image.dim(2) != mask.dim(2)) {
    throw ShapeError("augment: image " + to_string(image.shape()) + " and mask " + to_string(mask.shape()) +
                     " must be C x H x W with equal extents");
  }
  if (draw.is_identity()) {
    return {image.detach(), mask.detach()};
  }
  return {warp(image, draw, false), warp(mask, draw, true)};
}

std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, const AugmentationSpec& spec,
                                  std::uint64_t draw_index) {
  return apply_augmentation(image, mask, draw_augmentation(spec, draw_index));
}

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double u = dx * std::cos(theta) + dy * std::sin(theta);
  const double v = -dx * std::sin(theta) + dy * std::cos(theta);
  return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
}

Ellipse synth_ellipse(std::uint64_t seed, std::int64_t index, std::int64_t size) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(index) * 2 + 1));
  const double s = static_cast<double>(size);
  Ellipse e{};
  e.cx = rng.uniform(0.35, 0.65) * (s - 1.0);
  e.cy = rng.uniform(0.35, 0.65) * (s - 1.0);
  e.a = rng.uniform(0.15, 0.28) * s;
  e.b = rng.uniform(0.12, 0.22) * s;
  e.theta = rng.uniform(0.0, std::numbers::pi);
  return e;
}

Manifest synth_corpus(std::int64_t n, std::int64_t size, std::uint64_t seed, const fs::path& out_dir) {
  if (n < 1) {
    throw std::invalid_argument("synth_corpus: n must be >= 1");
  }
  if (size < 8) {
    throw std::invalid_argument("synth_corpus: size must be >= 8");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw std::runtime_error("cannot create output directory '" + out_dir.string() + "'" +
                             (ec ? ": " + ec.message() : std::string{}));
  }

  Manifest manifest;
  manifest.root = out_dir;
  const std::int64_t subjects = (n + 1) / 2;
  const int digits = std::max<int>(3, static_cast<int>(std::to_string(n - 1).size()));
  auto padded = [digits](std::int64_t v) {
    auto s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max<int>(0, digits - static_cast<int>(s.size()))), '0') + s;
  };

  for (std::int64_t i = 0; i < n; ++i) {
    const auto e = synth_ellipse(seed, i, size);
    Rng texture(mix_seed(seed, static_cast<std::uint64_t>(i) * 2 + 2));
    const double fx = texture.uniform(1.0, 3.0), fy = texture.uniform(1.0, 3.0);
    const double phase = texture.uniform(0.0, 2.0 * std::numbers::pi);

    io::Image8 image{static_cast<int>(size), static_cast<int>(size), 1, {}};
    io::Image8 mask = image;
    image.pixels.resize(static_cast<std::size_t>(size * size));
    mask.pixels.resize(image.pixels.size());
    for (std::int64_t y = 0; y < size; ++y) {
      for (std::int64_t x = 0; x < size; ++x) {
        const bool inside = e.contains(static_cast<double>(x), static_cast<double>(y));
        const double wave = std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) / static_cast<double>(size) + phase);
        double v = inside ? 0.72 + 0.06 * wave : 0.25 + 0.08 * wave;
        v += texture.uniform(-0.04, 0.04);
        image.at(static_cast<int>(y), static_cast<int>(x)) =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        mask.at(static_cast<int>(y), static_cast<int>(x)) = inside ? 255 : 0;
      }
    }
    SampleRecord r{"subject_" + padded(i % subjects), "image_" + padded(i) + ".png", "mask_" + padded(i) + ".png"};
    io::write_png((out_dir / r.image_path).string(), image);
    io::write_png((out_dir / r.mask_path).string(), mask);
    manifest.records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) {
    throw std::invalid_argument("stack: no tensors");
  }
  const auto& shape = items.front().shape();
  Shape out_shape{static_cast<std::int64_t>(items.size())};
  out_shape.insert(out_shape.end(), shape.begin(), shape.end());
  std::vector<float> values;
  values.reserve(static_cast<std::size_t>(numel_of(out_shape)));
  for (const auto& t : items) {
    if (t.shape() != shape) {
      throw ShapeError("stack: " + to_string(t.shape()) + " differs from " + to_string(shape));
    }
    values.insert(values.end(), t.data().begin(), t.data().end());
  }
  return Tensor(std::move(out_shape), std::move(values));
}

} // namespace agseg::data
