// Copyright (c) 2026, agseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// Manifest-driven image/mask loading, resizing, paired augmentation and the
// synthetic ellipse corpus.

#pragma once

#include "agseg/image_io.hpp"
#include "agseg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace agseg::data {

class ManifestError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct SampleRecord {
  std::string subject_id;
  std::string image_path; // relative to the manifest directory
  std::string mask_path;

  bool operator==(const SampleRecord&) const = default;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<SampleRecord> records;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  /// Distinct subject ids in order of first appearance.
  std::vector<std::string> subjects() const;
};

/// Parses `subject_id,image,mask` CSV (header required). Rows are validated
/// for field count, non-empty subject, existing files and unique pairs; errors
/// name the 1-based line and the field.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct Sample {
  Tensor image; // C x H x W in [0, 1]
  Tensor mask;  // 1 x H x W in {0, 1}
};

Tensor image_to_tensor(const io::Image8& image);
/// Threshold at 127.5 of the first channel.
Tensor mask_to_tensor(const io::Image8& image);
/// Values in [0, 1] scaled to 0..255 with rounding; C must be 1 or 3.
io::Image8 tensor_to_image(const Tensor& chw);

Sample load_sample(const Manifest& manifest, const SampleRecord& record);

enum class Interpolation { bilinear, nearest };

/// Resamples a C x H x W tensor to C x target x target (half-pixel centres).
Tensor resize(const Tensor& chw, std::int64_t target, Interpolation mode = Interpolation::bilinear);

/// Resizes to the network resolution (bilinear image, nearest mask) and adapts
/// channels: gray is replicated to 3 channels, RGB averaged to 1.
Sample prepare_sample(const Sample& sample, std::int64_t size, std::int64_t channels);

struct AugmentationSpec {
  double rotation_degrees = 30.0; // angle ~ U[-r, r]
  double shear_range = 0.3;       // horizontal shear factor ~ U[-s, s]
  double scale_min = 0.9;
  double scale_max = 1.1;
  double crop_fraction = 0.9;         // crop side as a fraction of the image
  double height_shift_fraction = 0.1; // vertical shift ~ U[-f, f] * H
  std::uint64_t seed = 0;
  bool enabled = true;

  static AugmentationSpec identity();
  std::vector<std::string> validate() const;
  bool operator==(const AugmentationSpec&) const = default;
};

struct AugmentationDraw {
  double angle_degrees = 0.0;
  double shear = 0.0;
  double scale = 1.0;
  double shift_fraction = 0.0;
  double crop_fraction = 1.0;
  double crop_x = 0.0; // crop origin as a fraction of the available slack
  double crop_y = 0.0;

  bool is_identity() const;
};

/// Parameters of draw `draw_index`; a pure function of (spec.seed, draw_index).
AugmentationDraw draw_augmentation(const AugmentationSpec& spec, std::uint64_t draw_index);

/// Applies rotate -> shear -> scale -> shift -> crop-and-resize as a single
/// inverse-mapped bilinear warp (zero fill) to both tensors. The warped mask is
/// re-binarized at 0.5.
std::pair<Tensor, Tensor> apply_augmentation(const Tensor& image, const Tensor& mask,
                                             const AugmentationDraw& draw);

std::pair<Tensor, Tensor> augment(const Tensor& image, const Tensor& mask, const AugmentationSpec& spec,
                                  std::uint64_t draw_index);

struct Ellipse {
  double cx, cy; // centre in pixel coordinates (x = column, y = row)
  double a, b;   // semi-axes
  double theta;  // rotation in radians

  /// Analytic membership of the pixel centre (x, y).
  bool contains(double x, double y) const;
};

/// Geometry of synthetic sample `index`.
Ellipse synth_ellipse(std::uint64_t seed, std::int64_t index, std::int64_t size);

/// Writes n gray images with one bright ellipse on a textured background, their
/// exact masks and manifest.csv into `out_dir`; subjects are assigned
/// round-robin over ceil(n / 2) ids.
Manifest synth_corpus(std::int64_t n, std::int64_t size, std::uint64_t seed,
                      const std::filesystem::path& out_dir);

/// Stacks C x H x W tensors into N x C x H x W.
Tensor stack(const std::vector<Tensor>& items);

} // namespace agseg::data
