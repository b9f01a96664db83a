// SPDX-License-Identifier: Apache-2.0
//
// Weak (geometric) and strong (photometric + cutout) augmentation. Images are
// {3, H, W} tensors with values in [0, kMaxPixel].
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtdet/detector.hpp"
#include "mtdet/tensor.hpp"

namespace mtdet {

inline constexpr double kMaxPixel = 255.0;

Tensor hflip_image(const Tensor& image);
/// Bilinear resize with half-pixel centres.
Tensor resize_bilinear(const Tensor& image, int out_h, int out_w);

// ---- weak augmentation ----

struct GeomRecord {
  bool flipped = false;
  double scale = 1.0;  // nominal scale drawn from the weak scale set
  int in_h = 0, in_w = 0;
  int out_h = 0, out_w = 0;

  double scale_x() const { return static_cast<double>(out_w) / in_w; }
  double scale_y() const { return static_cast<double>(out_h) / in_h; }
};

/// Box in the source frame -> box in the augmented frame.
Box apply_geom(const GeomRecord& g, const Box& b);
/// Augmented frame -> source frame.
Box invert_geom(const GeomRecord& g, const Box& b);

struct WeakAugSettings {
  std::vector<double> scales{0.75, 1.0, 1.25};
  int size_multiple = 8;  // output sides are snapped to this multiple
  double flip_prob = 0.5;
};

/// Draws the geometric record for a given seed without touching pixels.
GeomRecord plan_weak(std::uint64_t seed, int image_h, int image_w, const WeakAugSettings& s = {});

struct WeakAugResult {
  Tensor image;
  GroundTruth gt;
  GeomRecord geom;
};

/// Resize by a scale from the set, then flip with probability 1/2.
WeakAugResult weak_augment(const Tensor& image, const GroundTruth& gt, std::uint64_t seed,
                           const WeakAugSettings& s = {});
WeakAugResult apply_weak(const Tensor& image, const GroundTruth& gt, const GeomRecord& geom);

// ---- strong augmentation ----

enum class ColorOp : int {
  kIdentity = 1,
  kGaussianBlur = 2,
  kMeanBlur = 3,
  kSharpen = 4,
  kGaussianNoise = 5,
  kInvert = 6,
  kAdd = 7,
  kMultiply = 8,
  kContrast = 9,
};

struct CutoutPatch {
  double cx = 0, cy = 0;  // centre as a fraction of width / height
  double side = 0;        // pixels; 0 cancels the patch
  friend bool operator==(const CutoutPatch&, const CutoutPatch&) = default;
};

struct StrongAugPlan {
  ColorOp op = ColorOp::kIdentity;
  double sigma = 0;        // gaussian blur sigma, or noise sigma in pixel units
  int kernel = 0;          // mean blur kernel size
  double alpha = 0;        // sharpen blend factor
  double lightness = 1;    // sharpen lightness
  bool per_channel = false;  // gaussian noise drawn independently per channel
  bool invert = false;
  std::vector<double> channel_values;  // add / multiply / contrast, one per channel
  std::uint64_t mask_seed = 0;         // noise and 50%-pixel masks
  std::vector<CutoutPatch> patches;
  double fill = 127.5;

  /// One-line text form; parse_plan is its inverse.
  std::string to_line() const;
  friend bool operator==(const StrongAugPlan&, const StrongAugPlan&) = default;
};

StrongAugPlan parse_plan(const std::string& line);

/// Uniform choice of colour op with its parameters, plus 1..5 cutout patches of
/// side 0 or 0.2 * image_height.
StrongAugPlan plan_strong(std::uint64_t seed, int image_height, double fill = 127.5);

/// Photometric only: shape is preserved and values are clamped to [0, kMaxPixel].
Tensor apply_strong(const Tensor& image, const StrongAugPlan& plan);

/// Separable gaussian blur, radius ceil(3 sigma), reflect padding.
Tensor gaussian_blur(const Tensor& image, double sigma);
/// k x k box filter with reflect padding.
Tensor mean_blur(const Tensor& image, int k);

}  // namespace mtdet
