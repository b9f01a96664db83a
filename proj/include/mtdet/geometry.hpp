// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <vector>

namespace mtdet {

/// Axis-aligned box in continuous pixel coordinates; area = (x2-x1)(y2-y1).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

struct ScoredBox {
  Box box;
  double score = 0;
  int class_id = 0;

  friend bool operator==(const ScoredBox&, const ScoredBox&) = default;
};

/// (dx, dy, dw, dh): center offsets normalized by anchor size, log size ratios.
using Delta4 = std::array<double, 4>;

/// Width/height clamp applied to dw, dh before exponentiation.
inline constexpr double kMaxLogScale = 6.9314718055994531;  // ln(1024)

double iou(const Box& a, const Box& b);

Delta4 encode_deltas(const Box& anchor, const Box& target);

/// Inverse of encode_deltas. When `clip_w`/`clip_h` are given, the result is
/// clipped to [0, clip_w] x [0, clip_h].
Box decode_deltas(const Box& anchor, const Delta4& d, std::optional<double> clip_w = std::nullopt,
                  std::optional<double> clip_h = std::nullopt);

Box clip_box(const Box& b, double width, double height);

/// Greedy NMS. Returns kept indices in descending score order; equal scores are
/// broken by lower index. Throws std::invalid_argument if iou_thresh is not in
/// (0, 1].
std::vector<int> nms(const std::vector<ScoredBox>& boxes, double iou_thresh);

/// Mirror across the vertical center line of an image of the given width.
Box hflip_box(const Box& b, double image_width);

/// Horizontal mirror at delta level: only dx changes sign.
Delta4 hflip_delta(const Delta4& d);

struct AnchorSpec {
  int stride = 8;
  std::vector<double> scales{12.0, 20.0, 30.0};  // sqrt of anchor area, pixels
  std::vector<double> aspects{0.8, 1.25};         // height / width

  int per_cell() const { return static_cast<int>(scales.size() * aspects.size()); }
  friend bool operator==(const AnchorSpec&, const AnchorSpec&) = default;
};

/// Anchors tiled over a feature map, ordered (y, x, scale, aspect).
struct AnchorGrid {
  AnchorSpec spec;
  int feat_h = 0;
  int feat_w = 0;
  std::vector<Box> anchors;

  std::size_t size() const { return anchors.size(); }
};

/// Anchor centers sit at cell centers ((x + 0.5) * stride).
AnchorGrid make_anchors(const AnchorSpec& spec, int image_h, int image_w);

}  // namespace mtdet
