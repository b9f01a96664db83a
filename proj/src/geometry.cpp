// SPDX-License-Identifier: Apache-2.0
#include "mtdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mtdet {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x2 > x1 &&
         y2 > y1;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Delta4 encode_deltas(const Box& anchor, const Box& target) {
  const double aw = anchor.width(), ah = anchor.height();
  return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah, std::log(target.width() / aw),
          std::log(target.height() / ah)};
}

Box decode_deltas(const Box& anchor, const Delta4& d, std::optional<double> clip_w, std::optional<double> clip_h) {
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.cx() + d[0] * aw;
  const double cy = anchor.cy() + d[1] * ah;
  const double w = aw * std::exp(std::min(d[2], kMaxLogScale));
  const double h = ah * std::exp(std::min(d[3], kMaxLogScale));
  Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (clip_w && clip_h) b = clip_box(b, *clip_w, *clip_h);
  return b;
}

Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

std::vector<int> nms(const std::vector<ScoredBox>& boxes, double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) throw std::invalid_argument("nms: iou_thresh must be in (0, 1]");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return boxes[a].score > boxes[b].score; });

  std::vector<char> suppressed(boxes.size(), 0);
  std::vector<int> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const int idx = order[i];
    if (suppressed[idx]) continue;
    keep.push_back(idx);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int other = order[j];
      if (!suppressed[other] && iou(boxes[idx].box, boxes[other].box) > iou_thresh) suppressed[other] = 1;
    }
  }
  return keep;
}

Box hflip_box(const Box& b, double image_width) { return {image_width - b.x2, b.y1, image_width - b.x1, b.y2}; }

Delta4 hflip_delta(const Delta4& d) { return {-d[0], d[1], d[2], d[3]}; }

AnchorGrid make_anchors(const AnchorSpec& spec, int image_h, int image_w) {
  if (spec.stride <= 0 || image_h % spec.stride != 0 || image_w % spec.stride != 0) {
    throw std::invalid_argument("make_anchors: image size not divisible by stride");
  }
  AnchorGrid grid;
  grid.spec = spec;
  grid.feat_h = image_h / spec.stride;
  grid.feat_w = image_w / spec.stride;
  grid.anchors.reserve(static_cast<std::size_t>(grid.feat_h) * grid.feat_w * spec.per_cell());
  for (int y = 0; y < grid.feat_h; ++y) {
    for (int x = 0; x < grid.feat_w; ++x) {
      const double cx = (x + 0.5) * spec.stride;
      const double cy = (y + 0.5) * spec.stride;
      for (double s : spec.scales) {
        for (double a : spec.aspects) {
          const double w = s / std::sqrt(a);
          const double h = s * std::sqrt(a);
          grid.anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return grid;
}

}  // namespace mtdet
