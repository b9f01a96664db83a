// SPDX-License-Identifier: Apache-2.0
#include "mtdet/augment.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mtdet/rng.hpp"

namespace mtdet {

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void clamp_pixels(Tensor& t) {
  for (double& v : t.values()) v = std::clamp(v, 0.0, kMaxPixel);
}

/// Convolves every channel with a 1-D kernel along x then y.
Tensor separable(const Tensor& image, const std::vector<double>& kernel, int offset) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int k = static_cast<int>(kernel.size());
  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int j = 0; j < k; ++j) acc += kernel[j] * image.at(ch, y, reflect(x + j - offset, w));
        tmp.at(ch, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int j = 0; j < k; ++j) acc += kernel[j] * tmp.at(ch, reflect(y + j - offset, h), x);
        out.at(ch, y, x) = acc;
      }
  }
  return out;
}

/// Bernoulli(1/2) mask per (channel, pixel) for the 50%-of-pixels ops.
std::vector<char> half_mask(std::size_t n, std::mt19937_64& rng) {
  std::vector<char> m(n);
  for (std::size_t i = 0; i < n; i += 64) {
    const std::uint64_t bits = rng();
    for (std::size_t j = 0; j < 64 && i + j < n; ++j) m[i + j] = static_cast<char>((bits >> j) & 1u);
  }
  return m;
}

const char* op_name(ColorOp op) {
  switch (op) {
    case ColorOp::kIdentity: return "identity";
    case ColorOp::kGaussianBlur: return "gaussian_blur";
    case ColorOp::kMeanBlur: return "mean_blur";
    case ColorOp::kSharpen: return "sharpen";
    case ColorOp::kGaussianNoise: return "gaussian_noise";
    case ColorOp::kInvert: return "invert";
    case ColorOp::kAdd: return "add";
    case ColorOp::kMultiply: return "multiply";
    case ColorOp::kContrast: return "contrast";
  }
  return "?";
}

}  // namespace

Tensor hflip_image(const Tensor& image) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = image.at(ch, y, w - 1 - x);
  return out;
}

Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == h && out_w == w) return image;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch) {
        const double top = image.at(ch, y0, x0) * (1 - wx) + image.at(ch, y0, x1) * wx;
        const double bot = image.at(ch, y1, x0) * (1 - wx) + image.at(ch, y1, x1) * wx;
        out.at(ch, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Box apply_geom(const GeomRecord& g, const Box& b) {
  Box s{b.x1 * g.scale_x(), b.y1 * g.scale_y(), b.x2 * g.scale_x(), b.y2 * g.scale_y()};
  return g.flipped ? hflip_box(s, g.out_w) : s;
}

Box invert_geom(const GeomRecord& g, const Box& b) {
  const Box u = g.flipped ? hflip_box(b, g.out_w) : b;
  return {u.x1 / g.scale_x(), u.y1 / g.scale_y(), u.x2 / g.scale_x(), u.y2 / g.scale_y()};
}

GeomRecord plan_weak(std::uint64_t seed, int image_h, int image_w, const WeakAugSettings& s) {
  if (s.scales.empty()) throw std::invalid_argument("weak_augment: empty scale set");
  std::mt19937_64 rng(seed);
  GeomRecord g;
  g.in_h = image_h;
  g.in_w = image_w;
  g.scale = s.scales[std::uniform_int_distribution<std::size_t>(0, s.scales.size() - 1)(rng)];
  g.flipped = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < s.flip_prob;
  auto snap = [&](int side) {
    const int m = s.size_multiple;
    return std::max(m, static_cast<int>(std::lround(side * g.scale / m)) * m);
  };
  g.out_h = snap(image_h);
  g.out_w = snap(image_w);
  return g;
}

WeakAugResult apply_weak(const Tensor& image, const GroundTruth& gt, const GeomRecord& geom) {
  WeakAugResult r;
  r.geom = geom;
  r.image = resize_bilinear(image, geom.out_h, geom.out_w);
  if (geom.flipped) r.image = hflip_image(r.image);
  r.gt.reserve(gt.size());
  for (const GtObject& o : gt) r.gt.push_back({apply_geom(geom, o.box), o.class_id});
  return r;
}

WeakAugResult weak_augment(const Tensor& image, const GroundTruth& gt, std::uint64_t seed,
                           const WeakAugSettings& s) {
  return apply_weak(image, gt, plan_weak(seed, image.dim(1), image.dim(2), s));
}

// ---------------------------------------------------------------------------

StrongAugPlan plan_strong(std::uint64_t seed, int image_height, double fill) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto coin = [&](double p) { return uni(0.0, 1.0) < p; };

  StrongAugPlan p;
  p.fill = fill;
  p.op = static_cast<ColorOp>(std::uniform_int_distribution<int>(1, 9)(rng));
  switch (p.op) {
    case ColorOp::kIdentity:
      break;
    case ColorOp::kGaussianBlur:
      p.sigma = uni(0.0, 3.0);
      break;
    case ColorOp::kMeanBlur:
      p.kernel = std::uniform_int_distribution<int>(2, 7)(rng);
      break;
    case ColorOp::kSharpen:
      p.alpha = uni(0.0, 1.0);
      p.lightness = uni(0.75, 1.5);
      break;
    case ColorOp::kGaussianNoise:
      p.sigma = uni(0.0, 0.05) * kMaxPixel;
      p.per_channel = coin(0.5);
      break;
    case ColorOp::kInvert:
      p.invert = coin(0.05);
      break;
    case ColorOp::kAdd:
      for (int c = 0; c < 3; ++c) p.channel_values.push_back(uni(-10.0, 10.0));
      break;
    case ColorOp::kMultiply:
      for (int c = 0; c < 3; ++c) p.channel_values.push_back(uni(0.5, 1.5));
      break;
    case ColorOp::kContrast:
      for (int c = 0; c < 3; ++c) p.channel_values.push_back(uni(0.5, 2.0));
      break;
  }
  p.mask_seed = rng();
  const int count = std::uniform_int_distribution<int>(1, 5)(rng);
  for (int i = 0; i < count; ++i) {
    CutoutPatch patch;
    patch.side = coin(0.5) ? 0.2 * image_height : 0.0;
    patch.cx = uni(0.0, 1.0);
    patch.cy = uni(0.0, 1.0);
    p.patches.push_back(patch);
  }
  return p;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  if (sigma <= 1e-6) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double z = 0;
  for (int i = -radius; i <= radius; ++i) z += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& v : k) v /= z;
  return separable(image, k, radius);
}

Tensor mean_blur(const Tensor& image, int k) {
  if (k <= 1) return image;
  return separable(image, std::vector<double>(k, 1.0 / k), k / 2);
}

Tensor apply_strong(const Tensor& image, const StrongAugPlan& plan) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::mt19937_64 rng(plan.mask_seed);
  Tensor out = image;

  switch (plan.op) {
    case ColorOp::kIdentity:
      break;
    case ColorOp::kGaussianBlur:
      out = gaussian_blur(image, plan.sigma);
      break;
    case ColorOp::kMeanBlur:
      out = mean_blur(image, plan.kernel);
      break;
    case ColorOp::kSharpen: {
      // Unsharp mask: lightness * v + 9 * (v - box3x3(v)), alpha-blended.
      const Tensor box = mean_blur(image, 3);
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double sharp = plan.lightness * image[i] + 9.0 * (image[i] - box[i]);
        out[i] = (1.0 - plan.alpha) * image[i] + plan.alpha * sharp;
      }
      break;
    }
    case ColorOp::kGaussianNoise: {
      std::normal_distribution<double> noise(0.0, std::max(plan.sigma, 1e-300));
      if (plan.per_channel) {
        for (double& v : out.values()) v += noise(rng);
      } else {
        for (std::size_t i = 0; i < plane; ++i) {
          const double n = noise(rng);
          for (int ch = 0; ch < c; ++ch) out[ch * plane + i] += n;
        }
      }
      break;
    }
    case ColorOp::kInvert:
      if (plan.invert)
        for (double& v : out.values()) v = kMaxPixel - v;
      break;
    case ColorOp::kAdd:
    case ColorOp::kMultiply: {
      const std::vector<char> mask = half_mask(out.size(), rng);
      for (int ch = 0; ch < c; ++ch) {
        const double v = plan.channel_values.at(ch % plan.channel_values.size());
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t idx = ch * plane + i;
          if (!mask[idx]) continue;
          out[idx] = plan.op == ColorOp::kAdd ? out[idx] + v : out[idx] * v;
        }
      }
      break;
    }
    case ColorOp::kContrast:
      for (int ch = 0; ch < c; ++ch) {
        const double f = plan.channel_values.at(ch % plan.channel_values.size());
        for (std::size_t i = 0; i < plane; ++i) {
          double& v = out[ch * plane + i];
          v = 0.5 * kMaxPixel + f * (v - 0.5 * kMaxPixel);
        }
      }
      break;
  }
  clamp_pixels(out);

  for (const CutoutPatch& p : plan.patches) {
    if (p.side <= 0) continue;
    const double cx = p.cx * w, cy = p.cy * h;
    const int x0 = std::max(0, static_cast<int>(std::lround(cx - 0.5 * p.side)));
    const int y0 = std::max(0, static_cast<int>(std::lround(cy - 0.5 * p.side)));
    const int x1 = std::min(w, static_cast<int>(std::lround(cx + 0.5 * p.side)));
    const int y1 = std::min(h, static_cast<int>(std::lround(cy + 0.5 * p.side)));
    const double fill = std::clamp(plan.fill, 0.0, kMaxPixel);
    for (int ch = 0; ch < c; ++ch)
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out.at(ch, y, x) = fill;
  }
  return out;
}

std::string StrongAugPlan::to_line() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "op=" << static_cast<int>(op) << "(" << op_name(op) << ")"
     << " sigma=" << sigma << " kernel=" << kernel << " alpha=" << alpha << " lightness=" << lightness
     << " per_channel=" << per_channel << " invert=" << invert << " values=";
  for (std::size_t i = 0; i < channel_values.size(); ++i) os << (i ? "," : "") << channel_values[i];
  os << " mask_seed=" << mask_seed << " fill=" << fill << " cutout=";
  for (std::size_t i = 0; i < patches.size(); ++i) {
    os << (i ? ";" : "") << patches[i].cx << ":" << patches[i].cy << ":" << patches[i].side;
  }
  return os.str();
}

StrongAugPlan parse_plan(const std::string& line) {
  StrongAugPlan p;
  std::istringstream is(line);
  std::string tok;
  auto bad = [&](const std::string& why) { return std::invalid_argument("parse_plan: " + why + " in '" + line + "'"); };
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw bad("token without '='");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "op") {
      const int id = std::stoi(val);
      if (id < 1 || id > 9) throw bad("op id out of range");
      p.op = static_cast<ColorOp>(id);
    } else if (key == "sigma") {
      p.sigma = std::stod(val);
    } else if (key == "kernel") {
      p.kernel = std::stoi(val);
    } else if (key == "alpha") {
      p.alpha = std::stod(val);
    } else if (key == "lightness") {
      p.lightness = std::stod(val);
    } else if (key == "per_channel") {
      p.per_channel = val == "1";
    } else if (key == "invert") {
      p.invert = val == "1";
    } else if (key == "values") {
      std::istringstream vs(val);
      std::string item;
      while (std::getline(vs, item, ',')) p.channel_values.push_back(std::stod(item));
    } else if (key == "mask_seed") {
      p.mask_seed = std::stoull(val);
    } else if (key == "fill") {
      p.fill = std::stod(val);
    } else if (key == "cutout") {
      std::istringstream ps(val);
      std::string item;
      while (std::getline(ps, item, ';')) {
        CutoutPatch c;
        char sep1 = 0, sep2 = 0;
        std::istringstream one(item);
        if (!(one >> c.cx >> sep1 >> c.cy >> sep2 >> c.side) || sep1 != ':' || sep2 != ':') throw bad("bad patch");
        p.patches.push_back(c);
      }
    } else {
      throw bad("unknown key " + key);
    }
  }
  return p;
}

}  // namespace mtdet
