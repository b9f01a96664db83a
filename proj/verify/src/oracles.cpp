// SPDX-License-Identifier: Apache-2.0
#include "mtdet_verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

namespace mtdet::oracle {

double iou(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double inter = (w > 0 && h > 0) ? w * h : 0.0;
  const double ua = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return ua > 0 ? inter / ua : 0.0;
}

std::vector<int> nms(const std::vector<ScoredBox>& boxes, double thresh) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<int> keep;
  while (true) {
    int best = -1;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best < 0 || boxes[i].score > boxes[best].score)) best = static_cast<int>(i);
    }
    if (best < 0) break;
    keep.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && oracle::iou(boxes[best].box, boxes[i].box) > thresh) alive[i] = false;
    }
  }
  return keep;
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, int stride, int pad) {
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const int ho = (h + 2 * pad - kh) / stride + 1, wo = (w + 2 * pad - kw) / stride + 1;
  Tensor out({cout, ho, wo});
  for (int co = 0; co < cout; ++co)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double acc = b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
              acc += k[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx] * x.at(ci, iy, ix);
            }
        out.at(co, oy, ox) = acc;
      }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out({x.dim(0), w.dim(0)});
  for (int r = 0; r < x.dim(0); ++r)
    for (int o = 0; o < w.dim(0); ++o) {
      double acc = b[o];
      for (int i = 0; i < x.dim(1); ++i) acc += x.at(r, i) * w.at(o, i);
      out.at(r, o) = acc;
    }
  return out;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  for (int r = 0; r < logits.dim(0); ++r) {
    double z = 0;
    for (int c = 0; c < logits.dim(1); ++c) z += std::exp(logits.at(r, c));
    for (int c = 0; c < logits.dim(1); ++c) out.at(r, c) = std::exp(logits.at(r, c)) / z;
  }
  return out;
}

double kl(const Tensor& p, const Tensor& q) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

namespace {

struct Ranked {
  double score;
  int image;
  Box box;
};

double ap_of_sequence(const std::vector<Ranked>& ranked, const std::vector<GroundTruth>& gt, int cls, double thresh) {
  int n_gt = 0;
  for (const GroundTruth& g : gt)
    for (const GtObject& o : g) n_gt += o.class_id == cls ? 1 : 0;
  std::vector<std::vector<bool>> taken(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) taken[i].assign(gt[i].size(), false);
  std::vector<double> prec, rec;
  int tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const Ranked& d = ranked[k];
    int best = -1;
    double best_iou = -1;
    for (std::size_t j = 0; j < gt[d.image].size(); ++j) {
      const GtObject& o = gt[d.image][j];
      if (o.class_id != cls || taken[d.image][j]) continue;
      const double v = oracle::iou(d.box, o.box);
      if (v >= thresh && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(j);
      }
    }
    if (best >= 0) {
      taken[d.image][best] = true;
      ++tp;
    }
    prec.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(tp) / n_gt);
  }
  double ap = 0, last = 0;
  for (std::size_t k = 0; k < rec.size(); ++k) {
    if (rec[k] <= last) continue;
    double best_p = 0;
    for (std::size_t m = k; m < prec.size(); ++m) best_p = std::max(best_p, prec[m]);
    ap += (rec[k] - last) * best_p;
    last = rec[k];
  }
  return ap;
}

}  // namespace

double class_ap(const std::vector<std::vector<ScoredBox>>& dets, const std::vector<GroundTruth>& gt, int cls,
                double thresh) {
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < dets.size(); ++i)
    for (const ScoredBox& d : dets[i])
      if (d.class_id == cls) ranked.push_back({d.score, static_cast<int>(i), d.box});
  // Insertion sort keeps equal scores in input order.
  for (std::size_t i = 1; i < ranked.size(); ++i)
    for (std::size_t j = i; j > 0 && ranked[j - 1].score < ranked[j].score; --j) std::swap(ranked[j - 1], ranked[j]);
  return ap_of_sequence(ranked, gt, cls, thresh);
}

double map(const std::vector<std::vector<ScoredBox>>& dets, const std::vector<GroundTruth>& gt,
           const std::vector<double>& thresholds) {
  std::set<int> classes;
  for (const GroundTruth& g : gt)
    for (const GtObject& o : g) classes.insert(o.class_id);
  if (classes.empty()) return 0.0;
  double total = 0;
  for (double t : thresholds) {
    double per = 0;
    for (int c : classes) per += class_ap(dets, gt, c, t);
    total += per / static_cast<double>(classes.size());
  }
  return total / static_cast<double>(thresholds.size());
}

std::pair<double, double> ap_over_orderings(const std::vector<ScoredBox>& dets, const GroundTruth& gt, int cls,
                                            double thresh) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  const std::vector<GroundTruth> gts{gt};
  do {
    bool consistent = true;
    for (std::size_t i = 1; i < order.size(); ++i) consistent = consistent && dets[order[i - 1]].score >= dets[order[i]].score;
    if (!consistent) continue;
    std::vector<Ranked> ranked;
    for (int i : order)
      if (dets[i].class_id == cls) ranked.push_back({dets[i].score, 0, dets[i].box});
    const double ap = ap_of_sequence(ranked, gts, cls, thresh);
    lo = std::min(lo, ap);
    hi = std::max(hi, ap);
  } while (std::next_permutation(order.begin(), order.end()));
  return {hi, lo};
}

double ema_closed_form(double w0, double ws, double alpha, int t) {
  const double at = std::pow(alpha, t);
  return at * w0 + (1.0 - at) * ws;
}

ParamSet numeric_gradient(const std::function<double(const ParamSet&)>& f, const ParamSet& at, double eps,
                          int max_coords, std::uint64_t seed) {
  ParamSet out;
  ParamSet probe = at;
  std::mt19937_64 rng(seed);
  for (const std::string& name : at.names()) {
    const std::size_t n = at.get(name).size();
    Tensor g(at.get(name).shape(), std::numeric_limits<double>::quiet_NaN());
    std::vector<std::size_t> coords;
    if (max_coords > 0 && static_cast<std::size_t>(max_coords) < n) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    } else {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    }
    for (std::size_t c : coords) {
      const double orig = at.get(name)[c];
      probe.get(name)[c] = orig + eps;
      const double up = f(probe);
      probe.get(name)[c] = orig - eps;
      const double down = f(probe);
      probe.get(name)[c] = orig;
      g[c] = (up - down) / (2 * eps);
    }
    out.add(name, std::move(g));
  }
  return out;
}

double max_rel_error(const ParamSet& analytic, const ParamSet& numeric, double floor) {
  double worst = 0;
  for (const std::string& name : numeric.names()) {
    const Tensor& a = analytic.get(name);
    const Tensor& n = numeric.get(name);
    for (std::size_t i = 0; i < n.size(); ++i) {
      if (std::isnan(n[i])) continue;
      const double denom = std::max({std::abs(a[i]), std::abs(n[i]), floor});
      worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
    }
  }
  return worst;
}

}  // namespace mtdet::oracle
