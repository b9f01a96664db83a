// SPDX-License-Identifier: Apache-2.0
#include "mtdet_verify/suite.hpp"

#include <chrono>
#include <filesystem>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "json.hpp"
#include "mtdet/augment.hpp"
#include "mtdet/config.hpp"
#include "mtdet/data.hpp"
#include "mtdet/eval.hpp"
#include "mtdet/exit_codes.hpp"
#include "mtdet/pseudo_label.hpp"
#include "mtdet/run_io.hpp"
#include "mtdet/trainer.hpp"
#include "mtdet_verify/oracles.hpp"

namespace mtdet::verify {

namespace {

using Rng = std::mt19937_64;

struct Outcome {
  bool ok = true;
  std::ostringstream detail;
  void fail(const std::string& why) {
    if (ok) detail << why;
    ok = false;
  }
  void expect(bool cond, const std::string& why) {
    if (!cond) fail(why);
  }
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(shape);
  for (double& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

Box random_box(Rng& rng, double w, double h, double min_side = 1.0) {
  const double bw = uniform(rng, min_side, w * 0.8), bh = uniform(rng, min_side, h * 0.8);
  const double x = uniform(rng, 0, w - bw), y = uniform(rng, 0, h - bh);
  return {x, y, x + bw, y + bh};
}

// ---------------------------------------------------------------------------
// Gradient checks

struct GradFixture {
  ParamSet inputs;
  std::function<Var(Graph&, const BoundParams&)> loss;
};

double grad_error(const GradFixture& fx, bool fault, double eps, int max_coords, std::uint64_t seed) {
  Graph g;
  BoundParams bp(g, fx.inputs, true);
  g.backward(fx.loss(g, bp));
  ParamSet analytic = bp.gradients(g);
  if (fault) {
    for (const std::string& n : analytic.names())
      for (double& v : analytic.get(n).values()) v *= 1.01;
  }
  auto f = [&](const ParamSet& p) {
    Graph g2;
    BoundParams b2(g2, p, false);
    return g2.value(fx.loss(g2, b2))[0];
  };
  const ParamSet numeric = oracle::numeric_gradient(f, fx.inputs, eps, max_coords, seed);
  return oracle::max_rel_error(analytic, numeric, 1e-4);
}

using FixtureMaker = std::function<GradFixture(Rng&)>;

void run_grad(Outcome& o, const FixtureMaker& make, bool fault, double tol, int fixtures = 5, double eps = 1e-6,
              int max_coords = 0) {
  double worst = 0;
  for (int i = 0; i < fixtures; ++i) {
    Rng rng(1000 + i);
    // Fixture RNG state is captured by the loss closure, so each evaluation
    // must rebuild identical weights: draw them once here.
    const GradFixture fx = make(rng);
    worst = std::max(worst, grad_error(fx, fault, eps, max_coords, 77 + i));
  }
  o.detail << "max rel err " << worst << " over " << fixtures << " fixtures (tol " << tol << ")";
  o.ok = worst < tol;
}

// Each fixture draws its constant weights up front and captures them.
GradFixture unary_fixture(Tensor x, std::function<Var(Graph&, Var)> op, Rng& rng) {
  GradFixture fx;
  fx.inputs.add("x", std::move(x));
  Graph probe;
  BoundParams pb(probe, fx.inputs, false);
  const Shape out_shape = probe.value(op(probe, pb["x"])).shape();
  const Tensor weights = random_tensor(out_shape, rng, -1.5, 1.5);
  fx.loss = [op, weights](Graph& g, const BoundParams& p) {
    const Var out = op(g, p["x"]);
    return g.value(out).size() == 1 ? mul(g, out, g.constant(weights)) : sum(g, mul(g, out, g.constant(weights)));
  };
  return fx;
}

GradFixture binary_fixture(Tensor a, Tensor b, std::function<Var(Graph&, Var, Var)> op, Rng& rng) {
  GradFixture fx;
  fx.inputs.add("a", std::move(a));
  fx.inputs.add("b", std::move(b));
  Graph probe;
  BoundParams pb(probe, fx.inputs, false);
  const Tensor weights = random_tensor(probe.value(op(probe, pb["a"], pb["b"])).shape(), rng, -1.5, 1.5);
  fx.loss = [op, weights](Graph& g, const BoundParams& p) {
    return sum(g, mul(g, op(g, p["a"], p["b"]), g.constant(weights)));
  };
  return fx;
}

Tensor away_from(Tensor t, double kink, double margin) {
  for (double& v : t.values())
    if (std::abs(std::abs(v) - kink) < margin) v += v >= 0 ? 2 * margin : -2 * margin;
  return t;
}

std::map<std::string, FixtureMaker> op_fixtures() {
  std::map<std::string, FixtureMaker> m;
  auto dims = [](Rng& r) { return Shape{uniform_int(r, 1, 5), uniform_int(r, 1, 5)}; };
  m["add"] = [dims](Rng& r) {
    const Shape s = dims(r);
    return binary_fixture(random_tensor(s, r), random_tensor(s, r), [](Graph& g, Var a, Var b) { return add(g, a, b); }, r);
  };
  m["sub"] = [dims](Rng& r) {
    const Shape s = dims(r);
    return binary_fixture(random_tensor(s, r), random_tensor(s, r), [](Graph& g, Var a, Var b) { return sub(g, a, b); }, r);
  };
  m["mul"] = [dims](Rng& r) {
    const Shape s = dims(r);
    return binary_fixture(random_tensor(s, r), random_tensor(s, r), [](Graph& g, Var a, Var b) { return mul(g, a, b); }, r);
  };
  m["scale"] = [dims](Rng& r) {
    const double k = uniform(r, -3, 3);
    return unary_fixture(random_tensor(dims(r), r), [k](Graph& g, Var x) { return scale(g, x, k); }, r);
  };
  m["sum"] = [dims](Rng& r) { return unary_fixture(random_tensor(dims(r), r), [](Graph& g, Var x) { return sum(g, x); }, r); };
  m["relu"] = [dims](Rng& r) {
    return unary_fixture(away_from(random_tensor(dims(r), r), 0.0, 1e-3), [](Graph& g, Var x) { return relu(g, x); }, r);
  };
  m["reshape"] = [](Rng& r) {
    const int a = uniform_int(r, 1, 4), b = uniform_int(r, 1, 4);
    return unary_fixture(random_tensor({a, b}, r), [a, b](Graph& g, Var x) { return reshape(g, x, {b, a}); }, r);
  };
  m["select_rows"] = [](Rng& r) {
    const int n = uniform_int(r, 2, 6);
    std::vector<int> rows;
    for (int i = 0; i < 7; ++i) rows.push_back(uniform_int(r, 0, n - 1));
    return unary_fixture(random_tensor({n, 3}, r), [rows](Graph& g, Var x) { return select_rows(g, x, rows); }, r);
  };
  m["gather_class_deltas"] = [](Rng& r) {
    const int n = uniform_int(r, 1, 5), c = uniform_int(r, 1, 4);
    std::vector<int> cls;
    for (int i = 0; i < n; ++i) cls.push_back(uniform_int(r, 0, c - 1));
    return unary_fixture(random_tensor({n, 4 * c}, r), [cls](Graph& g, Var x) { return gather_class_deltas(g, x, cls); }, r);
  };
  m["planes_to_rows"] = [](Rng& r) {
    const int k = uniform_int(r, 1, 4), a = uniform_int(r, 1, 3);
    return unary_fixture(random_tensor({a * k, uniform_int(r, 1, 4), uniform_int(r, 1, 4)}, r),
                         [k](Graph& g, Var x) { return planes_to_rows(g, x, k); }, r);
  };
  m["linear"] = [](Rng& r) {
    const int n = uniform_int(r, 1, 5), in = uniform_int(r, 1, 6), out = uniform_int(r, 1, 5);
    GradFixture fx;
    fx.inputs.add("x", random_tensor({n, in}, r));
    fx.inputs.add("w", random_tensor({out, in}, r));
    fx.inputs.add("b", random_tensor({out}, r));
    const Tensor weights = random_tensor({n, out}, r);
    fx.loss = [weights](Graph& g, const BoundParams& p) {
      return sum(g, mul(g, linear(g, p["x"], p["w"], p["b"]), g.constant(weights)));
    };
    return fx;
  };
  m["conv2d"] = [](Rng& r) {
    const int cin = uniform_int(r, 1, 3), cout = uniform_int(r, 1, 3), k = uniform_int(r, 1, 3);
    const int stride = uniform_int(r, 1, 2), pad = uniform_int(r, 0, 1);
    const int h = uniform_int(r, k, 7), w = uniform_int(r, k, 7);
    GradFixture fx;
    fx.inputs.add("x", random_tensor({cin, h, w}, r));
    fx.inputs.add("k", random_tensor({cout, cin, k, k}, r));
    fx.inputs.add("b", random_tensor({cout}, r));
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (w + 2 * pad - k) / stride + 1;
    const Tensor weights = random_tensor({cout, ho, wo}, r);
    fx.loss = [weights, stride, pad](Graph& g, const BoundParams& p) {
      return sum(g, mul(g, conv2d(g, p["x"], p["k"], p["b"], stride, pad), g.constant(weights)));
    };
    return fx;
  };
  m["max_pool2d"] = [](Rng& r) {
    const int k = uniform_int(r, 1, 3);
    return unary_fixture(random_tensor({uniform_int(r, 1, 3), k * uniform_int(r, 1, 3), k * uniform_int(r, 1, 3)}, r),
                         [k](Graph& g, Var x) { return max_pool2d(g, x, k); }, r);
  };
  m["roi_pool"] = [](Rng& r) {
    const int stride = 4, h = uniform_int(r, 3, 6), w = uniform_int(r, 3, 6);
    std::vector<Box> props;
    for (int i = 0; i < uniform_int(r, 1, 4); ++i) props.push_back(random_box(r, w * stride, h * stride, 2.0));
    const int out = uniform_int(r, 1, 3);
    return unary_fixture(random_tensor({uniform_int(r, 1, 3), h, w}, r),
                         [props, stride, out](Graph& g, Var x) { return roi_pool(g, x, props, stride, out); }, r);
  };
  m["softmax_rows"] = [dims](Rng& r) {
    return unary_fixture(random_tensor(dims(r), r, -3, 3), [](Graph& g, Var x) { return softmax_rows(g, x); }, r);
  };
  m["kl_div"] = [](Rng& r) {
    const int n = uniform_int(r, 1, 5), k = uniform_int(r, 2, 5);
    const Tensor p = oracle::softmax_rows(random_tensor({n, k}, r, -2, 2));
    return unary_fixture(random_tensor({n, k}, r, -2, 2),
                         [p](Graph& g, Var x) { return kl_div(g, p, softmax_rows(g, x)); }, r);
  };
  m["l2_residual_norm"] = [dims](Rng& r) {
    const Shape s = dims(r);
    const Tensor t = random_tensor(s, r);
    return unary_fixture(random_tensor(s, r), [t](Graph& g, Var x) { return l2_residual_norm(g, x, t); }, r);
  };
  m["row_l2_norm_sum"] = [dims](Rng& r) {
    const Shape s = dims(r);
    const Tensor t = random_tensor(s, r);
    return unary_fixture(random_tensor(s, r), [t](Graph& g, Var x) { return row_l2_norm_sum(g, x, t); }, r);
  };
  m["cross_entropy_rows"] = [](Rng& r) {
    const int n = uniform_int(r, 1, 5), k = uniform_int(r, 2, 5);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(uniform_int(r, 0, k - 1));
    return unary_fixture(random_tensor({n, k}, r, -3, 3),
                         [labels](Graph& g, Var x) { return cross_entropy_rows(g, x, labels); }, r);
  };
  m["smooth_l1"] = [dims](Rng& r) {
    const Shape s = dims(r);
    const Tensor t(s, 0.0);
    return unary_fixture(away_from(random_tensor(s, r, -0.5, 0.5), 1.0 / 9.0, 1e-3),
                         [t](Graph& g, Var x) { return smooth_l1(g, x, t); }, r);
  };
  return m;
}

// ---------------------------------------------------------------------------
// Shared fixtures

DetectorConfig default_detector() { return DetectorConfig{}; }

Scene fixture_scene(std::uint64_t seed) { return generate_scene(seed, SceneSpec{}); }

struct TinyRun {
  Corpus corpus;
  DatasetSplit split;
  TrainConfig cfg;
};

TinyRun tiny_run() {
  TinyRun t;
  t.corpus = generate_corpus(SceneSpec{}, 24, 5);
  t.split = split_dataset(24, 0.25, 3, 4);
  t.cfg.burn_in_iters = 3;
  t.cfg.total_iters = 4;
  t.cfg.eval_every = 2;
  t.cfg.log_every = 1;
  t.cfg.n_proposals = 32;
  t.cfg.seed = 9;
  return t;
}

std::vector<Sample> samples(const Corpus& c, const std::vector<int>& ids, bool with_gt) {
  std::vector<Sample> out;
  for (int id : ids) out.push_back({&c.scenes[id].image, with_gt ? &c.scenes[id].gt : nullptr});
  return out;
}

std::string metrics_text(const RunResult& r) {
  std::string s;
  for (const MetricsRecord& m : r.records) s += record_line(m) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Check bodies

using Body = std::function<void(Outcome&, bool fault)>;

struct Entry {
  CheckInfo info;
  Body body;
};

std::vector<Entry> build_entries() {
  std::vector<Entry> e;
  auto add_check = [&](std::string name, std::string desc, Body body, bool gradient = false) {
    e.push_back({{std::move(name), std::move(desc), gradient}, std::move(body)});
  };

  // ---- geometry ----
  add_check("geometry.iou_symmetry", "iou(a,b) == iou(b,a)", [](Outcome& o, bool) {
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
      const Box a = random_box(rng, 64, 64), b = random_box(rng, 64, 64);
      o.expect(iou(a, b) == iou(b, a), "asymmetric pair");
    }
  });
  add_check("geometry.iou_bounds", "0 <= iou <= 1, iou(a,a) == 1, matches reference", [](Outcome& o, bool) {
    Rng rng(2);
    for (int i = 0; i < 2000; ++i) {
      const Box a = random_box(rng, 64, 64), b = random_box(rng, 64, 64);
      const double v = iou(a, b);
      o.expect(v >= 0 && v <= 1, "iou out of [0,1]");
      o.expect(iou(a, a) == 1.0, "iou(a,a) != 1");
      o.expect(std::abs(v - oracle::iou(a, b)) < 1e-12, "iou differs from reference");
    }
  });
  add_check("geometry.delta_roundtrip", "decode(encode(t)) == t within 1e-9 relative, sizes 1..1000", [](Outcome& o, bool) {
    Rng rng(3);
    double worst = 0;
    for (int i = 0; i < 5000; ++i) {
      auto box = [&] {
        const double w = uniform(rng, 1, 1000), h = uniform(rng, 1, 1000);
        const double x = uniform(rng, -500, 500), y = uniform(rng, -500, 500);
        return Box{x, y, x + w, y + h};
      };
      const Box a = box(), t = box();
      const Box r = decode_deltas(a, encode_deltas(a, t));
      for (auto [u, v] : {std::pair{r.x1, t.x1}, {r.y1, t.y1}, {r.x2, t.x2}, {r.y2, t.y2}}) {
        worst = std::max(worst, std::abs(u - v) / std::max(1.0, std::abs(v)));
      }
    }
    o.detail << "max rel err " << worst;
    o.ok = worst < 1e-9;
  });
  add_check("geometry.nms_oracle", "nms equals brute-force greedy on 1000 instances of <= 64 boxes", [](Outcome& o, bool) {
    Rng rng(4);
    for (int inst = 0; inst < 1000 && o.ok; ++inst) {
      std::vector<ScoredBox> boxes;
      const int n = uniform_int(rng, 0, 64);
      for (int i = 0; i < n; ++i) {
        // Coarse scores so ties occur.
        boxes.push_back({random_box(rng, 64, 64), std::round(uniform(rng, 0, 1) * 20) / 20, 0});
      }
      const double thresh = uniform(rng, 0.05, 1.0);
      o.expect(nms(boxes, thresh) == oracle::nms(boxes, thresh), "mismatch on instance " + std::to_string(inst));
    }
  });
  add_check("geometry.hflip_involution", "hflip_box twice is identity and keeps area", [](Outcome& o, bool) {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
      const double w = uniform_int(rng, 8, 200);
      const Box b = random_box(rng, w, 64);
      const Box f = hflip_box(b, w), ff = hflip_box(f, w);
      o.expect(std::abs(ff.x1 - b.x1) < 1e-12 && std::abs(ff.x2 - b.x2) < 1e-12 && ff.y1 == b.y1 && ff.y2 == b.y2,
               "not an involution");
      o.expect(std::abs(f.area() - b.area()) < 1e-9, "area changed");
    }
  });

  // ---- tensor-grad ----
  for (const auto& [op, maker] : op_fixtures()) {
    FixtureMaker mk = maker;
    add_check("grad." + op, "finite-difference check of " + op + " on 5 random fixtures",
              [mk](Outcome& o, bool fault) { run_grad(o, mk, fault, kOpGradTol, 5, 1e-6); }, true);
  }
  add_check("grad.softmax_normalized", "softmax rows sum to 1 within 1e-9 and stay positive after flooring", [](Outcome& o, bool) {
    Rng rng(6);
    for (int i = 0; i < 500; ++i) {
      const Tensor p = softmax_rows(random_tensor({uniform_int(rng, 1, 6), uniform_int(rng, 2, 8)}, rng, -50, 50));
      for (int r = 0; r < p.dim(0); ++r) {
        double s = 0;
        for (int c = 0; c < p.dim(1); ++c) {
          s += p.at(r, c);
          o.expect(std::max(p.at(r, c), 1e-12) > 0 && p.at(r, c) >= 0, "negative probability");
        }
        o.expect(std::abs(s - 1) < 1e-9, "row sum off");
      }
    }
  });
  add_check("grad.kl_self_zero", "kl_div(p,p) == 0 exactly and kl_div >= -1e-12", [](Outcome& o, bool) {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
      const Shape s{uniform_int(rng, 1, 5), uniform_int(rng, 2, 6)};
      Tensor p = oracle::softmax_rows(random_tensor(s, rng, -4, 4));
      if (i % 3 == 0) {  // rows with exact zeros
        for (int r = 0; r < s[0]; ++r) {
          double keep = p.at(r, 0);
          for (int c = 1; c < s[1]; ++c) p.at(r, c) = 0;
          p.at(r, 0) = keep / keep;
        }
      }
      Graph g;
      o.expect(g.value(kl_div(g, p, g.constant(p)))[0] == 0.0, "kl(p,p) != 0");
      const Tensor q = oracle::softmax_rows(random_tensor(s, rng, -4, 4));
      const double v = g.value(kl_div(g, p, g.constant(q)))[0];
      o.expect(v >= -1e-12, "negative kl");
      o.expect(std::abs(v - oracle::kl(p, q)) < 1e-9 * std::max(1.0, v), "kl differs from reference");
    }
  });
  add_check("grad.backward_deterministic", "identical graphs give bit-identical gradients", [](Outcome& o, bool) {
    const Scene s = fixture_scene(11);
    const ParamSet p = init_detector(default_detector(), 3);
    auto grads = [&] {
      Graph g;
      BoundParams bp(g, p, true);
      g.backward(supervised_loss(g, bp, default_detector(), DetectorSettings{}, s.image, s.gt, 5).total);
      return bp.gradients(g);
    };
    o.expect(grads() == grads(), "gradients differ between identical runs");
  });
  add_check("grad.conv_linear_oracle", "conv2d and linear equal naive loops within 1e-10, shapes <= 16", [](Outcome& o, bool) {
    Rng rng(8);
    double worst = 0;
    for (int i = 0; i < 200; ++i) {
      const int cin = uniform_int(rng, 1, 16), cout = uniform_int(rng, 1, 16), k = uniform_int(rng, 1, 5);
      const int h = uniform_int(rng, k, 16), w = uniform_int(rng, k, 16);
      const int stride = uniform_int(rng, 1, 3), pad = uniform_int(rng, 0, 2);
      const Tensor x = random_tensor({cin, h, w}, rng), kk = random_tensor({cout, cin, k, k}, rng),
                   b = random_tensor({cout}, rng);
      Graph g;
      const Tensor got = g.value(conv2d(g, g.constant(x), g.constant(kk), g.constant(b), stride, pad));
      const Tensor want = oracle::conv2d(x, kk, b, stride, pad);
      for (std::size_t j = 0; j < got.size(); ++j) worst = std::max(worst, std::abs(got[j] - want[j]));
      const int n = uniform_int(rng, 1, 16), in = uniform_int(rng, 1, 16), out = uniform_int(rng, 1, 16);
      const Tensor lx = random_tensor({n, in}, rng), lw = random_tensor({out, in}, rng), lb = random_tensor({out}, rng);
      const Tensor lg = g.value(linear(g, g.constant(lx), g.constant(lw), g.constant(lb)));
      const Tensor lr = oracle::linear(lx, lw, lb);
      for (std::size_t j = 0; j < lg.size(); ++j) worst = std::max(worst, std::abs(lg[j] - lr[j]));
    }
    o.detail << "max abs err " << worst;
    o.ok = worst < kOracleTol;
  });

  // ---- detector ----
  add_check("detector.supervised_loss_grad", "supervised loss gradient vs finite differences, 5 fixtures, 8x8 features",
            [](Outcome& o, bool fault) {
              const DetectorConfig cfg = default_detector();
              run_grad(o, [cfg](Rng& r) {
                const std::uint64_t seed = r();
                const Scene s = fixture_scene(seed);
                GradFixture fx;
                fx.inputs = init_detector(cfg, seed + 1);
                const int h = s.image.dim(1), w = s.image.dim(2);
                const RpnOutput rpn = rpn_values(fx.inputs, backbone_values(fx.inputs, s.image));
                const SupervisedPlan plan = plan_supervised(cfg, DetectorSettings{}, rpn, make_anchors(cfg.anchors, h, w),
                                                            s.gt, h, w, seed + 2);
                const Tensor image = s.image;
                fx.loss = [cfg, plan, image](Graph& g, const BoundParams& p) {
                  const Var feats = backbone_forward(g, p, cfg, image);
                  const RpnVars rv = rpn_forward(g, p, cfg, feats);
                  return supervised_loss_with_plan(g, p, cfg, feats, rv, plan).total;
                };
                return fx;
              }, fault, kCompositeGradTol, 5, 1e-6, 6);
            }, true);
  add_check("detector.proposals_sorted", "teacher top-N proposals sorted by objectness, length <= N", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    for (int i = 0; i < 5; ++i) {
      const ParamSet p = init_detector(cfg, 20 + i);
      const Scene s = fixture_scene(30 + i);
      const RpnOutput rpn = rpn_values(p, backbone_values(p, s.image));
      for (int n : {1, 8, 640, 5000}) {
        const Proposals pr = select_top_proposals(rpn, make_anchors(cfg.anchors, 64, 64), n, 0.7, 64, 64);
        o.expect(static_cast<int>(pr.size()) <= n, "too many proposals");
        for (std::size_t k = 1; k < pr.size(); ++k) o.expect(pr.objectness[k - 1] >= pr.objectness[k], "not sorted");
      }
    }
  });
  add_check("detector.roi_probs_normalized", "ROI class distributions sum to 1 within 1e-9", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
      const ParamSet p = init_detector(cfg, 40 + i);
      const Scene s = fixture_scene(50 + i);
      std::vector<Box> props;
      for (int k = 0; k < 20; ++k) props.push_back(random_box(rng, 64, 64, 2));
      const Tensor probs = softmax_rows(roi_values(p, backbone_values(p, s.image), props).logits);
      for (int r = 0; r < probs.dim(0); ++r) {
        double sum_r = 0;
        for (int c = 0; c < probs.dim(1); ++c) sum_r += probs.at(r, c);
        o.expect(std::abs(sum_r - 1) < 1e-9, "row sum off");
      }
    }
  });
  add_check("detector.detect_bounds", "detections inside the image with score >= threshold", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    for (int i = 0; i < 5; ++i) {
      const ParamSet p = init_detector(cfg, 60 + i);
      const Scene s = fixture_scene(70 + i);
      for (double thresh : {0.0, 0.2, 0.4}) {
        for (const ScoredBox& d : detect(s.image, p, thresh, 0.5)) {
          o.expect(d.box.x1 >= 0 && d.box.y1 >= 0 && d.box.x2 <= 64 && d.box.y2 <= 64, "box outside image");
          o.expect(d.score >= thresh, "score below threshold");
          o.expect(d.class_id >= 0 && d.class_id < cfg.num_classes, "bad class id");
        }
      }
    }
  });
  add_check("detector.match_deterministic", "anchor matching and sampling repeat exactly under a fixed seed", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    const ParamSet p = init_detector(cfg, 80);
    for (int i = 0; i < 5; ++i) {
      const Scene s = fixture_scene(90 + i);
      const AnchorGrid grid = make_anchors(cfg.anchors, 64, 64);
      const AnchorMatch a = match_anchors(grid, s.gt, 0.7, 0.3), b = match_anchors(grid, s.gt, 0.7, 0.3);
      o.expect(a.labels == b.labels && a.matched_gt == b.matched_gt, "matching differs");
      const RpnOutput rpn = rpn_values(p, backbone_values(p, s.image));
      const SupervisedPlan x = plan_supervised(cfg, {}, rpn, grid, s.gt, 64, 64, 7);
      const SupervisedPlan y = plan_supervised(cfg, {}, rpn, grid, s.gt, 64, 64, 7);
      o.expect(x.rpn_rows == y.rpn_rows && x.rpn_labels == y.rpn_labels && x.roi_labels == y.roi_labels &&
                   x.roi_targets == y.roi_targets,
               "sampling differs");
    }
  });

  // ---- augment ----
  add_check("augment.strong_shape_boxes", "strong augmentation keeps the image shape and leaves boxes untouched", [](Outcome& o, bool) {
    for (int i = 0; i < 50; ++i) {
      const Scene s = fixture_scene(100 + i);
      const WeakAugResult weak = weak_augment(s.image, s.gt, 200 + i);
      const GroundTruth before = weak.gt;
      const Tensor strong = apply_strong(weak.image, plan_strong(300 + i, weak.image.dim(1)));
      o.expect(strong.shape() == weak.image.shape(), "shape changed");
      o.expect(weak.gt == before, "boxes changed");
    }
  });
  add_check("augment.pixel_range", "augmented pixels stay within [0, 255]", [](Outcome& o, bool) {
    for (int i = 0; i < 100; ++i) {
      const Scene s = fixture_scene(400 + i);
      const WeakAugResult weak = weak_augment(s.image, s.gt, 500 + i);
      const Tensor strong = apply_strong(weak.image, plan_strong(600 + i, weak.image.dim(1)));
      for (const Tensor* t : {&weak.image, &strong})
        for (double v : t->values()) o.expect(v >= 0 && v <= kMaxPixel, "pixel out of range");
    }
  });
  add_check("augment.determinism", "weak and strong augmentation are pure functions of the seed", [](Outcome& o, bool) {
    for (int i = 0; i < 20; ++i) {
      const Scene s = fixture_scene(700 + i);
      const WeakAugResult a = weak_augment(s.image, s.gt, 800 + i), b = weak_augment(s.image, s.gt, 800 + i);
      o.expect(a.image == b.image && a.gt == b.gt, "weak differs");
      const StrongAugPlan pa = plan_strong(900 + i, 64), pb = plan_strong(900 + i, 64);
      o.expect(pa.to_line() == pb.to_line(), "plan differs");
      o.expect(apply_strong(s.image, pa) == apply_strong(s.image, pb), "strong differs");
    }
  });
  add_check("augment.weak_inverse", "weak box transform then inverse recovers boxes within 1e-9", [](Outcome& o, bool) {
    Rng rng(10);
    double worst = 0;
    for (int i = 0; i < 500; ++i) {
      const int h = 8 * uniform_int(rng, 2, 12), w = 8 * uniform_int(rng, 2, 12);
      const GeomRecord geom = plan_weak(i, h, w);
      const Box b = random_box(rng, w, h);
      const Box r = invert_geom(geom, apply_geom(geom, b));
      worst = std::max({worst, std::abs(r.x1 - b.x1), std::abs(r.y1 - b.y1), std::abs(r.x2 - b.x2), std::abs(r.y2 - b.y2)});
    }
    o.detail << "max abs err " << worst;
    o.ok = worst < 1e-9;
  });

  // ---- pseudo-label ----
  add_check("pseudo.detached", "no gradient reaches teacher weights through pseudo-labels", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    const ParamSet teacher = init_detector(cfg, 120), student = init_detector(cfg, 121);
    const Scene s = fixture_scene(122);
    Graph g;
    BoundParams tb(g, teacher, true);  // teacher bound as leaves on purpose
    BoundParams sb(g, student, true);
    PseudoLabelSettings ps;
    ps.n_proposals = 64;
    const SoftPseudoLabel label = make_soft_label(teacher, s.image, ps);
    const Var feats = backbone_forward(g, sb, cfg, s.image);
    const UnsupTerms ur = unsup_rpn_loss(g, rpn_forward(g, sb, cfg, feats), label.rpn, true);
    const UnsupTerms uo = unsup_roi_loss(g, roi_forward(g, sb, cfg, feats, label.proposals), label.roi, true);
    g.backward(add(g, ur.total, uo.total));
    const ParamSet tg = tb.gradients(g), sg = sb.gradients(g);
    double t_mass = 0, s_mass = 0;
    for (const std::string& n : tg.names())
      for (double v : tg.get(n).values()) t_mass += std::abs(v);
    for (const std::string& n : sg.names())
      for (double v : sg.get(n).values()) s_mass += std::abs(v);
    o.detail << "teacher grad mass " << t_mass << ", student " << s_mass;
    o.ok = t_mass == 0.0 && s_mass > 0.0;
  });
  add_check("pseudo.flip_symmetry", "flip ensemble on (mirror image, mirror P) equals x-mirrored original, 20 teachers",
            [](Outcome& o, bool) {
              const DetectorConfig cfg = default_detector();
              Rng rng(12);
              double worst = 0;
              for (int i = 0; i < 20; ++i) {
                const ParamSet p = init_detector(cfg, 1300 + i);
                const Scene s = fixture_scene(1400 + i);
                std::vector<Box> props, mirrored;
                for (int k = 0; k < 16; ++k) {
                  props.push_back(random_box(rng, 64, 64, 2));
                  mirrored.push_back(hflip_box(props.back(), 64));
                }
                const RoiTargets a = teacher_ensemble_roi(p, s.image, props);
                const RoiTargets b = teacher_ensemble_roi(p, hflip_image(s.image), mirrored);
                for (std::size_t j = 0; j < a.probs.size(); ++j) worst = std::max(worst, std::abs(a.probs[j] - b.probs[j]));
                for (std::size_t j = 0; j < a.deltas.size(); ++j) {
                  const double want = j % 4 == 0 ? -a.deltas[j] : a.deltas[j];
                  worst = std::max(worst, std::abs(b.deltas[j] - want));
                }
              }
              o.detail << "max abs diff " << worst;
              o.ok = worst < kSymmetryTol;
            });
  add_check("pseudo.soft_deterministic", "make_soft_label repeats exactly for fixed (params, image, N)", [](Outcome& o, bool) {
    const ParamSet p = init_detector(default_detector(), 140);
    const Scene s = fixture_scene(141);
    for (EnsembleMode m : {EnsembleMode::kNone, EnsembleMode::kFlip, EnsembleMode::kRandomAug}) {
      PseudoLabelSettings ps;
      ps.n_proposals = 128;
      ps.ensemble = m;
      ps.aug_seed = 5;
      const SoftPseudoLabel a = make_soft_label(p, s.image, ps), b = make_soft_label(p, s.image, ps);
      o.expect(a.rpn.objectness == b.rpn.objectness && a.rpn.deltas == b.rpn.deltas && a.roi.probs == b.roi.probs &&
                   a.roi.deltas == b.roi.deltas && a.objectness == b.objectness,
               std::string("differs for ensemble ") + to_string(m));
    }
  });
  add_check("pseudo.hard_bounds", "hard pseudo boxes inside the image with valid class ids", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    for (int i = 0; i < 5; ++i) {
      const ParamSet p = init_detector(cfg, 150 + i);
      const Scene s = fixture_scene(160 + i);
      const HardPseudoGT h = make_hard_label(p, s.image, 0.35, 0.5);
      for (const GtObject& g : h.gt) {
        o.expect(g.box.x1 >= 0 && g.box.y1 >= 0 && g.box.x2 <= 64 && g.box.y2 <= 64, "box outside image");
        o.expect(g.class_id >= 0 && g.class_id < cfg.num_classes, "bad class id");
      }
    }
  });
  add_check("pseudo.hard_filter_fixture", "scores {0.9, 0.69, 0.71} at theta 0.7 keep 2; theta 1.0 keeps 0", [](Outcome& o, bool) {
    const std::vector<ScoredBox> d{{{0, 0, 5, 5}, 0.9, 0}, {{1, 1, 6, 6}, 0.69, 1}, {{2, 2, 7, 7}, 0.71, 2}};
    const std::size_t at07 = filter_hard_labels(d, 0.7).gt.size(), at1 = filter_hard_labels(d, 1.0).gt.size();
    o.detail << "theta 0.7 -> " << at07 << ", theta 1.0 -> " << at1;
    o.ok = at07 == 2 && at1 == 0;
  });

  // ---- trainer ----
  add_check("trainer.unsup_grad", "unsupervised RPN + ROI loss gradient vs finite differences, 5 fixtures",
            [](Outcome& o, bool fault) {
              const DetectorConfig cfg = default_detector();
              run_grad(o, [cfg](Rng& r) {
                const std::uint64_t seed = r();
                const Scene s = fixture_scene(seed);
                const ParamSet teacher = init_detector(cfg, seed + 1);
                PseudoLabelSettings ps;
                ps.n_proposals = 64;
                const SoftPseudoLabel label = make_soft_label(teacher, s.image, ps);
                const Tensor strong = apply_strong(s.image, plan_strong(seed + 2, 64));
                GradFixture fx;
                fx.inputs = init_detector(cfg, seed + 3);
                // Cutout fill normalises to exactly 0; nonzero biases keep ReLUs off their kink.
                for (const std::string& n : fx.inputs.names())
                  if (n.ends_with(".bias"))
                    for (double& v : fx.inputs.get(n).values()) v = uniform(r, -0.1, 0.1);
                fx.loss = [cfg, label, strong](Graph& g, const BoundParams& p) {
                  const Var feats = backbone_forward(g, p, cfg, strong);
                  const UnsupTerms ur = unsup_rpn_loss(g, rpn_forward(g, p, cfg, feats), label.rpn, true);
                  const UnsupTerms uo = unsup_roi_loss(g, roi_forward(g, p, cfg, feats, label.proposals), label.roi, true);
                  return add(g, scale(g, ur.total, 1.0 / label.rpn.objectness.dim(0)),
                             scale(g, uo.total, 1.0 / static_cast<double>(label.proposals.size())));
                };
                return fx;
              }, fault, kCompositeGradTol, 5, 1e-6, 6);
            }, true);
  add_check("trainer.unsup_identical_zero", "student == teacher drives both unsupervised losses to exactly 0", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    for (int i = 0; i < 5; ++i) {
      const ParamSet p = init_detector(cfg, 170 + i);
      const Scene s = fixture_scene(180 + i);
      PseudoLabelSettings ps;
      ps.n_proposals = 128;
      ps.ensemble = EnsembleMode::kNone;
      const SoftPseudoLabel label = make_soft_label(p, s.image, ps);
      Graph g;
      BoundParams b(g, p, true);
      const Var feats = backbone_forward(g, b, cfg, s.image);
      const double r = g.value(unsup_rpn_loss(g, rpn_forward(g, b, cfg, feats), label.rpn, true).total)[0];
      const double q = g.value(unsup_roi_loss(g, roi_forward(g, b, cfg, feats, label.proposals), label.roi, true).total)[0];
      o.expect(r == 0.0 && q == 0.0, "nonzero loss for identical outputs");
    }
  });
  add_check("trainer.localization_off_zero_grad", "unsup_localization=false zeroes every regression-head gradient", [](Outcome& o, bool) {
    const DetectorConfig cfg = default_detector();
    const ParamSet teacher = init_detector(cfg, 190), student = init_detector(cfg, 191);
    const Scene s = fixture_scene(192);
    PseudoLabelSettings ps;
    ps.n_proposals = 128;
    const SoftPseudoLabel label = make_soft_label(teacher, s.image, ps);
    for (bool loc : {false, true}) {
      Graph g;
      BoundParams b(g, student, true);
      const Var feats = backbone_forward(g, b, cfg, s.image);
      const UnsupTerms ur = unsup_rpn_loss(g, rpn_forward(g, b, cfg, feats), label.rpn, loc);
      const UnsupTerms uo = unsup_roi_loss(g, roi_forward(g, b, cfg, feats, label.proposals), label.roi, loc);
      g.backward(add(g, ur.total, uo.total));
      const ParamSet gr = b.gradients(g);
      double mass = 0;
      for (const char* n : {"rpn.reg.weight", "rpn.reg.bias", "roi.reg.weight", "roi.reg.bias"})
        for (double v : gr.get(n).values()) mass += std::abs(v);
      if (!loc) o.expect(mass == 0.0, "regression gradient with localization off");
      if (loc) o.expect(mass > 0.0, "no regression gradient with localization on");
    }
  });
  add_check("trainer.ema_closed_form", "t EMA steps against a constant student match alpha^t w0 + (1-alpha^t) ws", [](Outcome& o, bool) {
    Rng rng(13);
    double worst = 0;
    for (int t : {1, 10, 1000}) {
      ParamSet teacher, student;
      teacher.add("w", random_tensor({16}, rng, -2, 2));
      student.add("w", random_tensor({16}, rng, -2, 2));
      const Tensor w0 = teacher.get("w");
      for (int k = 0; k < t; ++k) ema_update(teacher, student, 0.999);
      for (std::size_t j = 0; j < w0.size(); ++j) {
        worst = std::max(worst, std::abs(teacher.get("w")[j] - oracle::ema_closed_form(w0[j], student.get("w")[j], 0.999, t)));
      }
    }
    o.detail << "max abs err " << worst;
    o.ok = worst < kEmaTol;
  });
  add_check("trainer.teacher_isolation", "teacher changes only through the configured update rule", [](Outcome& o, bool) {
    TinyRun t = tiny_run();
    const std::vector<Sample> lab = samples(t.corpus, t.split.labeled, true), unl = samples(t.corpus, t.split.unlabeled, false);
    const ParamSet start = init_detector(t.cfg.detector, 1);
    for (UpdateRule rule : {UpdateRule::kFixed, UpdateRule::kEmaPerIter, UpdateRule::kCopyEveryK}) {
      TrainConfig cfg = t.cfg;
      cfg.update_rule = rule;
      cfg.copy_every = 3;
      TrainerState st;
      st.student = st.teacher = start;
      for (int k = 1; k <= 4; ++k) {
        const ParamSet before = st.teacher;
        train_step(st, lab, unl, cfg, 127.5);
        ParamSet expect = before;
        if (rule == UpdateRule::kEmaPerIter) ema_update(expect, st.student, cfg.alpha);
        if (rule == UpdateRule::kCopyEveryK && k % 3 == 0) expect = st.student;
        o.expect(st.teacher == expect, std::string("unexpected teacher change under ") + to_string(rule));
      }
    }
  });
  add_check("trainer.beta_zero_bitwise", "beta=0 and n_U=0 reproduce the supervised-only trajectory bitwise", [](Outcome& o, bool) {
    TinyRun t = tiny_run();
    TrainConfig sup = t.cfg;
    sup.n_unlabeled = 0;
    TrainConfig beta0 = t.cfg;
    beta0.beta = 0.0;
    TrainConfig nu0_beta = t.cfg;
    nu0_beta.n_unlabeled = 0;
    nu0_beta.beta = 0.8;
    const RunResult a = run_training(sup, t.corpus, t.split);
    const RunResult b = run_training(beta0, t.corpus, t.split);
    const RunResult c = run_training(nu0_beta, t.corpus, t.split);
    o.expect(a.student == b.student && a.teacher == b.teacher, "beta=0 diverges from supervised-only");
    o.expect(a.student == c.student && a.teacher == c.teacher, "n_U=0 diverges from supervised-only");
    o.expect(!(a.student == a.burn_in), "trajectory did not move");
  });
  add_check("trainer.losses_finite", "every metrics loss component finite and >= 0 in all modes", [](Outcome& o, bool) {
    TinyRun t = tiny_run();
    for (LabelMode m : {LabelMode::kSoft, LabelMode::kHard})
      for (EnsembleMode e : {EnsembleMode::kNone, EnsembleMode::kFlip, EnsembleMode::kRandomAug}) {
        TrainConfig cfg = t.cfg;
        cfg.label_mode = m;
        cfg.ensemble = e;
        cfg.theta = 0.3;
        for (const MetricsRecord& r : run_training(cfg, t.corpus, t.split).records) {
          for (double v : {r.loss_sup, r.loss_unsup, r.loss_unsup_rpn_cls, r.loss_unsup_rpn_loc, r.loss_unsup_roi_cls,
                           r.loss_unsup_roi_loc, r.loss_total}) {
            o.expect(std::isfinite(v) && v >= 0, "bad loss value");
          }
        }
      }
  });
  add_check("trainer.determinism", "two runs with one seed give byte-identical metrics", [](Outcome& o, bool) {
    TinyRun t = tiny_run();
    const std::string a = metrics_text(run_training(t.cfg, t.corpus, t.split));
    const std::string b = metrics_text(run_training(t.cfg, t.corpus, t.split));
    o.expect(!a.empty() && a == b, "metrics differ");
  });

  // ---- data-eval ----
  add_check("eval.map_oracle", "evaluator equals brute-force matching on 500 instances (<= 8 dets, <= 4 GT)", [](Outcome& o, bool) {
    Rng rng(14);
    double worst = 0;
    for (int inst = 0; inst < 500; ++inst) {
      const int images = uniform_int(rng, 1, 2);
      std::vector<std::vector<ScoredBox>> dets(images);
      std::vector<GroundTruth> gt(images);
      for (int im = 0; im < images; ++im) {
        for (int k = uniform_int(rng, 0, 4); k > 0; --k) gt[im].push_back({random_box(rng, 32, 32, 4), uniform_int(rng, 0, 1)});
        for (int k = uniform_int(rng, 0, 8); k > 0; --k) {
          Box b = random_box(rng, 32, 32, 4);
          if (!gt[im].empty() && uniform(rng, 0, 1) < 0.6) {  // perturbed copy of a GT box
            const Box& src = gt[im][uniform_int(rng, 0, static_cast<int>(gt[im].size()) - 1)].box;
            const double j = uniform(rng, -2, 2);
            b = {src.x1 + j, src.y1 - j / 2, src.x2 + j / 3, src.y2 + j};
          }
          dets[im].push_back({b, std::round(uniform(rng, 0, 1) * 10) / 10, uniform_int(rng, 0, 1)});
        }
      }
      const MapResult got = evaluate_map(dets, gt);
      worst = std::max(worst, std::abs(got.map - oracle::map(dets, gt, coco_iou_thresholds())));
    }
    o.detail << "max abs err " << worst;
    o.ok = worst < 1e-12;
  });
  add_check("eval.map_bounds_monotone", "mAP in [0,1] and AP non-increasing in the IoU threshold", [](Outcome& o, bool) {
    Rng rng(15);
    for (int inst = 0; inst < 300; ++inst) {
      std::vector<std::vector<ScoredBox>> dets(1);
      std::vector<GroundTruth> gt(1);
      for (int k = uniform_int(rng, 1, 4); k > 0; --k) gt[0].push_back({random_box(rng, 32, 32, 4), uniform_int(rng, 0, 2)});
      for (int k = uniform_int(rng, 0, 8); k > 0; --k) {
        const Box& src = gt[0][uniform_int(rng, 0, static_cast<int>(gt[0].size()) - 1)].box;
        const double j = uniform(rng, -3, 3);
        dets[0].push_back({{src.x1 + j, src.y1, src.x2, src.y2 + j}, uniform(rng, 0, 1), uniform_int(rng, 0, 2)});
      }
      const MapResult r = evaluate_map(dets, gt);
      o.expect(r.map >= 0 && r.map <= 1, "mAP out of range");
      for (std::size_t t = 1; t < r.ap_per_threshold.size(); ++t)
        o.expect(r.ap_per_threshold[t] <= r.ap_per_threshold[t - 1] + 1e-15, "AP increased with threshold");
    }
  });
  add_check("eval.duplicate_no_gain", "a lower-scored duplicate of a matched detection never raises AP", [](Outcome& o, bool) {
    Rng rng(16);
    for (int inst = 0; inst < 300; ++inst) {
      std::vector<std::vector<ScoredBox>> dets(1);
      std::vector<GroundTruth> gt(1);
      // Disjoint GT boxes, one per quadrant, so a duplicate can only hit its own GT.
      for (int q = uniform_int(rng, 0, 3); q < 4; ++q) {
        const double ox = 32.0 * (q % 2), oy = 32.0 * (q / 2);
        const Box b = random_box(rng, 32, 32, 4);
        gt[0].push_back({{b.x1 + ox, b.y1 + oy, b.x2 + ox, b.y2 + oy}, 0});
      }
      std::vector<int> matched;
      for (const GtObject& g : gt[0])
        if (uniform(rng, 0, 1) < 0.7) {
          matched.push_back(static_cast<int>(dets[0].size()));
          dets[0].push_back({g.box, uniform(rng, 0.2, 1), 0});
        }
      for (int k = uniform_int(rng, 0, 3); k > 0; --k) dets[0].push_back({random_box(rng, 64, 64, 4), uniform(rng, 0, 1), 0});
      if (matched.empty()) continue;
      const double before = evaluate_map(dets, gt).map;
      ScoredBox dup = dets[0][matched[uniform_int(rng, 0, static_cast<int>(matched.size()) - 1)]];
      dup.score = uniform(rng, 0, dup.score);
      dets[0].push_back(dup);
      o.expect(evaluate_map(dets, gt).map <= before + 1e-15, "duplicate raised AP");
    }
  });
  add_check("data.corpus_determinism", "corpus regeneration and archive round trip are byte-identical", [](Outcome& o, bool) {
    const Corpus a = generate_corpus(SceneSpec{}, 12, 77), b = generate_corpus(SceneSpec{}, 12, 77);
    for (std::size_t i = 0; i < a.size(); ++i) o.expect(a.scenes[i].image == b.scenes[i].image && a.scenes[i].gt == b.scenes[i].gt, "scene differs");
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / ("mtdet_verify_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    save_corpus(a, dir);
    const Corpus c = load_corpus(dir);
    std::filesystem::remove_all(dir);
    o.expect(c.size() == a.size() && c.spec == a.spec, "archive header differs");
    for (std::size_t i = 0; i < std::min(a.size(), c.size()); ++i)
      o.expect(a.scenes[i].image == c.scenes[i].image && a.scenes[i].gt == c.scenes[i].gt, "archived scene differs");
  });

  // ---- cli ----
  add_check("cli.config_roundtrip", "resolved config text parses back to the same config", [](Outcome& o, bool) {
    const EnvLookup none = [](const std::string&) { return std::optional<std::string>(); };
    const ExperimentConfig d = default_config(none);
    const std::string text = to_json(d);
    o.expect(to_json(parse_config(text, none)) == text, "round trip changed the config");
    ExperimentConfig h = d;
    h.train.label_mode = LabelMode::kHard;
    h.train.beta = 0.3;
    o.expect(to_json(parse_config(to_json(h), none)) == to_json(h), "hard-mode round trip changed the config");
  });
  add_check("cli.metrics_independent_parse", "metrics lines parse as plain JSON with the documented keys", [](Outcome& o, bool) {
    MetricsRecord r;
    r.iteration = 7;
    r.phase = "ssl";
    r.label_mode = "soft";
    r.loss_sup = 0.25;
    r.teacher_map = 0.5;
    const nlohmann::json j = nlohmann::json::parse(record_line(r));
    for (const char* k : {"iteration", "phase", "label_mode", "loss_sup", "loss_unsup", "loss_unsup_rpn_cls",
                          "loss_unsup_rpn_loc", "loss_unsup_roi_cls", "loss_unsup_roi_loc", "loss_total", "teacher_map",
                          "teacher_ap50", "student_map", "student_ap50", "pseudo_proposals", "pseudo_confidence"}) {
      o.expect(j.contains(k), std::string("missing key ") + k);
    }
    o.expect(j["student_map"].is_null() && j["teacher_map"].get<double>() == 0.5, "optional fields wrong");
    const nlohmann::json h = nlohmann::json::parse(header_line({"r", "soft", "ema_per_iter", "flip"}));
    o.expect(h["version"].get<int>() == kMetricsVersion && h["schema"] == "mtdet-metrics", "header wrong");
  });
  add_check("cli.exit_codes_distinct", "config, data and numeric failures map to distinct nonzero exit codes", [](Outcome& o, bool) {
    o.expect(kExitConfig != 0 && kExitData != 0 && kExitNumeric != 0, "zero failure code");
    o.expect(kExitConfig != kExitData && kExitData != kExitNumeric && kExitConfig != kExitNumeric, "codes collide");
  });
  return e;
}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> e = build_entries();
  return e;
}

CheckResult execute(const Entry& entry, bool fault) {
  CheckResult r;
  r.name = entry.info.name;
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    entry.body(o, fault);
  } catch (const std::exception& ex) {
    o.ok = false;
    o.detail << "exception: " << ex.what();
  }
  r.passed = o.ok;
  r.detail = o.detail.str();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

const std::vector<CheckInfo>& catalogue() {
  static const std::vector<CheckInfo> c = [] {
    std::vector<CheckInfo> out;
    for (const Entry& e : entries()) out.push_back(e.info);
    return out;
  }();
  return c;
}

std::vector<CheckResult> run(const Options& opt, const std::function<void(const CheckResult&)>& on_result) {
  if (!opt.fault.empty()) {
    bool known = false;
    for (const Entry& e : entries()) known = known || (e.info.name == opt.fault && e.info.gradient);
    if (!known) throw std::invalid_argument("unknown gradient check '" + opt.fault + "' for fault injection");
  }
  std::vector<CheckResult> out;
  for (const Entry& e : entries()) {
    if (!opt.filter.empty() && e.info.name.rfind(opt.filter, 0) != 0) continue;
    out.push_back(execute(e, e.info.name == opt.fault));
    if (on_result) on_result(out.back());
  }
  return out;
}

CheckResult run_one(const std::string& name, const std::string& fault) {
  for (const Entry& e : entries()) {
    if (e.info.name == name) return execute(e, !fault.empty() && fault == name);
  }
  throw std::invalid_argument("unknown check '" + name + "'");
}

}  // namespace mtdet::verify
