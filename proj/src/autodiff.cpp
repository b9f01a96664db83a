// SPDX-License-Identifier: Apache-2.0
#include "mtdet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace mtdet {

namespace {

constexpr double kProbFloor = 1e-12;
constexpr double kNormTol = 1e-6;

void require(bool ok, const std::string& op, const std::string& what) {
  if (!ok) throw ShapeError(op + ": " + what);
}

void require_same(const Tensor& a, const Tensor& b, const std::string& op) {
  require(a.shape() == b.shape(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, const std::string& op, const std::string& name) {
  require(t.rank() == rank, op, name + " must be rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph

Var Graph::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, nullptr});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back({std::move(value), {}, true, nullptr});
  return {static_cast<int>(nodes_.size()) - 1};
}

Var Graph::push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  nodes_.push_back({std::move(value), {}, needs, needs ? std::move(fn) : nullptr});
  return {static_cast<int>(nodes_.size()) - 1};
}

Tensor* Graph::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.shape() != n.value.shape()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(root.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    // Callbacks only write to the sinks of earlier nodes, so n.grad is stable.
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------
// Elementwise / structural

Var add(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    for (Var v : {a, b}) {
      if (Tensor* s = g.grad_sink(v))
        for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += go[i];
    }
  });
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += go[i];
    if (Tensor* s = g.grad_sink(b))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] -= go[i];
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  require_same(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.push(std::move(out), {a, b}, [a, b](Graph& g, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    if (Tensor* s = g.grad_sink(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += go[i] * bv[i];
    if (Tensor* s = g.grad_sink(b))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += go[i] * av[i];
  });
}

Var scale(Graph& g, Var a, double k) {
  Tensor out = g.value(a);
  for (double& v : out.values()) v *= k;
  return g.push(std::move(out), {a}, [a, k](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(a))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += k * go[i];
  });
}

Var sum(Graph& g, Var a) {
  double total = 0;
  for (double v : g.value(a).values()) total += v;
  return g.push(Tensor::scalar(total), {a}, [a](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(a))
      for (double& v : s->values()) v += go[0];
  });
}

Var relu(Graph& g, Var x) {
  Tensor out = g.value(x);
  for (double& v : out.values()) v = v > 0 ? v : 0.0;
  return g.push(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(x);
    if (!s) return;
    const Tensor& xv = g.value(x);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (xv[i] > 0) (*s)[i] += go[i];
  });
}

Var reshape(Graph& g, Var x, Shape shape) {
  Tensor out = g.value(x).reshaped(std::move(shape));
  return g.push(std::move(out), {x}, [x](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[i] += go[i];
  });
}

Var select_rows(Graph& g, Var x, const std::vector<int>& rows) {
  const Tensor& xv = g.value(x);
  require_rank(xv, 2, "select_rows", "x");
  const int n = xv.dim(0), d = xv.dim(1);
  Tensor out({static_cast<int>(rows.size()), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] >= 0 && rows[r] < n, "select_rows", "row " + std::to_string(rows[r]) + " out of " + std::to_string(n));
    std::copy_n(xv.data() + static_cast<std::size_t>(rows[r]) * d, d, out.data() + r * d);
  }
  return g.push(std::move(out), {x}, [x, rows, d](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(x);
    if (!s) return;
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int c = 0; c < d; ++c) s->data()[static_cast<std::size_t>(rows[r]) * d + c] += go[r * d + c];
  });
}

Var gather_class_deltas(Graph& g, Var x, const std::vector<int>& cls) {
  const Tensor& xv = g.value(x);
  require_rank(xv, 2, "gather_class_deltas", "x");
  const int n = xv.dim(0), d = xv.dim(1);
  require(static_cast<int>(cls.size()) == n, "gather_class_deltas",
          "class count " + std::to_string(cls.size()) + " vs rows " + std::to_string(n));
  require(d % 4 == 0, "gather_class_deltas", "columns must be a multiple of 4, got " + std::to_string(d));
  Tensor out({n, 4});
  for (int r = 0; r < n; ++r) {
    require(cls[r] >= 0 && 4 * cls[r] + 4 <= d, "gather_class_deltas", "class " + std::to_string(cls[r]) + " out of range");
    for (int k = 0; k < 4; ++k) out.at(r, k) = xv.at(r, 4 * cls[r] + k);
  }
  return g.push(std::move(out), {x}, [x, cls, d](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(x);
    if (!s) return;
    for (std::size_t r = 0; r < cls.size(); ++r)
      for (int k = 0; k < 4; ++k) s->data()[r * d + 4 * cls[r] + k] += go[r * 4 + k];
  });
}

Var planes_to_rows(Graph& g, Var x, int k) {
  const Tensor& xv = g.value(x);
  require_rank(xv, 3, "planes_to_rows", "x");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  require(k > 0 && c % k == 0, "planes_to_rows", "channels " + std::to_string(c) + " not divisible by " + std::to_string(k));
  const int a = c / k;
  Tensor out({h * w * a, k});
  auto row_of = [w, a](int y, int xx, int ai) { return (y * w + xx) * a + ai; };
  for (int ai = 0; ai < a; ++ai)
    for (int j = 0; j < k; ++j)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at(row_of(y, xx, ai), j) = xv.at(ai * k + j, y, xx);
  return g.push(std::move(out), {x}, [x, k, a, h, w, row_of](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(x);
    if (!s) return;
    for (int ai = 0; ai < a; ++ai)
      for (int j = 0; j < k; ++j)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) s->at(ai * k + j, y, xx) += go.at(row_of(y, xx, ai), j);
  });
}

// ---------------------------------------------------------------------------
// Layers

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  require_rank(xv, 2, "linear", "x");
  require_rank(wv, 2, "linear", "weight");
  const int n = xv.dim(0), in = xv.dim(1), out_f = wv.dim(0);
  require(wv.dim(1) == in, "linear", "x " + shape_str(xv.shape()) + " incompatible with weight " + shape_str(wv.shape()));
  require(bv.size() == static_cast<std::size_t>(out_f), "linear", "bias " + shape_str(bv.shape()) + " vs out " + std::to_string(out_f));

  // Row-major weight transpose so the inner loop runs over outputs.
  std::vector<double> wt(static_cast<std::size_t>(in) * out_f);
  for (int o = 0; o < out_f; ++o)
    for (int i = 0; i < in; ++i) wt[static_cast<std::size_t>(i) * out_f + o] = wv.data()[static_cast<std::size_t>(o) * in + i];
  Tensor out({n, out_f});
  for (int r = 0; r < n; ++r) {
    const double* xr = xv.data() + static_cast<std::size_t>(r) * in;
    double* orow = out.data() + static_cast<std::size_t>(r) * out_f;
    for (int o = 0; o < out_f; ++o) orow[o] = bv[o];
    for (int i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wrow = wt.data() + static_cast<std::size_t>(i) * out_f;
      for (int o = 0; o < out_f; ++o) orow[o] += xi * wrow[o];
    }
  }
  return g.push(std::move(out), {x, w, b}, [x, w, b, n, in, out_f](Graph& g, const Tensor& go) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(w);
    if (Tensor* s = g.grad_sink(x)) {
      for (int r = 0; r < n; ++r) {
        double* sr = s->data() + static_cast<std::size_t>(r) * in;
        for (int o = 0; o < out_f; ++o) {
          const double gv = go.at(r, o);
          if (gv == 0.0) continue;
          const double* wr = wv.data() + static_cast<std::size_t>(o) * in;
          for (int i = 0; i < in; ++i) sr[i] += gv * wr[i];
        }
      }
    }
    if (Tensor* s = g.grad_sink(w)) {
      for (int r = 0; r < n; ++r) {
        const double* xr = xv.data() + static_cast<std::size_t>(r) * in;
        for (int o = 0; o < out_f; ++o) {
          const double gv = go.at(r, o);
          if (gv == 0.0) continue;
          double* sr = s->data() + static_cast<std::size_t>(o) * in;
          for (int i = 0; i < in; ++i) sr[i] += gv * xr[i];
        }
      }
    }
    if (Tensor* s = g.grad_sink(b)) {
      for (int r = 0; r < n; ++r)
        for (int o = 0; o < out_f; ++o) (*s)[o] += go.at(r, o);
    }
  });
}

Var conv2d(Graph& g, Var x, Var k, Var b, int stride, int pad) {
  const Tensor& xv = g.value(x);
  const Tensor& kv = g.value(k);
  const Tensor& bv = g.value(b);
  require_rank(xv, 3, "conv2d", "input");
  require_rank(kv, 4, "conv2d", "kernel");
  require(stride >= 1 && pad >= 0, "conv2d", "invalid stride/pad");
  const int cin = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  const int cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  require(kv.dim(1) == cin, "conv2d",
          "input channels " + std::to_string(cin) + " vs kernel " + shape_str(kv.shape()));
  require(bv.size() == static_cast<std::size_t>(cout), "conv2d", "bias " + shape_str(bv.shape()) + " vs out channels " + std::to_string(cout));
  const int ho = (h + 2 * pad - kh) / stride + 1;
  const int wo = (w + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d", "kernel larger than padded input " + shape_str(xv.shape()));

  // im2col: row r = (ci, ky, kx), column p = (oy, ox); padding reads as 0.
  const int rows = cin * kh * kw, cols = ho * wo;
  auto col = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * cols, 0.0);
  for (int ci = 0; ci < cin; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        double* crow = col->data() + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * cols;
        const double* ip = xv.data() + static_cast<std::size_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) crow[oy * wo + ox] = ip[static_cast<std::size_t>(iy) * w + ix];
          }
        }
      }

  Tensor out({cout, ho, wo});
  for (int co = 0; co < cout; ++co) {
    double* op = out.data() + static_cast<std::size_t>(co) * cols;
    std::fill(op, op + cols, bv[co]);
    const double* wrow = kv.data() + static_cast<std::size_t>(co) * rows;
    for (int r = 0; r < rows; ++r) {
      const double wt = wrow[r];
      const double* crow = col->data() + static_cast<std::size_t>(r) * cols;
      for (int q = 0; q < cols; ++q) op[q] += wt * crow[q];
    }
  }
  return g.push(std::move(out), {x, k, b},
                [x, k, b, stride, pad, cin, h, w, cout, kh, kw, ho, wo, rows, cols, col](Graph& g, const Tensor& go) {
                  const Tensor& kv = g.value(k);
                  Tensor* sx = g.grad_sink(x);
                  Tensor* sk = g.grad_sink(k);
                  if (Tensor* sb = g.grad_sink(b)) {
                    for (int co = 0; co < cout; ++co) {
                      const double* gp = go.data() + static_cast<std::size_t>(co) * cols;
                      double acc = 0;
                      for (int i = 0; i < cols; ++i) acc += gp[i];
                      (*sb)[co] += acc;
                    }
                  }
                  if (sk) {
                    for (int co = 0; co < cout; ++co) {
                      const double* gp = go.data() + static_cast<std::size_t>(co) * cols;
                      double* skrow = sk->data() + static_cast<std::size_t>(co) * rows;
                      for (int r = 0; r < rows; ++r) {
                        const double* crow = col->data() + static_cast<std::size_t>(r) * cols;
                        double acc = 0;
                        for (int q = 0; q < cols; ++q) acc += gp[q] * crow[q];
                        skrow[r] += acc;
                      }
                    }
                  }
                  if (!sx) return;
                  std::vector<double> gcol(static_cast<std::size_t>(rows) * cols, 0.0);
                  for (int co = 0; co < cout; ++co) {
                    const double* gp = go.data() + static_cast<std::size_t>(co) * cols;
                    const double* wrow = kv.data() + static_cast<std::size_t>(co) * rows;
                    for (int r = 0; r < rows; ++r) {
                      const double wt = wrow[r];
                      if (wt == 0.0) continue;
                      double* grow = gcol.data() + static_cast<std::size_t>(r) * cols;
                      for (int q = 0; q < cols; ++q) grow[q] += wt * gp[q];
                    }
                  }
                  for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky)
                      for (int kx = 0; kx < kw; ++kx) {
                        const double* grow = gcol.data() + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * cols;
                        double* sxp = sx->data() + static_cast<std::size_t>(ci) * h * w;
                        for (int oy = 0; oy < ho; ++oy) {
                          const int iy = oy * stride - pad + ky;
                          if (iy < 0 || iy >= h) continue;
                          for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) sxp[static_cast<std::size_t>(iy) * w + ix] += grow[oy * wo + ox];
                          }
                        }
                      }
                });
}

Var max_pool2d(Graph& g, Var x, int k) {
  const Tensor& xv = g.value(x);
  require_rank(xv, 3, "max_pool2d", "input");
  const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
  require(k >= 1 && h % k == 0 && w % k == 0, "max_pool2d",
          "input " + shape_str(xv.shape()) + " not divisible by window " + std::to_string(k));
  const int ho = h / k, wo = w / k;
  Tensor out({c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(ch) * h + oy * k + dy) * w + ox * k + dx;
            if (xv[idx] > best) {
              best = xv[idx];
              arg = idx;
            }
          }
        const std::size_t o = (static_cast<std::size_t>(ch) * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = arg;
      }
  return g.push(std::move(out), {x}, [x, argmax = std::move(argmax)](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(x))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[argmax[i]] += go[i];
  });
}

Var roi_pool(Graph& g, Var features, const std::vector<Box>& proposals, int stride, int out) {
  const Tensor& fv = g.value(features);
  require_rank(fv, 3, "roi_pool", "features");
  require(stride >= 1 && out >= 1, "roi_pool", "invalid stride/out size");
  const int c = fv.dim(0), h = fv.dim(1), w = fv.dim(2);
  const int p = static_cast<int>(proposals.size());
  const int cols = c * out * out;
  Tensor result({p, cols});
  std::vector<std::size_t> argmax(result.size());

  for (int r = 0; r < p; ++r) {
    const Box& b = proposals[r];
    // Cell j covers [j*stride, (j+1)*stride) in pixels.
    const double fx1 = b.x1 / stride, fx2 = b.x2 / stride;
    const double fy1 = b.y1 / stride, fy2 = b.y2 / stride;
    int cx1 = std::max(0, static_cast<int>(std::floor(fx1)));
    int cy1 = std::max(0, static_cast<int>(std::floor(fy1)));
    int cx2 = std::min(w, static_cast<int>(std::ceil(fx2)));
    int cy2 = std::min(h, static_cast<int>(std::ceil(fy2)));
    if (!(b.x2 > b.x1 && b.y2 > b.y1) || cx2 <= cx1 || cy2 <= cy1) {
      throw std::invalid_argument("roi_pool: proposal does not overlap the feature map");
    }
    const double bin_w = static_cast<double>(cx2 - cx1) / out;
    const double bin_h = static_cast<double>(cy2 - cy1) / out;
    for (int by = 0; by < out; ++by) {
      const int ys = cy1 + static_cast<int>(std::floor(by * bin_h));
      const int ye = std::max(ys + 1, cy1 + static_cast<int>(std::ceil((by + 1) * bin_h)));
      for (int bx = 0; bx < out; ++bx) {
        const int xs = cx1 + static_cast<int>(std::floor(bx * bin_w));
        const int xe = std::max(xs + 1, cx1 + static_cast<int>(std::ceil((bx + 1) * bin_w)));
        for (int ch = 0; ch < c; ++ch) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t arg = 0;
          for (int y = ys; y < std::min(ye, h); ++y)
            for (int x = xs; x < std::min(xe, w); ++x) {
              const std::size_t idx = (static_cast<std::size_t>(ch) * h + y) * w + x;
              if (fv[idx] > best) {
                best = fv[idx];
                arg = idx;
              }
            }
          const std::size_t o = static_cast<std::size_t>(r) * cols + (static_cast<std::size_t>(ch) * out + by) * out + bx;
          result[o] = best;
          argmax[o] = arg;
        }
      }
    }
  }
  return g.push(std::move(result), {features}, [features, argmax = std::move(argmax)](Graph& g, const Tensor& go) {
    if (Tensor* s = g.grad_sink(features))
      for (std::size_t i = 0; i < go.size(); ++i) (*s)[argmax[i]] += go[i];
  });
}

// ---------------------------------------------------------------------------
// Probabilistic / losses

Tensor softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax", "logits");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (int r = 0; r < n; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) m = std::max(m, logits.at(r, j));
    double z = 0;
    for (int j = 0; j < k; ++j) z += (out.at(r, j) = std::exp(logits.at(r, j) - m));
    for (int j = 0; j < k; ++j) out.at(r, j) /= z;
  }
  return out;
}

Var softmax_rows(Graph& g, Var logits) {
  Tensor out = softmax_rows(g.value(logits));
  return g.push(std::move(out), {logits}, [logits](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(logits);
    if (!s) return;
    // The output is recomputed here rather than captured so the closure stays small.
    const Tensor y = softmax_rows(g.value(logits));
    const int n = y.dim(0), k = y.dim(1);
    for (int r = 0; r < n; ++r) {
      double dot = 0;
      for (int j = 0; j < k; ++j) dot += go.at(r, j) * y.at(r, j);
      for (int j = 0; j < k; ++j) s->at(r, j) += y.at(r, j) * (go.at(r, j) - dot);
    }
  });
}

namespace {

void require_normalized(const Tensor& t, const std::string& name) {
  const int n = t.dim(0), k = t.dim(1);
  for (int r = 0; r < n; ++r) {
    double z = 0;
    for (int j = 0; j < k; ++j) z += t.at(r, j);
    if (std::abs(z - 1.0) > kNormTol) {
      throw std::invalid_argument("kl_div: row " + std::to_string(r) + " of " + name + " sums to " + std::to_string(z));
    }
  }
}

}  // namespace

Var kl_div(Graph& g, const Tensor& p, Var q) {
  const Tensor& qv = g.value(q);
  require_rank(qv, 2, "kl_div", "q");
  require_same(p, qv, "kl_div");
  require_normalized(p, "p");
  require_normalized(qv, "q");
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) total += p[i] * (std::log(p[i]) - std::log(std::max(qv[i], kProbFloor)));
  }
  return g.push(Tensor::scalar(total), {q}, [q, p](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(q);
    if (!s) return;
    const Tensor& qv = g.value(q);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > 0 && qv[i] > kProbFloor) (*s)[i] -= go[0] * p[i] / qv[i];
    }
  });
}

Var l2_residual_norm(Graph& g, Var pred, const Tensor& target) {
  const Tensor& pv = g.value(pred);
  require_same(pv, target, "l2_residual_norm");
  double ss = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) ss += (pv[i] - target[i]) * (pv[i] - target[i]);
  const double norm = std::sqrt(ss);
  return g.push(Tensor::scalar(norm), {pred}, [pred, target, norm](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(pred);
    if (!s || norm == 0.0) return;
    const Tensor& pv = g.value(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) (*s)[i] += go[0] * (pv[i] - target[i]) / norm;
  });
}

Var row_l2_norm_sum(Graph& g, Var pred, const Tensor& target) {
  const Tensor& pv = g.value(pred);
  require_rank(pv, 2, "row_l2_norm_sum", "pred");
  require_same(pv, target, "row_l2_norm_sum");
  const int n = pv.dim(0), d = pv.dim(1);
  std::vector<double> norms(n);
  double total = 0;
  for (int r = 0; r < n; ++r) {
    double ss = 0;
    for (int j = 0; j < d; ++j) {
      const double diff = pv.at(r, j) - target.at(r, j);
      ss += diff * diff;
    }
    norms[r] = std::sqrt(ss);
    total += norms[r];
  }
  return g.push(Tensor::scalar(total), {pred}, [pred, target, norms = std::move(norms)](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(pred);
    if (!s) return;
    const Tensor& pv = g.value(pred);
    const int d = pv.dim(1);
    for (std::size_t r = 0; r < norms.size(); ++r) {
      if (norms[r] == 0.0) continue;
      const double k = go[0] / norms[r];
      for (int j = 0; j < d; ++j) s->at(static_cast<int>(r), j) += k * (pv.at(static_cast<int>(r), j) - target.at(static_cast<int>(r), j));
    }
  });
}

Var cross_entropy_rows(Graph& g, Var logits, const std::vector<int>& labels) {
  const Tensor& lv = g.value(logits);
  require_rank(lv, 2, "cross_entropy", "logits");
  const int n = lv.dim(0), k = lv.dim(1);
  require(static_cast<int>(labels.size()) == n, "cross_entropy",
          "labels " + std::to_string(labels.size()) + " vs rows " + std::to_string(n));
  const Tensor prob = softmax_rows(lv);
  double total = 0;
  for (int r = 0; r < n; ++r) {
    require(labels[r] >= 0 && labels[r] < k, "cross_entropy", "label " + std::to_string(labels[r]) + " out of range");
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) m = std::max(m, lv.at(r, j));
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(lv.at(r, j) - m);
    total += m + std::log(z) - lv.at(r, labels[r]);
  }
  return g.push(Tensor::scalar(total), {logits}, [logits, labels, prob](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(logits);
    if (!s) return;
    const int n = prob.dim(0), k = prob.dim(1);
    for (int r = 0; r < n; ++r)
      for (int j = 0; j < k; ++j) s->at(r, j) += go[0] * (prob.at(r, j) - (j == labels[r] ? 1.0 : 0.0));
  });
}

Var smooth_l1(Graph& g, Var pred, const Tensor& target, double beta) {
  const Tensor& pv = g.value(pred);
  require_same(pv, target, "smooth_l1");
  double total = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double a = std::abs(pv[i] - target[i]);
    total += a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
  }
  return g.push(Tensor::scalar(total), {pred}, [pred, target, beta](Graph& g, const Tensor& go) {
    Tensor* s = g.grad_sink(pred);
    if (!s) return;
    const Tensor& pv = g.value(pred);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double d = pv[i] - target[i];
      const double gd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      (*s)[i] += go[0] * gd;
    }
  });
}

}  // namespace mtdet
