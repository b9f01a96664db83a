// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records every op in creation order, which is already a topological
// order, so backward() is a single reverse sweep. Values that must not receive
// gradients (teacher outputs, pseudo-label targets) enter as constants or as
// plain Tensor arguments and never become nodes that require grad.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtdet/geometry.hpp"
#include "mtdet/tensor.hpp"

namespace mtdet {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  Var leaf(Tensor value);  // differentiable input

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Gradient of the last backward() loss w.r.t. v; zeros if v did not
  /// participate.
  Tensor grad(Var v) const;

  /// Reverse sweep from a scalar loss. Throws ShapeError for non-scalar loss.
  void backward(Var loss);

  // Op implementation interface.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  /// Gradient accumulator for an input; nullptr when it needs no gradient.
  Tensor* grad_sink(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---- elementwise / structural ----
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var sum(Graph& g, Var a);
Var relu(Graph& g, Var x);
Var reshape(Graph& g, Var x, Shape shape);
/// Rows indexed by `rows` (duplicates allowed).
Var select_rows(Graph& g, Var x, const std::vector<int>& rows);
/// For x of shape {N, 4*C}, picks the 4 columns of class cls[i] in row i -> {N, 4}.
Var gather_class_deltas(Graph& g, Var x, const std::vector<int>& cls);
/// {A*k, H, W} feature planes -> {H*W*A, k} rows ordered (y, x, a).
Var planes_to_rows(Graph& g, Var x, int k);

// ---- layers ----
/// x {N, in}, w {out, in}, b {out} -> {N, out}.
Var linear(Graph& g, Var x, Var w, Var b);
/// x {Cin, H, W}, k {Cout, Cin, kh, kw}, b {Cout} -> {Cout, Ho, Wo}.
Var conv2d(Graph& g, Var x, Var k, Var b, int stride, int pad);
/// Non-overlapping k x k max pooling on {C, H, W}.
Var max_pool2d(Graph& g, Var x, int k);
/// Max pooling of each proposal over an out x out bin grid of a {C, H, W}
/// feature map. Proposals are in image pixels; `stride` maps them to cells.
/// Result is {P, C*out*out}. Throws std::invalid_argument for a proposal that
/// does not overlap the feature map.
Var roi_pool(Graph& g, Var features, const std::vector<Box>& proposals, int stride, int out);

// ---- probabilistic / losses ----
/// Row-wise softmax over the last axis of {N, K}, max-subtracted.
Var softmax_rows(Graph& g, Var logits);
/// Sum over rows of KL(p_i || q_i). p is a detached target; q is floored at
/// 1e-12. Throws std::invalid_argument when a row of p or q is not
/// normalized within 1e-6.
Var kl_div(Graph& g, const Tensor& p, Var q);
/// Euclidean norm of (pred - target) over all elements. Gradient to pred only.
Var l2_residual_norm(Graph& g, Var pred, const Tensor& target);
/// Sum over rows i of ||pred_i - target_i||_2.
Var row_l2_norm_sum(Graph& g, Var pred, const Tensor& target);
/// Sum over rows of -log softmax(logits_i)[labels_i].
Var cross_entropy_rows(Graph& g, Var logits, const std::vector<int>& labels);
/// Sum of smooth-L1 over all elements of pred - target: quadratic below
/// `beta`, linear above.
Var smooth_l1(Graph& g, Var pred, const Tensor& target, double beta = 1.0 / 9.0);

// ---- detached helpers (no graph) ----
Tensor softmax_rows(const Tensor& logits);

}  // namespace mtdet
