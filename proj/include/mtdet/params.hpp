// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mtdet/autodiff.hpp"
#include "mtdet/tensor.hpp"

namespace mtdet {

/// Named tensors in insertion order, plus free-form string metadata that
/// travels with the serialized form.
class ParamSet {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t numel() const;

  /// Same names in the same order with the same shapes.
  bool compatible_with(const ParamSet& other) const;

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }

  void save(std::ostream& os) const;
  static ParamSet load(std::istream& is);
  void save_file(const std::string& path) const;
  static ParamSet load_file(const std::string& path);

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::string> meta_;
};

/// Binds each parameter of a ParamSet as a differentiable leaf of a graph.
class BoundParams {
 public:
  BoundParams(Graph& g, const ParamSet& params, bool trainable);
  Var operator[](const std::string& name) const;
  /// Gradients after g.backward(), as a ParamSet aligned with the source.
  ParamSet gradients(const Graph& g) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, Var> vars_;
};

/// He-uniform initialisation: U(-b, b) with b = sqrt(6 / fan_in).
Tensor he_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng);

/// SGD with momentum; buffers are created on first use.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  /// v <- momentum * v + g;  w <- w - lr * v.
  void step(ParamSet& params, const ParamSet& grads);

  const ParamSet& buffers() const { return velocity_; }
  void set_buffers(ParamSet v) { velocity_ = std::move(v); }
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  ParamSet velocity_;
};

/// teacher <- alpha * teacher + (1 - alpha) * student, elementwise.
void ema_update(ParamSet& teacher, const ParamSet& student, double alpha);

/// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
/// `analytic` is the gradient of f at `point`. When `max_coords` is positive,
/// that many coordinates per tensor are sampled with `seed`; otherwise every
/// coordinate is checked.
double finite_diff_check(const std::function<double(const ParamSet&)>& f, const ParamSet& point,
                         const ParamSet& analytic, double eps, int max_coords = 0, std::uint64_t seed = 0);

}  // namespace mtdet
