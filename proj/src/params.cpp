// SPDX-License-Identifier: Apache-2.0
#include "mtdet/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace mtdet {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'D', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("params: truncated stream");
  return v;
}

std::string get_str(std::istream& is) {
  const std::uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("params: implausible string length");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw std::runtime_error("params: truncated stream");
  return s;
}

}  // namespace

void ParamSet::add(const std::string& name, Tensor value) {
  if (tensors_.count(name)) throw std::invalid_argument("params: duplicate name " + name);
  names_.push_back(name);
  tensors_.emplace(name, std::move(value));
}

bool ParamSet::contains(const std::string& name) const { return tensors_.count(name) > 0; }

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("params: no parameter " + name);
  return it->second;
}

Tensor& ParamSet::get(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("params: no parameter " + name);
  return it->second;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.size();
  return n;
}

bool ParamSet::compatible_with(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  return std::all_of(names_.begin(), names_.end(),
                     [&](const std::string& n) { return get(n).shape() == other.get(n).shape(); });
}

void ParamSet::save(std::ostream& os) const {
  os.write(kMagic, sizeof kMagic);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(meta_.size()));
  for (const auto& [k, v] : meta_) {
    put_str(os, k);
    put_str(os, v);
  }
  put_u32(os, static_cast<std::uint32_t>(names_.size()));
  for (const std::string& name : names_) {
    const Tensor& t = get(name);
    put_str(os, name);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("params: write failed");
}

ParamSet ParamSet::load(std::istream& is) {
  char magic[sizeof kMagic];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("params: bad magic");
  }
  const std::uint32_t version = get_u32(is);
  if (version != kVersion) throw std::runtime_error("params: unsupported version " + std::to_string(version));
  ParamSet ps;
  const std::uint32_t n_meta = get_u32(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = get_str(is);
    ps.meta_[k] = get_str(is);
  }
  const std::uint32_t n = get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = get_str(is);
    const std::uint32_t rank = get_u32(is);
    if (rank > 8) throw std::runtime_error("params: implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(is));
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
      throw std::runtime_error("params: truncated tensor " + name);
    }
    ps.add(name, std::move(t));
  }
  return ps;
}

void ParamSet::save_file(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("params: cannot open " + path + " for writing");
  save(os);
}

ParamSet ParamSet::load_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("params: cannot open " + path);
  return load(is);
}

BoundParams::BoundParams(Graph& g, const ParamSet& params, bool trainable) : names_(params.names()) {
  for (const std::string& n : names_) {
    vars_[n] = trainable ? g.leaf(params.get(n)) : g.constant(params.get(n));
  }
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("params: no parameter " + name);
  return it->second;
}

ParamSet BoundParams::gradients(const Graph& g) const {
  ParamSet grads;
  for (const std::string& n : names_) grads.add(n, g.grad(vars_.at(n)));
  return grads;
}

Tensor he_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

void SgdMomentum::step(ParamSet& params, const ParamSet& grads) {
  if (!params.compatible_with(grads)) throw ShapeError("sgd_step: gradients do not match parameters");
  if (velocity_.size() == 0) {
    for (const std::string& n : params.names()) velocity_.add(n, Tensor(params.get(n).shape(), 0.0));
  } else if (!velocity_.compatible_with(params)) {
    throw ShapeError("sgd_step: momentum buffers do not match parameters");
  }
  for (const std::string& n : params.names()) {
    Tensor& w = params.get(n);
    Tensor& v = velocity_.get(n);
    const Tensor& g = grads.get(n);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= lr_ * v[i];
    }
  }
}

void ema_update(ParamSet& teacher, const ParamSet& student, double alpha) {
  if (!teacher.compatible_with(student)) throw ShapeError("ema_update: teacher and student differ in structure");
  for (const std::string& n : teacher.names()) {
    Tensor& t = teacher.get(n);
    const Tensor& s = student.get(n);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

double finite_diff_check(const std::function<double(const ParamSet&)>& f, const ParamSet& point,
                         const ParamSet& analytic, double eps, int max_coords, std::uint64_t seed) {
  if (!point.compatible_with(analytic)) throw ShapeError("finite_diff_check: gradient layout mismatch");
  std::mt19937_64 rng(seed);
  double worst = 0;
  ParamSet probe = point;
  for (const std::string& name : point.names()) {
    const std::size_t n = point.get(name).size();
    std::vector<std::size_t> coords;
    if (max_coords > 0 && n > static_cast<std::size_t>(max_coords)) {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (int i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    } else {
      for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
    }
    for (std::size_t i : coords) {
      Tensor& t = probe.get(name);
      const double orig = t[i];
      t[i] = orig + eps;
      const double fp = f(probe);
      t[i] = orig - eps;
      const double fm = f(probe);
      t[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic.get(name)[i];
      worst = std::max(worst, std::abs(a - numeric) / (std::abs(a) + 1e-8));
    }
  }
  return worst;
}

}  // namespace mtdet
