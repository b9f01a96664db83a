// SPDX-License-Identifier: Apache-2.0
#include "mtdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "mtdet/rng.hpp"

namespace mtdet {

namespace {

constexpr int kSuper = 4;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool inside(ShapeKind kind, const Box& b, double x, double y) {
  switch (kind) {
    case ShapeKind::kSquare:
      return x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
    case ShapeKind::kDisc: {
      const double u = (x - b.cx()) / (0.5 * b.width());
      const double v = (y - b.cy()) / (0.5 * b.height());
      return u * u + v * v <= 1.0;
    }
    case ShapeKind::kTriangle: {
      if (y < b.y1 || y > b.y2) return false;
      const double half = 0.5 * b.width() * (y - b.y1) / b.height();
      return std::abs(x - b.cx()) <= half;
    }
  }
  return false;
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0) / 60.0;
  const int i = static_cast<int>(h);
  const double f = h - i;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kDisc: return "disc";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "?";
}

ShapeKind kind_from(const std::string& s) {
  if (s == "disc") return ShapeKind::kDisc;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "triangle") return ShapeKind::kTriangle;
  throw DataError("unknown shape kind '" + s + "'");
}

std::string SceneSpec::canonical() const {
  std::ostringstream os;
  os << std::setprecision(17) << "h=" << image_h << " w=" << image_w << " classes=";
  for (std::size_t i = 0; i < classes.size(); ++i) {
    os << (i ? "," : "") << kind_name(classes[i].kind) << ":" << classes[i].hue_lo << ":" << classes[i].hue_hi;
  }
  os << " objects=" << min_objects << ":" << max_objects << " size=" << min_size << ":" << max_size
     << " aspect=" << max_aspect << " noise=" << noise << " gradient=" << gradient << " pair_iou=" << max_pair_iou
     << " retries=" << max_retries;
  return os.str();
}

std::uint64_t SceneSpec::hash() const { return fnv1a(canonical()); }

namespace {

SceneSpec parse_spec(const std::string& line) {
  SceneSpec s;
  s.classes.clear();
  std::istringstream is(line);
  std::string tok;
  auto pair = [](const std::string& v, auto& a, auto& b) {
    const auto c = v.find(':');
    if (c == std::string::npos) throw DataError("corpus spec: malformed pair '" + v + "'");
    std::istringstream(v.substr(0, c)) >> a;
    std::istringstream(v.substr(c + 1)) >> b;
  };
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw DataError("corpus spec: malformed token '" + tok + "'");
    const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
    if (k == "h") s.image_h = std::stoi(v);
    else if (k == "w") s.image_w = std::stoi(v);
    else if (k == "classes") {
      std::istringstream cs(v);
      std::string item;
      while (std::getline(cs, item, ',')) {
        std::istringstream parts(item);
        std::string kind, lo, hi;
        std::getline(parts, kind, ':');
        std::getline(parts, lo, ':');
        std::getline(parts, hi, ':');
        s.classes.push_back({kind_from(kind), std::stod(lo), std::stod(hi)});
      }
    } else if (k == "objects") pair(v, s.min_objects, s.max_objects);
    else if (k == "size") pair(v, s.min_size, s.max_size);
    else if (k == "aspect") s.max_aspect = std::stod(v);
    else if (k == "noise") s.noise = std::stod(v);
    else if (k == "gradient") s.gradient = std::stod(v);
    else if (k == "pair_iou") s.max_pair_iou = std::stod(v);
    else if (k == "retries") s.max_retries = std::stoi(v);
    else throw DataError("corpus spec: unknown key '" + k + "'");
  }
  return s;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  if (spec.classes.empty() || spec.min_objects < 0 || spec.max_objects < spec.min_objects ||
      spec.min_size <= 0 || spec.max_size < spec.min_size || spec.max_aspect < 1.0) {
    throw DataError("generate_scene: invalid scene spec");
  }
  const int h = spec.image_h, w = spec.image_w;
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Scene scene;
  scene.image = Tensor({3, h, w});

  // Background: per-channel base level plus a linear ramp and pixel noise.
  const double angle = uni(0.0, 2.0 * M_PI);
  const double gx = std::cos(angle), gy = std::sin(angle);
  std::normal_distribution<double> noise(0.0, std::max(spec.noise, 1e-300));
  for (int c = 0; c < 3; ++c) {
    const double base = uni(70.0, 180.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ramp = spec.gradient * ((x + 0.5) / w - 0.5) * gx + spec.gradient * ((y + 0.5) / h - 0.5) * gy;
        scene.image.at(c, y, x) = base + ramp + (spec.noise > 0 ? noise(rng) : 0.0);
      }
  }

  const int count = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
  for (int n = 0; n < count; ++n) {
    GtObject obj;
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
      const double size = uni(spec.min_size, spec.max_size);
      const double aspect = std::exp(uni(-std::log(spec.max_aspect), std::log(spec.max_aspect)));
      const double bw = std::min(size * std::sqrt(aspect), w - 2.0);
      const double bh = std::min(size / std::sqrt(aspect), h - 2.0);
      const double x1 = uni(1.0, w - 1.0 - bw);
      const double y1 = uni(1.0, h - 1.0 - bh);
      obj.box = {x1, y1, x1 + bw, y1 + bh};
      placed = std::all_of(scene.gt.begin(), scene.gt.end(),
                           [&](const GtObject& o) { return iou(o.box, obj.box) <= spec.max_pair_iou; });
    }
    if (!placed) throw DataError("generate_scene: cannot place object " + std::to_string(n) + " under the overlap rule");
    obj.class_id = std::uniform_int_distribution<int>(0, static_cast<int>(spec.classes.size()) - 1)(rng);
    const ClassSpec& cls = spec.classes[obj.class_id];
    const auto rgb = hsv_to_rgb(uni(cls.hue_lo, cls.hue_hi), uni(0.6, 1.0), uni(0.55, 1.0));

    const Box& b = obj.box;
    const int px0 = static_cast<int>(std::floor(b.x1)), px1 = static_cast<int>(std::ceil(b.x2));
    const int py0 = static_cast<int>(std::floor(b.y1)), py1 = static_cast<int>(std::ceil(b.y2));
    for (int y = py0; y < py1; ++y)
      for (int x = px0; x < px1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx)
            hits += inside(cls.kind, b, x + (sx + 0.5) / kSuper, y + (sy + 0.5) / kSuper) ? 1 : 0;
        if (!hits) continue;
        const double cov = static_cast<double>(hits) / (kSuper * kSuper);
        for (int c = 0; c < 3; ++c) {
          double& v = scene.image.at(c, y, x);
          v = (1 - cov) * v + cov * 255.0 * rgb[c];
        }
      }
    scene.gt.push_back(obj);
  }

  for (double& v : scene.image.values()) v = std::clamp(std::round(v), 0.0, 255.0);
  return scene;
}

DatasetSplit split_dataset(int corpus_size, double fraction, std::uint64_t seed, int n_eval) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw DataError("split_dataset: fraction must be in (0, 1]");
  if (n_eval < 0 || n_eval >= corpus_size) throw DataError("split_dataset: n_eval must be in [0, corpus size)");
  const int pool = corpus_size - n_eval;
  const int n_labeled = static_cast<int>(std::lround(fraction * pool));
  if (n_labeled < 1) throw DataError("split_dataset: labeled fraction yields no labeled scenes");

  DatasetSplit s;
  s.seed = seed;
  s.fraction = fraction;
  std::vector<int> ids(corpus_size);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 eval_rng(derive_seed(0x5eedE7A1ULL, {static_cast<std::uint64_t>(corpus_size),
                                                       static_cast<std::uint64_t>(n_eval)}));
  std::shuffle(ids.begin(), ids.end(), eval_rng);
  s.eval.assign(ids.begin(), ids.begin() + n_eval);
  std::vector<int> rest(ids.begin() + n_eval, ids.end());
  std::sort(rest.begin(), rest.end());
  std::mt19937_64 rng(seed);
  std::shuffle(rest.begin(), rest.end(), rng);
  s.labeled.assign(rest.begin(), rest.begin() + n_labeled);
  s.unlabeled.assign(rest.begin() + n_labeled, rest.end());
  std::sort(s.eval.begin(), s.eval.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  return s;
}

Corpus generate_corpus(const SceneSpec& spec, int count, std::uint64_t seed) {
  Corpus c;
  c.spec = spec;
  c.seed = seed;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(i)});
    c.scene_seeds.push_back(s);
    c.scenes.push_back(generate_scene(s, spec));
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  std::ofstream gt(dir / "gt.txt", std::ios::trunc);
  std::ofstream images(dir / "images.bin", std::ios::binary | std::ios::trunc);
  if (!manifest || !gt || !images) throw DataError("save_corpus: cannot write to " + dir.string());

  const std::uint64_t hash = corpus.spec.hash();
  manifest << "mtdet-corpus 1\n";
  manifest << "seed " << corpus.seed << "\n";
  manifest << "count " << corpus.size() << "\n";
  manifest << "spec " << corpus.spec.canonical() << "\n";
  gt << std::setprecision(17);
  const int h = corpus.spec.image_h, w = corpus.spec.image_w;
  std::vector<unsigned char> block(static_cast<std::size_t>(h) * w * 3);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const Scene& s = corpus.scenes[i];
    manifest << "scene " << i << " " << corpus.scene_seeds[i] << " " << std::hex << hash << std::dec << " "
             << s.gt.size() << "\n";
    for (const GtObject& o : s.gt) {
      gt << i << " " << o.class_id << " " << o.box.x1 << " " << o.box.y1 << " " << o.box.x2 << " " << o.box.y2 << "\n";
    }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          block[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<unsigned char>(s.image.at(c, y, x));
    images.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size()));
  }
  if (!manifest || !gt || !images) throw DataError("save_corpus: write failed in " + dir.string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  std::ifstream gt(dir / "gt.txt");
  std::ifstream images(dir / "images.bin", std::ios::binary);
  if (!manifest || !gt || !images) throw DataError("load_corpus: no corpus archive in " + dir.string());

  Corpus c;
  std::string line, word;
  std::getline(manifest, line);
  if (line != "mtdet-corpus 1") throw DataError("load_corpus: unsupported manifest header '" + line + "'");
  std::size_t count = 0;
  while (std::getline(manifest, line)) {
    std::istringstream is(line);
    is >> word;
    if (word == "seed") {
      is >> c.seed;
    } else if (word == "count") {
      is >> count;
    } else if (word == "spec") {
      c.spec = parse_spec(line.substr(5));
    } else if (word == "scene") {
      std::size_t id = 0;
      std::uint64_t seed = 0;
      std::string hash;
      is >> id >> seed >> hash;
      if (id != c.scene_seeds.size()) throw DataError("load_corpus: scene ids out of order");
      std::ostringstream expect;
      expect << std::hex << c.spec.hash();
      if (hash != expect.str()) throw DataError("load_corpus: spec hash mismatch for scene " + std::to_string(id));
      c.scene_seeds.push_back(seed);
    }
  }
  if (c.scene_seeds.size() != count) throw DataError("load_corpus: manifest count does not match scene lines");

  const int h = c.spec.image_h, w = c.spec.image_w;
  std::vector<unsigned char> block(static_cast<std::size_t>(h) * w * 3);
  c.scenes.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!images.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()))) {
      throw DataError("load_corpus: images.bin truncated at scene " + std::to_string(i));
    }
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = block[(static_cast<std::size_t>(y) * w + x) * 3 + ch];
    c.scenes[i].image = std::move(img);
  }
  std::size_t id = 0;
  GtObject o;
  while (gt >> id >> o.class_id >> o.box.x1 >> o.box.y1 >> o.box.x2 >> o.box.y2) {
    if (id >= count) throw DataError("load_corpus: gt record for unknown scene " + std::to_string(id));
    c.scenes[id].gt.push_back(o);
  }
  return c;
}

double mean_pixel(const Corpus& corpus, const std::vector<int>& ids) {
  double total = 0;
  std::size_t n = 0;
  for (int id : ids) {
    for (double v : corpus.scenes.at(id).image.values()) total += v;
    n += corpus.scenes.at(id).image.size();
  }
  return n ? total / n : 127.5;
}

}  // namespace mtdet
