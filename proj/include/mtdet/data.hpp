// SPDX-License-Identifier: Apache-2.0
//
// Synthetic shapes corpus: seeded scene rendering, labeled/unlabeled/eval
// splitting and an on-disk archive.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtdet/detector.hpp"
#include "mtdet/tensor.hpp"

namespace mtdet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ShapeKind { kDisc, kSquare, kTriangle };

const char* kind_name(ShapeKind k);
/// Throws DataError for an unknown name.
ShapeKind kind_from(const std::string& s);

struct ClassSpec {
  ShapeKind kind = ShapeKind::kDisc;
  double hue_lo = 0.0;  // degrees; object hue drawn from [hue_lo, hue_hi)
  double hue_hi = 360.0;
  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct SceneSpec {
  int image_h = 64;
  int image_w = 64;
  std::vector<ClassSpec> classes{{ShapeKind::kDisc}, {ShapeKind::kSquare}, {ShapeKind::kTriangle}};
  int min_objects = 1;
  int max_objects = 3;
  double min_size = 12.0;
  double max_size = 28.0;
  double max_aspect = 1.25;  // width/height drawn from [1/max_aspect, max_aspect]
  double noise = 6.0;        // background noise std, pixel units
  double gradient = 40.0;    // background gradient amplitude, pixel units
  double max_pair_iou = 0.3;
  int max_retries = 200;

  /// Stable text form; its FNV-1a hash identifies the spec in manifests.
  std::string canonical() const;
  std::uint64_t hash() const;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct Scene {
  Tensor image;  // {3, H, W}, integer-valued in [0, 255]
  GroundTruth gt;
};

/// Renders 4x4-supersampled shapes over a noisy gradient background. Throws
/// DataError when the overlap rule cannot be met within max_retries.
Scene generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct DatasetSplit {
  std::vector<int> labeled;
  std::vector<int> unlabeled;
  std::vector<int> eval;
  std::uint64_t seed = 0;
  double fraction = 0;
};

/// The eval ids depend only on (corpus_size, n_eval) so every split seed and
/// fraction shares one held-out set; labeled ids are then drawn uniformly from
/// the rest with `seed`. Labeled count = round(fraction * (corpus - n_eval)).
DatasetSplit split_dataset(int corpus_size, double fraction, std::uint64_t seed, int n_eval);

struct Corpus {
  SceneSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> scene_seeds;
  std::vector<Scene> scenes;

  std::size_t size() const { return scenes.size(); }
};

/// Scene i is rendered from derive_seed(seed, {i}).
Corpus generate_corpus(const SceneSpec& spec, int count, std::uint64_t seed);

/// Archive layout in `dir`:
///   manifest.txt  "mtdet-corpus 1" header, spec line, then one
///                 "scene <id> <seed> <spec_hash> <n_objects>" line per scene
///   gt.txt        "<id> <class> <x1> <y1> <x2> <y2>" per object
///   images.bin    H*W*3 bytes per scene, HWC order, scene id order
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

/// Mean pixel value over all scenes and channels.
double mean_pixel(const Corpus& corpus, const std::vector<int>& ids);

}  // namespace mtdet
