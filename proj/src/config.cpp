// SPDX-License-Identifier: Apache-2.0
#include "mtdet/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mtdet {

using Json = nlohmann::ordered_json;

namespace {

Json scene_json(const SceneSpec& s) {
  Json classes = Json::array();
  for (const ClassSpec& c : s.classes) classes.push_back({{"shape", kind_name(c.kind)}, {"hue_lo", c.hue_lo}, {"hue_hi", c.hue_hi}});
  return {{"image_h", s.image_h},       {"image_w", s.image_w},     {"classes", classes},
          {"min_objects", s.min_objects}, {"max_objects", s.max_objects}, {"min_size", s.min_size},
          {"max_size", s.max_size},     {"max_aspect", s.max_aspect}, {"noise", s.noise},
          {"gradient", s.gradient},     {"max_pair_iou", s.max_pair_iou}, {"max_retries", s.max_retries}};
}

Json to_document(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  const DetectorConfig& d = t.detector;
  const DetectorSettings& r = t.settings;
  Json j;
  j["run_name"] = c.run_name;
  j["out_dir"] = c.out_dir;
  j["checkpoint_every"] = c.checkpoint_every;
  j["corpus"] = {{"dir", c.corpus.dir},
                 {"train_count", c.corpus.train_count},
                 {"eval_count", c.corpus.eval_count},
                 {"seed", c.corpus.seed}};
  j["scene"] = scene_json(c.scene);
  j["split"] = {{"fraction", c.split.fraction}, {"seed", c.split.seed}};
  j["train"] = {{"beta", t.beta},
                {"alpha", t.alpha},
                {"n_proposals", t.n_proposals},
                {"theta", t.theta},
                {"label_mode", to_string(t.label_mode)},
                {"update_rule", to_string(t.update_rule)},
                {"copy_every", t.copy_every},
                {"ensemble_mode", to_string(t.ensemble)},
                {"unsup_localization", t.unsup_localization},
                {"burn_in_iters", t.burn_in_iters},
                {"total_iters", t.total_iters},
                {"lr", t.lr},
                {"momentum", t.momentum},
                {"n_labeled", t.n_labeled},
                {"n_unlabeled", t.n_unlabeled},
                {"seed", t.seed},
                {"eval_every", t.eval_every},
                {"log_every", t.log_every},
                {"hard_nms", t.hard_nms},
                {"eval_score_thresh", t.eval_score_thresh},
                {"eval_nms", t.eval_nms}};
  j["detector"] = {{"channels", d.channels},
                   {"rpn_channels", d.rpn_channels},
                   {"pool_size", d.pool_size},
                   {"hidden", d.hidden},
                   {"anchor_stride", d.anchors.stride},
                   {"anchor_scales", d.anchors.scales},
                   {"anchor_aspects", d.anchors.aspects}};
  j["rcnn"] = {{"rpn_pos_iou", r.rpn_pos_iou},
               {"rpn_neg_iou", r.rpn_neg_iou},
               {"rpn_batch", r.rpn_batch},
               {"rpn_pos_fraction", r.rpn_pos_fraction},
               {"roi_fg_iou", r.roi_fg_iou},
               {"roi_batch", r.roi_batch},
               {"roi_fg_fraction", r.roi_fg_fraction},
               {"train_proposals", r.train_proposals},
               {"test_proposals", r.test_proposals},
               {"rpn_nms", r.rpn_nms},
               {"max_detections", r.max_detections}};
  j["weak_aug"] = {{"scales", t.weak.scales}, {"size_multiple", t.weak.size_multiple}, {"flip_prob", t.weak.flip_prob}};
  return j;
}

bool same_kind(const Json& a, const Json& b) {
  if (a.is_number() && b.is_number()) {
    // Integer fields reject fractional values.
    if (a.is_number_integer() && b.is_number_float()) return false;
    return true;
  }
  return a.type() == b.type();
}

void check_class_entry(const Json& e, const std::string& path) {
  if (!e.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = e.begin(); it != e.end(); ++it) {
    const std::string& k = it.key();
    if (k == "shape") {
      if (!it->is_string()) throw ConfigError(path + ".shape: expected a string");
    } else if (k == "hue_lo" || k == "hue_hi") {
      if (!it->is_number()) throw ConfigError(path + "." + k + ": expected a number");
    } else {
      throw ConfigError(path + ": unknown key '" + k + "'");
    }
  }
  if (!e.contains("shape")) throw ConfigError(path + ": missing 'shape'");
}

void check_array(const Json& def, const Json& val, const std::string& path) {
  if (path == "scene.classes") {
    for (std::size_t i = 0; i < val.size(); ++i) check_class_entry(val[i], path + "[" + std::to_string(i) + "]");
    return;
  }
  const Json& proto = def.empty() ? Json(0.0) : def[0];
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (!same_kind(proto, val[i])) throw ConfigError(path + "[" + std::to_string(i) + "]: wrong element type");
  }
}

// Overlays `src` onto `dst`, whose keys define the schema.
void merge_strict(Json& dst, const Json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError((path.empty() ? "document" : path) + ": expected an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown key '" + key + "'");
    Json& slot = dst[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, *it, key);
    } else if (slot.is_array()) {
      if (!it->is_array()) throw ConfigError(key + ": expected an array");
      check_array(slot, *it, key);
      slot = *it;
    } else {
      if (!same_kind(slot, *it)) throw ConfigError(key + ": expected " + std::string(slot.type_name()));
      if (slot.is_number_integer() && it->is_number_integer() && slot.is_number_unsigned() &&
          it->get<std::int64_t>() < 0) {
        throw ConfigError(key + ": must be non-negative");
      }
      slot = *it;
    }
  }
}

std::string env_name(const std::string& path) {
  std::string out = "MTDET_";
  for (char ch : path) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

// Environment overrides for every leaf of the schema. Values are read as JSON
// when they parse, otherwise as strings.
bool apply_env(Json& doc, const Json& schema, const std::string& path, const EnvLookup& env, bool* beta_set) {
  bool any = false;
  for (auto it = schema.begin(); it != schema.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (it->is_object()) {
      any = apply_env(doc[it.key()], *it, key, env, beta_set) || any;
      continue;
    }
    const std::optional<std::string> raw = env(env_name(key));
    if (!raw) continue;
    Json value = Json::parse(*raw, nullptr, false);
    if (value.is_discarded()) value = *raw;
    Json patch;
    patch[it.key()] = value;
    try {
      merge_strict(doc, patch, path);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(e.what()) + " (from " + env_name(key) + ")");
    }
    if (key == "train.beta") *beta_set = true;
    any = true;
  }
  return any;
}

template <typename T>
T get(const Json& j, const char* key) {
  return j.at(key).get<T>();
}

ExperimentConfig from_document(const Json& j, bool beta_set) {
  ExperimentConfig c;
  try {
    c.run_name = get<std::string>(j, "run_name");
    c.out_dir = get<std::string>(j, "out_dir");
    c.checkpoint_every = get<int>(j, "checkpoint_every");

    const Json& co = j.at("corpus");
    c.corpus.dir = get<std::string>(co, "dir");
    c.corpus.train_count = get<int>(co, "train_count");
    c.corpus.eval_count = get<int>(co, "eval_count");
    c.corpus.seed = get<std::uint64_t>(co, "seed");

    const Json& s = j.at("scene");
    c.scene.image_h = get<int>(s, "image_h");
    c.scene.image_w = get<int>(s, "image_w");
    c.scene.classes.clear();
    for (const Json& e : s.at("classes")) {
      ClassSpec cs;
      try {
        cs.kind = kind_from(e.at("shape").get<std::string>());
      } catch (const DataError& err) {
        throw ConfigError(std::string("scene.classes: ") + err.what());
      }
      cs.hue_lo = e.value("hue_lo", 0.0);
      cs.hue_hi = e.value("hue_hi", 360.0);
      c.scene.classes.push_back(cs);
    }
    c.scene.min_objects = get<int>(s, "min_objects");
    c.scene.max_objects = get<int>(s, "max_objects");
    c.scene.min_size = get<double>(s, "min_size");
    c.scene.max_size = get<double>(s, "max_size");
    c.scene.max_aspect = get<double>(s, "max_aspect");
    c.scene.noise = get<double>(s, "noise");
    c.scene.gradient = get<double>(s, "gradient");
    c.scene.max_pair_iou = get<double>(s, "max_pair_iou");
    c.scene.max_retries = get<int>(s, "max_retries");

    c.split.fraction = get<double>(j.at("split"), "fraction");
    c.split.seed = get<std::uint64_t>(j.at("split"), "seed");

    const Json& t = j.at("train");
    TrainConfig& tc = c.train;
    try {
      tc.label_mode = label_mode_from(get<std::string>(t, "label_mode"));
      tc.update_rule = update_rule_from(get<std::string>(t, "update_rule"));
      tc.ensemble = ensemble_mode_from(get<std::string>(t, "ensemble_mode"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }
    tc.beta = get<double>(t, "beta");
    // Hard labels default to a smaller unsupervised weight.
    if (!beta_set && tc.label_mode == LabelMode::kHard) tc.beta = 0.1;
    tc.alpha = get<double>(t, "alpha");
    tc.n_proposals = get<int>(t, "n_proposals");
    tc.theta = get<double>(t, "theta");
    tc.copy_every = get<int>(t, "copy_every");
    tc.unsup_localization = get<bool>(t, "unsup_localization");
    tc.burn_in_iters = get<int>(t, "burn_in_iters");
    tc.total_iters = get<int>(t, "total_iters");
    tc.lr = get<double>(t, "lr");
    tc.momentum = get<double>(t, "momentum");
    tc.n_labeled = get<int>(t, "n_labeled");
    tc.n_unlabeled = get<int>(t, "n_unlabeled");
    tc.seed = get<std::uint64_t>(t, "seed");
    tc.eval_every = get<int>(t, "eval_every");
    tc.log_every = get<int>(t, "log_every");
    tc.hard_nms = get<double>(t, "hard_nms");
    tc.eval_score_thresh = get<double>(t, "eval_score_thresh");
    tc.eval_nms = get<double>(t, "eval_nms");

    const Json& d = j.at("detector");
    tc.detector.num_classes = static_cast<int>(c.scene.classes.size());
    tc.detector.channels = d.at("channels").get<std::vector<int>>();
    tc.detector.rpn_channels = get<int>(d, "rpn_channels");
    tc.detector.pool_size = get<int>(d, "pool_size");
    tc.detector.hidden = get<int>(d, "hidden");
    tc.detector.anchors.stride = get<int>(d, "anchor_stride");
    tc.detector.anchors.scales = d.at("anchor_scales").get<std::vector<double>>();
    tc.detector.anchors.aspects = d.at("anchor_aspects").get<std::vector<double>>();

    const Json& r = j.at("rcnn");
    DetectorSettings& ds = tc.settings;
    ds.rpn_pos_iou = get<double>(r, "rpn_pos_iou");
    ds.rpn_neg_iou = get<double>(r, "rpn_neg_iou");
    ds.rpn_batch = get<int>(r, "rpn_batch");
    ds.rpn_pos_fraction = get<double>(r, "rpn_pos_fraction");
    ds.roi_fg_iou = get<double>(r, "roi_fg_iou");
    ds.roi_batch = get<int>(r, "roi_batch");
    ds.roi_fg_fraction = get<double>(r, "roi_fg_fraction");
    ds.train_proposals = get<int>(r, "train_proposals");
    ds.test_proposals = get<int>(r, "test_proposals");
    ds.rpn_nms = get<double>(r, "rpn_nms");
    ds.max_detections = get<int>(r, "max_detections");

    const Json& w = j.at("weak_aug");
    tc.weak.scales = w.at("scales").get<std::vector<double>>();
    tc.weak.size_multiple = get<int>(w, "size_multiple");
    tc.weak.flip_prob = get<double>(w, "flip_prob");
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

ExperimentConfig resolve(const Json* user, const EnvLookup& env) {
  const Json schema = to_document(ExperimentConfig{});
  Json doc = schema;
  bool beta_set = false;
  if (user) {
    merge_strict(doc, *user, "");
    beta_set = user->contains("train") && (*user)["train"].is_object() && (*user)["train"].contains("beta");
  }
  if (env) apply_env(doc, schema, "", env, &beta_set);
  return from_document(doc, beta_set);
}

}  // namespace

EnvLookup process_env() {
  return [](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  };
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.run_name.empty()) fail("run_name must not be empty");
  if (c.checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (c.corpus.train_count < 1) fail("corpus.train_count must be >= 1");
  if (c.corpus.eval_count < 1) fail("corpus.eval_count must be >= 1");
  if (!(c.split.fraction > 0.0 && c.split.fraction <= 1.0)) fail("split.fraction must be in (0, 1]");
  const SceneSpec& s = c.scene;
  if (s.classes.empty()) fail("scene.classes must not be empty");
  for (const ClassSpec& k : s.classes)
    if (!(k.hue_lo >= 0 && k.hue_lo < k.hue_hi && k.hue_hi <= 360)) fail("scene.classes: hue range must satisfy 0 <= lo < hi <= 360");
  if (s.image_h < 8 || s.image_w < 8) fail("scene image sides must be >= 8");
  if (s.min_objects < 0 || s.max_objects < s.min_objects) fail("scene object counts must satisfy 0 <= min <= max");
  if (!(s.min_size > 1 && s.max_size >= s.min_size)) fail("scene sizes must satisfy 1 < min <= max");
  if (s.max_size > std::min(s.image_h, s.image_w)) fail("scene.max_size exceeds the image");
  if (s.max_aspect < 1) fail("scene.max_aspect must be >= 1");
  if (s.noise < 0 || s.gradient < 0) fail("scene noise and gradient must be >= 0");
  if (!(s.max_pair_iou >= 0 && s.max_pair_iou <= 1)) fail("scene.max_pair_iou must be in [0, 1]");
  if (s.max_retries < 1) fail("scene.max_retries must be >= 1");
  const TrainConfig& t = c.train;
  const DetectorConfig& d = t.detector;
  if (d.channels.empty()) fail("detector.channels must not be empty");
  for (int ch : d.channels)
    if (ch < 1) fail("detector.channels entries must be >= 1");
  if (d.rpn_channels < 1 || d.pool_size < 1 || d.hidden < 1) fail("detector sizes must be >= 1");
  if (d.anchors.stride != d.total_stride()) {
    fail("detector.anchor_stride must equal the backbone stride " + std::to_string(d.total_stride()));
  }
  if (d.anchors.scales.empty() || d.anchors.aspects.empty()) fail("detector anchors must not be empty");
  for (double v : d.anchors.scales)
    if (v <= 0) fail("detector.anchor_scales must be > 0");
  for (double v : d.anchors.aspects)
    if (v <= 0) fail("detector.anchor_aspects must be > 0");
  if (s.image_h % d.total_stride() != 0 || s.image_w % d.total_stride() != 0) {
    fail("scene image sides must be multiples of the backbone stride");
  }
  if (t.weak.scales.empty()) fail("weak_aug.scales must not be empty");
  for (double v : t.weak.scales)
    if (v <= 0) fail("weak_aug.scales must be > 0");
  if (t.weak.size_multiple < 1 || t.weak.size_multiple % d.total_stride() != 0) {
    fail("weak_aug.size_multiple must be a positive multiple of the backbone stride");
  }
  if (!(t.weak.flip_prob >= 0 && t.weak.flip_prob <= 1)) fail("weak_aug.flip_prob must be in [0, 1]");
  const DetectorSettings& r = t.settings;
  if (!(r.rpn_neg_iou <= r.rpn_pos_iou && r.rpn_neg_iou >= 0 && r.rpn_pos_iou <= 1)) fail("rcnn: need 0 <= rpn_neg_iou <= rpn_pos_iou <= 1");
  if (r.rpn_batch < 1 || r.roi_batch < 1 || r.train_proposals < 1 || r.test_proposals < 1 || r.max_detections < 1) {
    fail("rcnn batch and proposal counts must be >= 1");
  }
  if (!(r.rpn_pos_fraction > 0 && r.rpn_pos_fraction <= 1 && r.roi_fg_fraction > 0 && r.roi_fg_fraction <= 1)) {
    fail("rcnn fractions must be in (0, 1]");
  }
  if (!(r.roi_fg_iou > 0 && r.roi_fg_iou <= 1)) fail("rcnn.roi_fg_iou must be in (0, 1]");
  if (!(r.rpn_nms > 0 && r.rpn_nms <= 1)) fail("rcnn.rpn_nms must be in (0, 1]");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("train: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text, const EnvLookup& env) {
  const Json user = Json::parse(text, nullptr, false);
  if (user.is_discarded()) throw ConfigError("config: not valid JSON");
  return resolve(&user, env);
}

ExperimentConfig load_config(const std::filesystem::path& path, const EnvLookup& env) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), env);
}

ExperimentConfig default_config(const EnvLookup& env) { return resolve(nullptr, env); }

std::string to_json(const ExperimentConfig& c) { return to_document(c).dump(2) + "\n"; }

}  // namespace mtdet
