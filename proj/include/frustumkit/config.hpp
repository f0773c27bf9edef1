#pragma once

// Documented key=value experiment configuration with [section] headers.
// Every run writes its fully resolved configuration next to its outputs,
// so a run is reproducible from (config, seed) alone.

#include <charconv>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/losses.hpp"
#include "frustumkit/models.hpp"
#include "frustumkit/synth.hpp"

namespace fk {

struct TrainParams {
  uint64_t seed = 1;
  int steps = 2000;
  int batch_size = 8;
  double lr = 0.001;
  int lr_halve_every = 2000;  // desk-scale default for the halving schedule
  double val_fraction = 0.1;
  bool mask_centralize = true;
  bool use_tnet = true;

  void validate() const {
    if (steps < 0 || batch_size < 1) throw ConfigError("bad steps/batch_size");
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction in [0,1)");
  }
};

struct ExperimentConfig {
  SceneSpec scene;
  AugmentConfig augment;
  BoxCodecConfig codec = BoxCodecConfig::kitti_default();
  ModelConfig model;
  LossOptions loss;
  TrainParams train;

  void validate() const {
    scene.validate();
    augment.validate();
    codec.validate();
    model.validate();
    loss.weights.validate();
    train.validate();
  }
};

// ---------------------------------------------------------------------------
// Generic key=value scanner

class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text) {
    ConfigMap cm;
    std::string section;
    detail::for_each_line(text, [&](std::string_view line, size_t line_no) {
      size_t hash = line.find('#');
      if (hash != std::string_view::npos) line = line.substr(0, hash);
      auto fields = detail::split_fields(line);
      if (fields.empty()) return;
      std::string_view trimmed = line.substr(fields.front().column - 1);
      while (!trimmed.empty() && (trimmed.back() == ' ' || trimmed.back() == '\t' ||
                                  trimmed.back() == '\r'))
        trimmed.remove_suffix(1);
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError("line " + std::to_string(line_no) + ": unterminated section");
        section = std::string(trimmed.substr(1, trimmed.size() - 2));
        return;
      }
      size_t eq = trimmed.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      std::string key(trimmed.substr(0, eq));
      while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
      std::vector<std::string> values;
      for (const auto& tok : detail::split_fields(trimmed.substr(eq + 1)))
        values.emplace_back(tok.text);
      cm.table_[section.empty() ? key : section + "." + key] = std::move(values);
    });
    return cm;
  }

  bool has(const std::string& key) const { return table_.count(key) > 0; }

  const std::vector<std::string>& tokens(const std::string& key) const {
    auto it = table_.find(key);
    if (it == table_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    const auto& v = tokens(key);
    if (v.size() != 1) throw ConfigError("key " + key + " expects one value");
    return v[0];
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return to_double(key, get_string(key, ""));
  }

  int64_t get_int(const std::string& key, int64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key, "");
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw ConfigError("key " + key + ": not an integer: " + s);
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key, "");
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key " + key + ": not a boolean: " + s);
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& s : tokens(key)) out.push_back(to_double(key, s));
    return out;
  }

  std::vector<size_t> get_sizes(const std::string& key, std::vector<size_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<size_t> out;
    for (double d : get_doubles(key, {})) {
      if (d < 0 || d != std::floor(d)) throw ConfigError("key " + key + ": expects sizes");
      out.push_back(static_cast<size_t>(d));
    }
    return out;
  }

  const std::map<std::string, std::vector<std::string>>& table() const { return table_; }

 private:
  static double to_double(const std::string& key, const std::string& s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw ConfigError("key " + key + ": not a number: " + s);
    return v;
  }

  std::map<std::string, std::vector<std::string>> table_;
};

// ---------------------------------------------------------------------------
// Experiment config <-> text

namespace detail {

inline BoxLossMode loss_mode_from_string(const std::string& s) {
  if (s == "regression_only") return BoxLossMode::RegressionOnly;
  if (s == "cls_reg") return BoxLossMode::ClsReg;
  if (s == "cls_reg_normalized") return BoxLossMode::ClsRegNormalized;
  throw ConfigError("unknown loss mode: " + s);
}

inline std::string to_string(BoxLossMode m) {
  switch (m) {
    case BoxLossMode::RegressionOnly: return "regression_only";
    case BoxLossMode::ClsReg: return "cls_reg";
    default: return "cls_reg_normalized";
  }
}

inline CornerAnchorMode anchor_mode_from_string(const std::string& s) {
  if (s == "literal") return CornerAnchorMode::Literal;
  if (s == "with_residuals") return CornerAnchorMode::WithResiduals;
  throw ConfigError("unknown corner anchor mode: " + s);
}

inline std::string to_string(CornerAnchorMode m) {
  return m == CornerAnchorMode::Literal ? "literal" : "with_residuals";
}

inline std::string fmt(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Standalone codec config file: bare keys "ns", "nh" and
// "template.<i> = h w l <category>".
inline BoxCodecConfig parse_codec_config(std::string_view text) {
  const ConfigMap cm = ConfigMap::parse(text);
  BoxCodecConfig cfg;
  cfg.size_templates.clear();
  cfg.num_heading_bins = static_cast<int>(cm.get_int("nh", 12));
  for (int i = 0;; ++i) {
    const std::string key = "template." + std::to_string(i);
    if (!cm.has(key)) break;
    const auto& toks = cm.tokens(key);
    if (toks.size() != 4) throw ConfigError(key + " expects: h w l category");
    SizeTemplate t;
    auto num = [&](const std::string& s) {
      double v;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{}) throw ConfigError(key + ": bad number " + s);
      return v;
    };
    t.h = num(toks[0]);
    t.w = num(toks[1]);
    t.l = num(toks[2]);
    t.category = toks[3];
    cfg.size_templates.push_back(t);
  }
  if (cm.has("ns") && cm.get_int("ns", 0) != cfg.ns())
    throw ConfigError("codec ns does not match the template count");
  cfg.validate();
  return cfg;
}

inline std::string write_codec_config(const BoxCodecConfig& cfg) {
  std::ostringstream out;
  out << "ns = " << cfg.ns() << "\n";
  out << "nh = " << cfg.nh() << "\n";
  for (int i = 0; i < cfg.ns(); ++i) {
    const auto& t = cfg.size_templates[i];
    out << "template." << i << " = " << detail::fmt(t.h) << " " << detail::fmt(t.w) << " "
        << detail::fmt(t.l) << " " << t.category << "\n";
  }
  return out.str();
}

inline ExperimentConfig parse_experiment_config(std::string_view text) {
  const ConfigMap cm = ConfigMap::parse(text);
  ExperimentConfig cfg;

  auto& sc = cfg.scene;
  sc.seed = static_cast<uint64_t>(cm.get_int("scene.seed", static_cast<int64_t>(sc.seed)));
  sc.min_objects = static_cast<int>(cm.get_int("scene.min_objects", sc.min_objects));
  sc.max_objects = static_cast<int>(cm.get_int("scene.max_objects", sc.max_objects));
  if (cm.has("scene.category_mix")) {
    sc.category_mix.clear();
    for (const auto& tok : cm.tokens("scene.category_mix")) {
      size_t colon = tok.find(':');
      if (colon == std::string::npos)
        throw ConfigError("category_mix entries look like Name:weight");
      double w = 0;
      auto sv = tok.substr(colon + 1);
      auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), w);
      if (ec != std::errc{}) throw ConfigError("bad category weight in " + tok);
      sc.category_mix.emplace_back(tok.substr(0, colon), w);
    }
  }
  sc.min_depth = cm.get_double("scene.min_depth", sc.min_depth);
  sc.max_depth = cm.get_double("scene.max_depth", sc.max_depth);
  sc.lateral_fraction = cm.get_double("scene.lateral_fraction", sc.lateral_fraction);
  sc.clutter_density = cm.get_double("scene.clutter_density", sc.clutter_density);
  sc.ground_sigma = cm.get_double("scene.ground_sigma", sc.ground_sigma);
  sc.ground_y = cm.get_double("scene.ground_y", sc.ground_y);
  sc.ground_points = static_cast<int>(cm.get_int("scene.ground_points", sc.ground_points));
  sc.points_at_10m = cm.get_double("scene.points_at_10m", sc.points_at_10m);
  sc.size_jitter = cm.get_double("scene.size_jitter", sc.size_jitter);
  sc.image_width = static_cast<int>(cm.get_int("scene.image_width", sc.image_width));
  sc.image_height = static_cast<int>(cm.get_int("scene.image_height", sc.image_height));
  sc.focal = cm.get_double("scene.focal", sc.focal);

  auto& au = cfg.augment;
  au.box2d_translate_frac = cm.get_double("augment.box2d_translate_frac", au.box2d_translate_frac);
  if (cm.has("augment.box2d_scale")) {
    auto v = cm.get_doubles("augment.box2d_scale", {});
    if (v.size() != 2) throw ConfigError("augment.box2d_scale expects two values");
    au.box2d_scale_min = v[0];
    au.box2d_scale_max = v[1];
  }
  au.flip_prob = cm.get_double("augment.flip_prob", au.flip_prob);
  au.depth_shift_range = cm.get_double("augment.depth_shift_range", au.depth_shift_range);
  au.n_frustum_points =
      static_cast<size_t>(cm.get_int("augment.n_frustum_points", au.n_frustum_points));
  au.n_mask_points = static_cast<size_t>(cm.get_int("augment.n_mask_points", au.n_mask_points));
  au.frustum_rotation = cm.get_bool("augment.frustum_rotation", au.frustum_rotation);

  if (cm.has("codec.nh")) cfg.codec.num_heading_bins = static_cast<int>(cm.get_int("codec.nh", 12));
  bool any_template = false;
  for (const auto& [key, value] : cm.table()) {
    if (key.rfind("codec.template.", 0) != 0) continue;
    if (!any_template) {
      cfg.codec.size_templates.clear();
      any_template = true;
    }
  }
  if (any_template) {
    for (int i = 0;; ++i) {
      const std::string key = "codec.template." + std::to_string(i);
      if (!cm.has(key)) break;
      const auto& toks = cm.tokens(key);
      if (toks.size() != 4) throw ConfigError(key + " expects: h w l category");
      SizeTemplate t;
      auto num = [&](const std::string& s) {
        double v;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{}) throw ConfigError(key + ": bad number " + s);
        return v;
      };
      t.h = num(toks[0]);
      t.w = num(toks[1]);
      t.l = num(toks[2]);
      t.category = toks[3];
      cfg.codec.size_templates.push_back(t);
    }
  }
  if (cm.has("codec.ns")) {
    const auto ns = cm.get_int("codec.ns", cfg.codec.ns());
    if (ns != cfg.codec.ns())
      throw ConfigError("codec.ns=" + std::to_string(ns) + " does not match " +
                        std::to_string(cfg.codec.ns()) + " templates");
  }

  auto& mo = cfg.model;
  mo.num_classes = static_cast<size_t>(cm.get_int("model.num_classes", mo.num_classes));
  mo.seg_use_intensity = cm.get_bool("model.seg_use_intensity", mo.seg_use_intensity);
  mo.seg_embed = cm.get_sizes("model.seg_embed", mo.seg_embed);
  mo.seg_point_feature_layer = static_cast<size_t>(
      cm.get_int("model.seg_point_feature_layer", mo.seg_point_feature_layer));
  mo.seg_head = cm.get_sizes("model.seg_head", mo.seg_head);
  mo.tnet_embed = cm.get_sizes("model.tnet_embed", mo.tnet_embed);
  mo.tnet_head = cm.get_sizes("model.tnet_head", mo.tnet_head);
  mo.box_embed = cm.get_sizes("model.box_embed", mo.box_embed);
  mo.box_head = cm.get_sizes("model.box_head", mo.box_head);
  mo.use_batch_norm = cm.get_bool("model.use_batch_norm", mo.use_batch_norm);
  mo.bn_decay_halve_every =
      static_cast<int>(cm.get_int("model.bn_decay_halve_every", mo.bn_decay_halve_every));
  mo.n_frustum_points = au.n_frustum_points;
  mo.n_mask_points = au.n_mask_points;

  auto& lo = cfg.loss;
  lo.weights.lambda = cm.get_double("loss.lambda", lo.weights.lambda);
  lo.weights.gamma = cm.get_double("loss.gamma", lo.weights.gamma);
  lo.loss_mode = detail::loss_mode_from_string(
      cm.get_string("loss.mode", detail::to_string(lo.loss_mode)));
  lo.anchor_mode = detail::anchor_mode_from_string(
      cm.get_string("loss.corner_anchors", detail::to_string(lo.anchor_mode)));
  lo.huber_delta = cm.get_double("loss.huber_delta", lo.huber_delta);

  auto& tr = cfg.train;
  tr.seed = static_cast<uint64_t>(cm.get_int("train.seed", static_cast<int64_t>(tr.seed)));
  tr.steps = static_cast<int>(cm.get_int("train.steps", tr.steps));
  tr.batch_size = static_cast<int>(cm.get_int("train.batch_size", tr.batch_size));
  tr.lr = cm.get_double("train.lr", tr.lr);
  tr.lr_halve_every = static_cast<int>(cm.get_int("train.lr_halve_every", tr.lr_halve_every));
  tr.val_fraction = cm.get_double("train.val_fraction", tr.val_fraction);
  tr.mask_centralize = cm.get_bool("train.mask_centralize", tr.mask_centralize);
  tr.use_tnet = cm.get_bool("train.use_tnet", tr.use_tnet);

  cfg.validate();
  return cfg;
}

// Serializes every field; parse(write(cfg)) == cfg.
inline std::string write_experiment_config(const ExperimentConfig& cfg) {
  using detail::fmt;
  std::ostringstream out;
  const auto& sc = cfg.scene;
  out << "[scene]\n";
  out << "seed = " << sc.seed << "\n";
  out << "min_objects = " << sc.min_objects << "\n";
  out << "max_objects = " << sc.max_objects << "\n";
  out << "category_mix =";
  for (const auto& [name, w] : sc.category_mix) out << " " << name << ":" << fmt(w);
  out << "\n";
  out << "min_depth = " << fmt(sc.min_depth) << "\n";
  out << "max_depth = " << fmt(sc.max_depth) << "\n";
  out << "lateral_fraction = " << fmt(sc.lateral_fraction) << "\n";
  out << "clutter_density = " << fmt(sc.clutter_density) << "\n";
  out << "ground_sigma = " << fmt(sc.ground_sigma) << "\n";
  out << "ground_y = " << fmt(sc.ground_y) << "\n";
  out << "ground_points = " << sc.ground_points << "\n";
  out << "points_at_10m = " << fmt(sc.points_at_10m) << "\n";
  out << "size_jitter = " << fmt(sc.size_jitter) << "\n";
  out << "image_width = " << sc.image_width << "\n";
  out << "image_height = " << sc.image_height << "\n";
  out << "focal = " << fmt(sc.focal) << "\n";

  const auto& au = cfg.augment;
  out << "\n[augment]\n";
  out << "box2d_translate_frac = " << fmt(au.box2d_translate_frac) << "\n";
  out << "box2d_scale = " << fmt(au.box2d_scale_min) << " " << fmt(au.box2d_scale_max) << "\n";
  out << "flip_prob = " << fmt(au.flip_prob) << "\n";
  out << "depth_shift_range = " << fmt(au.depth_shift_range) << "\n";
  out << "n_frustum_points = " << au.n_frustum_points << "\n";
  out << "n_mask_points = " << au.n_mask_points << "\n";
  out << "frustum_rotation = " << (au.frustum_rotation ? "true" : "false") << "\n";

  out << "\n[codec]\n";
  out << "ns = " << cfg.codec.ns() << "\n";
  out << "nh = " << cfg.codec.nh() << "\n";
  for (int i = 0; i < cfg.codec.ns(); ++i) {
    const auto& t = cfg.codec.size_templates[i];
    out << "template." << i << " = " << fmt(t.h) << " " << fmt(t.w) << " " << fmt(t.l) << " "
        << t.category << "\n";
  }

  const auto& mo = cfg.model;
  out << "\n[model]\n";
  out << "num_classes = " << mo.num_classes << "\n";
  out << "seg_use_intensity = " << (mo.seg_use_intensity ? "true" : "false") << "\n";
  auto sizes = [&out](const char* key, const std::vector<size_t>& v) {
    out << key << " =";
    for (size_t s : v) out << " " << s;
    out << "\n";
  };
  sizes("seg_embed", mo.seg_embed);
  out << "seg_point_feature_layer = " << mo.seg_point_feature_layer << "\n";
  sizes("seg_head", mo.seg_head);
  sizes("tnet_embed", mo.tnet_embed);
  sizes("tnet_head", mo.tnet_head);
  sizes("box_embed", mo.box_embed);
  sizes("box_head", mo.box_head);
  out << "use_batch_norm = " << (mo.use_batch_norm ? "true" : "false") << "\n";
  out << "bn_decay_halve_every = " << mo.bn_decay_halve_every << "\n";

  const auto& lo = cfg.loss;
  out << "\n[loss]\n";
  out << "lambda = " << fmt(lo.weights.lambda) << "\n";
  out << "gamma = " << fmt(lo.weights.gamma) << "\n";
  out << "mode = " << detail::to_string(lo.loss_mode) << "\n";
  out << "corner_anchors = " << detail::to_string(lo.anchor_mode) << "\n";
  out << "huber_delta = " << fmt(lo.huber_delta) << "\n";

  const auto& tr = cfg.train;
  out << "\n[train]\n";
  out << "seed = " << tr.seed << "\n";
  out << "steps = " << tr.steps << "\n";
  out << "batch_size = " << tr.batch_size << "\n";
  out << "lr = " << fmt(tr.lr) << "\n";
  out << "lr_halve_every = " << tr.lr_halve_every << "\n";
  out << "val_fraction = " << fmt(tr.val_fraction) << "\n";
  out << "mask_centralize = " << (tr.mask_centralize ? "true" : "false") << "\n";
  out << "use_tnet = " << (tr.use_tnet ? "true" : "false") << "\n";
  return out.str();
}

}  // namespace fk
