#pragma once

// The three v1 networks: instance segmentation PointNet, the T-Net
// center-residual regressor, and the amodal box estimation PointNet,
// assembled end to end with the class one-hot injected at the global
// feature (T-Net, box net) and at the per-point feature (segmentation).

#include <functional>
#include <string>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/checkpoint.hpp"
#include "frustumkit/frustum.hpp"
#include "frustumkit/tensor.hpp"

namespace fk {

// Box-branch output formulations. ClsRegNormalized is the primary codec;
// the other two exist for the loss-formulation comparisons.
enum class BoxLossMode { RegressionOnly, ClsReg, ClsRegNormalized };

inline int box_output_arity(const BoxCodecConfig& cfg, BoxLossMode mode) {
  if (mode == BoxLossMode::RegressionOnly) return 7;  // center(3) + heading + hwl
  return cfg.prediction_arity();
}

struct ModelConfig {
  size_t num_classes = 3;
  bool seg_use_intensity = true;  // XYZ + intensity input when true
  std::vector<size_t> seg_embed = {64, 64, 64, 128, 256};
  size_t seg_point_feature_layer = 1;  // embedding output used as per-point skip
  std::vector<size_t> seg_head = {128, 128};
  std::vector<size_t> tnet_embed = {128, 128, 256};
  std::vector<size_t> tnet_head = {256, 128};
  std::vector<size_t> box_embed = {128, 128, 256, 512};
  std::vector<size_t> box_head = {512, 256};
  size_t n_frustum_points = 1024;
  size_t n_mask_points = 512;
  // Optional batch norm on the per-point embedding stacks, off by
  // default: single-sample tapes make BN statistics noisy and the
  // pipeline is deterministic without it. Pooled [1,C] head layers never
  // get BN - a one-row batch would normalize the feature away.
  bool use_batch_norm = false;
  int bn_decay_halve_every = 2000;

  size_t seg_input_channels() const { return seg_use_intensity ? 4 : 3; }

  void validate() const {
    if (seg_embed.empty() || tnet_embed.empty() || box_embed.empty())
      throw ConfigError("embedding stacks need at least one layer");
    if (seg_point_feature_layer >= seg_embed.size())
      throw ConfigError("seg_point_feature_layer out of range");
    if (num_classes == 0) throw ConfigError("num_classes must be positive");
    if (n_frustum_points == 0 || n_mask_points == 0)
      throw ConfigError("point budgets must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameters and layers

struct Param {
  std::string name;
  Tensor value;
  AdamState opt;
};

// Records which parameters were placed on the tape so the trainer can
// route gradients back; inference bindings skip the bookkeeping.
class Binding {
 public:
  struct Bound {
    Param* param;
    ValueId id;
  };

  Binding(Tape& tape, bool train) : tape_(tape), train_(train) {}

  Tape& tape() { return tape_; }
  bool training() const { return train_; }

  ValueId use(Param& p) {
    ValueId id = tape_.leaf(p.value);
    if (train_) bound_.push_back({&p, id});
    return id;
  }

  const std::vector<Bound>& bound() const { return bound_; }

  // EMA decay for batch-norm running statistics at the current step.
  double bn_decay = 0.5;

 private:
  Tape& tape_;
  bool train_;
  std::vector<Bound> bound_;
};

struct Linear {
  Param weight;  // [in, out]
  Param bias;    // [out]

  Linear() = default;
  Linear(const std::string& name, size_t in, size_t out, Rng& rng) {
    weight.name = name + ".weight";
    weight.value = Tensor::zeros({in, out});
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (double& v : weight.value.data) v = rng.uniform(-limit, limit);
    bias.name = name + ".bias";
    bias.value = Tensor::zeros({out});
  }

  // x [N,in] -> [N,out]
  ValueId forward(Binding& b, ValueId x) {
    Tape& t = b.tape();
    return t.add_row(t.matmul(x, b.use(weight)), b.use(bias));
  }

  size_t in_width() const { return weight.value.shape[0]; }
  size_t out_width() const { return weight.value.shape[1]; }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(weight);
    fn(bias);
  }
};

// Per-channel batch normalization over the point axis, with running
// statistics for inference.
struct BatchNorm {
  Param gamma, beta;
  std::vector<double> running_mean, running_var;

  BatchNorm() = default;
  BatchNorm(const std::string& name, size_t width) {
    gamma.name = name + ".gamma";
    gamma.value = Tensor({width}, std::vector<double>(width, 1.0));
    beta.name = name + ".beta";
    beta.value = Tensor::zeros({width});
    running_mean.assign(width, 0.0);
    running_var.assign(width, 1.0);
  }

  ValueId forward(Binding& b, ValueId x) {
    Tape& t = b.tape();
    if (!b.training())
      return t.batch_norm_rows_inference(x, b.use(gamma), b.use(beta), running_mean,
                                         running_var);
    std::vector<double> mean, var;
    ValueId y = t.batch_norm_rows(x, b.use(gamma), b.use(beta), 1e-5, &mean, &var);
    const double d = b.bn_decay;
    for (size_t j = 0; j < running_mean.size(); ++j) {
      running_mean[j] = d * running_mean[j] + (1.0 - d) * mean[j];
      running_var[j] = d * running_var[j] + (1.0 - d) * var[j];
    }
    return y;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn(gamma);
    fn(beta);
  }
};

// Shared MLP stack: affine -> (optional BN) -> ReLU per layer.
struct SharedMlp {
  std::vector<Linear> layers;
  std::vector<BatchNorm> bns;  // parallel to layers when BN is enabled

  SharedMlp() = default;
  SharedMlp(const std::string& name, size_t in, const std::vector<size_t>& widths, bool with_bn,
            Rng& rng) {
    size_t prev = in;
    for (size_t i = 0; i < widths.size(); ++i) {
      layers.emplace_back(name + "." + std::to_string(i), prev, widths[i], rng);
      if (with_bn) bns.emplace_back(name + "." + std::to_string(i) + ".bn", widths[i]);
      prev = widths[i];
    }
  }

  ValueId forward(Binding& b, ValueId x, std::vector<ValueId>* taps = nullptr) {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(b, x);
      if (!bns.empty()) x = bns[i].forward(b, x);
      x = b.tape().relu(x);
      if (taps) taps->push_back(x);
    }
    return x;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (auto& l : layers) l.for_each_param(fn);
    for (auto& bn : bns) bn.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    for (auto& bn : bns) {
      fn(bn.gamma.name + ".running_mean", bn.running_mean);
      fn(bn.gamma.name + ".running_var", bn.running_var);
    }
  }
};

namespace detail {

inline std::vector<Linear> make_stack(const std::string& name, size_t in,
                                      const std::vector<size_t>& widths, Rng& rng) {
  std::vector<Linear> layers;
  size_t prev = in;
  for (size_t i = 0; i < widths.size(); ++i) {
    layers.emplace_back(name + "." + std::to_string(i), prev, widths[i], rng);
    prev = widths[i];
  }
  return layers;
}

// FC chain with ReLU after every layer.
inline ValueId run_stack(Binding& b, std::vector<Linear>& layers, ValueId x,
                         std::vector<ValueId>* taps = nullptr) {
  for (auto& layer : layers) {
    x = b.tape().relu(layer.forward(b, x));
    if (taps) taps->push_back(x);
  }
  return x;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Segmentation PointNet (v1)

class SegNetV1 {
 public:
  SegNetV1() = default;
  SegNetV1(const ModelConfig& cfg, Rng rng) : cfg_point_layer_(cfg.seg_point_feature_layer) {
    embed_ = SharedMlp("seg.embed", cfg.seg_input_channels(), cfg.seg_embed,
                       cfg.use_batch_norm, rng);
    const size_t point_width = cfg.seg_embed[cfg.seg_point_feature_layer];
    const size_t global_width = cfg.seg_embed.back() + cfg.num_classes;
    head_ = SharedMlp("seg.head", point_width + global_width, cfg.seg_head,
                      cfg.use_batch_norm, rng);
    const size_t last = cfg.seg_head.empty() ? point_width + global_width : cfg.seg_head.back();
    out_ = Linear("seg.out", last, 2, rng);  // final classifier layer: no BN
  }

  // points [N,C], onehot [k] -> logits [N,2]
  ValueId forward(Binding& b, ValueId points, ValueId onehot) {
    Tape& t = b.tape();
    std::vector<ValueId> taps;
    ValueId x = embed_.forward(b, points, &taps);
    ValueId global = t.concat_vec(t.max_rows(x), onehot);
    const size_t n = t.value(points).rows();
    ValueId per_point = t.concat_cols(taps[cfg_point_layer_], t.broadcast_row(global, n));
    ValueId h = head_.forward(b, per_point);
    return out_.forward(b, h);
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    embed_.for_each_param(fn);
    head_.for_each_param(fn);
    out_.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    embed_.for_each_buffer(fn);
    head_.for_each_buffer(fn);
  }

 private:
  SharedMlp embed_;
  SharedMlp head_;
  Linear out_;
  size_t cfg_point_layer_ = 1;
};

// ---------------------------------------------------------------------------
// Pooled regression nets: T-Net and the box estimation net share shape.

class PooledRegressionNet {
 public:
  PooledRegressionNet() = default;
  PooledRegressionNet(const std::string& name, size_t in_channels, size_t num_classes,
                      const std::vector<size_t>& embed, const std::vector<size_t>& head,
                      size_t out_width, bool with_bn, Rng rng) {
    embed_ = SharedMlp(name + ".embed", in_channels, embed, with_bn, rng);
    // pooled [1,C] head rows never get BN
    head_ = detail::make_stack(name + ".head", embed.back() + num_classes, head, rng);
    const size_t last = head.empty() ? embed.back() + num_classes : head.back();
    out_ = Linear(name + ".out", last, out_width, rng);
  }

  // points [m,C], onehot [k] -> [out_width]
  ValueId forward(Binding& b, ValueId points, ValueId onehot) {
    Tape& t = b.tape();
    ValueId x = embed_.forward(b, points);
    ValueId global = t.concat_vec(t.max_rows(x), onehot);
    ValueId h = detail::run_stack(b, head_, t.reshape_row(global));
    return t.flatten(out_.forward(b, h));
  }

  size_t out_width() const { return out_.out_width(); }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    embed_.for_each_param(fn);
    for (auto& l : head_) l.for_each_param(fn);
    out_.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    embed_.for_each_buffer(fn);
  }

 private:
  SharedMlp embed_;
  std::vector<Linear> head_;
  Linear out_;
};

// The full model triple. Box head arity is fixed by the codec config and
// loss mode at construction.
struct Networks {
  ModelConfig model_cfg;
  BoxLossMode loss_mode = BoxLossMode::ClsRegNormalized;
  SegNetV1 seg;
  PooledRegressionNet tnet;
  PooledRegressionNet box;

  Networks() = default;
  Networks(const ModelConfig& cfg, const BoxCodecConfig& codec, BoxLossMode mode, uint64_t seed)
      : model_cfg(cfg), loss_mode(mode) {
    cfg.validate();
    codec.validate();
    seg = SegNetV1(cfg, Rng::stream(seed, "init/seg"));
    tnet = PooledRegressionNet("tnet", 3, cfg.num_classes, cfg.tnet_embed, cfg.tnet_head, 3,
                               cfg.use_batch_norm, Rng::stream(seed, "init/tnet"));
    box = PooledRegressionNet("box", 3, cfg.num_classes, cfg.box_embed, cfg.box_head,
                              static_cast<size_t>(box_output_arity(codec, mode)),
                              cfg.use_batch_norm, Rng::stream(seed, "init/box"));
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    seg.for_each_param(fn);
    tnet.for_each_param(fn);
    box.for_each_param(fn);
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    seg.for_each_buffer(fn);
    tnet.for_each_buffer(fn);
    box.for_each_buffer(fn);
  }

  void save(const std::string& path) {
    std::vector<std::pair<std::string, const Tensor*>> items;
    for_each_param([&](Param& p) { items.emplace_back(p.name, &p.value); });
    std::vector<Tensor> buffers;  // keeps pointers alive until serialization
    std::vector<std::string> buffer_names;
    for_each_buffer([&](const std::string& name, std::vector<double>& data) {
      buffer_names.push_back(name);
      buffers.push_back(Tensor::vector(data));
    });
    for (size_t i = 0; i < buffers.size(); ++i) items.emplace_back(buffer_names[i], &buffers[i]);
    save_checkpoint(path, items);
  }

  void load(const std::string& path) {
    auto table = load_checkpoint(path);
    for_each_param([&](Param& p) {
      auto it = table.find(p.name);
      if (it == table.end()) throw DataError("checkpoint is missing parameter " + p.name);
      if (it->second.shape != p.value.shape)
        throw DataError("checkpoint shape mismatch for " + p.name);
      p.value = it->second;
      p.opt = AdamState{};
    });
    for_each_buffer([&](const std::string& name, std::vector<double>& data) {
      auto it = table.find(name);
      if (it == table.end()) throw DataError("checkpoint is missing buffer " + name);
      if (it->second.size() != data.size())
        throw DataError("checkpoint shape mismatch for " + name);
      data = it->second.data;
    });
  }
};

// ---------------------------------------------------------------------------
// Mask extraction and resampling

struct MaskSampleResult {
  PointCloud mask_points;       // frame Mask, exactly m points
  Vec3 centroid;                // zero when centralization is disabled
  std::vector<size_t> chosen;   // indices into the sample's point list
  std::vector<bool> pred_mask;  // per input point
  bool fallback = false;        // no predicted object points
};

// Selects argmax-object points, centralizes them, then samples exactly m
// points: a distinct subsample when enough points exist, draws with
// replacement otherwise. With zero predicted object points every point
// is used and the result is flagged.
inline MaskSampleResult mask_and_sample(const Tensor& logits, const FrustumSample& sample,
                                        size_t m, Rng& rng, bool centralize = true) {
  const size_t n = sample.points.size();
  if (logits.rows() != n || logits.cols() != 2) throw DataError("seg logits shape mismatch");
  MaskSampleResult res;
  res.pred_mask.resize(n);
  std::vector<size_t> selected;
  for (size_t i = 0; i < n; ++i) {
    const bool object = logits.at(i, 1) > logits.at(i, 0);
    res.pred_mask[i] = object;
    if (object) selected.push_back(i);
  }
  if (selected.empty()) {
    res.fallback = true;
    selected.resize(n);
    std::iota(selected.begin(), selected.end(), size_t{0});
  }

  if (centralize) {
    Vec3 c{};
    for (size_t i : selected) c += sample.points.points[i].xyz();
    res.centroid = c * (1.0 / static_cast<double>(selected.size()));
  }

  res.chosen.reserve(m);
  if (selected.size() >= m) {
    // partial Fisher-Yates: m distinct indices
    for (size_t i = 0; i < m; ++i) {
      const size_t j = i + rng.index(selected.size() - i);
      std::swap(selected[i], selected[j]);
      res.chosen.push_back(selected[i]);
    }
  } else {
    for (size_t i = 0; i < m; ++i) res.chosen.push_back(selected[rng.index(selected.size())]);
  }

  res.mask_points.frame = Frame::Mask;
  res.mask_points.points.reserve(m);
  for (size_t i : res.chosen) {
    const auto& p = sample.points.points[i];
    res.mask_points.points.push_back(
        {p.x - res.centroid.x, p.y - res.centroid.y, p.z - res.centroid.z, p.intensity});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Decoding the raw box head

inline BoxPrediction split_box_output(const std::vector<double>& raw, const BoxCodecConfig& cfg,
                                      BoxLossMode mode) {
  if (mode == BoxLossMode::RegressionOnly)
    throw DataError("regression-only output has no cls-reg layout");
  if (raw.size() != static_cast<size_t>(cfg.prediction_arity()))
    throw DataError("box output arity mismatch");
  BoxPrediction p;
  const int nh = cfg.nh(), ns = cfg.ns();
  p.center_delta = {raw[0], raw[1], raw[2]};
  p.heading_scores.assign(raw.begin() + 3, raw.begin() + 3 + nh);
  p.heading_residuals.assign(raw.begin() + 3 + nh, raw.begin() + 3 + 2 * nh);
  p.size_scores.assign(raw.begin() + 3 + 2 * nh, raw.begin() + 3 + 2 * nh + ns);
  for (int i = 0; i < ns; ++i) {
    const size_t base = 3 + 2 * nh + ns + 3 * i;
    p.size_residuals.push_back({raw[base], raw[base + 1], raw[base + 2]});
  }
  if (mode == BoxLossMode::ClsReg) {
    // raw residuals are radians / meters; convert to the normalized codec
    const double half_bin = cfg.bin_width() / 2.0;
    for (double& r : p.heading_residuals) r /= half_bin;
    for (int i = 0; i < ns; ++i) {
      const auto& t = cfg.size_templates[i];
      p.size_residuals[i][0] /= t.h;
      p.size_residuals[i][1] /= t.w;
      p.size_residuals[i][2] /= t.l;
    }
  }
  return p;
}

inline Box3D decode_box_output(const std::vector<double>& raw, const CanonicalizationState& state,
                               const BoxCodecConfig& cfg, BoxLossMode mode) {
  if (mode == BoxLossMode::RegressionOnly) {
    if (raw.size() != 7) throw DataError("regression-only output must have 7 values");
    Box3D box;
    box.center = recover_center(state, {raw[0], raw[1], raw[2]});
    box.heading = wrap_angle(raw[3] - state.frustum_angle);
    box.h = std::max(raw[4], 0.01);
    box.w = std::max(raw[5], 0.01);
    box.l = std::max(raw[6], 0.01);
    return box;
  }
  return decode_box(split_box_output(raw, cfg, mode), state, cfg);
}

// ---------------------------------------------------------------------------
// Full pipeline forward (inference)

// Ablation switches: mask centroid subtraction and the T-Net stage can be
// disabled; frustum rotation is a data-side toggle applied when samples
// are built.
struct PipelineToggles {
  bool frustum_rotation = true;
  bool mask_centralize = true;
  bool use_tnet = true;
};

struct ForwardResult {
  Tensor seg_logits;  // [N,2]
  std::vector<bool> pred_mask;
  bool mask_fallback = false;
  Vec3 tnet_delta;
  std::vector<double> box_output;
  CanonicalizationState state;  // with mask centroid and T-Net delta filled
  Box3D decoded;                // camera frame
  double objectness = 0;        // mean softmax P(object), used as score
};

inline ForwardResult full_forward(Networks& nets, const FrustumSample& sample,
                                  const BoxCodecConfig& codec, const PipelineToggles& toggles,
                                  Rng& mask_rng) {
  if (sample.points.empty()) throw DataError("empty frustum sample");
  Tape tape;
  Binding binding(tape, false);
  const size_t n = sample.points.size();
  const size_t c = nets.model_cfg.seg_input_channels();

  Tensor points = Tensor::zeros({n, c});
  for (size_t i = 0; i < n; ++i) {
    const auto& p = sample.points.points[i];
    points.data[i * c + 0] = p.x;
    points.data[i * c + 1] = p.y;
    points.data[i * c + 2] = p.z;
    if (c == 4) points.data[i * c + 3] = p.intensity;
  }
  ValueId onehot = tape.constant(Tensor::vector(sample.onehot));
  ValueId logits = nets.seg.forward(binding, tape.constant(std::move(points)), onehot);

  ForwardResult res;
  res.seg_logits = tape.value(logits);
  res.state = sample.state;

  auto ms = mask_and_sample(res.seg_logits, sample, nets.model_cfg.n_mask_points, mask_rng,
                            toggles.mask_centralize);
  res.pred_mask = ms.pred_mask;
  res.mask_fallback = ms.fallback;
  res.state.mask_centroid = ms.centroid;

  // objectness: mean P(object) over points
  double score = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double a = res.seg_logits.at(i, 0), b = res.seg_logits.at(i, 1);
    const double mx = std::max(a, b);
    score += std::exp(b - mx) / (std::exp(a - mx) + std::exp(b - mx));
  }
  res.objectness = score / static_cast<double>(n);

  const size_t m = ms.mask_points.size();
  Tensor mask_xyz = Tensor::zeros({m, 3});
  for (size_t i = 0; i < m; ++i) {
    const auto& p = ms.mask_points.points[i];
    mask_xyz.data[i * 3 + 0] = p.x;
    mask_xyz.data[i * 3 + 1] = p.y;
    mask_xyz.data[i * 3 + 2] = p.z;
  }
  ValueId mask_id = tape.constant(std::move(mask_xyz));

  ValueId object_id = mask_id;
  if (toggles.use_tnet) {
    ValueId delta = nets.tnet.forward(binding, mask_id, onehot);
    const Tensor& d = tape.value(delta);
    res.tnet_delta = {d.data[0], d.data[1], d.data[2]};
    res.state.tnet_delta = res.tnet_delta;
    object_id = tape.sub_row(mask_id, delta);
  }

  ValueId box_out = nets.box.forward(binding, object_id, onehot);
  res.box_output = tape.value(box_out).data;
  res.decoded = decode_box_output(res.box_output, res.state, codec, nets.loss_mode);
  return res;
}

}  // namespace fk
