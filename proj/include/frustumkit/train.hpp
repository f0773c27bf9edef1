#pragma once

// End-to-end training of the three nets with Adam and the multi-task
// loss. One tape per sample; batch gradients merge by summation. All
// randomness is derived from the experiment seed through named streams,
// so one-thread runs are bit-reproducible.

#include <string>
#include <unordered_map>
#include <vector>

#include "frustumkit/config.hpp"
#include "frustumkit/dataset.hpp"
#include "frustumkit/eval.hpp"
#include "frustumkit/losses.hpp"
#include "frustumkit/models.hpp"
#include "frustumkit/synth.hpp"

namespace fk {

struct StepLog {
  int step = 0;
  double lr = 0;
  LossBreakdown loss;
};

// Forward pass for one training sample with parameters bound to the tape.
struct TrainForward {
  BoxHeads heads;
  MaskSampleResult mask;
};

inline TrainForward forward_training(Binding& binding, Networks& nets,
                                     const FrustumSample& sample, const PipelineToggles& toggles,
                                     Rng& mask_rng) {
  Tape& tape = binding.tape();
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

  TrainForward out;
  out.heads.seg_logits = nets.seg.forward(binding, tape.constant(std::move(points)), onehot);
  out.mask = mask_and_sample(tape.value(out.heads.seg_logits), sample,
                             nets.model_cfg.n_mask_points, mask_rng, toggles.mask_centralize);
  out.heads.mask_centroid = out.mask.centroid;

  const size_t m = out.mask.mask_points.size();
  Tensor mask_xyz = Tensor::zeros({m, 3});
  for (size_t i = 0; i < m; ++i) {
    const auto& p = out.mask.mask_points.points[i];
    mask_xyz.data[i * 3 + 0] = p.x;
    mask_xyz.data[i * 3 + 1] = p.y;
    mask_xyz.data[i * 3 + 2] = p.z;
  }
  ValueId mask_id = tape.constant(std::move(mask_xyz));

  ValueId object_id = mask_id;
  if (toggles.use_tnet) {
    out.heads.has_tnet = true;
    out.heads.tnet_delta = nets.tnet.forward(binding, mask_id, onehot);
    object_id = tape.sub_row(mask_id, out.heads.tnet_delta);
  }
  out.heads.box_output = nets.box.forward(binding, object_id, onehot);
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, Networks& nets) : cfg_(cfg), nets_(nets) {
    toggles_.mask_centralize = cfg.train.mask_centralize;
    toggles_.use_tnet = cfg.train.use_tnet;
    toggles_.frustum_rotation = cfg.augment.frustum_rotation;
    nets_.for_each_param([&](Param& p) { params_.push_back(&p); });
    grad_sums_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) index_[params_[i]] = i;
  }

  const PipelineToggles& toggles() const { return toggles_; }

  // One optimization step over a batch of samples; returns the mean
  // loss breakdown.
  LossBreakdown step(int step_index, const std::vector<const FrustumSample*>& batch) {
    for (auto& g : grad_sums_) g.data.clear();
    LossBreakdown mean;
    for (size_t bi = 0; bi < batch.size(); ++bi) {
      const FrustumSample& sample = *batch[bi];
      Tape tape;
      Binding binding(tape, true);
      binding.bn_decay = bn_decay_at_step(step_index, cfg_.model.bn_decay_halve_every);
      Rng mask_rng = Rng::stream(cfg_.train.seed, "masksample",
                                 static_cast<uint64_t>(step_index) * batch.size() + bi);
      TrainForward fwd = forward_training(binding, nets_, sample, toggles_, mask_rng);
      const SampleTargets targets = make_targets(sample, cfg_.codec);
      LossBreakdown bd;
      ValueId total = multi_task_loss(tape, fwd.heads, targets, cfg_.codec, cfg_.loss, &bd);
      tape.backward(total);
      for (const auto& bound : binding.bound()) {
        Tensor& sum = grad_sums_[index_.at(bound.param)];
        const Tensor& g = tape.grad(bound.id);
        if (sum.data.empty()) {
          sum = g;
        } else {
          for (size_t i = 0; i < g.size(); ++i) sum.data[i] += g.data[i];
        }
      }
      accumulate(mean, bd);
    }
    scale(mean, 1.0 / batch.size());

    const double lr = lr_at_step(cfg_.train.lr, step_index, cfg_.train.lr_halve_every);
    const double inv_batch = 1.0 / batch.size();
    for (size_t i = 0; i < params_.size(); ++i) {
      if (grad_sums_[i].data.empty()) continue;
      Tensor g = grad_sums_[i];
      for (double& v : g.data) v *= inv_batch;
      adam_step(params_[i]->value, g, params_[i]->opt, lr);
    }
    return mean;
  }

  // Full run over a dataset with per-step logging.
  std::vector<StepLog> run(const std::vector<FrustumSample>& data) {
    if (data.empty()) throw DataError("training set is empty");
    std::vector<StepLog> logs;
    logs.reserve(cfg_.train.steps);
    Rng batch_rng = Rng::stream(cfg_.train.seed, "data");
    for (int s = 0; s < cfg_.train.steps; ++s) {
      std::vector<const FrustumSample*> batch;
      batch.reserve(cfg_.train.batch_size);
      for (int b = 0; b < cfg_.train.batch_size; ++b)
        batch.push_back(&data[batch_rng.index(data.size())]);
      StepLog log;
      log.step = s;
      log.lr = lr_at_step(cfg_.train.lr, s, cfg_.train.lr_halve_every);
      log.loss = step(s, batch);
      logs.push_back(log);
    }
    return logs;
  }

 private:
  static void accumulate(LossBreakdown& acc, const LossBreakdown& bd) {
    acc.seg += bd.seg;
    acc.c1_reg += bd.c1_reg;
    acc.c2_reg += bd.c2_reg;
    acc.h_cls += bd.h_cls;
    acc.h_reg += bd.h_reg;
    acc.s_cls += bd.s_cls;
    acc.s_reg += bd.s_reg;
    acc.corner += bd.corner;
    acc.total += bd.total;
  }
  static void scale(LossBreakdown& bd, double k) {
    bd.seg *= k;
    bd.c1_reg *= k;
    bd.c2_reg *= k;
    bd.h_cls *= k;
    bd.h_reg *= k;
    bd.s_cls *= k;
    bd.s_reg *= k;
    bd.corner *= k;
    bd.total *= k;
  }

  ExperimentConfig cfg_;
  Networks& nets_;
  PipelineToggles toggles_;
  std::vector<Param*> params_;
  std::vector<Tensor> grad_sums_;
  std::unordered_map<Param*, size_t> index_;
};

inline std::string metrics_csv(const std::vector<StepLog>& logs) {
  std::string out = "step,lr,seg,c1_reg,c2_reg,h_cls,h_reg,s_cls,s_reg,corner,total\n";
  char buf[320];
  for (const auto& log : logs) {
    std::snprintf(buf, sizeof(buf), "%d,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                  log.step, log.lr, log.loss.seg, log.loss.c1_reg, log.loss.c2_reg,
                  log.loss.h_cls, log.loss.h_reg, log.loss.s_cls, log.loss.s_reg,
                  log.loss.corner, log.loss.total);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset generation and evaluation

// count samples, one scene each, object picked at random. Per-sample RNG
// streams derive from (seed, name, index) so generation order is free.
inline std::vector<FrustumSample> generate_dataset(const SceneSpec& scene_spec,
                                                   const AugmentConfig& aug, size_t count,
                                                   uint64_t seed, size_t onehot_size) {
  std::vector<FrustumSample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    FrustumSample sample;
    bool made = false;
    for (uint64_t attempt = 0; attempt < 16 && !made; ++attempt) {
      SceneSpec spec = scene_spec;
      Rng seed_rng = Rng::stream(seed, "data", i * 16 + attempt);
      spec.seed = seed_rng.next_u64();
      const Scene scene = generate_scene(spec);
      Rng aug_rng = Rng::stream(seed, "augment", i * 16 + attempt);
      const size_t object = aug_rng.index(scene.objects.size());
      try {
        sample = make_frustum_sample(scene, object, aug, aug_rng, onehot_size);
        made = true;
      } catch (const EmptyFrustumError&) {
        // jittered box missed every point; draw a fresh scene
      }
    }
    if (!made) throw DataError("could not generate a nonempty frustum sample");
    out.push_back(std::move(sample));
  }
  return out;
}

struct EvalStats {
  double seg_accuracy = 0;
  double box_accuracy = 0;
  double mean_iou = 0;
  size_t count = 0;
};

// Ground-truth box mapped back from the frustum frame to the camera frame.
inline Box3D gt_box_camera(const FrustumSample& sample) {
  if (!sample.gt_box) throw DataError("sample has no gt box");
  Box3D out = *sample.gt_box;
  out.center = rot_y(-sample.state.frustum_angle, out.center);
  out.heading = wrap_angle(out.heading - sample.state.frustum_angle);
  return out;
}

inline EvalStats evaluate_model(Networks& nets, const std::vector<FrustumSample>& samples,
                                const BoxCodecConfig& codec, const PipelineToggles& toggles,
                                uint64_t seed, double iou_thresh = 0.5) {
  EvalStats stats;
  if (samples.empty()) return stats;
  double seg_sum = 0, iou_sum = 0;
  size_t hits = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    Rng rng = Rng::stream(seed, "masksample/eval", i);
    const ForwardResult res = full_forward(nets, samples[i], codec, toggles, rng);
    seg_sum += seg_accuracy(res.pred_mask, samples[i].gt_mask);
    const double iou = iou3d(res.decoded, gt_box_camera(samples[i]));
    iou_sum += iou;
    if (iou >= iou_thresh) ++hits;
  }
  stats.count = samples.size();
  stats.seg_accuracy = seg_sum / samples.size();
  stats.mean_iou = iou_sum / samples.size();
  stats.box_accuracy = static_cast<double>(hits) / samples.size();
  return stats;
}

}  // namespace fk
