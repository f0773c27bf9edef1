#pragma once

// Scripted ablation harness: trains one model per (row, seed) at a fixed
// small budget and reports mean box accuracy per row. Two stock matrices
// cover the coordinate-normalization toggles and the box-loss
// formulations; rows share scenes per seed so comparisons are paired.

#include <string>
#include <vector>

#include "frustumkit/train.hpp"

namespace fk {

struct AblationRowSpec {
  std::string name;
  PipelineToggles toggles;
  BoxLossMode loss_mode = BoxLossMode::ClsRegNormalized;
  CornerAnchorMode anchor_mode = CornerAnchorMode::WithResiduals;
  double gamma = 0.0;
};

struct AblationRowResult {
  std::string name;
  std::vector<double> per_seed;
  double mean = 0;
};

struct AblationConfig {
  ExperimentConfig base;
  std::vector<uint64_t> seeds = {1, 2, 3};
  size_t train_samples = 400;
  size_t eval_samples = 200;
  double iou_thresh = 0.5;
};

// Table-5-style rows: cumulative coordinate canonicalization toggles.
inline std::vector<AblationRowSpec> normalization_ablation_rows() {
  auto toggles = [](bool rot, bool mask, bool tnet) {
    PipelineToggles t;
    t.frustum_rotation = rot;
    t.mask_centralize = mask;
    t.use_tnet = tnet;
    return t;
  };
  return {
      {"none", toggles(false, false, false)},
      {"frustum_rot", toggles(true, false, false)},
      {"frustum_rot+mask_centralize", toggles(true, true, false)},
      {"frustum_rot+mask_centralize+t_net", toggles(true, true, true)},
  };
}

// Table-6-style rows: box-loss formulations, all toggles on.
inline std::vector<AblationRowSpec> loss_ablation_rows(double corner_gamma) {
  PipelineToggles all;
  std::vector<AblationRowSpec> rows = {
      {"regression_only", all, BoxLossMode::RegressionOnly},
      {"cls_reg", all, BoxLossMode::ClsReg},
      {"cls_reg_normalized", all, BoxLossMode::ClsRegNormalized},
      {"cls_reg_normalized+corner", all, BoxLossMode::ClsRegNormalized,
       CornerAnchorMode::WithResiduals, corner_gamma},
  };
  return rows;
}

inline AblationRowResult run_ablation_row(const AblationConfig& cfg, const AblationRowSpec& row) {
  AblationRowResult result;
  result.name = row.name;
  for (uint64_t seed : cfg.seeds) {
    ExperimentConfig ecfg = cfg.base;
    ecfg.train.seed = seed;
    ecfg.train.mask_centralize = row.toggles.mask_centralize;
    ecfg.train.use_tnet = row.toggles.use_tnet;
    ecfg.augment.frustum_rotation = row.toggles.frustum_rotation;
    ecfg.loss.loss_mode = row.loss_mode;
    ecfg.loss.anchor_mode = row.anchor_mode;
    ecfg.loss.weights.gamma = row.gamma;

    const size_t k = ecfg.model.num_classes;
    const auto train_set =
        generate_dataset(ecfg.scene, ecfg.augment, cfg.train_samples, seed, k);
    AugmentConfig eval_aug = ecfg.augment;  // clean evaluation data
    eval_aug.flip_prob = 0.0;
    eval_aug.depth_shift_range = 0.0;
    eval_aug.box2d_translate_frac = 0.0;
    eval_aug.box2d_scale_min = eval_aug.box2d_scale_max = 1.0;
    const auto eval_set =
        generate_dataset(ecfg.scene, eval_aug, cfg.eval_samples, seed ^ 0x9e3779b9ULL, k);

    Networks nets(ecfg.model, ecfg.codec, ecfg.loss.loss_mode, seed);
    Trainer trainer(ecfg, nets);
    trainer.run(train_set);
    const EvalStats stats = evaluate_model(nets, eval_set, ecfg.codec, trainer.toggles(),
                                           seed + 1000, cfg.iou_thresh);
    result.per_seed.push_back(stats.box_accuracy);
  }
  for (double v : result.per_seed) result.mean += v;
  result.mean /= result.per_seed.size();
  return result;
}

inline std::vector<AblationRowResult> run_ablation(const AblationConfig& cfg,
                                                   const std::vector<AblationRowSpec>& rows) {
  std::vector<AblationRowResult> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(run_ablation_row(cfg, row));
  return out;
}

inline std::string ablation_csv(const std::vector<AblationRowResult>& rows) {
  std::string out = "row,mean_box_accuracy";
  size_t max_seeds = 0;
  for (const auto& r : rows) max_seeds = std::max(max_seeds, r.per_seed.size());
  for (size_t s = 0; s < max_seeds; ++s) out += ",seed" + std::to_string(s);
  out += "\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.name;
    std::snprintf(buf, sizeof(buf), ",%.6g", r.mean);
    out += buf;
    for (double v : r.per_seed) {
      std::snprintf(buf, sizeof(buf), ",%.6g", v);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace fk
