#pragma once

// Implementations behind the CLI subcommands. Kept as library functions
// so tests can drive them directly; the binary only parses flags.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "frustumkit/ablation.hpp"
#include "frustumkit/bv.hpp"
#include "frustumkit/config.hpp"
#include "frustumkit/dataset.hpp"
#include "frustumkit/eval.hpp"
#include "frustumkit/gradcheck.hpp"
#include "frustumkit/train.hpp"

namespace fk {

namespace fs = std::filesystem;

// KITTI label <-> library box: the label anchors the bottom-face center.
inline Box3D label_to_box3d(const LabelKitti& l) {
  Box3D b;
  b.center = {l.location.x, l.location.y - l.h / 2.0, l.location.z};
  b.h = l.h;
  b.w = l.w;
  b.l = l.l;
  b.heading = wrap_angle(l.rotation_y);
  return b;
}

inline LabelKitti box3d_to_label(const Box3D& b, const std::string& type_name, double score) {
  LabelKitti l;
  l.type_name = type_name;
  l.category = category_from_string(type_name);
  l.location = {b.center.x, b.center.y + b.h / 2.0, b.center.z};
  l.h = b.h;
  l.w = b.w;
  l.l = b.l;
  l.rotation_y = wrap_angle(b.heading);
  l.alpha = wrap_angle(l.rotation_y - std::atan2(b.center.x, b.center.z));
  l.score = score;
  return l;
}

inline ExperimentConfig load_config_or_default(const std::string& path,
                                               const std::string& codec_path = "") {
  auto read_cfg_file = [](const std::string& p) {
    try {
      return read_file(p);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  };
  ExperimentConfig cfg;
  if (!path.empty()) cfg = parse_experiment_config(read_cfg_file(path));
  if (!codec_path.empty()) {
    cfg.codec = parse_codec_config(read_cfg_file(codec_path));
    cfg.validate();
  }
  return cfg;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string sample_filename(size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.fsam", index);
  return buf;
}

// ---------------------------------------------------------------------------
// synth: generate a frustum-sample dataset

inline void cmd_synth(const std::string& config_path, const std::string& out_dir, size_t count,
                      int64_t seed_override = -1, const std::string& codec_path = "") {
  ExperimentConfig cfg = load_config_or_default(config_path, codec_path);
  if (seed_override >= 0) cfg.scene.seed = static_cast<uint64_t>(seed_override);
  ensure_dir(out_dir);
  const auto samples = generate_dataset(cfg.scene, cfg.augment, count, cfg.scene.seed,
                                        cfg.model.num_classes);
  for (size_t i = 0; i < samples.size(); ++i)
    save_sample((fs::path(out_dir) / sample_filename(i)).string(), samples[i]);
  write_file((fs::path(out_dir) / "resolved.cfg").string(), write_experiment_config(cfg));
  std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
}

// ---------------------------------------------------------------------------
// frustumize: KITTI files -> frustum samples

inline void cmd_frustumize(const std::string& calib_path, const std::string& label_path,
                           const std::string& velo_path, const std::string& out_dir,
                           const std::string& config_path = "") {
  ExperimentConfig cfg = load_config_or_default(config_path);
  const CalibKitti calib = parse_calib(read_file(calib_path));
  const auto labels = parse_labels(read_file(label_path));
  const PointCloud cloud = read_velodyne(read_file(velo_path));
  ensure_dir(out_dir);

  size_t written = 0, skipped = 0;
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto& label = labels[i];
    if (!label.known_category()) continue;
    try {
      std::vector<size_t> kept;
      PointCloud cam = lift_frustum(cloud, calib, label.bbox2d, &kept);
      auto [rotated, angle] = rotate_to_center(cam, label.bbox2d, calib);

      FrustumSample sample;
      sample.points = std::move(rotated);
      sample.state.frustum_angle = angle;
      Box3D gt = label_to_box3d(label);
      gt.center = rot_y(angle, gt.center);
      gt.heading = wrap_angle(gt.heading + angle);
      sample.gt_box = gt;
      sample.gt_mask = auto_label_mask(sample.points, gt);
      sample.onehot.assign(cfg.model.num_classes, 0.0);
      const size_t cls = label.category == Category::Car          ? 0
                         : label.category == Category::Pedestrian ? 1
                                                                  : 2;
      sample.onehot[cls < cfg.model.num_classes ? cls : 0] = 1.0;
      save_sample((fs::path(out_dir) / sample_filename(i)).string(), sample);
      ++written;
    } catch (const EmptyFrustumError&) {
      ++skipped;  // proposal without LiDAR evidence
    }
  }
  std::cout << "frustumized " << written << " objects (" << skipped << " empty skipped)\n";
}

// ---------------------------------------------------------------------------
// train

inline EvalStats cmd_train(const std::string& config_path, const std::string& data_dir,
                           const std::string& out_dir, const std::string& codec_path = "") {
  ExperimentConfig cfg = load_config_or_default(config_path, codec_path);
  auto samples = load_sample_dir(data_dir);
  ensure_dir(out_dir);

  // deterministic split: seeded shuffle, tail becomes validation
  Rng split_rng = Rng::stream(cfg.train.seed, "split");
  for (size_t i = samples.size(); i > 1; --i)
    std::swap(samples[i - 1], samples[split_rng.index(i)]);
  const size_t n_val = static_cast<size_t>(samples.size() * cfg.train.val_fraction);
  std::vector<FrustumSample> val(samples.end() - n_val, samples.end());
  samples.resize(samples.size() - n_val);

  Networks nets(cfg.model, cfg.codec, cfg.loss.loss_mode, cfg.train.seed);
  Trainer trainer(cfg, nets);
  const auto logs = trainer.run(samples);

  write_file((fs::path(out_dir) / "metrics.csv").string(), metrics_csv(logs));
  write_file((fs::path(out_dir) / "resolved.cfg").string(), write_experiment_config(cfg));
  nets.save((fs::path(out_dir) / "checkpoint.fpk").string());

  EvalStats stats;
  if (!val.empty())
    stats = evaluate_model(nets, val, cfg.codec, trainer.toggles(), cfg.train.seed, 0.5);
  std::cout << "trained " << cfg.train.steps << " steps on " << samples.size() << " samples; val "
            << val.size() << ": seg_acc=" << stats.seg_accuracy
            << " box_acc@0.5=" << stats.box_accuracy << "\n";
  return stats;
}

// ---------------------------------------------------------------------------
// detect

inline void cmd_detect(const std::string& config_path, const std::string& checkpoint_path,
                       const std::string& data_dir, const std::string& out_path,
                       const std::string& codec_path = "") {
  ExperimentConfig cfg = load_config_or_default(config_path, codec_path);
  Networks nets(cfg.model, cfg.codec, cfg.loss.loss_mode, cfg.train.seed);
  nets.load(checkpoint_path);
  PipelineToggles toggles;
  toggles.mask_centralize = cfg.train.mask_centralize;
  toggles.use_tnet = cfg.train.use_tnet;

  const auto samples = load_sample_dir(data_dir);
  std::vector<LabelKitti> dets;
  for (size_t i = 0; i < samples.size(); ++i) {
    Rng rng = Rng::stream(cfg.train.seed, "masksample/detect", i);
    const ForwardResult res = full_forward(nets, samples[i], cfg.codec, toggles, rng);
    size_t cls = 0;
    for (size_t k = 0; k < samples[i].onehot.size(); ++k)
      if (samples[i].onehot[k] == 1.0) cls = k;
    const std::string name = cls < cfg.scene.category_mix.size()
                                 ? cfg.scene.category_mix[cls].first
                                 : "Car";
    dets.push_back(box3d_to_label(res.decoded, name, res.objectness));
  }
  write_file(out_path, write_detections(dets));
  std::cout << "wrote " << dets.size() << " detections to " << out_path << "\n";
}

// ---------------------------------------------------------------------------
// eval: detections against a synthetic sample directory

struct EvalOutputs {
  double box_accuracy = 0;
  PrCurve curve;
};

inline EvalOutputs cmd_eval(const std::string& dets_path, const std::string& data_dir,
                            double iou_thresh, ApMode mode, const std::string& csv_out = "",
                            const std::string& svg_out = "") {
  const auto dets = parse_labels(read_file(dets_path));
  const auto samples = load_sample_dir(data_dir);
  if (dets.size() != samples.size())
    throw DataError("detection count does not match sample count");

  std::vector<Box3D> preds, gts;
  std::vector<DetectionSet> frames;
  for (size_t i = 0; i < dets.size(); ++i) {
    if (!dets[i].score) throw DataError("detections need scores for evaluation");
    const Box3D pred = label_to_box3d(dets[i]);
    const Box3D gt = gt_box_camera(samples[i]);
    preds.push_back(pred);
    gts.push_back(gt);
    frames.push_back({{{pred, *dets[i].score}}, {gt}});
  }

  EvalOutputs out;
  out.box_accuracy = box_accuracy(preds, gts, iou_thresh);
  out.curve = average_precision(frames, iou_thresh, mode);

  char line[160];
  std::snprintf(line, sizeof(line), "box_accuracy@%.2f = %.4f\nAP(%s)@%.2f = %.4f\n", iou_thresh,
                out.box_accuracy, mode == ApMode::ElevenPoint ? "11pt" : "40pt", iou_thresh,
                out.curve.ap);
  std::cout << line;
  if (!csv_out.empty()) {
    std::string csv = "metric,value\n";
    std::snprintf(line, sizeof(line), "box_accuracy,%.6g\nap,%.6g\n", out.box_accuracy,
                  out.curve.ap);
    csv += line;
    write_file(csv_out, csv);
  }
  if (!svg_out.empty()) write_file(svg_out, pr_curve_svg(out.curve));
  return out;
}

// KITTI-format evaluation: detections against a ground-truth label file,
// AP reported per difficulty bucket. Ground truths outside a bucket are
// dropped from that bucket's gt set (desk-scale simplification of the
// "ignored region" handling in the full protocol).
inline void cmd_eval_kitti(const std::string& dets_path, const std::string& gt_labels_path,
                           double iou_thresh, ApMode mode, const std::string& csv_out = "") {
  const auto det_labels = parse_labels(read_file(dets_path));
  const auto gt_labels = parse_labels(read_file(gt_labels_path));
  std::vector<Detection> dets;
  for (const auto& l : det_labels) {
    if (!l.score) throw DataError("detections need scores for evaluation");
    dets.push_back({label_to_box3d(l), *l.score});
  }

  std::string csv = "difficulty,num_gt,ap\n";
  char line[128];
  for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
    std::vector<Box3D> gts;
    for (const auto& l : gt_labels)
      if (l.known_category() && in_difficulty_bucket(l, d)) gts.push_back(label_to_box3d(l));
    const PrCurve curve = average_precision({{dets, gts}}, iou_thresh, mode);
    const char* name = d == Difficulty::Easy ? "easy" : d == Difficulty::Moderate ? "moderate"
                                                                                  : "hard";
    std::snprintf(line, sizeof(line), "%s,%zu,%.6g\n", name, gts.size(), curve.ap);
    csv += line;
    std::cout << "AP(" << name << ") over " << gts.size() << " gts = " << curve.ap << "\n";
  }
  if (!csv_out.empty()) write_file(csv_out, csv);
}

// ---------------------------------------------------------------------------
// bv-raster and fuse

inline void cmd_bv_raster(const std::string& in_path, const std::string& out_path,
                          const std::string& input_frame = "lidar") {
  const PointCloud cloud = read_velodyne(read_file(in_path));
  BvGridConfig cfg;
  PointCloud bev;
  if (input_frame == "lidar") {
    bev = lidar_to_bev(cloud, cfg.extent);
  } else if (input_frame == "camera") {
    bev = camera_to_bev(cloud, cfg.extent);
  } else {
    throw ConfigError("unknown input frame: " + input_frame);
  }
  const BvGrid grid = rasterize_bv(bev, cfg);
  write_file(out_path, serialize_bv_grid(grid));
  size_t nonzero = 0;
  for (uint32_t c : grid.raw_counts) nonzero += (c > 0);
  std::cout << "rasterized " << cloud.size() << " points into " << grid.nx << "x" << grid.nz
            << "x" << grid.cfg.channels() << " grid (" << nonzero << " occupied cells)\n";
}

inline void cmd_fuse(const std::string& frustum_path, const std::string& bv_path,
                     const std::string& out_path, const FuseConfig& fuse_cfg = {}) {
  auto to_dets = [](const std::vector<LabelKitti>& labels) {
    std::vector<Detection> out;
    for (const auto& l : labels) {
      if (!l.score) throw DataError("fusion inputs need scores");
      out.push_back({label_to_box3d(l), *l.score});
    }
    return out;
  };
  const auto frustum_labels = parse_labels(read_file(frustum_path));
  const auto bv_labels = parse_labels(read_file(bv_path));
  const auto fused =
      fuse_detections(to_dets(frustum_labels), to_dets(bv_labels), fuse_cfg);

  // carry the label row of the winning box (frustum rows first, matching
  // the pooled order inside fuse_detections)
  std::vector<LabelKitti> pooled_labels = frustum_labels;
  pooled_labels.insert(pooled_labels.end(), bv_labels.begin(), bv_labels.end());
  std::vector<LabelKitti> out_labels;
  for (const auto& det : fused) {
    for (auto& l : pooled_labels) {
      Box3D b = label_to_box3d(l);
      if (std::abs(b.center.x - det.box.center.x) < 1e-9 &&
          std::abs(b.center.z - det.box.center.z) < 1e-9 && std::abs(b.h - det.box.h) < 1e-9) {
        LabelKitti kept = l;
        kept.score = det.score;
        out_labels.push_back(kept);
        break;
      }
    }
  }
  write_file(out_path, write_detections(out_labels));
  std::cout << "fused " << frustum_labels.size() << "+" << bv_labels.size() << " -> "
            << out_labels.size() << " detections\n";
}

// ---------------------------------------------------------------------------
// gradcheck and ablate

inline bool cmd_gradcheck(int configs = 20, uint64_t seed = 7) {
  const auto report = run_gradcheck_suite(configs, seed);
  std::cout << gradcheck_report_text(report);
  return report.all_ok;
}

inline void cmd_ablate(const std::string& config_path, const std::string& out_csv,
                       const AblationConfig& abl_in, const std::string& matrix = "both",
                       const std::string& codec_path = "") {
  AblationConfig abl = abl_in;
  abl.base = load_config_or_default(config_path, codec_path);
  std::vector<AblationRowSpec> rows;
  if (matrix == "normalization" || matrix == "both") {
    auto r = normalization_ablation_rows();
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (matrix == "loss" || matrix == "both") {
    auto r = loss_ablation_rows(abl.base.loss.weights.gamma);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (rows.empty()) throw ConfigError("unknown ablation matrix: " + matrix);
  const auto results = run_ablation(abl, rows);
  const std::string csv = ablation_csv(results);
  if (!out_csv.empty()) write_file(out_csv, csv);
  std::cout << csv;
}

// ---------------------------------------------------------------------------
// inspect

inline void cmd_inspect(const std::string& path) {
  const std::string data = read_file(path);
  auto starts_with = [&](const char* magic) { return data.rfind(magic, 0) == 0; };

  if (starts_with("FSAM")) {
    const FrustumSample s = parse_sample(data);
    std::cout << "frustum sample: " << s.points.size() << " points, onehot "
              << s.onehot.size() << ", gt_box " << (s.gt_box ? "yes" : "no")
              << ", frustum_angle " << s.state.frustum_angle << "\n";
    return;
  }
  if (starts_with("BVG1")) {
    const BvGrid g = parse_bv_grid(data);
    std::cout << "BV grid: " << g.nx << "x" << g.nz << "x" << g.cfg.channels() << "\n";
    return;
  }
  if (starts_with("FPK1")) {
    const auto params = parse_checkpoint(data);
    size_t total = 0;
    for (const auto& [name, t] : params) total += t.size();
    std::cout << "checkpoint: " << params.size() << " parameters, " << total << " scalars\n";
    return;
  }
  if (data.find("P2:") != std::string::npos && data.find("Tr_velo_to_cam") != std::string::npos) {
    const CalibKitti c = parse_calib(data);
    std::cout << "calib: fx=" << c.p2(0, 0) << " fy=" << c.p2(1, 1) << " cx=" << c.p2(0, 2)
              << " cy=" << c.p2(1, 2) << "\n";
    return;
  }
  if (path.size() > 4 && path.substr(path.size() - 4) == ".bin") {
    const PointCloud cloud = read_velodyne(data);
    std::cout << "velodyne: " << cloud.size() << " points\n";
    return;
  }
  const auto labels = parse_labels(data);
  std::cout << "labels: " << labels.size() << " objects\n";
  for (const auto& l : labels)
    std::cout << "  " << l.type_name << " z=" << l.location.z << " ry=" << l.rotation_y
              << (l.score ? " score=" + std::to_string(*l.score) : "") << "\n";
}

}  // namespace fk
