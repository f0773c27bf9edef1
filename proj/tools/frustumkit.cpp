// frustumkit: synthetic-data 3D detection pipeline CLI.
// Exit codes: 0 success, 2 config error, 3 data error, 4 check failure.

#include <CLI11.hpp>
#include <iostream>

#include "frustumkit/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"frustum point-cloud 3D detection toolkit"};
  app.require_subcommand(1);

  std::string config_path, codec_path, out_dir, data_dir, in_path, out_path;
  std::string calib_path, label_path, velo_path, checkpoint_path, kitti_gt;
  std::string frustum_dets, bv_dets, matrix = "both", input_frame = "lidar";
  std::string csv_out, svg_out;
  size_t count = 100;
  int64_t seed = -1;
  double iou = 0.5;
  bool forty_point = false;
  int gradcheck_configs = 20;
  fk::AblationConfig abl;
  fk::FuseConfig fuse_cfg;
  int threads = 1;

  auto* synth = app.add_subcommand("synth", "generate synthetic frustum samples");
  synth->add_option("--spec,--config", config_path, "experiment config file");
  synth->add_option("--codec", codec_path, "codec config override");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of samples")->required();
  synth->add_option("--seed", seed, "override the scene seed");

  auto* frustumize = app.add_subcommand("frustumize", "KITTI frame -> frustum samples");
  frustumize->add_option("--calib", calib_path)->required();
  frustumize->add_option("--label", label_path)->required();
  frustumize->add_option("--velodyne", velo_path)->required();
  frustumize->add_option("--out", out_dir)->required();
  frustumize->add_option("--config", config_path);

  auto* train = app.add_subcommand("train", "train the three nets end to end");
  train->add_option("--config", config_path);
  train->add_option("--codec", codec_path, "codec config override");
  train->add_option("--data", data_dir, "directory of .fsam samples")->required();
  train->add_option("--out", out_dir)->required();

  auto* detect = app.add_subcommand("detect", "run the pipeline, write KITTI detections");
  detect->add_option("--config", config_path);
  detect->add_option("--codec", codec_path, "codec config override");
  detect->add_option("--checkpoint", checkpoint_path)->required();
  detect->add_option("--data", data_dir)->required();
  detect->add_option("--out", out_path)->required();

  auto* eval = app.add_subcommand("eval", "evaluate detections against sample ground truth");
  eval->add_option("--dets", in_path)->required();
  eval->add_option("--data", data_dir, "directory of .fsam samples with gt");
  eval->add_option("--kitti-gt", kitti_gt, "KITTI label file as gt (difficulty buckets)");
  eval->add_option("--iou", iou, "IoU threshold (default 0.5)");
  eval->add_flag("--forty-point", forty_point, "40-point AP instead of 11-point");
  eval->add_option("--csv", csv_out);
  eval->add_option("--svg", svg_out, "write the PR curve as SVG");

  auto* bv_raster = app.add_subcommand("bv-raster", "rasterize a cloud into the BV grid");
  bv_raster->add_option("--in", in_path, "velodyne .bin")->required();
  bv_raster->add_option("--out", out_path)->required();
  bv_raster->add_option("--frame", input_frame, "input frame: lidar|camera");

  auto* fuse = app.add_subcommand("fuse", "fuse frustum and BV detections via weighted NMS");
  fuse->add_option("--frustum", frustum_dets)->required();
  fuse->add_option("--bv", bv_dets)->required();
  fuse->add_option("--out", out_path)->required();
  fuse->add_option("--bv-weight", fuse_cfg.bv_weight, "BV score weight (default 0.5)");
  fuse->add_option("--iou", fuse_cfg.iou_threshold, "NMS IoU threshold (default 0.8)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  gradcheck->add_option("--configs", gradcheck_configs, "random configs per item");

  auto* ablate = app.add_subcommand("ablate", "normalization / loss ablation matrices");
  ablate->add_option("--config", config_path);
  ablate->add_option("--out", csv_out);
  ablate->add_option("--matrix", matrix, "normalization|loss|both");
  ablate->add_option("--train-samples", abl.train_samples);
  ablate->add_option("--eval-samples", abl.eval_samples);
  ablate->add_option("--iou", abl.iou_thresh);
  ablate->add_option("--seeds", abl.seeds, "seeds, e.g. --seeds 1 2 3");

  auto* inspect = app.add_subcommand("inspect", "summarize a calib/label/velodyne/fsam file");
  inspect->add_option("file", in_path)->required();

  app.add_option("--threads", threads, "worker cap (commands are single-process)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) fk::cmd_synth(config_path, out_dir, count, seed, codec_path);
    if (frustumize->parsed())
      fk::cmd_frustumize(calib_path, label_path, velo_path, out_dir, config_path);
    if (train->parsed()) fk::cmd_train(config_path, data_dir, out_dir, codec_path);
    if (detect->parsed())
      fk::cmd_detect(config_path, checkpoint_path, data_dir, out_path, codec_path);
    if (eval->parsed()) {
      const auto mode = forty_point ? fk::ApMode::FortyPoint : fk::ApMode::ElevenPoint;
      if (!kitti_gt.empty()) {
        fk::cmd_eval_kitti(in_path, kitti_gt, iou, mode, csv_out);
      } else if (!data_dir.empty()) {
        fk::cmd_eval(in_path, data_dir, iou, mode, csv_out, svg_out);
      } else {
        throw fk::ConfigError("eval needs --data or --kitti-gt");
      }
    }
    if (bv_raster->parsed()) fk::cmd_bv_raster(in_path, out_path, input_frame);
    if (fuse->parsed()) fk::cmd_fuse(frustum_dets, bv_dets, out_path, fuse_cfg);
    if (gradcheck->parsed()) {
      if (!fk::cmd_gradcheck(gradcheck_configs)) return 4;
    }
    if (ablate->parsed()) fk::cmd_ablate(config_path, csv_out, abl, matrix, codec_path);
    if (inspect->parsed()) fk::cmd_inspect(in_path);
  } catch (const fk::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fk::FkError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
