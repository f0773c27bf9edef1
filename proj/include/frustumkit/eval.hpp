#pragma once

// Metrics: per-point segmentation accuracy, box-estimation accuracy at an
// IoU threshold, greedy-matched precision-recall with interpolated AP
// (11-point and 40-point protocols), and KITTI difficulty buckets.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/bv.hpp"
#include "frustumkit/kitti_io.hpp"

namespace fk {

inline double seg_accuracy(const std::vector<bool>& pred, const std::vector<bool>& gt) {
  if (pred.size() != gt.size()) throw DataError("mask size mismatch");
  if (pred.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += (pred[i] == gt[i]);
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// Fraction of paired samples whose predicted box reaches the IoU
// threshold against its ground truth.
inline double box_accuracy(const std::vector<Box3D>& preds, const std::vector<Box3D>& gts,
                           double iou_thresh = 0.7) {
  if (preds.size() != gts.size()) throw DataError("pred/gt count mismatch");
  if (gts.empty()) return 0.0;
  size_t hits = 0;
  for (size_t i = 0; i < preds.size(); ++i)
    if (iou3d(preds[i], gts[i]) >= iou_thresh) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

// ---------------------------------------------------------------------------
// Precision-recall and average precision

enum class ApMode { ElevenPoint, FortyPoint };

struct PrPoint {
  double score = 0;
  bool tp = false;
};

struct PrCurve {
  std::vector<PrPoint> events;             // sorted by descending score
  std::vector<double> precision_samples;   // interpolated, one per recall sample
  size_t num_gts = 0;
  double ap = 0.0;
};

// One frame's detections and ground truths.
struct DetectionSet {
  std::vector<Detection> dets;
  std::vector<Box3D> gts;
};

// Greedy matching in descending score order: a detection matches the
// still-unmatched gt of highest IoU in its frame; a match below the
// threshold is a false positive. Ties in score keep input order.
inline PrCurve average_precision(const std::vector<DetectionSet>& frames, double iou_thresh,
                                 ApMode mode = ApMode::ElevenPoint) {
  struct Entry {
    double score;
    size_t frame, det;
  };
  std::vector<Entry> entries;
  size_t num_gts = 0;
  for (size_t f = 0; f < frames.size(); ++f) {
    num_gts += frames[f].gts.size();
    for (size_t d = 0; d < frames[f].dets.size(); ++d)
      entries.push_back({frames[f].dets[d].score, f, d});
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.score > b.score; });

  PrCurve curve;
  curve.num_gts = num_gts;
  std::vector<std::vector<bool>> gt_used(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) gt_used[f].assign(frames[f].gts.size(), false);

  for (const auto& e : entries) {
    const auto& frame = frames[e.frame];
    const Box3D& det_box = frame.dets[e.det].box;
    double best_iou = 0.0;
    size_t best_gt = 0;
    bool found = false;
    for (size_t g = 0; g < frame.gts.size(); ++g) {
      if (gt_used[e.frame][g]) continue;
      const double iou = iou3d(det_box, frame.gts[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = g;
        found = true;
      }
    }
    const bool tp = found && best_iou >= iou_thresh;
    if (tp) gt_used[e.frame][best_gt] = true;
    curve.events.push_back({e.score, tp});
  }

  // raw PR points, then interpolated precision at the protocol recalls
  std::vector<double> precision, recall;
  size_t tp_count = 0;
  for (size_t i = 0; i < curve.events.size(); ++i) {
    tp_count += curve.events[i].tp;
    precision.push_back(static_cast<double>(tp_count) / static_cast<double>(i + 1));
    recall.push_back(num_gts == 0 ? 0.0
                                  : static_cast<double>(tp_count) / static_cast<double>(num_gts));
  }

  auto precision_at = [&](double r) {
    double best = 0.0;
    for (size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) best = std::max(best, precision[i]);
    return best;
  };

  const int samples = mode == ApMode::ElevenPoint ? 11 : 40;
  double sum = 0.0;
  for (int s = 0; s < samples; ++s) {
    // 11-point: recalls 0, 0.1 .. 1.0; 40-point: 1/40 .. 40/40
    const double r = mode == ApMode::ElevenPoint ? s / 10.0 : (s + 1) / 40.0;
    const double p = precision_at(r);  // max over recall >= r, non-increasing by construction
    curve.precision_samples.push_back(p);
    sum += p;
  }
  curve.ap = sum / samples;
  return curve;
}

// PR curve as an SVG polyline, precision over recall on a unit square.
inline std::string pr_curve_svg(const PrCurve& curve, int size_px = 400) {
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                    std::to_string(size_px) + "\" height=\"" + std::to_string(size_px) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\" stroke=\"black\"/>\n";
  svg += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  size_t tp_count = 0;
  char buf[64];
  for (size_t i = 0; i < curve.events.size(); ++i) {
    tp_count += curve.events[i].tp;
    const double recall =
        curve.num_gts == 0 ? 0.0 : static_cast<double>(tp_count) / curve.num_gts;
    const double precision = static_cast<double>(tp_count) / static_cast<double>(i + 1);
    std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", recall * size_px,
                  (1.0 - precision) * size_px);
    svg += buf;
  }
  svg += "\"/>\n</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// KITTI difficulty buckets (standard protocol thresholds; applied only
// when evaluating KITTI-format labels)

enum class Difficulty { Easy, Moderate, Hard };

inline bool in_difficulty_bucket(const LabelKitti& label, Difficulty d) {
  static constexpr double kMinHeight[3] = {40.0, 25.0, 25.0};
  static constexpr int kMaxOcclusion[3] = {0, 1, 2};
  static constexpr double kMaxTruncation[3] = {0.15, 0.3, 0.5};
  const int i = static_cast<int>(d);
  const double height = label.bbox2d.height();
  return height >= kMinHeight[i] && label.occluded <= kMaxOcclusion[i] &&
         label.truncated <= kMaxTruncation[i];
}

}  // namespace fk
