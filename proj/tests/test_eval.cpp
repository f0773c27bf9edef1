#include <gtest/gtest.h>

#include "frustumkit/box3d.hpp"
#include "frustumkit/eval.hpp"

namespace {

using namespace fk;

TEST(SegAccuracy, BasicCases) {
  const std::vector<bool> a = {true, false, true, false};
  EXPECT_EQ(seg_accuracy(a, a), 1.0);
  const std::vector<bool> b = {false, true, false, true};
  EXPECT_EQ(seg_accuracy(a, b), 0.0);
  const std::vector<bool> c = {true, true, false, false};
  EXPECT_EQ(seg_accuracy(a, c), 0.5);
}

Box3D box_at(double x, double z, double heading = 0.2) {
  Box3D b;
  b.center = {x, 0.1, z};
  b.h = 1.5;
  b.w = 1.6;
  b.l = 3.9;
  b.heading = heading;
  return b;
}

TEST(BoxAccuracy, EncodedGtDecodesToCorrect) {
  const BoxCodecConfig cfg = BoxCodecConfig::kitti_default();
  const CanonicalizationState state;
  std::vector<Box3D> gts, preds;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Box3D b = box_at(rng.uniform(-10, 10), rng.uniform(8, 40), rng.uniform(-kPi, kPi));
    gts.push_back(b);
    preds.push_back(decode_box(onehot_prediction(b, state, cfg), state, cfg));
  }
  EXPECT_EQ(box_accuracy(preds, gts, 0.7), 1.0);
}

TEST(BoxAccuracy, EmptySets) {
  EXPECT_EQ(box_accuracy({}, {}, 0.7), 0.0);
}

TEST(BoxAccuracy, HandVerifiedIouList) {
  // offsets with known axis-aligned IoU: dx -> overlap (l-dx)/(l+dx) along x
  std::vector<Box3D> gts, preds;
  std::vector<double> expected_iou;
  for (double dx : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    Box3D gt = box_at(0, 15, 0.0);
    Box3D pred = gt;
    pred.center.x += dx;
    gts.push_back(gt);
    preds.push_back(pred);
    const double inter = std::max(0.0, gt.l - dx) * gt.w * gt.h;
    const double uni = 2 * gt.volume() - inter;
    expected_iou.push_back(inter / uni);
  }
  for (size_t i = 0; i < gts.size(); ++i)
    EXPECT_NEAR(iou3d(preds[i], gts[i]), expected_iou[i], 1e-9);
  size_t hits = 0;
  for (double v : expected_iou) hits += (v >= 0.5);
  EXPECT_NEAR(box_accuracy(preds, gts, 0.5),
              static_cast<double>(hits) / gts.size(), 1e-12);
}

std::vector<DetectionSet> single_frame(std::vector<Detection> dets, std::vector<Box3D> gts) {
  return {DetectionSet{std::move(dets), std::move(gts)}};
}

TEST(AveragePrecision, PerfectDetector) {
  std::vector<Detection> dets;
  std::vector<Box3D> gts;
  for (int i = 0; i < 5; ++i) {
    const Box3D b = box_at(i * 12.0, 15);
    gts.push_back(b);
    dets.push_back({b, 0.9 - 0.05 * i});
  }
  const PrCurve curve = average_precision(single_frame(dets, gts), 0.7);
  EXPECT_EQ(curve.ap, 1.0);
}

TEST(AveragePrecision, NoDetections) {
  const PrCurve curve = average_precision(single_frame({}, {box_at(0, 10)}), 0.7);
  EXPECT_EQ(curve.ap, 0.0);
}

TEST(AveragePrecision, CraftedCaseMatchesHandComputed11Point) {
  // 2 gts; 3 dets: best-scored hits gt0, second is a false positive,
  // third hits gt1.
  const Box3D g0 = box_at(0, 10);
  const Box3D g1 = box_at(20, 15);
  const Box3D far_fp = box_at(-25, 30);
  std::vector<Detection> dets = {{g0, 0.9}, {far_fp, 0.8}, {g1, 0.7}};
  const PrCurve curve = average_precision(single_frame(dets, {g0, g1}), 0.7);
  // PR events: TP (p=1, r=.5), FP (p=.5, r=.5), TP (p=2/3, r=1)
  // 11-point: recalls 0..0.5 take precision 1 (max at r>=0.5), recalls
  // 0.6..1.0 take 2/3 -> AP = (6*1 + 5*2/3)/11
  const double expect = (6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0;
  EXPECT_NEAR(curve.ap, expect, 1e-12);
}

TEST(AveragePrecision, FortyPointProtocol) {
  const Box3D g0 = box_at(0, 10);
  const Box3D g1 = box_at(20, 15);
  const Box3D far_fp = box_at(-25, 30);
  std::vector<Detection> dets = {{g0, 0.9}, {far_fp, 0.8}, {g1, 0.7}};
  const PrCurve curve =
      average_precision(single_frame(dets, {g0, g1}), 0.7, ApMode::FortyPoint);
  // recalls 1/40..20/40 -> precision 1; 21/40..40/40 -> 2/3
  const double expect = (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
  EXPECT_NEAR(curve.ap, expect, 1e-12);
  EXPECT_EQ(curve.precision_samples.size(), 40u);
}

TEST(AveragePrecision, InvariantUnderMonotoneScoreRescaling) {
  Rng rng(7);
  std::vector<Detection> dets;
  std::vector<Box3D> gts;
  for (int i = 0; i < 12; ++i) {
    const Box3D b = box_at(rng.uniform(-30, 30), rng.uniform(8, 40));
    gts.push_back(b);
    Box3D noisy = b;
    noisy.center.x += rng.uniform(-1.5, 1.5);
    dets.push_back({noisy, rng.uniform(0.1, 0.9)});
  }
  const double base = average_precision(single_frame(dets, gts), 0.25).ap;
  std::vector<Detection> rescaled = dets;
  for (auto& d : rescaled) d.score = 10.0 * d.score * d.score + 3.0;  // strictly monotone on (0,1)
  const double rescored = average_precision(single_frame(rescaled, gts), 0.25).ap;
  EXPECT_EQ(base, rescored);
}

TEST(AveragePrecision, PrecisionSamplesNonIncreasing) {
  Rng rng(11);
  std::vector<Detection> dets;
  std::vector<Box3D> gts;
  for (int i = 0; i < 15; ++i) {
    const Box3D b = box_at(rng.uniform(-40, 40), rng.uniform(8, 50));
    gts.push_back(b);
    Box3D noisy = b;
    noisy.center.x += rng.uniform(-3.0, 3.0);
    dets.push_back({noisy, rng.uniform(0, 1)});
  }
  const PrCurve curve = average_precision(single_frame(dets, gts), 0.3);
  for (size_t i = 1; i < curve.precision_samples.size(); ++i)
    EXPECT_LE(curve.precision_samples[i], curve.precision_samples[i - 1] + 1e-15);
  EXPECT_GE(curve.ap, 0.0);
  EXPECT_LE(curve.ap, 1.0);
}

TEST(AveragePrecision, OneGtMatchesAtMostOnce) {
  const Box3D g = box_at(0, 10);
  std::vector<Detection> dets = {{g, 0.9}, {g, 0.8}};  // duplicate detection
  const PrCurve curve = average_precision(single_frame(dets, {g}), 0.7);
  ASSERT_EQ(curve.events.size(), 2u);
  EXPECT_TRUE(curve.events[0].tp);
  EXPECT_FALSE(curve.events[1].tp);  // second duplicate is a false positive
}

TEST(PrCurveSvg, EmitsPolyline) {
  const Box3D g = box_at(0, 10);
  const PrCurve curve = average_precision(single_frame({{g, 0.9}}, {g}), 0.7);
  const std::string svg = pr_curve_svg(curve);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
}

TEST(DifficultyBuckets, StandardThresholds) {
  LabelKitti easy;
  easy.bbox2d = {0, 0, 50, 45};  // 45 px tall
  easy.occluded = 0;
  easy.truncated = 0.1;
  EXPECT_TRUE(in_difficulty_bucket(easy, Difficulty::Easy));
  EXPECT_TRUE(in_difficulty_bucket(easy, Difficulty::Moderate));

  LabelKitti moderate = easy;
  moderate.bbox2d = {0, 0, 50, 30};  // 30 px
  moderate.occluded = 1;
  EXPECT_FALSE(in_difficulty_bucket(moderate, Difficulty::Easy));
  EXPECT_TRUE(in_difficulty_bucket(moderate, Difficulty::Moderate));

  LabelKitti hard = easy;
  hard.bbox2d = {0, 0, 50, 26};
  hard.occluded = 2;
  hard.truncated = 0.4;
  EXPECT_FALSE(in_difficulty_bucket(hard, Difficulty::Moderate));
  EXPECT_TRUE(in_difficulty_bucket(hard, Difficulty::Hard));
}

}  // namespace
