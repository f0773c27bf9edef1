#pragma once

// The multi-task objective: segmentation cross-entropy, the two center
// regressions (T-Net and box net), heading/size classification and
// residual regression, and the corner-loss regularizer, all with
// gradients flowing through the tape.

#include <array>
#include <utility>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/frustum.hpp"
#include "frustumkit/models.hpp"
#include "frustumkit/tensor.hpp"

namespace fk {

struct LossWeights {
  double lambda = 1.0;  // weight on the box-branch terms
  double gamma = 10.0;  // corner-loss weight inside the box branch

  void validate() const {
    if (lambda < 0 || gamma < 0) throw ConfigError("loss weights must be non-negative");
  }
};

// Whether corner-loss anchors carry the predicted residuals or stay at
// the raw template/bin geometry. With residuals the corner term sends
// gradient into the residual heads as well.
enum class CornerAnchorMode { Literal, WithResiduals };

struct LossBreakdown {
  double seg = 0, c1_reg = 0, c2_reg = 0, h_cls = 0, h_reg = 0, s_cls = 0, s_reg = 0,
         corner = 0, total = 0;
};

// Per-sample supervision in the frustum frame.
struct SampleTargets {
  std::vector<int> seg_labels;  // 0 background, 1 object
  Box3D gt_box;                 // frustum frame
  ClsRegTarget clsreg;
};

inline SampleTargets make_targets(const FrustumSample& sample, const BoxCodecConfig& cfg) {
  if (!sample.gt_box) throw DataError("sample has no ground-truth box");
  if (sample.gt_mask.size() != sample.points.size())
    throw DataError("sample has no per-point labels");
  SampleTargets t;
  t.seg_labels.reserve(sample.gt_mask.size());
  for (bool b : sample.gt_mask) t.seg_labels.push_back(b ? 1 : 0);
  t.gt_box = *sample.gt_box;
  t.clsreg = encode_box(t.gt_box, cfg);
  return t;
}

// Huber (smooth-l1): 0.5 r^2 inside delta, linear outside.
inline double huber(double r, double delta = 1.0) {
  return std::abs(r) <= delta ? 0.5 * r * r : delta * (std::abs(r) - delta / 2.0);
}

// ---------------------------------------------------------------------------
// Corner loss

namespace detail {

// Ground-truth corner sets for the original and pi-flipped headings.
// The heading is reduced to its half-turn canonical representative first,
// which makes the pair - and therefore the loss - exactly symmetric under
// gt heading -> gt heading + pi.
inline std::pair<std::array<Vec3, 8>, std::array<Vec3, 8>> gt_corner_pair(const Box3D& gt) {
  const double canon = wrap_half(gt.heading);
  const double flipped = canon >= 0.0 ? canon - kPi : canon + kPi;
  Box3D a = gt;
  a.heading = canon;
  Box3D b = gt;
  b.heading = flipped;
  return {box_corners(a), box_corners(b)};
}

inline std::vector<double> flatten_corners(const std::array<Vec3, 8>& c) {
  std::vector<double> out;
  out.reserve(24);
  for (const auto& p : c) {
    out.push_back(p.x);
    out.push_back(p.y);
    out.push_back(p.z);
  }
  return out;
}

}  // namespace detail

// Corner-loss value: the anchor box for the ground-truth (size, heading)
// class is placed at the estimated center; the loss is the smaller of
// the summed corner distances to the gt box and to the pi-flipped gt box.
inline double corner_loss(const BoxPrediction& pred, const CanonicalizationState& state,
                          const ClsRegTarget& target, const Box3D& gt, const BoxCodecConfig& cfg,
                          CornerAnchorMode mode = CornerAnchorMode::WithResiduals) {
  const int j = target.heading_bin;
  const int i = target.size_class;
  const auto& t = cfg.size_templates[i];

  Box3D anchor;
  anchor.center = state.mask_centroid + state.tnet_delta + pred.center_delta;
  if (mode == CornerAnchorMode::Literal) {
    anchor.heading = wrap_angle(cfg.bin_center(j));
    anchor.h = t.h;
    anchor.w = t.w;
    anchor.l = t.l;
  } else {
    // rounded products: a zero residual must reproduce the bin center
    // and template dimensions bitwise
    anchor.heading = wrap_angle(
        cfg.bin_center(j) + rounded_product(pred.heading_residuals[j], cfg.bin_width() / 2.0));
    const auto& r = pred.size_residuals[i];
    anchor.h = rounded_product(r[0], t.h) + t.h;
    anchor.w = rounded_product(r[1], t.w) + t.w;
    anchor.l = rounded_product(r[2], t.l) + t.l;
  }

  const auto a_corners = box_corners(anchor);
  const auto [g1, g2] = detail::gt_corner_pair(gt);
  double s1 = 0.0, s2 = 0.0;
  for (int k = 0; k < 8; ++k) {
    s1 += distance(a_corners[k], g1[k]);
    s2 += distance(a_corners[k], g2[k]);
  }
  return std::min(s1, s2);
}

// ---------------------------------------------------------------------------
// Multi-task loss on the tape

// Tape handles produced by the forward pass of one sample.
struct BoxHeads {
  ValueId seg_logits = 0;  // [N,2]
  bool has_tnet = false;
  ValueId tnet_delta = 0;  // [3] when has_tnet
  ValueId box_output = 0;  // [arity]
  Vec3 mask_centroid;      // constant; zero when centralization is off
};

struct LossOptions {
  LossWeights weights;
  BoxLossMode loss_mode = BoxLossMode::ClsRegNormalized;
  CornerAnchorMode anchor_mode = CornerAnchorMode::WithResiduals;
  double huber_delta = 1.0;
};

inline ValueId multi_task_loss(Tape& tape, const BoxHeads& heads, const SampleTargets& targets,
                               const BoxCodecConfig& cfg, const LossOptions& opt,
                               LossBreakdown* breakdown = nullptr) {
  const Vec3 gt_center = targets.gt_box.center;
  const double delta = opt.huber_delta;

  ValueId seg = tape.softmax_cross_entropy_rows(heads.seg_logits, targets.seg_labels);

  ValueId c1;
  if (heads.has_tnet) {
    const Vec3 target = gt_center - heads.mask_centroid;
    c1 = tape.huber_to_const(heads.tnet_delta, {target.x, target.y, target.z}, delta);
  } else {
    c1 = tape.constant(Tensor::scalar(0.0));
  }

  ValueId box_delta = tape.slice_vec(heads.box_output, 0, 3);
  ValueId center_sum = heads.has_tnet ? tape.add(box_delta, heads.tnet_delta) : box_delta;
  ValueId center_pred = tape.add_cvec(
      center_sum, {heads.mask_centroid.x, heads.mask_centroid.y, heads.mask_centroid.z});
  ValueId c2 = tape.huber_to_const(center_pred, {gt_center.x, gt_center.y, gt_center.z}, delta);

  ValueId h_cls, h_reg, s_cls, s_reg;
  ValueId anchor_heading, anchor_size;  // for the corner term
  const int nh = cfg.nh(), ns = cfg.ns();
  const int j = targets.clsreg.heading_bin;
  const int i = targets.clsreg.size_class;
  const auto& tmpl = cfg.size_templates[i];
  const std::vector<double> tmpl_vec = {tmpl.h, tmpl.w, tmpl.l};

  if (opt.loss_mode == BoxLossMode::RegressionOnly) {
    h_cls = tape.constant(Tensor::scalar(0.0));
    s_cls = tape.constant(Tensor::scalar(0.0));
    ValueId h_raw = tape.pick(heads.box_output, 3);
    h_reg = tape.huber_to_const(h_raw, {targets.gt_box.heading}, delta);
    ValueId s_raw = tape.slice_vec(heads.box_output, 4, 3);
    s_reg = tape.huber_to_const(s_raw, {targets.gt_box.h, targets.gt_box.w, targets.gt_box.l},
                                delta);
    anchor_heading = tape.wrap_angle_op(h_raw);
    anchor_size = s_raw;
  } else {
    const bool normalized = opt.loss_mode == BoxLossMode::ClsRegNormalized;
    const double half_bin = cfg.bin_width() / 2.0;
    ValueId h_scores = tape.slice_vec(heads.box_output, 3, nh);
    ValueId h_res_all = tape.slice_vec(heads.box_output, 3 + nh, nh);
    ValueId s_scores = tape.slice_vec(heads.box_output, 3 + 2 * nh, ns);
    ValueId s_res = tape.slice_vec(heads.box_output, 3 + 2 * nh + ns + 3 * i, 3);

    h_cls = tape.softmax_cross_entropy_vec(h_scores, j);
    s_cls = tape.softmax_cross_entropy_vec(s_scores, i);

    ValueId h_res = tape.pick(h_res_all, static_cast<size_t>(j));
    const double h_target =
        normalized ? targets.clsreg.heading_residual : targets.clsreg.heading_residual * half_bin;
    h_reg = tape.huber_to_const(h_res, {h_target}, delta);

    std::vector<double> s_target(3);
    for (int a = 0; a < 3; ++a)
      s_target[a] = normalized ? targets.clsreg.size_residual[a]
                               : targets.clsreg.size_residual[a] * tmpl_vec[a];
    s_reg = tape.huber_to_const(s_res, s_target, delta);

    if (opt.anchor_mode == CornerAnchorMode::Literal) {
      anchor_heading =
          tape.constant(Tensor::scalar(wrap_angle(cfg.bin_center(j))));
      anchor_size = tape.constant(Tensor::vector(tmpl_vec));
    } else if (normalized) {
      anchor_heading =
          tape.wrap_angle_op(tape.add_cvec(tape.scale(h_res, half_bin), {cfg.bin_center(j)}));
      anchor_size = tape.add_cvec(tape.mul_cvec(s_res, tmpl_vec), tmpl_vec);
    } else {
      anchor_heading = tape.wrap_angle_op(tape.add_cvec(h_res, {cfg.bin_center(j)}));
      anchor_size = tape.add_cvec(s_res, tmpl_vec);
    }
  }

  ValueId anchor_corners = tape.box_corners_op(center_pred, anchor_size, anchor_heading);
  const auto [g1, g2] = detail::gt_corner_pair(targets.gt_box);
  ValueId s1 = tape.row_distance_sum(anchor_corners, detail::flatten_corners(g1));
  ValueId s2 = tape.row_distance_sum(anchor_corners, detail::flatten_corners(g2));
  ValueId corner = tape.min2(s1, s2);

  ValueId box_sum = tape.add(c1, c2);
  box_sum = tape.add(box_sum, h_cls);
  box_sum = tape.add(box_sum, h_reg);
  box_sum = tape.add(box_sum, s_cls);
  box_sum = tape.add(box_sum, s_reg);
  box_sum = tape.add_scaled(box_sum, corner, opt.weights.gamma);
  ValueId total = tape.add_scaled(seg, box_sum, opt.weights.lambda);

  if (breakdown) {
    breakdown->seg = tape.value(seg).scalar_value();
    breakdown->c1_reg = tape.value(c1).scalar_value();
    breakdown->c2_reg = tape.value(c2).scalar_value();
    breakdown->h_cls = tape.value(h_cls).scalar_value();
    breakdown->h_reg = tape.value(h_reg).scalar_value();
    breakdown->s_cls = tape.value(s_cls).scalar_value();
    breakdown->s_reg = tape.value(s_reg).scalar_value();
    breakdown->corner = tape.value(corner).scalar_value();
    breakdown->total = tape.value(total).scalar_value();
  }
  return total;
}

}  // namespace fk
