#pragma once

// Amodal oriented 3D box: corner generation, the size-template /
// heading-bin codec, rotated-box 3D IoU and greedy 3D NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "frustumkit/core.hpp"

namespace fk {

// Oriented cuboid. Center is the geometric center (not the KITTI
// bottom-face anchor), heading rotates about the camera vertical axis
// with the rotation_y sign convention.
struct Box3D {
  Vec3 center;
  double h = 0, w = 0, l = 0;  // meters
  double heading = 0;          // radians, normalized to [-pi, pi)

  double volume() const { return h * w * l; }
};

// Corner order (documented constant): in the box local frame with x along
// length, z along width and y vertical, corners 0-3 are the top face
// (y = -h/2) counterclockwise seen from above starting at (+l/2, +w/2):
//   0:(+l/2,+w/2) 1:(-l/2,+w/2) 2:(-l/2,-w/2) 3:(+l/2,-w/2)
// and corners 4-7 are the bottom face (y = +h/2) in matching x/z order.
// noinline: corner sets are compared bitwise across call sites.
FK_NOINLINE inline std::array<Vec3, 8> box_corners(const Box3D& box) {
  static constexpr double sx[4] = {+0.5, -0.5, -0.5, +0.5};
  static constexpr double sz[4] = {+0.5, +0.5, -0.5, -0.5};
  std::array<Vec3, 8> out;
  for (int k = 0; k < 8; ++k) {
    const int r = k % 4;
    const Vec3 local{sx[r] * box.l, (k < 4 ? -0.5 : +0.5) * box.h, sz[r] * box.w};
    out[k] = box.center + rot_y(box.heading, local);
  }
  return out;
}

// Inverse of box_corners under the documented order.
inline Box3D box_from_corners(const std::array<Vec3, 8>& c) {
  Box3D box;
  Vec3 sum{};
  for (const auto& p : c) sum += p;
  box.center = sum * (1.0 / 8.0);
  const Vec3 length_dir = c[0] - c[1];  // R * (l, 0, 0)
  box.l = length_dir.norm();
  box.w = (c[0] - c[3]).norm();
  box.h = (c[4] - c[0]).norm();
  box.heading = wrap_angle(std::atan2(-length_dir.z, length_dir.x));
  return box;
}

// ---------------------------------------------------------------------------
// Codec: NS size templates + NH equally split heading bins.

struct SizeTemplate {
  double h = 0, w = 0, l = 0;
  std::string category;
};

struct BoxCodecConfig {
  std::vector<SizeTemplate> size_templates;  // NS entries
  int num_heading_bins = 12;                 // NH

  int ns() const { return static_cast<int>(size_templates.size()); }
  int nh() const { return num_heading_bins; }
  double bin_width() const { return 2.0 * kPi / num_heading_bins; }
  // rounded product: bin centers are compared and cancelled bitwise
  double bin_center(int bin) const { return rounded_product(bin, bin_width()); }
  // Raw box-net output width: 3 + 4*NS + 2*NH.
  int prediction_arity() const { return 3 + 4 * ns() + 2 * nh(); }

  void validate() const {
    if (size_templates.empty()) throw ConfigError("codec needs at least one size template");
    if (num_heading_bins < 1) throw ConfigError("codec needs at least one heading bin");
    for (const auto& t : size_templates)
      if (!(t.h > 0 && t.w > 0 && t.l > 0))
        throw ConfigError("size template dimensions must be positive");
  }

  // KITTI-ish defaults: one template per category used by the synthetic
  // scenes plus the remaining standard vehicle classes.
  static BoxCodecConfig kitti_default() {
    BoxCodecConfig cfg;
    cfg.num_heading_bins = 12;
    cfg.size_templates = {
        {1.53, 1.63, 3.88, "Car"},          {1.76, 0.66, 0.84, "Pedestrian"},
        {1.74, 0.60, 1.76, "Cyclist"},      {2.06, 1.92, 5.06, "Van"},
        {3.25, 2.59, 10.1, "Truck"},        {1.27, 0.59, 0.80, "Person_sitting"},
        {3.53, 2.54, 16.1, "Tram"},         {1.91, 1.51, 3.58, "Misc"},
    };
    return cfg;
  }
};

// Targets for the hybrid cls+reg formulation; residuals are normalized
// (heading by half bin width, size per-axis by the template dimension).
struct ClsRegTarget {
  int heading_bin = 0;
  double heading_residual = 0;  // in [-1, 1]
  int size_class = 0;
  std::array<double, 3> size_residual{};  // (h, w, l) relative
};

// Raw network output, decoded views. Scalar layout in the box-net head:
// [center_delta(3) | heading_scores(NH) | heading_residuals(NH) |
//  size_scores(NS) | size_residuals(NS*3)]
struct BoxPrediction {
  Vec3 center_delta;
  std::vector<double> heading_scores;     // NH
  std::vector<double> heading_residuals;  // NH, normalized
  std::vector<double> size_scores;        // NS
  std::vector<std::array<double, 3>> size_residuals;  // NS x (h,w,l), normalized
};

// Nearest bin center to the heading; exact halfway ties go to the lower
// bin index (so the residual lands at +1, not -1). The bin-center product
// is rounded before the subtraction so that headings sitting exactly on
// a bin center get residual 0 regardless of FMA contraction.
inline int heading_to_bin(double heading, const BoxCodecConfig& cfg, double* residual) {
  const double width = cfg.bin_width();
  double a = heading - 2.0 * kPi * std::floor(heading / (2.0 * kPi));  // [0, 2pi)
  int bin = static_cast<int>(std::ceil(a / width - 0.5));
  if (bin >= cfg.nh()) bin -= cfg.nh();
  if (bin < 0) bin += cfg.nh();
  if (residual) {
    double delta = wrap_angle(a - cfg.bin_center(bin));
    *residual = delta / (width / 2.0);
  }
  return bin;
}

// Template minimizing the sum over axes of |dim - template| / template;
// ties go to the lower template index.
inline int size_to_class(double h, double w, double l, const BoxCodecConfig& cfg,
                         std::array<double, 3>* residual) {
  int best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.ns(); ++i) {
    const auto& t = cfg.size_templates[i];
    double err = std::abs(h - t.h) / t.h + std::abs(w - t.w) / t.w + std::abs(l - t.l) / t.l;
    if (err < best_err) {
      best_err = err;
      best = i;
    }
  }
  if (residual) {
    const auto& t = cfg.size_templates[best];
    *residual = {(h - t.h) / t.h, (w - t.w) / t.w, (l - t.l) / t.l};
  }
  return best;
}

inline ClsRegTarget encode_box(const Box3D& box, const BoxCodecConfig& cfg) {
  ClsRegTarget t;
  t.heading_bin = heading_to_bin(box.heading, cfg, &t.heading_residual);
  t.size_class = size_to_class(box.h, box.w, box.l, cfg, &t.size_residual);
  return t;
}

struct NonFiniteScoreError : NonFiniteError {
  NonFiniteScoreError() : NonFiniteError("box prediction contains non-finite scores") {}
};

namespace detail {
inline int argmax(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NonFiniteScoreError();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}
}  // namespace detail

// Heading and size from the argmax bin/class plus residuals, center via
// recover_center; the frustum rotation is un-applied so the result is in
// the camera frame.
inline Box3D decode_box(const BoxPrediction& pred, const CanonicalizationState& state,
                        const BoxCodecConfig& cfg) {
  const int bin = detail::argmax(pred.heading_scores);
  const int cls = detail::argmax(pred.size_scores);
  Box3D box;
  box.center = recover_center(state, pred.center_delta);
  const double frustum_heading =
      cfg.bin_center(bin) + pred.heading_residuals[bin] * (cfg.bin_width() / 2.0);
  box.heading = wrap_angle(frustum_heading - state.frustum_angle);
  const auto& t = cfg.size_templates[cls];
  const auto& r = pred.size_residuals[cls];
  box.h = t.h * (1.0 + r[0]);
  box.w = t.w * (1.0 + r[1]);
  box.l = t.l * (1.0 + r[2]);
  return box;
}

// One-hot prediction reproducing a ground-truth box through decode_box;
// the codec round-trip in test form.
inline BoxPrediction onehot_prediction(const Box3D& frustum_frame_box,
                                       const CanonicalizationState& state,
                                       const BoxCodecConfig& cfg) {
  const ClsRegTarget t = encode_box(frustum_frame_box, cfg);
  BoxPrediction p;
  p.center_delta = frustum_frame_box.center - state.mask_centroid - state.tnet_delta;
  p.heading_scores.assign(cfg.nh(), 0.0);
  p.heading_residuals.assign(cfg.nh(), 0.0);
  p.heading_scores[t.heading_bin] = 1.0;
  p.heading_residuals[t.heading_bin] = t.heading_residual;
  p.size_scores.assign(cfg.ns(), 0.0);
  p.size_residuals.assign(cfg.ns(), {0.0, 0.0, 0.0});
  p.size_scores[t.size_class] = 1.0;
  p.size_residuals[t.size_class] = t.size_residual;
  return p;
}

// ---------------------------------------------------------------------------
// Rotated 3D IoU: convex polygon clipping in the bird's eye view plane
// times the vertical overlap.

namespace detail {

struct P2d {
  double x, z;
};

inline std::array<P2d, 4> bev_footprint(const Box3D& b) {
  // Counterclockwise in the (x, z) plane.
  static constexpr double sx[4] = {+0.5, -0.5, -0.5, +0.5};
  static constexpr double sz[4] = {+0.5, +0.5, -0.5, -0.5};
  const double c = std::cos(b.heading), s = std::sin(b.heading);
  std::array<P2d, 4> out;
  for (int k = 0; k < 4; ++k) {
    const double lx = sx[k] * b.l, lz = sz[k] * b.w;
    out[k] = {b.center.x + c * lx + s * lz, b.center.z - s * lx + c * lz};
  }
  return out;
}

// Sutherland-Hodgman clip of a convex polygon against the half-plane on
// the left of edge a->b (counterclockwise clip polygon). Cross products
// within rounding noise of zero snap to the edge, otherwise clipping a
// footprint against an identical one erodes slivers off every border.
inline void clip_edge(std::vector<P2d>& poly, const P2d& a, const P2d& b) {
  std::vector<P2d> out;
  out.reserve(poly.size() + 1);
  auto side = [&](const P2d& p) {
    const double cross = (b.x - a.x) * (p.z - a.z) - (b.z - a.z) * (p.x - a.x);
    const double scale = (std::abs(b.x - a.x) + std::abs(b.z - a.z)) *
                         (std::abs(p.x - a.x) + std::abs(p.z - a.z));
    return std::abs(cross) <= 1e-12 * scale ? 0.0 : cross;
  };
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const P2d& cur = poly[i];
    const P2d& nxt = poly[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0) out.push_back(cur);
    if ((sc > 0 && sn < 0) || (sc < 0 && sn > 0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.z + t * (nxt.z - cur.z)});
    }
  }
  poly = std::move(out);
}

inline double polygon_area(const std::vector<P2d>& poly) {
  if (poly.size() < 3) return 0.0;
  double twice = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const P2d& a = poly[i];
    const P2d& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.z - b.x * a.z;
  }
  return std::abs(twice) / 2.0;
}

inline double bev_overlap(const Box3D& a, const Box3D& b) {
  const auto fa = bev_footprint(a);
  const auto fb = bev_footprint(b);
  std::vector<P2d> poly(fa.begin(), fa.end());
  for (int k = 0; k < 4 && !poly.empty(); ++k) clip_edge(poly, fb[k], fb[(k + 1) % 4]);
  return polygon_area(poly);
}

}  // namespace detail

// Intersection-over-union of two oriented boxes sharing the vertical
// axis. Degenerate inputs (no vertical overlap, zero volumes) yield 0.
inline double iou3d(const Box3D& a, const Box3D& b) {
  const double y_overlap = std::min(a.center.y + a.h / 2.0, b.center.y + b.h / 2.0) -
                           std::max(a.center.y - a.h / 2.0, b.center.y - b.h / 2.0);
  if (y_overlap <= 0.0) return 0.0;
  const double inter = detail::bev_overlap(a, b) * y_overlap;
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

// Greedy NMS by descending score; a box is suppressed when its IoU with
// an already kept box exceeds the threshold. Ties in score keep the
// lower original index first, so the result is input-order independent
// for distinct scores.
inline std::vector<size_t> nms3d(const std::vector<std::pair<Box3D, double>>& boxes,
                                 double iou_threshold) {
  std::vector<size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (const auto& [box, score] : boxes)
    if (!std::isfinite(score)) throw NonFiniteScoreError();
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return boxes[a].second > boxes[b].second; });
  std::vector<size_t> kept;
  for (size_t idx : order) {
    bool suppressed = false;
    for (size_t k : kept) {
      if (iou3d(boxes[idx].first, boxes[k].first) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace fk
