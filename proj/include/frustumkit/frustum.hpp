#pragma once

// Frustum proposal extraction and the coordinate canonicalization chain:
// camera -> frustum (center-view rotation) -> mask (centroid subtraction)
// -> object (T-Net shift), plus the frustum-level augmentations.

#include <optional>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/core.hpp"
#include "frustumkit/kitti_io.hpp"

namespace fk {

// One training/inference unit. Points are in the frustum frame; the
// ground-truth box (when present) is expressed in the same frustum frame
// so that augmentations keep points, mask and box consistent.
struct FrustumSample {
  PointCloud points;             // frame == Frustum
  std::vector<double> onehot;    // exactly one entry is 1
  CanonicalizationState state;   // frustum_angle filled at construction
  std::vector<bool> gt_mask;     // per point, empty when unlabeled
  std::optional<Box3D> gt_box;   // frustum frame

  void check() const {
    if (!gt_mask.empty() && gt_mask.size() != points.size())
      throw DataError("gt_mask length does not match point count");
    int ones = 0;
    for (double v : onehot) ones += (v == 1.0);
    if (!onehot.empty() && ones != 1) throw DataError("onehot must have exactly one 1");
  }
};

// ---------------------------------------------------------------------------
// Frustum lifting

namespace detail {
inline Vec3 to_camera_frame(const PointXYZI& p, const PointCloud& cloud,
                            const CalibKitti& calib) {
  return cloud.frame == Frame::Lidar ? calib.lidar_to_camera(p.xyz()) : p.xyz();
}
}  // namespace detail

// Points whose camera-frame depth is positive and whose projection falls
// inside box2d (inclusive edges). Accepts Lidar or already-lifted Camera
// clouds, which makes the operation idempotent. Indices of the kept
// points are appended to kept_indices when given.
inline PointCloud lift_frustum(const PointCloud& cloud, const CalibKitti& calib,
                               const Box2D& box2d, std::vector<size_t>* kept_indices = nullptr) {
  if (box2d.degenerate()) throw DataError("degenerate 2D box");
  if (cloud.frame != Frame::Lidar && cloud.frame != Frame::Camera)
    throw DataError("lift_frustum expects a Lidar or Camera cloud");
  PointCloud out;
  out.frame = Frame::Camera;
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3 cam = detail::to_camera_frame(cloud.points[i], cloud, calib);
    if (!(cam.z > 0.0)) continue;
    const auto px = calib.project(cam);
    if (!(px.w > 0.0)) continue;
    if (!box2d.contains(px.u, px.v)) continue;
    out.points.push_back({cam.x, cam.y, cam.z, cloud.points[i].intensity});
    if (kept_indices) kept_indices->push_back(i);
  }
  if (out.empty()) throw EmptyFrustumError();
  return out;
}

// Reference depth for back-projecting the 2D box center. Any positive
// value yields the same yaw; 20 m keeps the solve well conditioned.
inline constexpr double kCenterRayDepth = 20.0;

// Camera point on the 2D-box-center ray at the given depth: solves
// P2 [X;1] = w (u, v, 1) with X_z fixed.
inline Vec3 backproject_at_depth(const CalibKitti& calib, double u, double v, double depth) {
  // X(w) = Minv (w uv1 - p4) is linear in w; pick w so X_z = depth.
  const Mat3 m = calib.p2.rotation();
  // Invert the 3x3 via cofactors; projection matrices are well conditioned.
  const double det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
                     m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
                     m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
  if (std::abs(det) < 1e-12) throw DataError("singular projection matrix");
  Mat3 inv;
  inv(0, 0) = (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) / det;
  inv(0, 1) = (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det;
  inv(0, 2) = (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det;
  inv(1, 0) = (m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2)) / det;
  inv(1, 1) = (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det;
  inv(1, 2) = (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det;
  inv(2, 0) = (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0)) / det;
  inv(2, 1) = (m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1)) / det;
  inv(2, 2) = (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det;
  const Vec3 p4{calib.p2(0, 3), calib.p2(1, 3), calib.p2(2, 3)};
  const Vec3 dir = inv * Vec3{u, v, 1.0};   // dX/dw
  const Vec3 base = inv * (-p4);            // X at w = 0
  if (std::abs(dir.z) < 1e-12) throw DataError("center ray parallel to image plane");
  const double w = (depth - base.z) / dir.z;
  return base + dir * w;
}

// Yaw that maps the direction d onto the +z axis via rot_y.
inline double center_view_angle(const Vec3& d) { return -std::atan2(d.x, d.z); }

// Rotates the cloud about the camera vertical axis so that the ray
// through the 2D box center points straight ahead (x = 0, z > 0).
inline std::pair<PointCloud, double> rotate_to_center(const PointCloud& points,
                                                      const Box2D& box2d,
                                                      const CalibKitti& calib) {
  if (points.empty()) throw DataError("rotate_to_center needs a nonempty cloud");
  const double u_c = (box2d.u_min + box2d.u_max) / 2.0;
  const double v_c = (box2d.v_min + box2d.v_max) / 2.0;
  const Vec3 ray = backproject_at_depth(calib, u_c, v_c, kCenterRayDepth);
  const double angle = center_view_angle(ray);
  PointCloud out;
  out.frame = Frame::Frustum;
  out.points.reserve(points.size());
  for (const auto& p : points.points) {
    const Vec3 r = rot_y(angle, p.xyz());
    out.points.push_back({r.x, r.y, r.z, p.intensity});
  }
  return {std::move(out), angle};
}

// ---------------------------------------------------------------------------
// Mask and object frames

// Masked points translated so their centroid is the origin. No scaling:
// the physical extent of the points carries size information.
inline std::pair<PointCloud, Vec3> mask_centralize(const PointCloud& points,
                                                   const std::vector<bool>& mask) {
  if (mask.size() != points.size()) throw DataError("mask length mismatch");
  Vec3 centroid{};
  size_t count = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    centroid += points.points[i].xyz();
    ++count;
  }
  if (count == 0) throw EmptyMaskError();
  centroid = centroid * (1.0 / static_cast<double>(count));
  PointCloud out;
  out.frame = Frame::Mask;
  out.points.reserve(count);
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const Vec3 p = points.points[i].xyz() - centroid;
    out.points.push_back({p.x, p.y, p.z, points.points[i].intensity});
  }
  return {std::move(out), centroid};
}

// Translation by the predicted center residual; mask frame -> object frame.
inline PointCloud apply_tnet_shift(const PointCloud& points, const Vec3& delta) {
  PointCloud out;
  out.frame = Frame::Object;
  out.points.reserve(points.size());
  for (const auto& p : points.points)
    out.points.push_back({p.x - delta.x, p.y - delta.y, p.z - delta.z, p.intensity});
  return out;
}

// ---------------------------------------------------------------------------
// Augmentations (training only; the canonicalization record is unchanged)

// Mirror across the YZ plane: point x -> -x, gt center x -> -x and
// heading -> -heading. Mask and intensity are untouched.
inline FrustumSample flip_yz(const FrustumSample& sample) {
  if (sample.points.frame != Frame::Frustum) throw DataError("flip_yz expects a frustum cloud");
  FrustumSample out = sample;
  for (auto& p : out.points.points) p.x = -p.x;
  if (out.gt_box) {
    out.gt_box->center.x = -out.gt_box->center.x;
    out.gt_box->heading = wrap_angle(-out.gt_box->heading);
  }
  return out;
}

// Depth shift: z += dz on every point and on the gt center.
inline FrustumSample shift_depth(const FrustumSample& sample, double dz) {
  FrustumSample out = sample;
  for (auto& p : out.points.points) p.z += dz;
  if (out.gt_box) out.gt_box->center.z += dz;
  return out;
}

}  // namespace fk
