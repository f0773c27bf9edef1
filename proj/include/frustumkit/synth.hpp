#pragma once

// Deterministic synthetic scene generator: cuboid-shell objects standing
// on a noisy ground plane with clutter blobs, observed from a pinhole
// camera, with oracle boxes and auto-labeled masks. Every sample derives
// its RNG from (master seed, stream name, index), so parallel and serial
// generation agree bit for bit.

#include <algorithm>
#include <string>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/core.hpp"
#include "frustumkit/frustum.hpp"
#include "frustumkit/kitti_io.hpp"

namespace fk {

struct SceneSpec {
  uint64_t seed = 1;
  int min_objects = 1;
  int max_objects = 3;
  // category name -> mix weight; names must match codec template tags
  std::vector<std::pair<std::string, double>> category_mix = {
      {"Car", 0.5}, {"Pedestrian", 0.25}, {"Cyclist", 0.25}};
  double min_depth = 8.0;
  double max_depth = 35.0;
  double lateral_fraction = 0.45;  // |x| <= fraction * z keeps objects in view
  double clutter_density = 2.0;    // expected clutter blobs per scene
  double ground_sigma = 0.03;      // surface/ground noise, meters
  double ground_y = 1.65;          // camera height above ground
  int ground_points = 900;
  double points_at_10m = 400.0;    // object point budget at 10 m (1/z^2 thinning)
  double size_jitter = 0.10;       // relative size variation around the template
  int image_width = 1242;
  int image_height = 375;
  double focal = 721.5377;

  void validate() const {
    if (min_objects < 1 || max_objects < min_objects) throw ConfigError("bad object count range");
    if (!(min_depth > 0 && max_depth > min_depth)) throw ConfigError("bad depth range");
    if (clutter_density < 0 || ground_sigma < 0) throw ConfigError("densities must be >= 0");
    if (category_mix.empty()) throw ConfigError("category mix is empty");
  }
};

struct SceneObject {
  Box3D box;  // camera frame
  std::string category;
  int category_id = 0;
};

struct Scene {
  PointCloud cloud;  // camera frame
  std::vector<SceneObject> objects;
  std::vector<int> membership;  // per point: object index, -1 for background
  CalibKitti calib;
  int image_width = 0, image_height = 0;
};

// Inclusive point-in-oriented-box test in the box's own frame.
inline bool point_in_box(const Vec3& p, const Box3D& box) {
  const Vec3 local = rot_y(-box.heading, p - box.center);
  return std::abs(local.x) <= box.l / 2.0 && std::abs(local.y) <= box.h / 2.0 &&
         std::abs(local.z) <= box.w / 2.0;
}

inline std::vector<bool> auto_label_mask(const PointCloud& cloud, const Box3D& gt_box) {
  std::vector<bool> mask(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i)
    mask[i] = point_in_box(cloud.points[i].xyz(), gt_box);
  return mask;
}

namespace detail {

// Default size templates for the synthetic categories (h, w, l meters).
inline void category_dims(const std::string& name, double* h, double* w, double* l) {
  if (name == "Car") {
    *h = 1.53;
    *w = 1.63;
    *l = 3.88;
  } else if (name == "Pedestrian") {
    *h = 1.76;
    *w = 0.66;
    *l = 0.84;
  } else if (name == "Cyclist") {
    *h = 1.74;
    *w = 0.60;
    *l = 1.76;
  } else {
    *h = 1.9;
    *w = 1.5;
    *l = 3.6;
  }
}

struct Face {
  Vec3 normal;   // outward, box local frame
  Vec3 axis_u;   // in-face axes
  Vec3 axis_v;
  double half_u, half_v;
  double area;
};

inline std::array<Face, 6> box_faces(const Box3D& b) {
  const double hl = b.l / 2, hh = b.h / 2, hw = b.w / 2;
  return {{
      {{+1, 0, 0}, {0, 1, 0}, {0, 0, 1}, hh, hw, b.h * b.w},  // +x
      {{-1, 0, 0}, {0, 1, 0}, {0, 0, 1}, hh, hw, b.h * b.w},  // -x
      {{0, +1, 0}, {1, 0, 0}, {0, 0, 1}, hl, hw, b.l * b.w},  // +y (bottom; y down)
      {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}, hl, hw, b.l * b.w},  // -y (top)
      {{0, 0, +1}, {1, 0, 0}, {0, 1, 0}, hl, hh, b.l * b.h},  // +z
      {{0, 0, -1}, {1, 0, 0}, {0, 1, 0}, hl, hh, b.l * b.h},  // -z
  }};
}

}  // namespace detail

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene scene;
  scene.cloud.frame = Frame::Camera;
  scene.image_width = spec.image_width;
  scene.image_height = spec.image_height;

  CalibKitti calib = CalibKitti::identity();
  calib.p2(0, 0) = spec.focal;
  calib.p2(1, 1) = spec.focal;
  calib.p2(0, 2) = spec.image_width / 2.0;
  calib.p2(1, 2) = spec.image_height / 2.0;
  scene.calib = calib;

  Rng rng = Rng::stream(spec.seed, "scene");

  // objects
  const int n_objects =
      spec.min_objects + static_cast<int>(rng.index(spec.max_objects - spec.min_objects + 1));
  double mix_total = 0.0;
  for (const auto& [name, wgt] : spec.category_mix) mix_total += wgt;
  for (int o = 0; o < n_objects; ++o) {
    double pickv = rng.uniform() * mix_total;
    size_t ci = 0;
    for (; ci + 1 < spec.category_mix.size(); ++ci) {
      if (pickv < spec.category_mix[ci].second) break;
      pickv -= spec.category_mix[ci].second;
    }
    SceneObject obj;
    obj.category = spec.category_mix[ci].first;
    obj.category_id = static_cast<int>(ci);
    double th, tw, tl;
    detail::category_dims(obj.category, &th, &tw, &tl);
    obj.box.h = th * rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter);
    obj.box.w = tw * rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter);
    obj.box.l = tl * rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter);
    const double depth = rng.uniform(spec.min_depth, spec.max_depth);
    const double lateral = rng.uniform(-spec.lateral_fraction, spec.lateral_fraction) * depth;
    obj.box.center = {lateral, spec.ground_y - obj.box.h / 2.0, depth};
    obj.box.heading = rng.uniform(-kPi, kPi);
    scene.objects.push_back(std::move(obj));
  }

  auto inside_any_box = [&](const Vec3& p) {
    for (const auto& obj : scene.objects)
      if (point_in_box(p, obj.box)) return true;
    return false;
  };

  // object shell points, 1/z^2 thinned, clamped inside the gt box
  for (size_t oi = 0; oi < scene.objects.size(); ++oi) {
    const Box3D& box = scene.objects[oi].box;
    const double z = box.center.z;
    const int count =
        std::max(8, static_cast<int>(std::lround(spec.points_at_10m * 100.0 / (z * z))));
    const auto faces = detail::box_faces(box);
    const Vec3 to_sensor = -box.center;
    double weights[6];
    double total = 0.0;
    for (int f = 0; f < 6; ++f) {
      const Vec3 n_world = rot_y(box.heading, faces[f].normal);
      const double cosine = n_world.dot(to_sensor) / std::max(1e-9, to_sensor.norm());
      weights[f] = faces[f].area * std::max(0.0, cosine);
      total += weights[f];
    }
    if (total <= 0.0) {
      weights[3] = 1.0;  // degenerate pose: fall back to the top face
      total = 1.0;
    }
    const double margin = 1.0 - 1e-7;
    for (int k = 0; k < count; ++k) {
      double pickv = rng.uniform() * total;
      int face = 0;
      for (; face < 5; ++face) {
        if (pickv < weights[face]) break;
        pickv -= weights[face];
      }
      const detail::Face& fc = faces[face];
      const double half_n = 0.5 * (std::abs(fc.normal.x) * box.l + std::abs(fc.normal.y) * box.h +
                                   std::abs(fc.normal.z) * box.w);
      Vec3 local = fc.normal * half_n;
      local += fc.axis_u * rng.uniform(-fc.half_u, fc.half_u);
      local += fc.axis_v * rng.uniform(-fc.half_v, fc.half_v);
      local += {rng.normal(0, spec.ground_sigma), rng.normal(0, spec.ground_sigma),
                rng.normal(0, spec.ground_sigma)};
      local.x = std::clamp(local.x, -box.l / 2 * margin, box.l / 2 * margin);
      local.y = std::clamp(local.y, -box.h / 2 * margin, box.h / 2 * margin);
      local.z = std::clamp(local.z, -box.w / 2 * margin, box.w / 2 * margin);
      const Vec3 p = box.center + rot_y(box.heading, local);
      scene.cloud.points.push_back({p.x, p.y, p.z, rng.uniform(0.2, 0.9)});
      scene.membership.push_back(static_cast<int>(oi));
    }
  }

  // ground plane; points falling inside a gt box are rejected so the
  // membership record equals the box test exactly
  const double zmin = std::max(2.0, spec.min_depth - 5.0);
  const double zmax = spec.max_depth + 5.0;
  for (int k = 0; k < spec.ground_points; ++k) {
    const double z = rng.uniform(zmin, zmax);
    const double x = rng.uniform(-spec.lateral_fraction * z, spec.lateral_fraction * z);
    const Vec3 p{x, spec.ground_y + rng.normal(0, spec.ground_sigma), z};
    if (inside_any_box(p)) continue;
    scene.cloud.points.push_back({p.x, p.y, p.z, rng.uniform(0.05, 0.4)});
    scene.membership.push_back(-1);
  }

  // clutter blobs (vegetation, poles, occluders)
  const int n_blobs = static_cast<int>(std::lround(spec.clutter_density));
  for (int b = 0; b < n_blobs; ++b) {
    const double z = rng.uniform(zmin, zmax);
    const double x = rng.uniform(-spec.lateral_fraction * z, spec.lateral_fraction * z);
    const double height = rng.uniform(0.3, 2.0);
    const Vec3 center{x, spec.ground_y - height / 2.0, z};
    const double radius = rng.uniform(0.2, 0.9);
    const int cnt = std::max(4, static_cast<int>(std::lround(120.0 * 100.0 / (z * z))));
    for (int k = 0; k < cnt; ++k) {
      const Vec3 p = center + Vec3{rng.normal(0, radius / 2), rng.normal(0, height / 4),
                                   rng.normal(0, radius / 2)};
      if (inside_any_box(p)) continue;
      scene.cloud.points.push_back({p.x, p.y, p.z, rng.uniform(0.1, 0.8)});
      scene.membership.push_back(-1);
    }
  }

  return scene;
}

// ---------------------------------------------------------------------------
// Frustum sample construction with augmentation

struct AugmentConfig {
  double box2d_translate_frac = 0.1;               // Uniform[-0.1w, 0.1w], same for h
  double box2d_scale_min = 0.9, box2d_scale_max = 1.1;
  double flip_prob = 0.5;
  double depth_shift_range = 2.0;                  // Uniform[-r, r] meters
  size_t n_frustum_points = 1024;
  size_t n_mask_points = 512;
  bool frustum_rotation = true;                    // ablation hook

  void validate() const {
    if (box2d_translate_frac < 0) throw ConfigError("translate fraction must be >= 0");
    if (!(box2d_scale_min > 0 && box2d_scale_max >= box2d_scale_min))
      throw ConfigError("bad 2D scale range");
    if (depth_shift_range < 0) throw ConfigError("depth shift range must be >= 0");
    if (n_frustum_points == 0 || n_mask_points == 0) throw ConfigError("bad point budgets");
  }
};

// Random translation and scaling of a 2D box, clamped to image bounds.
inline Box2D jitter_box2d(const Box2D& box, Rng& rng, const AugmentConfig& aug, double img_w,
                          double img_h) {
  const double w = box.width(), h = box.height();
  const double cu = (box.u_min + box.u_max) / 2.0 + rng.uniform(-aug.box2d_translate_frac * w,
                                                                aug.box2d_translate_frac * w);
  const double cv = (box.v_min + box.v_max) / 2.0 + rng.uniform(-aug.box2d_translate_frac * h,
                                                                aug.box2d_translate_frac * h);
  const double sw = w * rng.uniform(aug.box2d_scale_min, aug.box2d_scale_max);
  const double sh = h * rng.uniform(aug.box2d_scale_min, aug.box2d_scale_max);
  Box2D out{cu - sw / 2.0, cv - sh / 2.0, cu + sw / 2.0, cv + sh / 2.0};
  out.u_min = std::clamp(out.u_min, 0.0, img_w);
  out.u_max = std::clamp(out.u_max, 0.0, img_w);
  out.v_min = std::clamp(out.v_min, 0.0, img_h);
  out.v_max = std::clamp(out.v_max, 0.0, img_h);
  return out;
}

// 2D bounding box of the projected 3D box corners, clamped to the image.
inline Box2D project_box2d(const Box3D& box, const CalibKitti& calib, double img_w, double img_h) {
  Box2D out{1e30, 1e30, -1e30, -1e30};
  for (const Vec3& c : box_corners(box)) {
    if (!(c.z > 0.1)) continue;
    const auto px = calib.project(c);
    out.u_min = std::min(out.u_min, px.u);
    out.u_max = std::max(out.u_max, px.u);
    out.v_min = std::min(out.v_min, px.v);
    out.v_max = std::max(out.v_max, px.v);
  }
  out.u_min = std::clamp(out.u_min, 0.0, img_w);
  out.u_max = std::clamp(out.u_max, 0.0, img_w);
  out.v_min = std::clamp(out.v_min, 0.0, img_h);
  out.v_max = std::clamp(out.v_max, 0.0, img_h);
  if (out.degenerate()) throw EmptyFrustumError();
  return out;
}

// Builds one training sample: projects the gt box, jitters the 2D box,
// lifts the frustum, rotates to the center view, resamples to the point
// budget, and applies flip/depth-shift augmentation with label fix-up.
inline FrustumSample make_frustum_sample(const Scene& scene, size_t object_index,
                                         const AugmentConfig& aug, Rng& rng,
                                         size_t onehot_size = 3) {
  aug.validate();
  const SceneObject& obj = scene.objects.at(object_index);
  Box2D box2d = project_box2d(obj.box, scene.calib, scene.image_width, scene.image_height);
  box2d = jitter_box2d(box2d, rng, aug, scene.image_width, scene.image_height);
  if (box2d.degenerate()) throw EmptyFrustumError();

  std::vector<size_t> kept;
  PointCloud camera_cloud = lift_frustum(scene.cloud, scene.calib, box2d, &kept);

  FrustumSample sample;
  double angle = 0.0;
  if (aug.frustum_rotation) {
    auto [rotated, a] = rotate_to_center(camera_cloud, box2d, scene.calib);
    sample.points = std::move(rotated);
    angle = a;
  } else {
    sample.points = std::move(camera_cloud);
    sample.points.frame = Frame::Frustum;
  }
  sample.state.frustum_angle = angle;

  // gt box expressed in the frustum frame
  Box3D gt = obj.box;
  gt.center = rot_y(angle, gt.center);
  gt.heading = wrap_angle(gt.heading + angle);
  sample.gt_box = gt;

  // resample to the fixed budget; membership follows the chosen indices
  const size_t n = sample.points.size();
  std::vector<size_t> chosen;
  chosen.reserve(aug.n_frustum_points);
  if (n >= aug.n_frustum_points) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    for (size_t i = 0; i < aug.n_frustum_points; ++i) {
      const size_t j = i + rng.index(n - i);
      std::swap(idx[i], idx[j]);
      chosen.push_back(idx[i]);
    }
  } else {
    for (size_t i = 0; i < aug.n_frustum_points; ++i) chosen.push_back(rng.index(n));
  }
  PointCloud sampled;
  sampled.frame = Frame::Frustum;
  sampled.points.reserve(chosen.size());
  sample.gt_mask.reserve(chosen.size());
  for (size_t i : chosen) {
    sampled.points.push_back(sample.points.points[i]);
    sample.gt_mask.push_back(scene.membership[kept[i]] == static_cast<int>(object_index));
  }
  sample.points = std::move(sampled);

  // augmentations with label fix-up
  if (rng.bernoulli(aug.flip_prob)) sample = flip_yz(sample);
  if (aug.depth_shift_range > 0.0)
    sample = shift_depth(sample, rng.uniform(-aug.depth_shift_range, aug.depth_shift_range));

  sample.onehot.assign(onehot_size, 0.0);
  sample.onehot.at(static_cast<size_t>(obj.category_id) < onehot_size ? obj.category_id : 0) = 1.0;
  sample.check();
  return sample;
}

}  // namespace fk
