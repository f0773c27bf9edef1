#pragma once

// Bird's-eye-view rasterization of LiDAR clouds, lifting BV rectangles to
// 3D cuboid point sets for the PointNet branch, and score-weighted fusion
// of frustum and BV detections through 3D NMS.

#include <limits>
#include <string>
#include <vector>

#include "frustumkit/box3d.hpp"
#include "frustumkit/checkpoint.hpp"
#include "frustumkit/frustum.hpp"
#include "frustumkit/kitti_io.hpp"

namespace fk {

// The grid consumes points in a "BEV frame": p.x and p.z are the two
// horizontal axes covering [0, extent), p.y is height above the sensor
// plane (up positive). Use camera_to_bev / lidar_to_bev to get there.
struct BvGridConfig {
  double resolution = 0.1;  // meters per cell
  double extent = 60.0;     // both horizontal axes cover [0, extent)
  double height_min = -3.0;
  double height_max = 1.0;
  int height_bins = 7;

  static constexpr int kFixedChannels = 2;  // intensity-of-highest, density
  int channels() const { return kFixedChannels + height_bins; }
  int cells() const { return static_cast<int>(std::lround(extent / resolution)); }

  void validate() const {
    if (!(resolution > 0) || !(extent > 0)) throw ConfigError("bad BV grid geometry");
    if (!(height_min < height_max)) throw ConfigError("bad BV height range");
    if (height_bins < 1) throw ConfigError("need at least one height bin");
  }
};

// Channel layout per cell: [0] intensity of the highest point,
// [1] density min(1, log(count+1)/log(64)), [2..] per-height-bin maximum
// height (0 when the bin is empty).
struct BvGrid {
  BvGridConfig cfg;
  int nx = 0, nz = 0;
  std::vector<double> data;             // [nx][nz][channels]
  std::vector<uint32_t> raw_counts;     // per cell, diagnostic

  double at(int ix, int iz, int ch) const {
    return data[(static_cast<size_t>(ix) * nz + iz) * cfg.channels() + ch];
  }
  double& at(int ix, int iz, int ch) {
    return data[(static_cast<size_t>(ix) * nz + iz) * cfg.channels() + ch];
  }
};

inline PointCloud camera_to_bev(const PointCloud& cloud, double extent = 60.0) {
  PointCloud out = cloud;
  for (auto& p : out.points) {
    p.x = p.x + extent / 2.0;
    p.y = -p.y;
  }
  return out;
}

// KITTI LiDAR frame (x forward, y left, z up) -> BEV frame: depth stays
// on x, width y maps to z shifted into [0, extent), height z becomes y.
inline PointCloud lidar_to_bev(const PointCloud& cloud, double extent = 60.0) {
  PointCloud out;
  out.frame = cloud.frame;
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points)
    out.points.push_back({p.x, p.z, p.y + extent / 2.0, p.intensity});
  return out;
}

inline BvGrid rasterize_bv(const PointCloud& cloud, const BvGridConfig& cfg = {}) {
  cfg.validate();
  BvGrid grid;
  grid.cfg = cfg;
  grid.nx = grid.nz = cfg.cells();
  const int ch = cfg.channels();
  const size_t n_cells = static_cast<size_t>(grid.nx) * grid.nz;
  grid.data.assign(n_cells * ch, 0.0);
  grid.raw_counts.assign(n_cells, 0);

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> best_height(n_cells, neg_inf);
  std::vector<double> bin_max(n_cells * cfg.height_bins, neg_inf);
  const double bin_width = (cfg.height_max - cfg.height_min) / cfg.height_bins;

  for (const auto& p : cloud.points) {
    if (!(p.x >= 0.0 && p.x < cfg.extent && p.z >= 0.0 && p.z < cfg.extent)) continue;
    const int ix = static_cast<int>(p.x / cfg.resolution);
    const int iz = static_cast<int>(p.z / cfg.resolution);
    const size_t cell = static_cast<size_t>(ix) * grid.nz + iz;
    grid.raw_counts[cell] += 1;
    // lexicographic (height, intensity) max keeps the reduction
    // independent of point order even for equal heights
    if (p.y > best_height[cell] ||
        (p.y == best_height[cell] && p.intensity > grid.data[cell * ch + 0])) {
      best_height[cell] = p.y;
      grid.data[cell * ch + 0] = p.intensity;
    }
    if (p.y >= cfg.height_min && p.y <= cfg.height_max) {
      int bin = static_cast<int>((p.y - cfg.height_min) / bin_width);
      if (bin >= cfg.height_bins) bin = cfg.height_bins - 1;  // inclusive top edge
      double& m = bin_max[cell * cfg.height_bins + bin];
      if (p.y > m) m = p.y;
    }
  }

  const double log64 = std::log(64.0);
  for (size_t cell = 0; cell < n_cells; ++cell) {
    if (grid.raw_counts[cell] == 0) continue;
    grid.data[cell * ch + 1] =
        std::min(1.0, std::log(static_cast<double>(grid.raw_counts[cell]) + 1.0) / log64);
    for (int b = 0; b < cfg.height_bins; ++b) {
      const double m = bin_max[cell * cfg.height_bins + b];
      if (m != neg_inf) grid.data[cell * ch + 2 + b] = m;
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Grid serialization: "BVG1" + extents + f64 payload.

inline std::string serialize_bv_grid(const BvGrid& grid) {
  std::string out = "BVG1";
  detail::put_u64(out, static_cast<uint64_t>(grid.nx));
  detail::put_u64(out, static_cast<uint64_t>(grid.nz));
  detail::put_u64(out, static_cast<uint64_t>(grid.cfg.channels()));
  for (double v : grid.data) detail::put_f64(out, v);
  return out;
}

inline BvGrid parse_bv_grid(std::string_view bytes) {
  detail::ByteReader r{bytes};
  if (r.str(4, "magic") != "BVG1") throw ParseError("bad grid magic, expected BVG1");
  BvGrid grid;
  const uint64_t nx = r.u64("nx"), nz = r.u64("nz"), ch = r.u64("channels");
  if (nx > 8192 || nz > 8192 || ch < 3 || ch > 64) throw ParseError("implausible grid extents");
  grid.nx = static_cast<int>(nx);
  grid.nz = static_cast<int>(nz);
  grid.cfg.height_bins = static_cast<int>(ch) - BvGridConfig::kFixedChannels;
  grid.cfg.extent = grid.cfg.resolution * grid.nx;
  grid.data.resize(nx * nz * ch);
  for (double& v : grid.data) v = r.f64("grid data");
  if (!r.done()) throw ParseError("trailing bytes after grid");
  return grid;
}

// ---------------------------------------------------------------------------
// BV cuboid regions

// Axis-aligned BEV rectangle over the camera-frame horizontal plane
// (x lateral, z depth) plus a height cut, height measured up from the
// sensor (h = -y in camera coordinates).
struct BvRegion {
  double x_min = 0, x_max = 0;
  double z_min = 0, z_max = 0;
  double height_min = 0, height_max = 0;

  void validate() const {
    if (!(x_min < x_max) || !(z_min < z_max)) throw ConfigError("degenerate BV rectangle");
    if (!(height_min < height_max)) throw ConfigError("degenerate BV height cut");
  }
};

// Points inside the cuboid, rotated toward the region center so the
// downstream pipeline sees the usual frustum-frame sample; the state's
// frustum_angle is the yaw of the region center.
inline std::pair<PointCloud, CanonicalizationState> lift_bv_region(const PointCloud& cloud,
                                                                   const BvRegion& region) {
  region.validate();
  if (cloud.frame != Frame::Camera) throw DataError("lift_bv_region expects a camera cloud");
  const double cx = (region.x_min + region.x_max) / 2.0;
  const double cz = (region.z_min + region.z_max) / 2.0;
  const double yaw = center_view_angle({cx, 0.0, cz});
  PointCloud out;
  out.frame = Frame::Frustum;
  for (const auto& p : cloud.points) {
    const double height = -p.y;
    if (p.x < region.x_min || p.x > region.x_max) continue;
    if (p.z < region.z_min || p.z > region.z_max) continue;
    if (height < region.height_min || height > region.height_max) continue;
    const Vec3 r = rot_y(yaw, p.xyz());
    out.points.push_back({r.x, r.y, r.z, p.intensity});
  }
  if (out.empty()) throw EmptyFrustumError();
  CanonicalizationState state;
  state.frustum_angle = yaw;
  return {std::move(out), state};
}

// Regions file: one region per line, six floats
// x_min x_max z_min z_max height_min height_max
inline std::vector<BvRegion> parse_bv_regions(std::string_view text) {
  std::vector<BvRegion> out;
  detail::for_each_line(text, [&](std::string_view line, size_t line_no) {
    auto fields = detail::split_fields(line);
    if (fields.size() != 6)
      throw ParseError("region line " + std::to_string(line_no) + " needs 6 fields");
    auto num = [&](size_t i) { return detail::parse_double(fields[i], line_no); };
    BvRegion r{num(0), num(1), num(2), num(3), num(4), num(5)};
    r.validate();
    out.push_back(r);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Fusion

struct Detection {
  Box3D box;
  double score = 0;
};

struct FuseConfig {
  double bv_weight = 0.5;     // BV PointNets are the weaker detector
  double iou_threshold = 0.8;
};

// BV scores are down-weighted, both sets pooled (frustum first, which
// fixes NMS tie order), and greedy 3D NMS keeps the survivors sorted by
// descending score.
inline std::vector<Detection> fuse_detections(const std::vector<Detection>& frustum_dets,
                                              const std::vector<Detection>& bv_dets,
                                              const FuseConfig& cfg = {}) {
  std::vector<std::pair<Box3D, double>> pooled;
  pooled.reserve(frustum_dets.size() + bv_dets.size());
  for (const auto& d : frustum_dets) pooled.emplace_back(d.box, d.score);
  for (const auto& d : bv_dets) pooled.emplace_back(d.box, d.score * cfg.bv_weight);
  const auto kept = nms3d(pooled, cfg.iou_threshold);
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (size_t idx : kept) out.push_back({pooled[idx].first, pooled[idx].second});
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

}  // namespace fk
