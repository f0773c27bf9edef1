#pragma once

// One-file-per-sample binary serialization for frustum samples:
// magic "FSAM", then counts, point records, mask bits, gt box, one-hot,
// and the canonicalization state. All scalars little-endian f64/u64.

#include <filesystem>
#include <string>
#include <vector>

#include "frustumkit/checkpoint.hpp"
#include "frustumkit/frustum.hpp"

namespace fk {

inline std::string serialize_sample(const FrustumSample& sample) {
  sample.check();
  std::string out = "FSAM";
  detail::put_u64(out, sample.points.size());
  detail::put_u64(out, sample.onehot.size());
  const uint64_t flags = (sample.gt_mask.empty() ? 0u : 1u) | (sample.gt_box ? 2u : 0u);
  detail::put_u64(out, flags);
  for (const auto& p : sample.points.points) {
    detail::put_f64(out, p.x);
    detail::put_f64(out, p.y);
    detail::put_f64(out, p.z);
    detail::put_f64(out, p.intensity);
  }
  if (!sample.gt_mask.empty())
    for (bool b : sample.gt_mask) out.push_back(b ? 1 : 0);
  if (sample.gt_box) {
    const Box3D& g = *sample.gt_box;
    for (double v : {g.center.x, g.center.y, g.center.z, g.h, g.w, g.l, g.heading})
      detail::put_f64(out, v);
  }
  for (double v : sample.onehot) detail::put_f64(out, v);
  for (double v : {sample.state.frustum_angle, sample.state.mask_centroid.x,
                   sample.state.mask_centroid.y, sample.state.mask_centroid.z,
                   sample.state.tnet_delta.x, sample.state.tnet_delta.y,
                   sample.state.tnet_delta.z})
    detail::put_f64(out, v);
  return out;
}

inline FrustumSample parse_sample(std::string_view bytes) {
  detail::ByteReader r{bytes};
  if (r.str(4, "magic") != "FSAM") throw ParseError("bad sample magic, expected FSAM");
  const uint64_t n = r.u64("point count");
  const uint64_t k = r.u64("onehot size");
  const uint64_t flags = r.u64("flags");
  if (n > (1u << 26) || k > 4096) throw ParseError("implausible sample counts");
  FrustumSample sample;
  sample.points.frame = Frame::Frustum;
  sample.points.points.reserve(n);
  for (uint64_t i = 0; i < n; ++i) {
    PointXYZI p;
    p.x = r.f64("point");
    p.y = r.f64("point");
    p.z = r.f64("point");
    p.intensity = r.f64("point");
    sample.points.points.push_back(p);
  }
  if (flags & 1) {
    sample.gt_mask.reserve(n);
    for (uint64_t i = 0; i < n; ++i) {
      r.need(1, "mask");
      sample.gt_mask.push_back(r.data[r.pos++] != 0);
    }
  }
  if (flags & 2) {
    Box3D g;
    g.center = {r.f64("gt box"), r.f64("gt box"), r.f64("gt box")};
    g.h = r.f64("gt box");
    g.w = r.f64("gt box");
    g.l = r.f64("gt box");
    g.heading = r.f64("gt box");
    sample.gt_box = g;
  }
  sample.onehot.resize(k);
  for (uint64_t i = 0; i < k; ++i) sample.onehot[i] = r.f64("onehot");
  sample.state.frustum_angle = r.f64("state");
  sample.state.mask_centroid = {r.f64("state"), r.f64("state"), r.f64("state")};
  sample.state.tnet_delta = {r.f64("state"), r.f64("state"), r.f64("state")};
  if (!r.done()) throw ParseError("trailing bytes after sample");
  sample.check();
  return sample;
}

inline void save_sample(const std::string& path, const FrustumSample& sample) {
  write_file(path, serialize_sample(sample));
}

inline FrustumSample load_sample(const std::string& path) {
  return parse_sample(read_file(path));
}

// Loads every *.fsam file in a directory, sorted by filename.
inline std::vector<FrustumSample> load_sample_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw DataError(dir + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".fsam")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .fsam samples in " + dir);
  std::vector<FrustumSample> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_sample(f));
  return out;
}

}  // namespace fk
