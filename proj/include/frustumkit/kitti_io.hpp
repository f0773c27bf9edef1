#pragma once

// Parsers and writers for KITTI object-detection files: calibration text,
// label/result text, and velodyne point binaries. Parsers never crash on
// arbitrary bytes; every failure is a typed error naming its location.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "frustumkit/core.hpp"

namespace fk {

// ---------------------------------------------------------------------------
// Types

enum class Frame { Lidar, Camera, Frustum, Mask, Object };

struct PointXYZI {
  double x = 0, y = 0, z = 0;
  double intensity = 0;  // unitless reflectance in [0, 1]

  Vec3 xyz() const { return {x, y, z}; }
};

struct PointCloud {
  std::vector<PointXYZI> points;
  Frame frame = Frame::Lidar;

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct CalibKitti {
  Mat34 p2;              // pixels <- rectified-camera meters
  Mat3 r0_rect;          // rectification rotation
  Mat34 tr_velo_to_cam;  // camera meters <- LiDAR meters

  static CalibKitti identity() {
    return {Mat34::identity(), Mat3::identity(), Mat34::identity()};
  }

  // Rectified-camera coordinates of a LiDAR point.
  Vec3 lidar_to_camera(const Vec3& p) const { return r0_rect * tr_velo_to_cam.apply(p); }

  struct Pixel {
    double u, v, w;  // w: projective denominator
  };
  // Pixel coordinates of a rectified-camera point. Caller checks depth.
  Pixel project(const Vec3& p) const {
    const double u = p2(0, 0) * p.x + p2(0, 1) * p.y + p2(0, 2) * p.z + p2(0, 3);
    const double v = p2(1, 0) * p.x + p2(1, 1) * p.y + p2(1, 2) * p.z + p2(1, 3);
    const double w = p2(2, 0) * p.x + p2(2, 1) * p.y + p2(2, 2) * p.z + p2(2, 3);
    return {u / w, v / w, w};
  }
};

enum class Category { Car, Pedestrian, Cyclist, Other };

struct LabelKitti {
  Category category = Category::Other;
  std::string type_name;  // verbatim type string, kept for Other
  double truncated = 0;   // [0, 1]
  int occluded = 0;       // 0..3
  double alpha = 0;
  Box2D bbox2d;
  double h = 0, w = 0, l = 0;  // meters
  Vec3 location;               // camera meters, bottom-face center
  double rotation_y = 0;       // [-pi, pi]
  std::optional<double> score;

  bool known_category() const { return category != Category::Other; }
};

inline Category category_from_string(std::string_view s) {
  if (s == "Car") return Category::Car;
  if (s == "Pedestrian") return Category::Pedestrian;
  if (s == "Cyclist") return Category::Cyclist;
  return Category::Other;
}

// ---------------------------------------------------------------------------
// Errors

struct ParseError : DataError {
  using DataError::DataError;
};

struct MissingKeyError : ParseError {
  explicit MissingKeyError(const std::string& key)
      : ParseError("calib is missing required key: " + key), key(key) {}
  std::string key;
};

struct MalformedFloatError : ParseError {
  MalformedFloatError(size_t line, size_t column)
      : ParseError("malformed float at line " + std::to_string(line) + ", column " +
                   std::to_string(column)),
        line(line),
        column(column) {}
  size_t line, column;
};

struct WrongArityError : ParseError {
  WrongArityError(const std::string& key, size_t expected, size_t got)
      : ParseError("key " + key + " expects " + std::to_string(expected) + " values, got " +
                   std::to_string(got)),
        key(key),
        expected(expected),
        got(got) {}
  std::string key;
  size_t expected, got;
};

struct WrongFieldCountError : ParseError {
  WrongFieldCountError(size_t line, size_t got)
      : ParseError("label line " + std::to_string(line) + " has " + std::to_string(got) +
                   " fields, expected 15 or 16"),
        line(line),
        got(got) {}
  size_t line, got;
};

struct TruncatedRecordError : ParseError {
  explicit TruncatedRecordError(size_t byte_len)
      : ParseError("velodyne byte length " + std::to_string(byte_len) +
                   " is not a multiple of 16") {}
};

struct MissingScoreError : DataError {
  explicit MissingScoreError(size_t index)
      : DataError("detection " + std::to_string(index) + " has no score") {}
};

struct InvariantError : ParseError {
  using ParseError::ParseError;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate(const CalibKitti& c) {
  auto orthonormality = [](const Mat3& r) {
    double worst = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += r(i, k) * r(j, k);
        worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
      }
    return worst;
  };
  if (!(orthonormality(c.r0_rect) < 1e-4))
    throw InvariantError("R0_rect is not orthonormal within 1e-4");
  if (!(orthonormality(c.tr_velo_to_cam.rotation()) < 1e-4))
    throw InvariantError("Tr_velo_to_cam rotation is not orthonormal within 1e-4");
  if (!(c.p2(0, 0) > 0.0) || !(c.p2(1, 1) > 0.0))
    throw InvariantError("P2 focal lengths must be positive");
}

inline void validate(const LabelKitti& label, size_t line) {
  auto fail = [line](const std::string& what) {
    throw InvariantError("label line " + std::to_string(line) + ": " + what);
  };
  if (!(label.bbox2d.u_min <= label.bbox2d.u_max)) fail("u_min > u_max");
  if (!(label.bbox2d.v_min <= label.bbox2d.v_max)) fail("v_min > v_max");
  if (label.known_category() && !(label.h > 0 && label.w > 0 && label.l > 0))
    fail("non-positive box dimensions");
  // DontCare rows carry sentinel values (-10), so the range check only
  // applies to known categories
  if (label.known_category() && !(label.rotation_y >= -kPi && label.rotation_y <= kPi))
    fail("rotation_y outside [-pi, pi]");
  if (!std::isfinite(label.truncated) || !std::isfinite(label.alpha)) fail("non-finite field");
}

// ---------------------------------------------------------------------------
// Text scanning helpers

namespace detail {

struct Token {
  std::string_view text;
  size_t column;  // 1-based offset within the line
};

inline std::vector<Token> split_fields(std::string_view line) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back({line.substr(start, i - start), start + 1});
  }
  return out;
}

inline double parse_double(const Token& tok, size_t line_no) {
  double v = 0.0;
  const char* first = tok.text.data();
  const char* last = first + tok.text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || !std::isfinite(v))
    throw MalformedFloatError(line_no, tok.column);
  return v;
}

// Splits into lines, keeps 1-based numbering, skips blank lines.
template <typename Fn>
inline void for_each_line(std::string_view text, Fn&& fn) {
  size_t line_no = 0;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    bool blank = line.find_first_not_of(" \t\r") == std::string_view::npos;
    if (!blank) fn(line, line_no);
    if (end == text.size()) break;
    pos = end + 1;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Calibration

// KITTI calib text: lines "KEY: v0 v1 ...". Keys P2 (12 values),
// R0_rect (9) and Tr_velo_to_cam (12) are required, others ignored.
inline CalibKitti parse_calib(std::string_view text) {
  std::map<std::string, std::vector<double>, std::less<>> table;
  detail::for_each_line(text, [&](std::string_view line, size_t line_no) {
    size_t colon = line.find(':');
    if (colon == std::string_view::npos) return;  // not a key line, ignore
    std::string key(line.substr(0, colon));
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::vector<double> values;
    for (const auto& tok : detail::split_fields(line.substr(colon + 1)))
      values.push_back(detail::parse_double({tok.text, colon + 1 + tok.column}, line_no));
    table.emplace(std::move(key), std::move(values));
  });

  auto fetch = [&](const char* key, size_t arity) -> const std::vector<double>& {
    auto it = table.find(key);
    if (it == table.end()) throw MissingKeyError(key);
    if (it->second.size() != arity) throw WrongArityError(key, arity, it->second.size());
    return it->second;
  };

  CalibKitti c;
  const auto& p2 = fetch("P2", 12);
  std::copy(p2.begin(), p2.end(), c.p2.m.begin());
  const auto& r0 = fetch("R0_rect", 9);
  std::copy(r0.begin(), r0.end(), c.r0_rect.m.begin());
  const auto& tr = fetch("Tr_velo_to_cam", 12);
  std::copy(tr.begin(), tr.end(), c.tr_velo_to_cam.m.begin());
  validate(c);
  return c;
}

// Full-precision writer; parse_calib(write_calib(c)) is bit-identical.
inline std::string write_calib(const CalibKitti& c) {
  auto row = [](const char* key, const double* vals, size_t n) {
    std::string s = key;
    s += ":";
    char buf[40];
    for (size_t i = 0; i < n; ++i) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), vals[i]);
      s += ' ';
      s.append(buf, ptr);
    }
    s += '\n';
    return s;
  };
  std::string out;
  out += row("P2", c.p2.m.data(), 12);
  out += row("R0_rect", c.r0_rect.m.data(), 9);
  out += row("Tr_velo_to_cam", c.tr_velo_to_cam.m.data(), 12);
  return out;
}

// ---------------------------------------------------------------------------
// Labels

// One object per line, 15 fields (16 with a trailing score):
// type trunc occl alpha bbox(4) hwl(3) xyz(3) ry [score]
inline std::vector<LabelKitti> parse_labels(std::string_view text) {
  std::vector<LabelKitti> out;
  detail::for_each_line(text, [&](std::string_view line, size_t line_no) {
    auto fields = detail::split_fields(line);
    if (fields.size() != 15 && fields.size() != 16)
      throw WrongFieldCountError(line_no, fields.size());
    auto num = [&](size_t i) { return detail::parse_double(fields[i], line_no); };

    LabelKitti label;
    label.type_name = std::string(fields[0].text);
    label.category = category_from_string(label.type_name);
    label.truncated = num(1);
    label.occluded = static_cast<int>(num(2));
    label.alpha = num(3);
    label.bbox2d = {num(4), num(5), num(6), num(7)};
    label.h = num(8);
    label.w = num(9);
    label.l = num(10);
    label.location = {num(11), num(12), num(13)};
    label.rotation_y = num(14);
    if (fields.size() == 16) label.score = num(15);
    validate(label, line_no);
    out.push_back(std::move(label));
  });
  return out;
}

namespace detail {
inline void append_fixed(std::string& s, double v, int decimals = 2) {
  char buf[64];
  int n = std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  s.append(buf, static_cast<size_t>(n));
}
}  // namespace detail

// Fixed-point label line with 2 decimals; score appended when present.
inline std::string write_labels(const std::vector<LabelKitti>& labels) {
  std::string out;
  for (const auto& d : labels) {
    out += d.type_name.empty() ? "Other" : d.type_name;
    const double fields[] = {d.truncated,      static_cast<double>(d.occluded),
                             d.alpha,          d.bbox2d.u_min,
                             d.bbox2d.v_min,   d.bbox2d.u_max,
                             d.bbox2d.v_max,   d.h,
                             d.w,              d.l,
                             d.location.x,     d.location.y,
                             d.location.z,     d.rotation_y};
    for (double f : fields) {
      out += ' ';
      detail::append_fixed(out, f);
    }
    if (d.score) {
      out += ' ';
      detail::append_fixed(out, *d.score);
    }
    out += '\n';
  }
  return out;
}

// KITTI result format; every detection must carry a score.
inline std::string write_detections(const std::vector<LabelKitti>& dets) {
  for (size_t i = 0; i < dets.size(); ++i)
    if (!dets[i].score) throw MissingScoreError(i);
  return write_labels(dets);
}

// ---------------------------------------------------------------------------
// Velodyne binaries: little-endian f32 quadruples (x, y, z, intensity).

namespace detail {
inline float load_f32_le(const unsigned char* p) {
  uint32_t bits = static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
                  static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
  return std::bit_cast<float>(bits);
}

inline void store_f32_le(std::string& out, float f) {
  uint32_t bits = std::bit_cast<uint32_t>(f);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}
}  // namespace detail

// Intensity is clamped to [0, 1]: out-of-range values are sensor noise.
inline PointCloud read_velodyne(std::string_view bytes) {
  if (bytes.size() % 16 != 0) throw TruncatedRecordError(bytes.size());
  PointCloud cloud;
  cloud.frame = Frame::Lidar;
  cloud.points.reserve(bytes.size() / 16);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (size_t i = 0; i < bytes.size(); i += 16) {
    PointXYZI pt;
    pt.x = detail::load_f32_le(p + i);
    pt.y = detail::load_f32_le(p + i + 4);
    pt.z = detail::load_f32_le(p + i + 8);
    pt.intensity = std::clamp<double>(detail::load_f32_le(p + i + 12), 0.0, 1.0);
    cloud.points.push_back(pt);
  }
  return cloud;
}

inline std::string write_velodyne(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 16);
  for (const auto& pt : cloud.points) {
    detail::store_f32_le(out, static_cast<float>(pt.x));
    detail::store_f32_le(out, static_cast<float>(pt.y));
    detail::store_f32_le(out, static_cast<float>(pt.z));
    detail::store_f32_le(out, static_cast<float>(pt.intensity));
  }
  return out;
}

// ---------------------------------------------------------------------------
// File helpers

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw DataError("short write to " + path);
}

}  // namespace fk
