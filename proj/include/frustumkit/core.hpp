#pragma once

// Core value types shared by the whole library: small vectors and
// rotations about the camera up-axis, deterministic seeded RNG streams,
// the canonicalization record, and the error hierarchy.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fk {

inline constexpr double kPi = std::numbers::pi;

// Single compiled body for bit-critical geometry helpers: FMA contraction
// may otherwise specialize the arithmetic per call site, and callers that
// compare corner sets bitwise need one deterministic evaluation.
#if defined(__GNUC__) || defined(__clang__)
#define FK_NOINLINE __attribute__((noinline))
#else
#define FK_NOINLINE
#endif

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

inline double distance(const Vec3& a, const Vec3& b) { return (a - b).norm(); }

// 3x3 row-major matrix. Enough linear algebra for calibration chains.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  double operator()(int i, int j) const { return m[3 * i + j]; }
  double& operator()(int i, int j) { return m[3 * i + j]; }
  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
};

// 3x4 row-major matrix: rigid transforms and camera projections.
struct Mat34 {
  std::array<double, 12> m{};

  static Mat34 identity() {
    Mat34 r;
    r.m = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    return r;
  }
  double operator()(int i, int j) const { return m[4 * i + j]; }
  double& operator()(int i, int j) { return m[4 * i + j]; }
  // Applies the transform to a point (homogeneous w = 1).
  Vec3 apply(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z + m[3],
            m[4] * v.x + m[5] * v.y + m[6] * v.z + m[7],
            m[8] * v.x + m[9] * v.y + m[10] * v.z + m[11]};
  }
  Mat3 rotation() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(i, j);
    return r;
  }
};

// Axis-aligned pixel rectangle, inclusive edges.
struct Box2D {
  double u_min = 0, v_min = 0, u_max = 0, v_max = 0;

  double width() const { return u_max - u_min; }
  double height() const { return v_max - v_min; }
  bool contains(double u, double v) const {
    return u >= u_min && u <= u_max && v >= v_min && v <= v_max;
  }
  bool degenerate() const { return u_max <= u_min || v_max <= v_min; }
};

// Wraps an angle into [-pi, pi).
inline double wrap_angle(double a) {
  double r = a - 2.0 * kPi * std::floor((a + kPi) / (2.0 * kPi));
  if (r >= kPi) r -= 2.0 * kPi;  // guards the floor rounding edge
  return r;
}

// Product rounded to double before use. Blocks FMA contraction in
// expressions like a - b*c where exact cancellation against the rounded
// product is part of the contract.
inline double rounded_product(double a, double b) {
  volatile double p = a * b;
  return p;
}

// Half-turn canonical representative in [-pi/2, pi/2). Angles that differ
// by pi map to the same value; the shifts are exact in floating point
// (Sterbenz), which keeps pi-flips of representable angles lossless.
inline double wrap_half(double a) {
  double r = wrap_angle(a);
  if (r >= kPi / 2.0) return r - kPi;
  if (r < -kPi / 2.0) return r + kPi;
  return r;
}

// Rotation about the camera vertical axis (Y). Matches the KITTI
// rotation_y convention: rot_y(t) maps +z toward +x for t > 0.
inline Vec3 rot_y(double angle, const Vec3& v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

// Record of the coordinate chain applied to one frustum sample:
// camera -> frustum (rot_y by frustum_angle) -> mask (subtract centroid)
// -> object (subtract T-Net delta). Stored so centers predicted in the
// innermost frame can be mapped back out.
struct CanonicalizationState {
  double frustum_angle = 0.0;  // radians, in [-pi, pi]
  Vec3 mask_centroid{};        // frustum-frame meters
  Vec3 tnet_delta{};           // frustum-frame meters
};

// Absolute camera-frame center from the canonicalization record and the
// box-net residual: un-rotates (mask_centroid + tnet_delta + box_delta).
inline Vec3 recover_center(const CanonicalizationState& state, const Vec3& box_delta) {
  const Vec3 frustum = state.mask_centroid + state.tnet_delta + box_delta;
  return rot_y(-state.frustum_angle, frustum);
}

// ---------------------------------------------------------------------------
// Errors. Every library failure is a typed exception below FkError.
// ConfigError maps to CLI exit code 2, DataError and children to 3.

struct FkError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : FkError {
  using FkError::FkError;
};

struct DataError : FkError {
  using FkError::FkError;
};

struct EmptyFrustumError : DataError {
  EmptyFrustumError() : DataError("no points fall inside the frustum") {}
};

struct EmptyMaskError : DataError {
  EmptyMaskError() : DataError("mask selects zero points") {}
};

struct NonFiniteError : DataError {
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All randomness derives from one master seed through
// named sub-streams so parallel and serial generation agree bit-for-bit.
// Distribution code is hand-rolled: std:: distributions are not portable
// across standard libraries.

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(detail::splitmix64(seed)) {}

  // Named sub-stream of a master seed; index distinguishes per-item streams.
  static Rng stream(uint64_t master, std::string_view name, uint64_t index = 0) {
    uint64_t h = detail::splitmix64(master ^ detail::fnv1a(name));
    return Rng(detail::splitmix64(h + 0x9e3779b97f4a7c15ULL * (index + 1)));
  }

  uint64_t next_u64() {
    // xorshift* keeps this header-only and bit-stable everywhere.
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n >= 1.
  uint64_t index(uint64_t n) {
    return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one draw per call.
  double normal(double mean = 0.0, double sigma = 1.0) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

 private:
  uint64_t state_;
};

}  // namespace fk
