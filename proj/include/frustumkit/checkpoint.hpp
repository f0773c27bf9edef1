#pragma once

// Versioned binary checkpoint: magic "FPK1", then per parameter
// (u32 name length, name bytes, u32 shape rank, u64 extents,
// 64-bit little-endian floats). Parameters are read until end of file.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "frustumkit/core.hpp"
#include "frustumkit/kitti_io.hpp"
#include "frustumkit/tensor.hpp"

namespace fk {

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

struct ByteReader {
  std::string_view data;
  size_t pos = 0;

  bool done() const { return pos >= data.size(); }
  void need(size_t n, const char* what) {
    if (pos + n > data.size()) throw ParseError(std::string("checkpoint truncated in ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(data[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(data.substr(pos, n));
    pos += n;
    return s;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(
    const std::vector<std::pair<std::string, const Tensor*>>& params) {
  std::string out = "FPK1";
  for (const auto& [name, tensor] : params) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<uint32_t>(tensor->shape.size()));
    for (size_t e : tensor->shape) detail::put_u64(out, e);
    for (double v : tensor->data) detail::put_f64(out, v);
  }
  return out;
}

inline std::map<std::string, Tensor> parse_checkpoint(std::string_view bytes) {
  detail::ByteReader r{bytes};
  if (r.str(4, "magic") != "FPK1") throw ParseError("bad checkpoint magic, expected FPK1");
  std::map<std::string, Tensor> out;
  while (!r.done()) {
    const uint32_t name_len = r.u32("name length");
    if (name_len > 4096) throw ParseError("implausible parameter name length");
    const std::string name = r.str(name_len, "name");
    const uint32_t rank = r.u32("rank");
    if (rank > 8) throw ParseError("implausible tensor rank");
    std::vector<size_t> shape;
    size_t count = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint64_t e = r.u64("extent");
      if (e == 0 || e > (1u << 28)) throw ParseError("implausible tensor extent");
      shape.push_back(static_cast<size_t>(e));
      count *= static_cast<size_t>(e);
    }
    Tensor t = Tensor::zeros(shape);
    for (size_t i = 0; i < count; ++i) t.data[i] = r.f64("tensor data");
    out.emplace(name, std::move(t));
  }
  return out;
}

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, const Tensor*>>& params) {
  write_file(path, serialize_checkpoint(params));
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace fk
