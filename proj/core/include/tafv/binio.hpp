#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace tafv {

// Little-endian binary primitives shared by the mesh/snapshot file formats and
// the message wire format.

inline uint16_t to_le(uint16_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return static_cast<uint16_t>((v >> 8) | (v << 8));
}
inline uint32_t to_le(uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v >> 24) & 0xffu) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}
inline uint64_t to_le(uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return (static_cast<uint64_t>(to_le(static_cast<uint32_t>(v))) << 32) |
         to_le(static_cast<uint32_t>(v >> 32));
}
inline uint16_t from_le(uint16_t v) { return to_le(v); }
inline uint32_t from_le(uint32_t v) { return to_le(v); }
inline uint64_t from_le(uint64_t v) { return to_le(v); }

inline void write_u32(std::ostream& os, uint32_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_i32(std::ostream& os, int32_t v) { write_u32(os, static_cast<uint32_t>(v)); }
inline void write_u64(std::ostream& os, uint64_t v) {
  v = to_le(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_f64(std::ostream& os, double v) {
  write_u64(os, std::bit_cast<uint64_t>(v));
}

inline uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("binary read failed (truncated input)");
  return from_le(v);
}
inline int32_t read_i32(std::istream& is) { return static_cast<int32_t>(read_u32(is)); }
inline uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("binary read failed (truncated input)");
  return from_le(v);
}
inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

// Buffer-backed variants used by the transport payload codecs.
inline void put_u32(std::vector<std::byte>& buf, uint32_t v) {
  v = to_le(v);
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}
inline void put_u64(std::vector<std::byte>& buf, uint64_t v) {
  v = to_le(v);
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  buf.insert(buf.end(), p, p + sizeof v);
}
inline void put_f64(std::vector<std::byte>& buf, double v) {
  put_u64(buf, std::bit_cast<uint64_t>(v));
}
inline void put_i64(std::vector<std::byte>& buf, int64_t v) {
  put_u64(buf, static_cast<uint64_t>(v));
}

inline uint32_t get_u32(const std::byte* p) {
  uint32_t v;
  std::memcpy(&v, p, sizeof v);
  return from_le(v);
}
inline uint64_t get_u64(const std::byte* p) {
  uint64_t v;
  std::memcpy(&v, p, sizeof v);
  return from_le(v);
}
inline double get_f64(const std::byte* p) { return std::bit_cast<double>(get_u64(p)); }
inline int64_t get_i64(const std::byte* p) { return static_cast<int64_t>(get_u64(p)); }

}  // namespace tafv
