#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "fuxib/params.hpp"

namespace fuxib {

// CRC-32 (IEEE), reflected, poly 0xEDB88320.
inline std::uint32_t crc32(const void* data, std::size_t len,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = ~seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

// Checkpoint layout (little-endian throughout):
//   magic "FXC1" | u32 record_count
//   per record: u32 name_len | name bytes | u8 dtype (0=f64, 1=f32)
//               | u32 rows | u32 cols | rows*cols raw values
//   u32 CRC-32 of everything before it
namespace ckptdetail {

inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& b, std::size_t& pos) {
  if (pos + 4 > b.size()) throw parse_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + static_cast<std::size_t>(i)])) << (8 * i);
  pos += 4;
  return v;
}

template <class Real>
constexpr std::uint8_t dtype_tag() {
  static_assert(sizeof(Real) == 8 || sizeof(Real) == 4, "unsupported dtype");
  return sizeof(Real) == 8 ? 0 : 1;
}

}  // namespace ckptdetail

template <class Real>
std::string serialize_checkpoint(const ParamStore<Real>& store) {
  using namespace ckptdetail;
  std::string b;
  b += "FXC1";
  put_u32(b, static_cast<std::uint32_t>(store.count()));
  for (const auto& e : store.entries()) {
    put_u32(b, static_cast<std::uint32_t>(e.name.size()));
    b += e.name;
    b.push_back(static_cast<char>(dtype_tag<Real>()));
    put_u32(b, static_cast<std::uint32_t>(e.value.rows()));
    put_u32(b, static_cast<std::uint32_t>(e.value.cols()));
    std::size_t off = b.size();
    b.resize(off + e.value.size() * sizeof(Real));
    std::memcpy(b.data() + off, e.value.data().data(), e.value.size() * sizeof(Real));
  }
  put_u32(b, crc32(b.data(), b.size()));
  return b;
}

// Restores values into an existing store: every record must name a known
// parameter of matching shape, and every store entry must be present.
template <class Real>
void deserialize_checkpoint(const std::string& bytes, ParamStore<Real>& store) {
  using namespace ckptdetail;
  if (bytes.size() < 12 || bytes.substr(0, 4) != "FXC1")
    throw parse_error("not a checkpoint (bad magic)");
  std::uint32_t stored_crc;
  {
    std::size_t pos = bytes.size() - 4;
    stored_crc = get_u32(bytes, pos);
  }
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw parse_error("checkpoint CRC mismatch");
  std::size_t pos = 4;
  std::uint32_t count = get_u32(bytes, pos);
  if (count != store.count())
    throw parse_error("checkpoint parameter count does not match the model");
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint32_t name_len = get_u32(bytes, pos);
    if (pos + name_len > bytes.size()) throw parse_error("checkpoint truncated");
    std::string name = bytes.substr(pos, name_len);
    pos += name_len;
    if (pos + 1 > bytes.size()) throw parse_error("checkpoint truncated");
    auto dtype = static_cast<std::uint8_t>(bytes[pos++]);
    if (dtype != dtype_tag<Real>()) throw parse_error("checkpoint dtype mismatch");
    std::uint32_t rows = get_u32(bytes, pos);
    std::uint32_t cols = get_u32(bytes, pos);
    if (!store.contains(name)) throw parse_error("unknown parameter in checkpoint: " + name);
    auto& e = store.at(name);
    if (e.value.rows() != static_cast<int>(rows) || e.value.cols() != static_cast<int>(cols))
      throw parse_error("checkpoint shape mismatch for " + name);
    std::size_t bytes_needed = static_cast<std::size_t>(rows) * cols * sizeof(Real);
    if (pos + bytes_needed > bytes.size()) throw parse_error("checkpoint truncated");
    std::memcpy(e.value.data().data(), bytes.data() + pos, bytes_needed);
    pos += bytes_needed;
  }
}

template <class Real>
void save_checkpoint(const std::string& path, const ParamStore<Real>& store) {
  std::string bytes = serialize_checkpoint(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw parse_error("cannot write checkpoint: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw parse_error("failed writing checkpoint: " + path);
}

template <class Real>
void load_checkpoint(const std::string& path, ParamStore<Real>& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw parse_error("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  deserialize_checkpoint(bytes, store);
}

}  // namespace fuxib
