// On-disk model container. Layout, all little-endian:
//
//   "SLUT" | version u16 = 1 | flags u16 | T u16 | M u16 | N u16 | reserved u16
//   T*M*N^3*3 f32 lut cells, scenario-major, cell order ((i*N+j)*N+k)*3+c
//   arch u16 | param count u64 | count f32 predictor parameters
//   CRC32 (IEEE) of every preceding byte
//
// Arch 1 is the standard conv predictor (256 input, 3 channels, widths
// 16/32/64/64); arch 2 is the direct 64x64 logit grid. Either way the
// parameter count is implied by T and M, and the stored count must agree.

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "error.hpp"
#include "predictor.hpp"

namespace lutfuse {

struct LutBundle {
  std::uint16_t flags = 0;
  LutBank bank;
  PredictorNet predictor;
};

inline PredictorConfig standard_conv_config(int t_scenarios, int m_categories) {
  PredictorConfig c;
  c.t_scenarios = t_scenarios;
  c.m_categories = m_categories;
  return c;
}

namespace detail {

inline void put_u16(std::vector<unsigned char>& b, std::uint16_t v) {
  b.push_back(v & 0xff);
  b.push_back((v >> 8) & 0xff);
}
inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back((v >> (8 * i)) & 0xff);
}
inline void put_f32(std::vector<unsigned char>& b, float v) {
  put_u32(b, std::bit_cast<std::uint32_t>(v));
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return std::uint16_t(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
         (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
inline float get_f32(const unsigned char* p) {
  return std::bit_cast<float>(get_u32(p));
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t len) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (len > 0) {
    const uInt chunk = len > 0x40000000u ? 0x40000000u : uInt(len);
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    len -= chunk;
  }
  return std::uint32_t(crc);
}

// The conv predictor is stored without its shape, so only the standard
// geometry may be serialized.
template <typename T>
inline bool is_standard_conv(const PredictorConfigT<T>& c) {
  return c.in_size == 256 && c.in_channels == 3 && c.w0 == 16 && c.w1 == 32 &&
         c.w2 == 64 && c.w3 == 64;
}

}  // namespace detail

inline std::vector<unsigned char> encode_bundle(const LutBundle& bundle) {
  const LutBank& bank = bundle.bank;
  detail::check_bank(bank);
  const int t = bank.t_scenarios, m = bank.m_categories, n = bank.n_bins();
  if (t > 0xffff || m > 0xffff || n > 0xffff)
    throw InvalidArgument("bank dimensions exceed the format's 16-bit fields");
  const PredictorNet& net = bundle.predictor;
  if (net.t_scenarios() != t || net.m_categories() != m)
    throw InvalidArgument("predictor head sizes do not match the bank");
  if (net.arch == PredictorArch::kConv) {
    if (!detail::is_standard_conv(net.config))
      throw InvalidArgument("only the standard conv geometry is serializable");
  } else if (net.arch == PredictorArch::kGrid) {
    if (net.grid_size != 64)
      throw InvalidArgument("only the standard 64x64 grid is serializable");
  } else {
    throw InvalidArgument("unknown predictor architecture");
  }

  std::vector<unsigned char> out;
  out.reserve(30 + bank.luts.size() * bank.luts.front().values.size() * 4 +
              net.params.size() * 4 + 14);
  out.push_back('S');
  out.push_back('L');
  out.push_back('U');
  out.push_back('T');
  detail::put_u16(out, 1);
  detail::put_u16(out, bundle.flags);
  detail::put_u16(out, std::uint16_t(t));
  detail::put_u16(out, std::uint16_t(m));
  detail::put_u16(out, std::uint16_t(n));
  detail::put_u16(out, 0);
  for (const Lut3d& lut : bank.luts)
    for (float v : lut.values) detail::put_f32(out, v);
  detail::put_u16(out, std::uint16_t(net.arch));
  detail::put_u64(out, net.params.size());
  for (float v : net.params) detail::put_f32(out, v);
  detail::put_u32(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

inline LutBundle decode_bundle(std::span<const unsigned char> bytes) {
  constexpr std::size_t kHeader = 16;
  if (bytes.size() < kHeader + 2 + 8 + 4)
    throw DecodeError("bundle is truncated");
  if (bytes[0] != 'S' || bytes[1] != 'L' || bytes[2] != 'U' || bytes[3] != 'T')
    throw DecodeError("not a bundle file");
  if (detail::get_u16(&bytes[4]) != 1)
    throw DecodeError("unsupported bundle version");
  const std::uint32_t stored = detail::get_u32(&bytes[bytes.size() - 4]);
  if (detail::crc32_of(bytes.data(), bytes.size() - 4) != stored)
    throw DecodeError("bundle CRC mismatch");

  const std::uint16_t flags = detail::get_u16(&bytes[6]);
  const int t = detail::get_u16(&bytes[8]);
  const int m = detail::get_u16(&bytes[10]);
  const int n = detail::get_u16(&bytes[12]);
  if (t < 1 || m < 1) throw InvalidArgument("bundle has zero scenario or category count");
  if (n < 2) throw InvalidArgument("bundle lattice needs at least two nodes per axis");

  std::uint64_t cell_floats = 0;  // T*M*N^3*3, overflow-checked
  {
    std::uint64_t acc = std::uint64_t(t) * m;
    const std::uint64_t n3 = std::uint64_t(n) * n * n;
    if (__builtin_mul_overflow(acc, n3, &acc) ||
        __builtin_mul_overflow(acc, std::uint64_t(3), &acc))
      throw DecodeError("bundle payload length mismatch");
    cell_floats = acc;
  }
  std::size_t off = kHeader;
  if (bytes.size() < off + 2 + 8 + 4 || (bytes.size() - off - 2 - 8 - 4) / 4 < cell_floats)
    throw DecodeError("bundle payload length mismatch");
  const std::size_t cells_end = off + std::size_t(cell_floats) * 4;
  const std::uint16_t arch = detail::get_u16(&bytes[cells_end]);
  const std::uint64_t count = detail::get_u64(&bytes[cells_end + 2]);
  std::uint64_t expected_total = 0;
  if (__builtin_mul_overflow(count, std::uint64_t(4), &expected_total) ||
      __builtin_add_overflow(expected_total,
                             std::uint64_t(cells_end + 2 + 8 + 4),
                             &expected_total) ||
      expected_total != bytes.size())
    throw DecodeError("bundle payload length mismatch");

  LutBundle bundle;
  bundle.flags = flags;
  bundle.bank.t_scenarios = t;
  bundle.bank.m_categories = m;
  bundle.bank.luts.resize(std::size_t(t) * m);
  const std::size_t per_lut = std::size_t(n) * n * n * 3;
  for (std::size_t l = 0; l < bundle.bank.luts.size(); ++l) {
    Lut3d& lut = bundle.bank.luts[l];
    lut.n_bins = n;
    lut.values.resize(per_lut);
    const unsigned char* p = bytes.data() + off + l * per_lut * 4;
    for (std::size_t i = 0; i < per_lut; ++i)
      lut.values[i] = detail::get_f32(p + i * 4);
  }

  if (arch == std::uint16_t(PredictorArch::kConv)) {
    bundle.predictor = make_conv_predictor(standard_conv_config(t, m));
  } else if (arch == std::uint16_t(PredictorArch::kGrid)) {
    bundle.predictor = make_grid_predictor<float>(t, m, 64);
  } else {
    throw DecodeError("unknown predictor architecture in bundle");
  }
  if (count != bundle.predictor.params.size())
    throw DecodeError("predictor parameter count does not match the header");
  const unsigned char* p = bytes.data() + cells_end + 2 + 8;
  for (std::size_t i = 0; i < count; ++i)
    bundle.predictor.params[i] = detail::get_f32(p + i * 4);
  return bundle;
}

inline void save_bundle(const LutBundle& bundle, const std::string& path) {
  const std::vector<unsigned char> bytes = encode_bundle(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline LutBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path);
  return decode_bundle(bytes);
}

}  // namespace lutfuse
