// Adobe/IRIDAS .cube text export and import for a single 3D LUT.
//
// The file convention iterates red fastest: data line l holds lattice node
// (r, g, b) with l = r + N*g + N^2*b. Internally red is the slowest axis, so
// both directions permute explicitly. Values are written clamped to [0,1]
// with six decimals, which bounds the round-trip error by 5e-7 per channel.

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "core.hpp"
#include "error.hpp"

namespace lutfuse {

inline void write_cube(const Lut3d& lut, std::ostream& out) {
  detail::check_lut(lut);
  const int n = lut.n_bins;
  out << "LUT_3D_SIZE " << n << "\n";
  char line[64];
  for (int b = 0; b < n; ++b)
    for (int g = 0; g < n; ++g)
      for (int r = 0; r < n; ++r) {
        const float* cell = lut.cell(r, g, b);
        float v[3];
        for (int c = 0; c < 3; ++c)
          v[c] = cell[c] < 0.0f ? 0.0f : (cell[c] > 1.0f ? 1.0f : cell[c]);
        std::snprintf(line, sizeof line, "%.6f %.6f %.6f\n", double(v[0]),
                      double(v[1]), double(v[2]));
        out << line;
      }
  if (!out) throw IoError("cube write failed");
}

inline void write_cube(const Lut3d& lut, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_cube(lut, out);
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline Lut3d read_cube(std::istream& in) {
  Lut3d lut;
  int n = 0;
  std::size_t filled = 0, expected = 0;
  std::string raw;
  while (std::getline(in, raw)) {
    std::istringstream line(raw);
    std::string head;
    if (!(line >> head)) continue;  // blank line
    if (head[0] == '#') continue;
    if (head == "TITLE" || head == "DOMAIN_MIN" || head == "DOMAIN_MAX")
      continue;
    if (head == "LUT_3D_SIZE") {
      if (n != 0) throw DecodeError("duplicate LUT_3D_SIZE");
      if (!(line >> n) || n < 2 || n > 0xffff)
        throw DecodeError("invalid LUT_3D_SIZE");
      lut.n_bins = n;
      expected = std::size_t(n) * n * n;
      lut.values.assign(expected * 3, 0.0f);
      continue;
    }
    if (head == "LUT_1D_SIZE") throw DecodeError("1D cube tables are not supported");

    if (n == 0) throw DecodeError("cube data before LUT_3D_SIZE");
    if (filled == expected) throw DecodeError("too many cube data lines");
    float rgb[3];
    std::istringstream data(raw);
    std::string trailing;
    if (!(data >> rgb[0] >> rgb[1] >> rgb[2]))
      throw DecodeError("malformed cube data line: " + raw);
    if (data >> trailing) throw DecodeError("malformed cube data line: " + raw);
    const int r = int(filled % n);
    const int g = int((filled / n) % n);
    const int b = int(filled / (std::size_t(n) * n));
    float* cell = lut.cell(r, g, b);
    cell[0] = rgb[0];
    cell[1] = rgb[1];
    cell[2] = rgb[2];
    ++filled;
  }
  if (n == 0) throw DecodeError("missing LUT_3D_SIZE");
  if (filled != expected) throw DecodeError("cube data line count mismatch");
  return lut;
}

inline Lut3d read_cube(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_cube(in);
}

}  // namespace lutfuse
