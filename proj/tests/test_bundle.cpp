#include "lutfuse/bundle.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lutfuse/cube.hpp"
#include "lutfuse/error.hpp"
#include "reference.hpp"

namespace fs = std::filesystem;
using namespace lutfuse;

namespace {

std::string tmp_path(const std::string& name) {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() /
                 ("lutfuse_bundle_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

LutBundle make_grid_bundle(std::mt19937& rng, int t, int m, int n) {
  LutBundle bundle;
  bundle.bank = ref::random_bank(t, m, n, rng);
  bundle.predictor = make_grid_predictor<float>(t, m);
  for (auto& p : bundle.predictor.params) p = ref::runif(rng, -1.0f, 1.0f);
  return bundle;
}

std::vector<unsigned char> with_fixed_crc(std::vector<unsigned char> bytes) {
  const std::uint32_t crc =
      detail::crc32_of(bytes.data(), bytes.size());
  std::vector<unsigned char> out = std::move(bytes);
  detail::put_u32(out, crc);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST(Bundle, RoundTripPreservesEverything) {
  std::mt19937 rng(21);
  LutBundle src = make_grid_bundle(rng, 2, 3, 3);
  src.flags = 0x55;
  const std::vector<unsigned char> bytes = encode_bundle(src);
  const LutBundle back = decode_bundle(bytes);
  EXPECT_EQ(back.flags, src.flags);
  EXPECT_EQ(back.bank.t_scenarios, 2);
  EXPECT_EQ(back.bank.m_categories, 3);
  EXPECT_EQ(back.bank.n_bins(), 3);
  ASSERT_EQ(back.bank.luts.size(), src.bank.luts.size());
  for (std::size_t l = 0; l < src.bank.luts.size(); ++l)
    EXPECT_EQ(back.bank.luts[l].values, src.bank.luts[l].values);
  EXPECT_EQ(back.predictor.arch, PredictorArch::kGrid);
  EXPECT_EQ(back.predictor.params, src.predictor.params);
}

TEST(Bundle, ReencodeIsByteIdentical) {
  std::mt19937 rng(22);
  const LutBundle src = make_grid_bundle(rng, 1, 2, 4);
  const std::vector<unsigned char> bytes = encode_bundle(src);
  EXPECT_EQ(encode_bundle(decode_bundle(bytes)), bytes);
}

TEST(Bundle, FileRoundTrip) {
  std::mt19937 rng(23);
  const LutBundle src = make_grid_bundle(rng, 2, 2, 2);
  const std::string path = tmp_path("model.slut");
  save_bundle(src, path);
  const LutBundle back = load_bundle(path);
  for (std::size_t l = 0; l < src.bank.luts.size(); ++l)
    EXPECT_EQ(back.bank.luts[l].values, src.bank.luts[l].values);
  EXPECT_EQ(back.predictor.params, src.predictor.params);
}

TEST(Bundle, ConvPredictorRoundTrip) {
  std::mt19937 rng(24);
  LutBundle src;
  src.bank = ref::random_bank(2, 3, 2, rng);
  src.predictor = init_predictor(standard_conv_config(2, 3), 99u);
  const LutBundle back = decode_bundle(encode_bundle(src));
  EXPECT_EQ(back.predictor.arch, PredictorArch::kConv);
  EXPECT_EQ(back.predictor.config.in_size, 256);
  EXPECT_EQ(back.predictor.params, src.predictor.params);
}

TEST(Bundle, HeaderLayoutIsStable) {
  std::mt19937 rng(25);
  const LutBundle src = make_grid_bundle(rng, 2, 3, 4);
  const std::vector<unsigned char> b = encode_bundle(src);
  ASSERT_GE(b.size(), 28u);
  EXPECT_EQ(b[0], 'S');
  EXPECT_EQ(b[1], 'L');
  EXPECT_EQ(b[2], 'U');
  EXPECT_EQ(b[3], 'T');
  EXPECT_EQ(detail::get_u16(&b[4]), 1);   // version
  EXPECT_EQ(detail::get_u16(&b[8]), 2);   // T
  EXPECT_EQ(detail::get_u16(&b[10]), 3);  // M
  EXPECT_EQ(detail::get_u16(&b[12]), 4);  // N
  const std::size_t cells = std::size_t(2) * 3 * 4 * 4 * 4 * 3;
  const std::size_t params = src.predictor.params.size();
  EXPECT_EQ(b.size(), 16 + cells * 4 + 2 + 8 + params * 4 + 4);
  EXPECT_EQ(detail::get_u16(&b[16 + cells * 4]), 2);  // grid arch id
  EXPECT_EQ(detail::get_u64(&b[16 + cells * 4 + 2]), params);
}

TEST(Bundle, EveryByteCorruptionIsDetected) {
  std::mt19937 rng(26);
  const LutBundle src = make_grid_bundle(rng, 1, 1, 2);
  const std::vector<unsigned char> bytes = encode_bundle(src);
  ASSERT_NO_THROW(decode_bundle(bytes));
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    std::vector<unsigned char> bad = bytes;
    bad[i] ^= 0xff;
    EXPECT_THROW(decode_bundle(bad), DecodeError) << "byte " << i;
  }
}

TEST(Bundle, TruncationIsDetected) {
  std::mt19937 rng(27);
  const std::vector<unsigned char> bytes =
      encode_bundle(make_grid_bundle(rng, 1, 1, 2));
  for (std::size_t keep : {std::size_t(0), std::size_t(5), std::size_t(13),
                           bytes.size() - 5, bytes.size() - 1}) {
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + keep);
    EXPECT_THROW(decode_bundle(cut), DecodeError) << "kept " << keep;
  }
}

TEST(Bundle, ZeroDimensionsAreInvalidEvenWithValidCrc) {
  // Hand-built header with T=0; the CRC is correct, so the failure must come
  // from dimension validation, which callers map to a usage error.
  std::vector<unsigned char> b = {'S', 'L', 'U', 'T'};
  detail::put_u16(b, 1);  // version
  detail::put_u16(b, 0);  // flags
  detail::put_u16(b, 0);  // T = 0
  detail::put_u16(b, 1);  // M
  detail::put_u16(b, 2);  // N
  detail::put_u16(b, 0);  // reserved
  detail::put_u16(b, 2);  // arch
  detail::put_u64(b, 0);  // count
  EXPECT_THROW(decode_bundle(with_fixed_crc(b)), InvalidArgument);

  std::vector<unsigned char> n1 = {'S', 'L', 'U', 'T'};
  detail::put_u16(n1, 1);
  detail::put_u16(n1, 0);
  detail::put_u16(n1, 1);
  detail::put_u16(n1, 1);
  detail::put_u16(n1, 1);  // N = 1
  detail::put_u16(n1, 0);
  detail::put_u16(n1, 2);
  detail::put_u64(n1, 0);
  EXPECT_THROW(decode_bundle(with_fixed_crc(n1)), InvalidArgument);
}

TEST(Bundle, WrongMagicOrVersionRejected) {
  std::mt19937 rng(28);
  const std::vector<unsigned char> good =
      encode_bundle(make_grid_bundle(rng, 1, 1, 2));
  std::vector<unsigned char> magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_bundle(magic), DecodeError);
  std::vector<unsigned char> ver(good.begin(), good.end() - 4);
  ver[4] = 9;
  EXPECT_THROW(decode_bundle(with_fixed_crc(
                   std::vector<unsigned char>(ver.begin(), ver.end()))),
               DecodeError);
}

TEST(Bundle, TamperedParamCountRejected) {
  std::mt19937 rng(29);
  const LutBundle src = make_grid_bundle(rng, 1, 1, 2);
  std::vector<unsigned char> b = encode_bundle(src);
  b.resize(b.size() - 4);  // drop CRC, tamper, re-sign
  const std::size_t cells_end = 16 + std::size_t(2 * 2 * 2 * 3) * 4;
  b[cells_end + 2] ^= 0x01;
  EXPECT_THROW(decode_bundle(with_fixed_crc(std::move(b))), DecodeError);
}

TEST(Bundle, UnknownArchRejected) {
  std::mt19937 rng(30);
  const LutBundle src = make_grid_bundle(rng, 1, 1, 2);
  std::vector<unsigned char> b = encode_bundle(src);
  b.resize(b.size() - 4);
  const std::size_t cells_end = 16 + std::size_t(2 * 2 * 2 * 3) * 4;
  b[cells_end] = 7;
  EXPECT_THROW(decode_bundle(with_fixed_crc(std::move(b))), DecodeError);
}

TEST(Bundle, EncodeRejectsMismatchedPredictor) {
  std::mt19937 rng(31);
  LutBundle bundle;
  bundle.bank = ref::random_bank(2, 2, 2, rng);
  bundle.predictor = make_grid_predictor<float>(2, 3);  // M mismatch
  EXPECT_THROW(encode_bundle(bundle), InvalidArgument);

  bundle.predictor = make_grid_predictor<float>(2, 2, 32);  // nonstandard grid
  EXPECT_THROW(encode_bundle(bundle), InvalidArgument);

  PredictorConfig odd = standard_conv_config(2, 2);
  odd.in_size = 64;
  bundle.predictor = make_conv_predictor(odd);  // nonstandard conv geometry
  EXPECT_THROW(encode_bundle(bundle), InvalidArgument);
}

TEST(Bundle, MissingFileIsIoError) {
  EXPECT_THROW(load_bundle(tmp_path("absent.slut")), IoError);
}

TEST(Cube, IdentityHeaderFirstAndLastLines) {
  std::ostringstream out;
  write_cube(identity_lut<float>(5), out);
  const std::vector<std::string> lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 1u + 5 * 5 * 5);
  EXPECT_EQ(lines[0], "LUT_3D_SIZE 5");
  EXPECT_EQ(lines[1], "0.000000 0.000000 0.000000");
  EXPECT_EQ(lines.back(), "1.000000 1.000000 1.000000");
}

TEST(Cube, RedVariesFastest) {
  std::ostringstream out;
  write_cube(identity_lut<float>(2), out);
  const std::vector<std::string> lines = lines_of(out.str());
  ASSERT_EQ(lines.size(), 9u);
  // line index l = 1 + r + 2g + 4b for the N=2 identity lattice
  EXPECT_EQ(lines[1], "0.000000 0.000000 0.000000");
  EXPECT_EQ(lines[2], "1.000000 0.000000 0.000000");
  EXPECT_EQ(lines[3], "0.000000 1.000000 0.000000");
  EXPECT_EQ(lines[4], "1.000000 1.000000 0.000000");
  EXPECT_EQ(lines[5], "0.000000 0.000000 1.000000");
  EXPECT_EQ(lines[8], "1.000000 1.000000 1.000000");
}

TEST(Cube, RoundTripWithinQuantization) {
  std::mt19937 rng(32);
  Lut3d lut = ref::random_lut(7, rng, -0.2f, 1.2f);
  const std::string path = tmp_path("hostile.cube");
  write_cube(lut, path);
  const Lut3d back = read_cube(path);
  ASSERT_EQ(back.n_bins, 7);
  float worst = 0.0f;
  for (std::size_t i = 0; i < lut.values.size(); ++i) {
    const float v = lut.values[i];
    const float clamped = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    worst = std::max(worst, std::abs(back.values[i] - clamped));
  }
  EXPECT_LE(worst, 1e-5f);
}

TEST(Cube, OneHotFlattenEqualsDirectExport) {
  std::mt19937 rng(33);
  const LutBank bank = ref::random_bank(2, 2, 3, rng);
  const std::vector<float> omega = {0.0f, 1.0f};
  const std::vector<float> alpha = {1.0f, 0.0f};
  const Lut3d flat = flatten_bank(bank, std::span<const float>(omega),
                                  std::span<const float>(alpha));
  std::ostringstream a, b;
  write_cube(flat, a);
  write_cube(bank.lut(1, 0), b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Cube, ImportToleratesCommentsAndKeywords) {
  std::istringstream in(
      "# a comment\n"
      "TITLE \"whatever\"\n"
      "DOMAIN_MIN 0.0 0.0 0.0\n"
      "LUT_3D_SIZE 2\n"
      "\n"
      "0 0 0\n0.5 0 0\n# mid comment\n0 1 0\n1 1 0\n"
      "0 0 1\n1 0 1\n0 1 1\n1 1 1\n"
      "DOMAIN_MAX 1.0 1.0 1.0\n");
  const Lut3d lut = read_cube(in);
  EXPECT_EQ(lut.n_bins, 2);
  EXPECT_EQ(lut.cell(1, 0, 0)[0], 0.5f);
  EXPECT_EQ(lut.cell(0, 1, 0)[1], 1.0f);
  EXPECT_EQ(lut.cell(0, 0, 1)[2], 1.0f);
}

TEST(Cube, MalformedInputsRejected) {
  {
    std::istringstream in("0 0 0\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // data before header
  }
  {
    std::istringstream in("LUT_3D_SIZE 1\n0 0 0\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // degenerate size
  }
  {
    std::istringstream in("LUT_3D_SIZE 2\n0 0 0\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // too few lines
  }
  {
    std::ostringstream full;
    write_cube(identity_lut<float>(2), full);
    std::istringstream in(full.str() + "0 0 0\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // too many lines
  }
  {
    std::istringstream in("LUT_3D_SIZE 2\n0 0 zebra\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // unparseable token
  }
  {
    std::istringstream in("LUT_3D_SIZE 2\n0 0 0 0\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // trailing junk
  }
  {
    std::istringstream in("LUT_3D_SIZE 2\nLUT_3D_SIZE 2\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // duplicate header
  }
  {
    std::istringstream in("LUT_1D_SIZE 4\n");
    EXPECT_THROW(read_cube(in), DecodeError);  // unsupported table kind
  }
  EXPECT_THROW(read_cube(tmp_path("absent.cube")), IoError);
}
