#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "binec/bitstream.hpp"
#include "binec/synthetic.hpp"
#include "binec/training.hpp"
#include "support/fixtures.hpp"

using namespace binec;
using binec::testing::random_code;
using binec::testing::TempDir;
using binec::testing::tiny_arch;

namespace {

CompressedImage random_compressed(int w, int h, int iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CompressedImage c{w, h, iterations, {}};
  c.codes.resize(static_cast<std::size_t>(w / 32) * (h / 32));
  for (auto& per_patch : c.codes)
    for (int i = 0; i < iterations; ++i) per_patch.push_back(random_code(rng));
  return c;
}

FormatErrorCode parse_error(std::span<const std::uint8_t> bytes) {
  try {
    parse_compressed(bytes);
  } catch (const FormatError& e) {
    return e.code();
  }
  return FormatErrorCode{};
}

}  // namespace

TEST(Packing, DeclaredBitConvention) {
  EXPECT_EQ(pack_bits(BinaryCode(std::vector<float>(8, -1.0f))), std::vector<std::uint8_t>{0x00});
  const BinaryCode alternating(std::vector<float>{1, -1, 1, -1, 1, -1, 1, -1});
  EXPECT_EQ(pack_bits(alternating), std::vector<std::uint8_t>{0xAA});
  const BinaryCode ragged(std::vector<float>{1, 1, 1});
  EXPECT_EQ(pack_bits(ragged), std::vector<std::uint8_t>{0xE0});
}

TEST(Packing, RandomRoundTrips) {
  std::mt19937_64 rng(1);
  for (int n = 0; n < 10000; ++n) {
    const BinaryCode c = random_code(rng);
    ASSERT_EQ(unpack_bits(pack_bits(c), c.size()), c);
  }
}

TEST(Packing, BitWriterSpansCodesWithoutPadding) {
  std::mt19937_64 rng(2);
  BitWriter w;
  w.put(true);
  const BinaryCode c = random_code(rng);
  w.put(c);
  EXPECT_EQ(w.bit_count(), 129u);
  EXPECT_EQ(w.bytes().size(), 17u);
  BitReader r(w.bytes());
  EXPECT_TRUE(r.get());
  EXPECT_EQ(r.get_code(128), c);
  EXPECT_THROW(r.get_code(8), FormatError);
}

TEST(Compressed, SizeFormula) {
  EXPECT_EQ(payload_bits(320, 224, 16), 143360u);
  EXPECT_EQ(compressed_file_size(320, 224, 16), kCompressedHeaderBytes + 17920);
  EXPECT_EQ(payload_bits(32, 32, 1), 128u);
  for (int w : {32, 64, 160, 320})
    for (int h : {32, 96, 224})
      for (int it : {1, 3, 16}) {
        const auto bytes = serialize_compressed(random_compressed(w, h, it, w * h + it));
        ASSERT_EQ(bytes.size(), compressed_file_size(w, h, it));
        ASSERT_EQ(bytes.size(), kCompressedHeaderBytes + (static_cast<std::size_t>(w / 32) * (h / 32) * it * 128 + 7) / 8);
      }
}

TEST(Compressed, FileRoundTripIsBitExact) {
  TempDir dir("binc");
  const CompressedImage c = random_compressed(320, 224, 16, 3);
  write_compressed(dir / "x.binc", c);
  EXPECT_EQ(std::filesystem::file_size(dir / "x.binc"), 17940u);
  EXPECT_EQ(read_compressed(dir / "x.binc"), c);
}

TEST(Compressed, HeaderDefects) {
  const auto good = serialize_compressed(random_compressed(64, 32, 2, 4));
  auto bad = good;
  bad[1] = 'X';
  EXPECT_EQ(parse_error(bad), FormatErrorCode::kBadMagic);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(parse_error(bad), FormatErrorCode::kBadVersion);
  EXPECT_EQ(parse_error(std::span(good).first(good.size() - 1)), FormatErrorCode::kTruncated);
  EXPECT_EQ(parse_error(std::span(good).first(10)), FormatErrorCode::kTruncated);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(parse_error(bad), FormatErrorCode::kInvalidHeader);
  bad = good;
  bad[14] = 16;  // patch size
  EXPECT_EQ(parse_error(bad), FormatErrorCode::kUnsupported);
}

TEST(Compressed, EmptyOrRaggedDimensionsAreRejected) {
  EXPECT_THROW(serialize_compressed(CompressedImage{0, 0, 1, {}}), FormatError);
  EXPECT_THROW(serialize_compressed(CompressedImage{40, 32, 1, {{}}}), FormatError);
  CompressedImage short_codes = random_compressed(64, 32, 2, 5);
  short_codes.codes[1].pop_back();
  EXPECT_THROW(serialize_compressed(short_codes), FormatError);
}

TEST(Compressed, CorruptedPayloadStillDecodesDifferently) {
  const CodecModel m(Variant::kConvAR, 2, tiny_arch(), 6);
  const Tensor image = normalize(synthetic_image(64, 64, 7));
  auto bytes = serialize_compressed(compress_image(m, image, 2));
  const Tensor clean = decompress_image(m, parse_compressed(bytes), 2);
  bytes[kCompressedHeaderBytes + 3] ^= 0xFF;
  const Tensor dirty = decompress_image(m, parse_compressed(bytes), 2);
  EXPECT_FALSE(std::equal(clean.data().begin(), clean.data().end(), dirty.data().begin()));
}

TEST(Compressed, PipelineThroughTheFileMatchesDirectDecode) {
  TempDir dir("pipeline");
  const CodecModel m(Variant::kBINetAR, 3, tiny_arch(), 8);
  const Tensor image = normalize(synthetic_image(96, 64, 9));
  const CompressedImage codes = compress_image(m, image, 3);
  write_compressed(dir / "p.binc", codes);
  const CompressedImage back = read_compressed(dir / "p.binc");
  EXPECT_EQ(back, codes);
  const Tensor a = decompress_image(m, codes, 3), b = decompress_image(m, back, 3);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

// --- Images -------------------------------------------------------------------

TEST(Images, PngRoundTripIsLossless) {
  TempDir dir("png");
  const Image8 img = synthetic_image(70, 45, 10);
  save_image(dir / "a.png", img);
  EXPECT_EQ(load_image(dir / "a.png"), img);
  EXPECT_THROW(load_image(dir / "missing.png"), FormatError);
  write_file_atomic(dir / "junk.png", std::vector<std::uint8_t>{1, 2, 3});
  EXPECT_THROW(load_image(dir / "junk.png"), FormatError);
  EXPECT_TRUE(is_lossless_image("x.PNG"));
  EXPECT_FALSE(is_lossless_image("x.jpg"));
}

TEST(Images, ResizeKeepsConstantsConstant) {
  Image8 flat(97, 61);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 61; ++y)
      for (int x = 0; x < 97; ++x) flat.at(c, y, x) = static_cast<std::uint8_t>(40 + 50 * c);
  const Image8 r = resize_to(flat, 320, 224);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 320; ++x) ASSERT_EQ(r.at(c, y, x), 40 + 50 * c);
}

TEST(Images, HalvingMatchesBilinearOracle) {
  // A 2x downscale with centre-aligned sampling lands exactly between source
  // pixels, so bilinear reduces to the mean of each 2x2 block.
  const Image8 big = synthetic_image(640, 448, 11);
  const Image8 small = resize_to(big, 320, 224);
  ASSERT_EQ(small.width, 320);
  ASSERT_EQ(small.height, 224);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 224; ++y) {
      for (int x = 0; x < 320; ++x) {
        const double mean = (big.at(c, 2 * y, 2 * x) + big.at(c, 2 * y, 2 * x + 1) +
                             big.at(c, 2 * y + 1, 2 * x) + big.at(c, 2 * y + 1, 2 * x + 1)) / 4.0;
        ASSERT_LE(std::fabs(small.at(c, y, x) - mean), 1.0) << c << "," << y << "," << x;
      }
    }
  }
}
