#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "binec/binarizer.hpp"
#include "binec/image.hpp"
#include "binec/models.hpp"

namespace binec {

enum class FormatErrorCode {
  kIo = 1,
  kBadMagic = 2,
  kBadVersion = 3,
  kTruncated = 4,
  kInvalidHeader = 5,
  kInvalidValue = 6,
  kUnsupported = 7,
};

/// Failure reading or writing one of the on-disk formats.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  FormatErrorCode code() const { return code_; }

 private:
  FormatErrorCode code_;
};

// ---------------------------------------------------------------------------
// Bit packing: -1 -> 0, +1 -> 1, most significant bit first.
// ---------------------------------------------------------------------------

class BitWriter {
 public:
  void put(bool bit);
  void put(const BinaryCode& code);
  std::size_t bit_count() const { return bits_; }
  /// Bytes written so far, the last one zero-padded.
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t bits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  bool get();
  BinaryCode get_code(std::size_t length);
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> pack_bits(const BinaryCode& code);
BinaryCode unpack_bits(std::span<const std::uint8_t> bytes, std::size_t bit_count);

// ---------------------------------------------------------------------------
// "BINC" compressed image files
//
//   offset size  field
//        0    4  magic "BINC"
//        4    2  format version (1)
//        6    4  image width
//       10    4  image height
//       14    2  patch size (32)
//       16    2  iteration count
//       18    2  bits per patch per iteration (128)
//       20    -  payload: patch-major, iteration-minor codes, zero-padded
//                to a byte boundary once at the end of the file
//
// All integers little-endian. There is no checksum: a corrupted payload
// decodes to a different image rather than failing.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kCompressedVersion = 1;
inline constexpr std::size_t kCompressedHeaderBytes = 20;

/// Payload bits for a W x H image at `iterations` stages.
std::size_t payload_bits(int width, int height, int iterations);
/// Header plus ceil(payload_bits / 8).
std::size_t compressed_file_size(int width, int height, int iterations);

std::vector<std::uint8_t> serialize_compressed(const CompressedImage& image);
CompressedImage parse_compressed(std::span<const std::uint8_t> bytes);

void write_compressed(const std::filesystem::path& path, const CompressedImage& image);
CompressedImage read_compressed(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Files and images
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// True for extensions of lossless formats this codec reads (.png).
bool is_lossless_image(const std::filesystem::path& path);

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA; alpha dropped).
Image8 load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image8& image);

/// Bilinear resampling with pixel centres at (i + 0.5) * scale.
Image8 resize_to(const Image8& image, int width, int height);

}  // namespace binec
