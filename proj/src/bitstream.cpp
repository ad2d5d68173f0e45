#include "binec/bitstream.hpp"

#include <png.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>

#include "byte_io.hpp"

namespace binec {

void BitWriter::put(bool bit) {
  if (bits_ % 8 == 0) bytes_.push_back(0);
  if (bit) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
  ++bits_;
}

void BitWriter::put(const BinaryCode& code) {
  for (std::int8_t b : code.bits()) put(b > 0);
}

bool BitReader::get() {
  if (pos_ >= bytes_.size() * 8) {
    throw FormatError(FormatErrorCode::kTruncated, "bit stream exhausted at bit " + std::to_string(pos_));
  }
  const bool bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1u;
  ++pos_;
  return bit;
}

BinaryCode BitReader::get_code(std::size_t length) {
  if (bytes_.size() * 8 - pos_ < length) {
    throw FormatError(FormatErrorCode::kTruncated, "bit stream holds fewer than " +
                                                       std::to_string(length) + " more bits");
  }
  std::vector<float> values(length);
  for (float& v : values) v = get() ? 1.0f : -1.0f;
  return BinaryCode(values);
}

std::vector<std::uint8_t> pack_bits(const BinaryCode& code) {
  BitWriter w;
  w.put(code);
  return w.bytes();
}

BinaryCode unpack_bits(std::span<const std::uint8_t> bytes, std::size_t bit_count) {
  BitReader r(bytes);
  return r.get_code(bit_count);
}

std::size_t payload_bits(int width, int height, int iterations) {
  const std::size_t patches = static_cast<std::size_t>(width / kPatchSize) * (height / kPatchSize);
  return patches * static_cast<std::size_t>(iterations) * kCodeBits;
}

std::size_t compressed_file_size(int width, int height, int iterations) {
  return kCompressedHeaderBytes + (payload_bits(width, height, iterations) + 7) / 8;
}

std::vector<std::uint8_t> serialize_compressed(const CompressedImage& image) {
  if (image.width <= 0 || image.height <= 0 || image.width % kPatchSize != 0 ||
      image.height % kPatchSize != 0) {
    throw FormatError(FormatErrorCode::kInvalidHeader,
                      "image dimensions must be positive multiples of 32");
  }
  if (image.iterations < 1 || image.iterations > 0xFFFF) {
    throw FormatError(FormatErrorCode::kInvalidHeader, "iteration count out of range");
  }
  const std::size_t patches = static_cast<std::size_t>(image.rows()) * image.cols();
  if (image.codes.size() != patches) {
    throw FormatError(FormatErrorCode::kInvalidValue, "code table does not cover the patch grid");
  }
  detail::ByteWriter header;
  header.raw("BINC");
  header.u16(kCompressedVersion);
  header.u32(static_cast<std::uint32_t>(image.width));
  header.u32(static_cast<std::uint32_t>(image.height));
  header.u16(kPatchSize);
  header.u16(static_cast<std::uint16_t>(image.iterations));
  header.u16(kCodeBits);

  BitWriter payload;
  for (const auto& per_patch : image.codes) {
    if (per_patch.size() != static_cast<std::size_t>(image.iterations)) {
      throw FormatError(FormatErrorCode::kInvalidValue, "patch has the wrong number of codes");
    }
    for (const BinaryCode& code : per_patch) {
      if (code.size() != static_cast<std::size_t>(kCodeBits)) {
        throw FormatError(FormatErrorCode::kInvalidValue, "code is not 128 bits");
      }
      payload.put(code);
    }
  }
  std::vector<std::uint8_t> out = std::move(header.bytes());
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  return out;
}

CompressedImage parse_compressed(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || r.str(4) != "BINC") {
    throw FormatError(FormatErrorCode::kBadMagic, "not a BINC file");
  }
  const std::uint16_t version = r.u16();
  if (version != kCompressedVersion) {
    throw FormatError(FormatErrorCode::kBadVersion,
                      "unsupported BINC version " + std::to_string(version));
  }
  const std::uint32_t width = r.u32();
  const std::uint32_t height = r.u32();
  const std::uint16_t patch = r.u16();
  const std::uint16_t iterations = r.u16();
  const std::uint16_t bits = r.u16();
  if (patch != kPatchSize || bits != kCodeBits) {
    throw FormatError(FormatErrorCode::kUnsupported,
                      "unsupported patch size " + std::to_string(patch) + " or code length " +
                          std::to_string(bits));
  }
  if (width == 0 || height == 0 || width % kPatchSize != 0 || height % kPatchSize != 0 ||
      width > (1u << 20) || height > (1u << 20) || iterations == 0) {
    throw FormatError(FormatErrorCode::kInvalidHeader,
                      "invalid header: " + std::to_string(width) + "x" + std::to_string(height) +
                          ", " + std::to_string(iterations) + " iterations");
  }
  CompressedImage image;
  image.width = static_cast<int>(width);
  image.height = static_cast<int>(height);
  image.iterations = iterations;
  const std::size_t expected = (payload_bits(image.width, image.height, iterations) + 7) / 8;
  if (r.remaining() < expected) {
    throw FormatError(FormatErrorCode::kTruncated,
                      "payload has " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(expected));
  }
  if (r.remaining() > expected) {
    throw FormatError(FormatErrorCode::kInvalidHeader, "trailing bytes after payload");
  }
  BitReader bits_in(r.take(expected));
  const int patches = image.rows() * image.cols();
  image.codes.resize(patches);
  for (auto& per_patch : image.codes) {
    per_patch.reserve(iterations);
    for (int i = 0; i < iterations; ++i) per_patch.push_back(bits_in.get_code(kCodeBits));
  }
  return image;
}

void write_compressed(const std::filesystem::path& path, const CompressedImage& image) {
  write_file_atomic(path, serialize_compressed(image));
}

CompressedImage read_compressed(const std::filesystem::path& path) {
  return parse_compressed(read_file(path));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(FormatErrorCode::kIo,
                      "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FormatError(FormatErrorCode::kIo, "error reading " + path.string());
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::random_device rd;
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw FormatError(FormatErrorCode::kIo,
                        "cannot create " + tmp.string() + ": " + std::strerror(errno));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw FormatError(FormatErrorCode::kIo, "error writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw FormatError(FormatErrorCode::kIo, "cannot rename onto " + path.string() + ": " + ec.message());
  }
}

bool is_lossless_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

// libpng's simplified API handles the format conversions (palette, 16-bit,
// gray) for us.
Image8 load_image(const std::filesystem::path& path) {
  if (!is_lossless_image(path)) {
    throw FormatError(FormatErrorCode::kUnsupported,
                      path.string() + ": only lossless PNG input is accepted");
  }
  const std::vector<std::uint8_t> bytes = read_file(path);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw FormatError(FormatErrorCode::kInvalidValue, path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> interleaved(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, interleaved.data(), 0, nullptr)) {
    std::string message = png.message;
    png_image_free(&png);
    throw FormatError(FormatErrorCode::kInvalidValue, path.string() + ": " + message);
  }
  Image8 image(static_cast<int>(png.width), static_cast<int>(png.height));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = interleaved[(static_cast<std::size_t>(y) * image.width + x) * 3 + c];
      }
    }
  }
  return image;
}

void save_image(const std::filesystem::path& path, const Image8& image) {
  if (image.width <= 0 || image.height <= 0) {
    throw FormatError(FormatErrorCode::kInvalidValue, "cannot save an empty image");
  }
  std::vector<std::uint8_t> interleaved(static_cast<std::size_t>(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        interleaved[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = image.at(c, y, x);
      }
    }
  }
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(png, size, 0, interleaved.data(), 0, nullptr)) {
    throw FormatError(FormatErrorCode::kIo, std::string("PNG encoding failed: ") + png.message);
  }
  std::vector<std::uint8_t> encoded(size);
  if (!png_image_write_to_memory(&png, encoded.data(), &size, 0, interleaved.data(), 0, nullptr)) {
    throw FormatError(FormatErrorCode::kIo, std::string("PNG encoding failed: ") + png.message);
  }
  encoded.resize(size);
  write_file_atomic(path, encoded);
}

Image8 resize_to(const Image8& image, int width, int height) {
  if (width <= 0 || height <= 0 || image.width <= 0 || image.height <= 0) {
    throw std::invalid_argument("resize_to: dimensions must be positive");
  }
  if (width == image.width && height == image.height) return image;
  Image8 out(width, height);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  auto source = [](int i, double scale, int extent, int& i0, int& i1, double& t) {
    const double f = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<int>(std::floor(f));
    i1 = std::min(i0 + 1, extent - 1);
    t = f - i0;
  };
  for (int y = 0; y < height; ++y) {
    int y0, y1;
    double ty;
    source(y, sy, image.height, y0, y1, ty);
    for (int x = 0; x < width; ++x) {
      int x0, x1;
      double tx;
      source(x, sx, image.width, x0, x1, tx);
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(c, y0, x0) * (1 - tx) + image.at(c, y0, x1) * tx;
        const double bottom = image.at(c, y1, x0) * (1 - tx) + image.at(c, y1, x1) * tx;
        const double v = top * (1 - ty) + bottom * ty;
        out.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace binec
