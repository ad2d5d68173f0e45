#pragma once

#include <cstdint>
#include <filesystem>

#include "binec/image.hpp"

namespace binec {

/// Procedural photograph stand-in: smooth colour fields, a few flat shapes
/// with soft edges and mild sensor noise. Same seed, same pixels.
Image8 synthetic_image(int width, int height, std::uint64_t seed);

struct CorpusLayout {
  int train = 36;
  int valid = 10;
  int test = 4;
  int train_size = 256;  // square train/valid images
  int test_width = 320;
  int test_height = 224;
};

/// Writes root/{train,valid,test}/NNN.png.
void write_synthetic_corpus(const std::filesystem::path& root, const CorpusLayout& layout,
                            std::uint64_t seed);

}  // namespace binec
