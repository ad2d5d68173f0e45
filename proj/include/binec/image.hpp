#pragma once

#include <cstdint>
#include <vector>

namespace binec {

/// 8-bit RGB image stored planar: data[(c * height + y) * width + x].
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(3) * w * h, 0) {}

  std::uint8_t& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::uint8_t at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image8&, const Image8&) = default;
};

}  // namespace binec
