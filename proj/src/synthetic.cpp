#include "binec/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "binec/bitstream.hpp"

namespace binec {

namespace {

struct Wave {
  double fx, fy, phase;
  std::array<double, 3> amplitude;
};

struct Blob {
  double cx, cy, rx, ry;
  bool ellipse;
  std::array<double, 3> colour;
};

}  // namespace

Image8 synthetic_image(int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::array<double, 3> base{};
  for (double& b : base) b = uniform(60.0, 190.0);

  std::vector<Wave> waves(4);
  for (Wave& w : waves) {
    const double wavelength = uniform(48.0, 220.0);
    const double angle = uniform(0.0, std::numbers::pi);
    w.fx = std::cos(angle) * 2.0 * std::numbers::pi / wavelength;
    w.fy = std::sin(angle) * 2.0 * std::numbers::pi / wavelength;
    w.phase = uniform(0.0, 2.0 * std::numbers::pi);
    const double luma = uniform(10.0, 35.0);
    for (double& a : w.amplitude) a = luma * uniform(0.6, 1.4);
  }

  std::vector<Blob> shapes(5 + static_cast<int>(unit(rng) * 6));
  for (Blob& s : shapes) {
    s.cx = uniform(0.0, width);
    s.cy = uniform(0.0, height);
    s.rx = uniform(8.0, 48.0);
    s.ry = uniform(8.0, 48.0);
    s.ellipse = unit(rng) < 0.5;
    for (double& c : s.colour) c = uniform(20.0, 235.0);
  }

  std::normal_distribution<double> noise(0.0, 2.0);
  Image8 image(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::array<double, 3> v = base;
      for (const Wave& w : waves) {
        const double s = std::sin(w.fx * x + w.fy * y + w.phase);
        for (int c = 0; c < 3; ++c) v[c] += w.amplitude[c] * s;
      }
      for (const Blob& s : shapes) {
        const double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
        const double d = s.ellipse ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
        // Soft edge about two pixels wide.
        const double cover = std::clamp((1.0 - d) * std::min(s.rx, s.ry) / 2.0 + 0.5, 0.0, 1.0);
        for (int c = 0; c < 3; ++c) v[c] = v[c] * (1.0 - cover) + s.colour[c] * cover;
      }
      for (int c = 0; c < 3; ++c) {
        image.at(c, y, x) = static_cast<std::uint8_t>(std::clamp(std::lround(v[c] + noise(rng)), 0L, 255L));
      }
    }
  }
  return image;
}

void write_synthetic_corpus(const std::filesystem::path& root, const CorpusLayout& layout,
                            std::uint64_t seed) {
  struct Split {
    const char* name;
    int count, width, height;
  };
  const std::array<Split, 3> splits{{{"train", layout.train, layout.train_size, layout.train_size},
                                     {"valid", layout.valid, layout.train_size, layout.train_size},
                                     {"test", layout.test, layout.test_width, layout.test_height}}};
  std::uint64_t index = 0;
  for (const Split& s : splits) {
    const auto dir = root / s.name;
    std::filesystem::create_directories(dir);
    for (int i = 0; i < s.count; ++i) {
      char name[16];
      std::snprintf(name, sizeof(name), "%03d.png", i);
      save_image(dir / name, synthetic_image(s.width, s.height, seed * 1000003ull + index++));
    }
  }
}

}  // namespace binec
