#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "binec/models.hpp"

namespace binec::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f,
                            bool requires_grad = false) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  for (float& v : t.data()) v = u(rng);
  return t;
}

inline BinaryCode random_code(std::mt19937_64& rng) {
  std::vector<float> v(kCodeBits);
  for (float& x : v) x = (rng() & 1u) ? 1.0f : -1.0f;
  return BinaryCode(v);
}

/// Narrow layers: fast enough for exhaustive checks, same topology.
inline Architecture tiny_arch() {
  Architecture a;
  a.encoder = {4, 4, 8};
  a.decoder = {8, 8, 8};
  return a;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("binec_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace binec::testing
