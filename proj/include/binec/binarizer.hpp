#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "binec/tensor.hpp"

namespace binec {

using Rng = std::mt19937_64;

/// Bits emitted per 32x32 patch per iteration (0.125 bpp).
inline constexpr int kCodeBits = 128;

/// One patch's code for one iteration; every element is -1 or +1.
class BinaryCode {
 public:
  BinaryCode() = default;
  /// Throws std::invalid_argument if any value is not exactly -1 or +1.
  explicit BinaryCode(std::span<const float> values);

  std::size_t size() const { return bits_.size(); }
  std::int8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, std::int8_t bit);
  void flip(std::size_t i) { bits_[i] = static_cast<std::int8_t>(-bits_[i]); }
  const std::vector<std::int8_t>& bits() const { return bits_; }
  std::vector<float> to_floats() const;

  friend bool operator==(const BinaryCode&, const BinaryCode&) = default;

 private:
  std::vector<std::int8_t> bits_;
};

enum class BinarizeMode {
  kStochastic,     // training: P(+1) = (1 + x) / 2
  kDeterministic,  // inference: sign(x), sign(0) = +1
  kIdentity,       // straight-through surrogate used by gradient checks
};

/// Emits +1 with probability (1 + x) / 2 (x clamped to [-1, 1]), so E[b] = x.
Tensor binarize_stochastic(const Tensor& x, Rng& rng);
Tensor binarize_deterministic(const Tensor& x);
/// Dispatches on mode; `rng` is only used for kStochastic.
Tensor binarize(const Tensor& x, BinarizeMode mode, Rng* rng);

/// Backward rule of the binarizer: the upstream gradient is accumulated into
/// the downstream buffer unchanged.
void straight_through_backward(std::span<const float> upstream, std::span<float> downstream);

}  // namespace binec
