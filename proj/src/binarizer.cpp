#include "binec/binarizer.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace binec {

BinaryCode::BinaryCode(std::span<const float> values) {
  bits_.reserve(values.size());
  for (float v : values) {
    if (v == 1.0f) {
      bits_.push_back(1);
    } else if (v == -1.0f) {
      bits_.push_back(-1);
    } else {
      throw std::invalid_argument("BinaryCode: value " + std::to_string(v) + " is not +/-1");
    }
  }
}

void BinaryCode::set(std::size_t i, std::int8_t bit) {
  if (bit != 1 && bit != -1) throw std::invalid_argument("BinaryCode: bit must be +/-1");
  bits_.at(i) = bit;
}

std::vector<float> BinaryCode::to_floats() const {
  return std::vector<float>(bits_.begin(), bits_.end());
}

namespace {

Tensor with_straight_through(const Tensor& x, Tensor out) {
  Tape* tape = active_tape();
  if (tape != nullptr && x.requires_grad()) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      straight_through_backward(std::as_const(out).grad(), x.grad());
    });
  }
  return out;
}

}  // namespace

Tensor binarize_stochastic(const Tensor& x, Rng& rng) {
  Tensor out = Tensor::zeros(x.shape());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double p_plus = (1.0 + std::clamp(static_cast<double>(src[i]), -1.0, 1.0)) * 0.5;
    dst[i] = uniform(rng) < p_plus ? 1.0f : -1.0f;
  }
  return with_straight_through(x, out);
}

Tensor binarize_deterministic(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] >= 0.0f ? 1.0f : -1.0f;
  return with_straight_through(x, out);
}

Tensor binarize(const Tensor& x, BinarizeMode mode, Rng* rng) {
  switch (mode) {
    case BinarizeMode::kStochastic:
      if (rng == nullptr) throw std::invalid_argument("binarize: stochastic mode needs an rng");
      return binarize_stochastic(x, *rng);
    case BinarizeMode::kDeterministic:
      return binarize_deterministic(x);
    case BinarizeMode::kIdentity:
      return with_straight_through(x, x.detach());
  }
  throw std::invalid_argument("binarize: unknown mode");
}

void straight_through_backward(std::span<const float> upstream, std::span<float> downstream) {
  if (upstream.size() != downstream.size()) {
    throw DimensionError("straight_through_backward: size mismatch");
  }
  for (std::size_t i = 0; i < upstream.size(); ++i) downstream[i] += upstream[i];
}

}  // namespace binec
