#include <gtest/gtest.h>

#include "binec/binarizer.hpp"
#include "support/fixtures.hpp"

using namespace binec;

TEST(Binarizer, StochasticMeanMatchesInput) {
  Rng rng(42);
  for (float x : {-1.0f, -0.5f, 0.0f, 0.5f, 1.0f}) {
    const Tensor in = Tensor::full({100000}, x);
    const Tensor b = binarize_stochastic(in, rng);
    double total = 0.0;
    for (float v : b.data()) {
      ASSERT_TRUE(v == 1.0f || v == -1.0f);
      total += v;
    }
    EXPECT_NEAR(total / 1e5, x, 0.01) << "x = " << x;
  }
}

TEST(Binarizer, EndpointsAreCertain) {
  Rng rng(1);
  const Tensor b = binarize_stochastic(Tensor::from({2}, {1.0f, -1.0f}), rng);
  EXPECT_EQ(b.data()[0], 1.0f);
  EXPECT_EQ(b.data()[1], -1.0f);
}

TEST(Binarizer, DeterministicSignWithZeroPositive) {
  const Tensor b = binarize_deterministic(Tensor::from({4}, {-0.2f, 0.0f, 0.3f, -0.0f}));
  EXPECT_EQ(std::vector<float>(b.data().begin(), b.data().end()), (std::vector<float>{-1, 1, 1, 1}));
}

TEST(Binarizer, StraightThroughIsBitIdentical) {
  Tensor x = binec::testing::random_tensor({257}, 3, -1, 1, true);
  const Tensor upstream = binec::testing::random_tensor({257}, 4, -5, 5);
  Rng rng(9);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = sum(mul(binarize(x, BinarizeMode::kStochastic, &rng), upstream));
  }
  tape.backward(loss);
  for (std::size_t i = 0; i < 257; ++i) EXPECT_EQ(x.grad()[i], upstream.data()[i]);
}

TEST(Binarizer, BackwardAccumulates) {
  std::vector<float> down{1.0f, 2.0f};
  const std::vector<float> up{0.25f, -4.0f};
  straight_through_backward(up, down);
  EXPECT_EQ(down, (std::vector<float>{1.25f, -2.0f}));
}

TEST(Binarizer, SameSeedSameBits) {
  const Tensor x = binec::testing::random_tensor({500}, 5);
  Rng a(7), b(7);
  const Tensor ba = binarize_stochastic(x, a), bb = binarize_stochastic(x, b);
  EXPECT_TRUE(std::equal(ba.data().begin(), ba.data().end(), bb.data().begin()));
}

TEST(BinaryCode, RejectsNonBinaryValues) {
  EXPECT_THROW(BinaryCode(std::vector<float>{1.0f, 0.0f}), std::invalid_argument);
  EXPECT_THROW(BinaryCode(std::vector<float>{0.999f}), std::invalid_argument);
  const BinaryCode c(std::vector<float>{1.0f, -1.0f});
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(c[1], -1);
}
