#include "grad_suite.hpp"

#include <cmath>
#include <functional>

#include "fixtures.hpp"
#include "reference.hpp"

namespace binec::testing {

namespace {

using Values = std::vector<std::vector<double>>;

// Random inputs bounded away from zero so |x| stays differentiable under +/-eps.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(shape), seed, 0.1f, 1.0f, true);
  std::mt19937_64 rng(seed + 17);
  for (float& v : t.data()) {
    if (rng() & 1u) v = -v;
  }
  return t;
}

ref::Array arg(const Values& values, std::size_t k, const Tensor& like) {
  ref::Array a(like.shape());
  a.v = values[k];
  return a;
}

// loss = sum(weights * f(inputs)); checks every input.
NamedReport check(const std::string& name, std::vector<Tensor> inputs,
                  const std::function<Tensor(const std::vector<Tensor>&)>& op,
                  const std::function<ref::Array(const std::vector<ref::Array>&)>& oracle,
                  std::uint64_t seed) {
  Shape out_shape;
  {
    NoGradScope probe;
    out_shape = op(inputs).shape();
  }
  const Tensor weights = random_tensor(out_shape, seed + 101);
  const ref::Array w = ref::from_tensor(weights);
  auto forward = [&] { return sum(mul(op(inputs), weights)); };
  auto reference = [&](const Values& values) {
    std::vector<ref::Array> args;
    for (std::size_t k = 0; k < inputs.size(); ++k) args.push_back(arg(values, k, inputs[k]));
    return ref::weighted_sum(oracle(args), w);
  };
  return {name, grad_check(forward, inputs, reference, 1e-3, 24, seed)};
}

ref::Array scalar(double v) {
  ref::Array a(Shape{});
  a.v = {v};
  return a;
}

}  // namespace

std::vector<NamedReport> op_gradient_suite() {
  std::vector<NamedReport> out;
  const Shape s4{2, 3, 4, 4};

  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
    const std::string name = "conv2d s" + std::to_string(stride) + " p" + std::to_string(pad);
    out.push_back(check(
        name,
        {random_tensor({2, 3, 6, 6}, 1, -1, 1, true), random_tensor({4, 3, 3, 3}, 2, -0.5f, 0.5f, true),
         random_tensor({4}, 3, -0.5f, 0.5f, true)},
        [=](const auto& t) { return conv2d(t[0], t[1], t[2], {stride, pad}); },
        [=](const auto& a) { return ref::conv2d(a[0], a[1], a[2], stride, pad); }, 10));
  }
  out.push_back(check(
      "depth_to_space", {random_tensor({2, 8, 2, 3}, 4, -1, 1, true)},
      [](const auto& t) { return depth_to_space(t[0], 2); },
      [](const auto& a) { return ref::depth_to_space(a[0], 2); }, 11));
  out.push_back(check(
      "space_to_depth", {random_tensor({2, 2, 4, 6}, 5, -1, 1, true)},
      [](const auto& t) { return space_to_depth(t[0], 2); },
      [](const auto& a) { return ref::space_to_depth(a[0], 2); }, 12));
  out.push_back(check(
      "crop", {random_tensor({2, 3, 6, 6}, 6, -1, 1, true)},
      [](const auto& t) { return crop(t[0], 1, 2, 4, 3); },
      [](const auto& a) { return ref::crop(a[0], 1, 2, 4, 3); }, 13));
  out.push_back(check(
      "blocks_to_grid", {random_tensor({18, 2, 2, 2}, 7, -1, 1, true)},
      [](const auto& t) { return blocks_to_grid(t[0], 3); },
      [](const auto& a) { return ref::blocks_to_grid(a[0], 3); }, 14));
  out.push_back(check(
      "grid_to_blocks", {random_tensor({2, 2, 6, 6}, 8, -1, 1, true)},
      [](const auto& t) { return grid_to_blocks(t[0], 3); },
      [](const auto& a) { return ref::grid_to_blocks(a[0], 3); }, 15));
  const std::vector<int> picks{3, 0, 3, 1};
  out.push_back(check(
      "gather_batch", {random_tensor({4, 2, 3, 3}, 9, -1, 1, true)},
      [&](const auto& t) { return gather_batch(t[0], picks); },
      [&](const auto& a) { return ref::gather(a[0], picks); }, 16));
  out.push_back(check(
      "concat_batch", {random_tensor({1, 2, 3, 3}, 10, -1, 1, true), random_tensor({2, 2, 3, 3}, 11, -1, 1, true)},
      [](const auto& t) { return concat_batch(t); },
      [](const auto& a) {
        ref::Array r({3, 2, 3, 3});
        std::copy(a[0].v.begin(), a[0].v.end(), r.v.begin());
        std::copy(a[1].v.begin(), a[1].v.end(), r.v.begin() + a[0].v.size());
        return r;
      },
      17));
  out.push_back(check(
      "reshape", {random_tensor({2, 3, 4}, 12, -1, 1, true)},
      [](const auto& t) { return reshape(t[0], {6, 4}); },
      [](const auto& a) {
        ref::Array r = a[0];
        r.shape = {6, 4};
        return r;
      },
      18));
  out.push_back(check(
      "add", {random_tensor(s4, 13, -1, 1, true), random_tensor(s4, 14, -1, 1, true)},
      [](const auto& t) { return add(t[0], t[1]); }, [](const auto& a) { return ref::add(a[0], a[1]); }, 19));
  out.push_back(check(
      "sub", {random_tensor(s4, 15, -1, 1, true), random_tensor(s4, 16, -1, 1, true)},
      [](const auto& t) { return sub(t[0], t[1]); }, [](const auto& a) { return ref::sub(a[0], a[1]); }, 20));
  out.push_back(check(
      "mul", {random_tensor(s4, 17, -1, 1, true), random_tensor(s4, 18, -1, 1, true)},
      [](const auto& t) { return mul(t[0], t[1]); }, [](const auto& a) { return ref::mul(a[0], a[1]); }, 21));
  out.push_back(check(
      "tanh", {random_tensor(s4, 19, -2, 2, true)}, [](const auto& t) { return tanh(t[0]); },
      [](const auto& a) { return ref::map(a[0], [](double x) { return std::tanh(x); }); }, 22));
  out.push_back(check(
      "sigmoid", {random_tensor(s4, 20, -3, 3, true)}, [](const auto& t) { return sigmoid(t[0]); },
      [](const auto& a) { return ref::map(a[0], ref::sigmoid); }, 23));
  out.push_back(check(
      "scale", {random_tensor(s4, 21, -1, 1, true)}, [](const auto& t) { return scale(t[0], -2.5f); },
      [](const auto& a) { return ref::map(a[0], [](double x) { return -2.5 * x; }); }, 24));
  out.push_back(check(
      "sum", {random_tensor(s4, 22, -1, 1, true)}, [](const auto& t) { return sum(t[0]); },
      [](const auto& a) {
        double s = 0.0;
        for (double v : a[0].v) s += v;
        return scalar(s);
      },
      25));
  out.push_back(check(
      "mean", {random_tensor(s4, 23, -1, 1, true)}, [](const auto& t) { return mean(t[0]); },
      [](const auto& a) {
        double s = 0.0;
        for (double v : a[0].v) s += v;
        return scalar(s / static_cast<double>(a[0].v.size()));
      },
      26));
  out.push_back(check(
      "mean_abs", {away_from_zero(s4, 24)}, [](const auto& t) { return mean_abs(t[0]); },
      [](const auto& a) {
        double s = 0.0;
        for (double v : a[0].v) s += std::fabs(v);
        return scalar(s / static_cast<double>(a[0].v.size()));
      },
      27));
  out.push_back(check(
      "binarize (identity surrogate)", {random_tensor(s4, 25, -1, 1, true)},
      [](const auto& t) { return binarize(t[0], BinarizeMode::kIdentity, nullptr); },
      [](const auto& a) { return a[0]; }, 28));
  return out;
}

NamedReport model_gradient_check(Variant variant, int iterations, std::uint64_t seed) {
  const CodecModel model(variant, iterations, tiny_arch(), seed);
  const int crop = training_crop(variant);
  const Tensor batch = random_tensor({1, 3, crop, crop}, seed + 1);
  const ref::Array ref_batch = ref::from_tensor(batch);

  // Smooth stand-in for the L1 objective: fixed random weights on every
  // residual, so no |.| kink sits inside the finite-difference stencil.
  std::vector<Tensor> weights;
  std::vector<ref::Array> ref_weights;
  {
    NoGradScope probe;
    const TrainingGraph g = training_graph(model, batch, BinarizeMode::kIdentity, nullptr);
    for (std::size_t i = 0; i < g.residuals.size(); ++i) {
      weights.push_back(random_tensor(g.residuals[i].shape(), seed + 50 + i));
      ref_weights.push_back(ref::from_tensor(weights.back()));
    }
  }
  auto forward = [&] {
    const TrainingGraph g = training_graph(model, batch, BinarizeMode::kIdentity, nullptr);
    Tensor loss = sum(mul(g.residuals[0], weights[0]));
    for (std::size_t i = 1; i < g.residuals.size(); ++i) loss = add(loss, sum(mul(g.residuals[i], weights[i])));
    return loss;
  };
  auto reference = [&](const Values& values) {
    const auto r = ref::residuals(model, ref::weights_of(model, values), ref_batch);
    double loss = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) loss += ref::weighted_sum(r[i], ref_weights[i]);
    return loss;
  };
  std::vector<Tensor> params = model.parameters().tensors();
  return {std::string(variant_name(variant)) + " x" + std::to_string(iterations),
          grad_check(forward, params, reference, 1e-3, 6, seed)};
}

}  // namespace binec::testing
