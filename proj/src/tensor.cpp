#include "binec/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace binec {

namespace {

thread_local Tape* g_active_tape = nullptr;

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined operand");
}

void require_rank(const Tensor& t, int rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

// Unfolds x [N,C,H,W] into a [C*kh*kw, N*Ho*Wo] row-major matrix.
void im2col(const float* x, int n_batch, int channels, int height, int width, int kh,
            int kw, int stride, int pad, int out_h, int out_w, float* col) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t cols = plane * n_batch;
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        float* row = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * cols;
        for (int n = 0; n < n_batch; ++n) {
          const float* src = x + (static_cast<std::size_t>(n) * channels + c) * height * width;
          float* dst = row + n * plane;
          for (int oh = 0; oh < out_h; ++oh) {
            const int ih = oh * stride - pad + i;
            float* dst_row = dst + static_cast<std::size_t>(oh) * out_w;
            if (ih < 0 || ih >= height) {
              std::fill(dst_row, dst_row + out_w, 0.0f);
              continue;
            }
            const float* src_row = src + static_cast<std::size_t>(ih) * width;
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow * stride - pad + j;
              dst_row[ow] = (iw >= 0 && iw < width) ? src_row[iw] : 0.0f;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters (accumulates) columns back into dx.
void col2im(const float* col, int n_batch, int channels, int height, int width, int kh,
            int kw, int stride, int pad, int out_h, int out_w, float* dx) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t cols = plane * n_batch;
  for (int c = 0; c < channels; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const float* row = col + (static_cast<std::size_t>(c * kh + i) * kw + j) * cols;
        for (int n = 0; n < n_batch; ++n) {
          float* dst = dx + (static_cast<std::size_t>(n) * channels + c) * height * width;
          const float* src = row + n * plane;
          for (int oh = 0; oh < out_h; ++oh) {
            const int ih = oh * stride - pad + i;
            if (ih < 0 || ih >= height) continue;
            const float* src_row = src + static_cast<std::size_t>(oh) * out_w;
            float* dst_row = dst + static_cast<std::size_t>(ih) * width;
            for (int ow = 0; ow < out_w; ++ow) {
              const int iw = ow * stride - pad + j;
              if (iw >= 0 && iw < width) dst_row[iw] += src_row[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape / Tensor
// ---------------------------------------------------------------------------

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape));
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(binec::numel(shape), 0.0f);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, float value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (binec::numel(shape) != values.size()) {
    throw DimensionError("Tensor::from: " + std::to_string(values.size()) +
                         " values for shape " + to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return impl_ ? impl_->shape : kEmpty;
}

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw DimensionError("axis out of range for shape " + to_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<float> Tensor::data() { return impl_->data; }
std::span<const float> Tensor::data() const { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<float> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

Tensor Tensor::detach() const { return from(shape(), impl_->data); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule) {
  entries_.push_back({std::move(inputs), std::move(output), std::move(rule)});
}

std::size_t Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  Tensor seed = loss;
  seed.grad()[0] = 1.0f;
  std::size_t ran = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->rule();
    ++ran;
  }
  return ran;
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

std::size_t backward(const Tensor& loss, Tape& tape) { return tape.backward(loss); }

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Conv2dOptions options) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  require_rank(bias, 1, "conv2d bias");
  const int n_batch = input.dim(0), c_in = input.dim(1), height = input.dim(2),
            width = input.dim(3);
  const int c_out = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const int stride = options.stride, pad = options.padding;
  if (kernel.dim(1) != c_in) {
    throw DimensionError("conv2d: input has " + std::to_string(c_in) +
                         " channels but kernel expects " + std::to_string(kernel.dim(1)));
  }
  if (bias.dim(0) != c_out) throw DimensionError("conv2d: bias length != output channels");
  if (stride < 1 || pad < 0) throw DimensionError("conv2d: stride must be >= 1, padding >= 0");
  if (kh > height + 2 * pad || kw > width + 2 * pad) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const int out_h = (height + 2 * pad - kh) / stride + 1;
  const int out_w = (width + 2 * pad - kw) / stride + 1;
  const int k_dim = c_in * kh * kw;
  const int plane = out_h * out_w;
  const int cols = n_batch * plane;

  auto col = std::make_shared<std::vector<float>>(static_cast<std::size_t>(k_dim) * cols);
  im2col(input.data().data(), n_batch, c_in, height, width, kh, kw, stride, pad, out_h, out_w,
         col->data());

  const bool track = tracking({&input, &kernel, &bias});
  Tensor out = Tensor::zeros({n_batch, c_out, out_h, out_w}, track);

  ConstMapRM w_mat(kernel.data().data(), c_out, k_dim);
  ConstMapRM col_mat(col->data(), k_dim, cols);
  MatrixRM product(c_out, cols);
  product.noalias() = w_mat * col_mat;

  float* dst = out.data().data();
  const float* b = bias.data().data();
  for (int n = 0; n < n_batch; ++n) {
    for (int co = 0; co < c_out; ++co) {
      const float* src = product.data() + static_cast<std::size_t>(co) * cols + n * plane;
      float* o = dst + (static_cast<std::size_t>(n) * c_out + co) * plane;
      for (int p = 0; p < plane; ++p) o[p] = src[p] + b[co];
    }
  }

  if (track) {
    if (!kernel.requires_grad()) col.reset();
    active_tape()->record(
        {input, kernel, bias}, out,
        [=]() mutable {
          const float* g_out = out.grad().data();
          MatrixRM g_mat(c_out, cols);
          for (int n = 0; n < n_batch; ++n) {
            for (int co = 0; co < c_out; ++co) {
              const float* src = g_out + (static_cast<std::size_t>(n) * c_out + co) * plane;
              std::copy(src, src + plane, g_mat.data() + static_cast<std::size_t>(co) * cols +
                                              n * plane);
            }
          }
          if (kernel.requires_grad()) {
            MapRM gw(kernel.grad().data(), c_out, k_dim);
            ConstMapRM cm(col->data(), k_dim, cols);
            gw.noalias() += g_mat * cm.transpose();
          }
          if (bias.requires_grad()) {
            auto gb = bias.grad();
            for (int co = 0; co < c_out; ++co) gb[co] += g_mat.row(co).sum();
          }
          if (input.requires_grad()) {
            ConstMapRM wm(kernel.data().data(), c_out, k_dim);
            MatrixRM g_col(k_dim, cols);
            g_col.noalias() = wm.transpose() * g_mat;
            col2im(g_col.data(), n_batch, c_in, height, width, kh, kw, stride, pad, out_h,
                   out_w, input.grad().data());
          }
        });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rearrangements
// ---------------------------------------------------------------------------

namespace {

// Visits (src_index, dst_index) pairs of the depth_to_space permutation.
template <typename Fn>
void for_each_depth_to_space(int n_batch, int c_out, int height, int width, int block, Fn&& fn) {
  const int c_in = c_out * block * block;
  const int out_h = height * block, out_w = width * block;
  for (int n = 0; n < n_batch; ++n) {
    for (int c = 0; c < c_out; ++c) {
      for (int i = 0; i < block; ++i) {
        for (int j = 0; j < block; ++j) {
          const int ci = c * block * block + i * block + j;
          for (int h = 0; h < height; ++h) {
            for (int w = 0; w < width; ++w) {
              const std::size_t src =
                  ((static_cast<std::size_t>(n) * c_in + ci) * height + h) * width + w;
              const std::size_t dst =
                  ((static_cast<std::size_t>(n) * c_out + c) * out_h + h * block + i) * out_w +
                  w * block + j;
              fn(src, dst);
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor depth_to_space(const Tensor& input, int block) {
  require_rank(input, 4, "depth_to_space");
  if (block < 1) throw DimensionError("depth_to_space: block must be >= 1");
  const int n_batch = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c_in % (block * block) != 0) {
    throw DimensionError("depth_to_space: " + std::to_string(c_in) +
                         " channels not divisible by " + std::to_string(block * block));
  }
  const int c_out = c_in / (block * block);
  const bool track = tracking({&input});
  Tensor out = Tensor::zeros({n_batch, c_out, h * block, w * block}, track);
  const float* src = input.data().data();
  float* dst = out.data().data();
  for_each_depth_to_space(n_batch, c_out, h, w, block,
                          [&](std::size_t s, std::size_t d) { dst[d] = src[s]; });
  if (track) {
    active_tape()->record({input}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = input.grad().data();
      for_each_depth_to_space(n_batch, c_out, h, w, block,
                              [&](std::size_t s, std::size_t d) { g_in[s] += g_out[d]; });
    });
  }
  return out;
}

Tensor space_to_depth(const Tensor& input, int block) {
  require_rank(input, 4, "space_to_depth");
  if (block < 1) throw DimensionError("space_to_depth: block must be >= 1");
  const int n_batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % block != 0 || w % block != 0) {
    throw DimensionError("space_to_depth: spatial extent not divisible by block");
  }
  const int oh = h / block, ow = w / block;
  const bool track = tracking({&input});
  Tensor out = Tensor::zeros({n_batch, c * block * block, oh, ow}, track);
  const float* src = input.data().data();
  float* dst = out.data().data();
  // The permutation is the inverse of depth_to_space with roles swapped.
  for_each_depth_to_space(n_batch, c, oh, ow, block,
                          [&](std::size_t deep, std::size_t wide) { dst[deep] = src[wide]; });
  if (track) {
    active_tape()->record({input}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = input.grad().data();
      for_each_depth_to_space(n_batch, c, oh, ow, block, [&](std::size_t deep, std::size_t wide) {
        g_in[wide] += g_out[deep];
      });
    });
  }
  return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
  require_defined(input, "reshape");
  if (binec::numel(shape) != input.numel()) {
    throw DimensionError("reshape: " + to_string(input.shape()) + " -> " + to_string(shape));
  }
  const bool track = tracking({&input});
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(input.data().begin(),
                                                                 input.data().end()),
                            track);
  if (track) {
    active_tape()->record({input}, out, [=]() mutable {
      auto g = out.grad();
      auto gi = input.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  }
  return out;
}

Tensor crop(const Tensor& input, int top, int left, int height, int width) {
  require_rank(input, 4, "crop");
  const int n_batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > h || left + width > w) {
    throw DimensionError("crop: window outside input of shape " + to_string(input.shape()));
  }
  const bool track = tracking({&input});
  Tensor out = Tensor::zeros({n_batch, c, height, width}, track);
  auto visit = [=](auto&& fn) {
    for (int p = 0; p < n_batch * c; ++p) {
      for (int y = 0; y < height; ++y) {
        const std::size_t src = (static_cast<std::size_t>(p) * h + top + y) * w + left;
        const std::size_t dst = (static_cast<std::size_t>(p) * height + y) * width;
        for (int x = 0; x < width; ++x) fn(src + x, dst + x);
      }
    }
  };
  const float* s = input.data().data();
  float* d = out.data().data();
  visit([&](std::size_t i, std::size_t o) { d[o] = s[i]; });
  if (track) {
    active_tape()->record({input}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = input.grad().data();
      visit([&](std::size_t i, std::size_t o) { g_in[i] += g_out[o]; });
    });
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_grid_cell(int n_images, int channels, int bh, int bw, int grid, Fn&& fn) {
  const int gh = bh * grid, gw = bw * grid;
  for (int n = 0; n < n_images; ++n) {
    for (int r = 0; r < grid; ++r) {
      for (int q = 0; q < grid; ++q) {
        const int block = (n * grid + r) * grid + q;
        for (int c = 0; c < channels; ++c) {
          for (int y = 0; y < bh; ++y) {
            const std::size_t b_off =
                ((static_cast<std::size_t>(block) * channels + c) * bh + y) * bw;
            const std::size_t g_off =
                ((static_cast<std::size_t>(n) * channels + c) * gh + r * bh + y) * gw + q * bw;
            for (int x = 0; x < bw; ++x) fn(b_off + x, g_off + x);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor blocks_to_grid(const Tensor& blocks, int grid) {
  require_rank(blocks, 4, "blocks_to_grid");
  if (grid < 1 || blocks.dim(0) % (grid * grid) != 0) {
    throw DimensionError("blocks_to_grid: batch not divisible by grid*grid");
  }
  const int n = blocks.dim(0) / (grid * grid), c = blocks.dim(1), bh = blocks.dim(2),
            bw = blocks.dim(3);
  const bool track = tracking({&blocks});
  Tensor out = Tensor::zeros({n, c, bh * grid, bw * grid}, track);
  const float* s = blocks.data().data();
  float* d = out.data().data();
  for_each_grid_cell(n, c, bh, bw, grid, [&](std::size_t b, std::size_t g) { d[g] = s[b]; });
  if (track) {
    active_tape()->record({blocks}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = blocks.grad().data();
      for_each_grid_cell(n, c, bh, bw, grid,
                         [&](std::size_t b, std::size_t g) { g_in[b] += g_out[g]; });
    });
  }
  return out;
}

Tensor grid_to_blocks(const Tensor& image, int grid) {
  require_rank(image, 4, "grid_to_blocks");
  if (grid < 1 || image.dim(2) % grid != 0 || image.dim(3) % grid != 0) {
    throw DimensionError("grid_to_blocks: spatial extent not divisible by grid");
  }
  const int n = image.dim(0), c = image.dim(1), bh = image.dim(2) / grid,
            bw = image.dim(3) / grid;
  const bool track = tracking({&image});
  Tensor out = Tensor::zeros({n * grid * grid, c, bh, bw}, track);
  const float* s = image.data().data();
  float* d = out.data().data();
  for_each_grid_cell(n, c, bh, bw, grid, [&](std::size_t b, std::size_t g) { d[b] = s[g]; });
  if (track) {
    active_tape()->record({image}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = image.grad().data();
      for_each_grid_cell(n, c, bh, bw, grid,
                         [&](std::size_t b, std::size_t g) { g_in[g] += g_out[b]; });
    });
  }
  return out;
}

Tensor gather_batch(const Tensor& input, std::span<const int> indices) {
  require_defined(input, "gather_batch");
  if (input.rank() < 1) throw DimensionError("gather_batch: rank-0 input");
  const int n = input.dim(0);
  const std::size_t stride = input.numel() / std::max(n, 1);
  Shape shape = input.shape();
  shape[0] = static_cast<int>(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= n) throw DimensionError("gather_batch: index out of range");
  }
  const bool track = tracking({&input});
  Tensor out = Tensor::zeros(shape, track);
  std::vector<int> idx(indices.begin(), indices.end());
  const float* s = input.data().data();
  float* d = out.data().data();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy(s + idx[k] * stride, s + (idx[k] + 1) * stride, d + k * stride);
  }
  if (track) {
    active_tape()->record({input}, out, [=]() mutable {
      const float* g_out = out.grad().data();
      float* g_in = input.grad().data();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        for (std::size_t e = 0; e < stride; ++e) g_in[idx[k] * stride + e] += g_out[k * stride + e];
      }
    });
  }
  return out;
}

Tensor concat_batch(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_batch: no inputs");
  Shape shape = parts[0].shape();
  if (shape.empty()) throw DimensionError("concat_batch: rank-0 input");
  int total = 0;
  bool track = false;
  for (const Tensor& p : parts) {
    require_defined(p, "concat_batch");
    if (p.rank() != static_cast<int>(shape.size()) ||
        !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat_batch: trailing shape mismatch");
    }
    total += p.dim(0);
    track = track || tracking({&p});
  }
  shape[0] = total;
  Tensor out = Tensor::zeros(shape, track);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.numel();
  }
  if (track) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    active_tape()->record(inputs, out, [=]() mutable {
      const float* g_out = out.grad().data();
      std::size_t off = 0;
      for (Tensor p : inputs) {
        if (p.requires_grad()) {
          auto g = p.grad();
          for (std::size_t e = 0; e < g.size(); ++e) g[e] += g_out[off + e];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (track) {
    active_tape()->record({a, b}, out, [=]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (track) {
    active_tape()->record({a, b}, out, [=]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const bool track = tracking({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (track) {
    active_tape()->record({a, b}, out, [=]() mutable {
      auto g = out.grad();
      auto xa = a.data(), yb = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yb[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  require_defined(a, "tanh");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(x[i]);
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0f - y[i] * y[i]);
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  require_defined(a, "sigmoid");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 1.0f / (1.0f + std::exp(-x[i]));
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      auto g = out.grad();
      auto y = out.data();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0f - y[i]);
    });
  }
  return out;
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  switch (op) {
    case ElementwiseOp::kAdd: return add(a, b);
    case ElementwiseOp::kSub: return sub(a, b);
    case ElementwiseOp::kMul: return mul(a, b);
    case ElementwiseOp::kTanh: return tanh(a);
    case ElementwiseOp::kSigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

Tensor scale(const Tensor& a, float factor) {
  require_defined(a, "scale");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros(a.shape(), track);
  auto o = out.data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (accumulated in double, stored as float)
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros({}, track);
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  out.data()[0] = static_cast<float>(acc);
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      const float g = out.grad()[0];
      for (float& ga : a.grad()) ga += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw DimensionError("mean: empty tensor");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros({}, track);
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  out.data()[0] = static_cast<float>(acc / n);
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      for (float& ga : a.grad()) ga += g;
    });
  }
  return out;
}

Tensor mean_abs(const Tensor& a) {
  require_defined(a, "mean_abs");
  if (a.numel() == 0) throw DimensionError("mean_abs: empty tensor");
  const bool track = tracking({&a});
  Tensor out = Tensor::zeros({}, track);
  double acc = 0.0;
  for (float v : a.data()) acc += std::fabs(v);
  const double n = static_cast<double>(a.numel());
  out.data()[0] = static_cast<float>(acc / n);
  if (track) {
    active_tape()->record({a}, out, [=]() mutable {
      const float g = static_cast<float>(out.grad()[0] / n);
      auto x = a.data();
      auto ga = a.grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += x[i] > 0.0f ? g : (x[i] < 0.0f ? -g : 0.0f);
      }
    });
  }
  return out;
}

}  // namespace binec
