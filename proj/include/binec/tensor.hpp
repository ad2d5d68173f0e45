#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace binec {

/// Extents of a tensor, outermost first. 4-D tensors are ordered N, C, H, W.
using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Thrown when operand shapes are incompatible with an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
};

/// Shared handle to a dense float32 array with an optional gradient buffer.
///
/// Copies of a Tensor alias the same storage. Operations never mutate their
/// operands; they allocate a fresh result and, while a Tape is active and an
/// operand requires a gradient, record a backward rule on that tape.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  /// Gradient buffer, allocated (zero-filled) on first access. Writable
  /// through const handles: backward rules accumulate into their operands.
  std::span<float> grad() const;
  void zero_grad();

  /// Deep copy of the values without gradient or tape history.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered record of differentiable operations.
///
/// Operations executed while a TapeScope is open append an entry whose
/// backward rule reads the output gradient and accumulates into the inputs.
class Tape {
 public:
  using BackwardRule = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardRule rule);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays every entry once, newest first.
  /// Returns the number of backward rules that ran (entries whose output
  /// was reachable from the loss).
  std::size_t backward(const Tensor& loss);

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardRule rule;
  };
  std::vector<Entry> entries_;
};

/// Makes `tape` the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording on the current thread (inference paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

std::size_t backward(const Tensor& loss, Tape& tape);

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};

/// Cross-correlation of input [N,Cin,H,W] with kernel [Cout,Cin,kh,kw] plus
/// per-channel bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              Conv2dOptions options = {});

/// [N, C*b*b, H, W] -> [N, C, H*b, W*b]; out[c][h*b+i][w*b+j] = in[c*b*b+i*b+j][h][w].
Tensor depth_to_space(const Tensor& input, int block);
Tensor space_to_depth(const Tensor& input, int block);

enum class ElementwiseOp { kAdd, kSub, kMul, kTanh, kSigmoid };

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = {});
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor scale(const Tensor& a, float factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean of |a| over all elements.
Tensor mean_abs(const Tensor& a);

/// Same values under a new shape with equal element count.
Tensor reshape(const Tensor& input, Shape shape);

/// Spatial window [top, top+height) x [left, left+width) of a 4-D tensor.
Tensor crop(const Tensor& input, int top, int left, int height, int width);

/// [N*g*g, C, h, w] -> [N, C, g*h, g*w]; block n*g*g + r*g + c lands at grid
/// cell (r, c).
Tensor blocks_to_grid(const Tensor& blocks, int grid);
/// Inverse of blocks_to_grid.
Tensor grid_to_blocks(const Tensor& image, int grid);

/// Selects samples along the leading axis.
Tensor gather_batch(const Tensor& input, std::span<const int> indices);
/// Concatenates tensors of identical trailing shape along the leading axis.
Tensor concat_batch(std::span<const Tensor> parts);

}  // namespace binec
