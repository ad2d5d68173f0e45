#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "binec/binarizer.hpp"
#include "binec/tensor.hpp"

namespace binec {

inline constexpr int kPatchSize = 32;
inline constexpr int kCodeChannels = 32;
inline constexpr int kCodeExtent = 2;     // code is kCodeChannels x 2 x 2
inline constexpr int kContextExtent = 6;  // 3x3 neighbourhood of codes

/// Misuse of the codec API: bad iteration index, wrong context shape,
/// truncated code streams.
class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Variant : std::uint8_t {
  kConvAR = 0,
  kConvGruOsr = 1,
  kBINetAR = 2,
  kBINetOSR = 3,
  kSINet = 4,
  kMaskedBINet = 5,
};

std::string_view variant_name(Variant v);
/// Accepts the names printed by variant_name (case-insensitive, '-' or '_').
Variant parse_variant(std::string_view name);

/// Channel widths. Encoder: 3 -> e0 -> e1 -> e2 -> 32 with stride 2 each
/// (32x32 -> 2x2). Decoder: context -> d0 (2x2) and three further convs at
/// 4x4, 8x8, 16x16 interleaved with 4 depth-to-space stages; decoder widths
/// must be multiples of 4.
struct Architecture {
  std::array<int, 3> encoder{64, 128, 256};
  std::array<int, 3> decoder{256, 256, 128};

  void validate() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Ordered, named parameter tensors.
class ParameterSet {
 public:
  /// Registers a trainable tensor initialised uniformly in [-bound, bound].
  Tensor add(std::string name, Shape shape, float bound, Rng& rng);
  void insert(std::string name, Tensor tensor);

  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct ConvLayer {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 1;

  static ConvLayer create(ParameterSet& params, const std::string& name, int in_channels,
                          int out_channels, int kernel, int stride, int padding, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Convolutional GRU: z = s(Wz x + Uz h), r = s(Wr x + Ur h),
/// n = tanh(Wn x + Un (r*h)), h' = n + z*(h - n). Input convs carry the
/// cell's stride, hidden convs are 3x3 stride 1.
struct ConvGruCell {
  ConvLayer x_update, x_reset, x_candidate;
  ConvLayer h_update, h_reset, h_candidate;
  int hidden_channels = 0;

  static ConvGruCell create(ParameterSet& params, const std::string& name, int in_channels,
                            int hidden_channels, int stride, Rng& rng);
  Tensor step(const Tensor& x, const Tensor& h) const;
};

/// Per-patch recurrent memory of the OSR variants. Empty vectors mean
/// "all zeros"; shapes are fixed across iterations once populated.
struct RecurrentState {
  std::vector<Tensor> encoder;
  std::vector<Tensor> decoder;

  bool empty() const { return encoder.empty() && decoder.empty(); }
};

/// Selects samples of a batched state.
RecurrentState gather_state(const RecurrentState& state, std::span<const int> indices);

/// A configured encoder/decoder pair.
///
/// Additive variants hold one untied encoder/decoder per iteration; OSR
/// variants share one recurrent pair across iterations. BINet variants feed
/// the 3x3 neighbourhood of codes to the decoder at iteration 1 only.
/// SINet wraps a frozen 1-iteration ConvAR ("base.") with an inpainting
/// network ("inpaint.") that reads decoded neighbour patches.
class CodecModel {
 public:
  CodecModel(Variant variant, int iterations, Architecture arch, std::uint64_t seed);

  Variant variant() const { return variant_; }
  int iterations() const { return iterations_; }
  const Architecture& architecture() const { return arch_; }

  bool recurrent() const;
  bool binet() const;
  bool masked() const { return variant_ == Variant::kMaskedBINet; }
  /// True when the decoder at `iteration` (1-based) reads the 6x6 context.
  bool uses_context(int iteration) const;
  /// 6 for context-decoding iterations, otherwise 2.
  int context_extent(int iteration) const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  /// Tensors the optimiser updates (SINet excludes its frozen base).
  std::vector<Tensor> trainable() const;

  /// Batched encoder: [N,3,32,32] in [-1,1] -> binarised [N,32,2,2].
  Tensor encode(const Tensor& input, int iteration, RecurrentState* state, BinarizeMode mode,
                Rng* rng) const;
  /// Batched decoder: [N,32,e,e] with e = context_extent(iteration) ->
  /// [N,3,32,32] in [-1,1]. The masked variant zeroes the central code.
  Tensor decode(const Tensor& context, int iteration, RecurrentState* state) const;

  /// SINet inpainting network: decoded patches [N,3,32,32] -> features [N,32,2,2].
  Tensor inpaint_features(const Tensor& reconstructions) const;
  /// SINet inpainting decoder over a [N,32,6,6] feature neighbourhood.
  Tensor inpaint_decode(const Tensor& features) const;

  void save(const std::filesystem::path& path) const;
  static CodecModel load(const std::filesystem::path& path);

 private:
  struct FeedForwardEncoder {
    std::array<ConvLayer, 4> convs;
    Tensor operator()(const Tensor& x) const;
  };
  struct FeedForwardDecoder {
    std::array<ConvLayer, 4> convs;
    Tensor operator()(const Tensor& context) const;
  };
  struct RecurrentEncoder {
    ConvLayer head;
    ConvGruCell gru1, gru2;
    ConvLayer code;
    Tensor operator()(const Tensor& x, std::vector<Tensor>& state) const;
  };
  struct RecurrentDecoder {
    ConvLayer head;
    ConvGruCell gru1, gru2;
    ConvLayer conv3, conv4;
    Tensor operator()(const Tensor& context, std::vector<Tensor>& state) const;
  };

  void build(Rng& rng);
  void check_iteration(int iteration) const;

  FeedForwardEncoder make_encoder(const std::string& prefix, Rng& rng);
  FeedForwardDecoder make_decoder(const std::string& prefix, Rng& rng);

  Variant variant_;
  int iterations_;
  Architecture arch_;
  ParameterSet params_;
  std::vector<FeedForwardEncoder> encoders_;
  std::vector<FeedForwardDecoder> decoders_;
  std::optional<RecurrentEncoder> recurrent_encoder_;
  std::optional<RecurrentDecoder> recurrent_decoder_;
  std::optional<FeedForwardEncoder> inpaint_encoder_;
  std::optional<FeedForwardDecoder> inpaint_decoder_;
};

// ---------------------------------------------------------------------------
// Progressive reconstruction and losses
// ---------------------------------------------------------------------------

using StageFn = std::function<Tensor(const Tensor&)>;

/// Additive reconstruction: r_i = r_{i-1} - auto_i(r_{i-1}).
Tensor ar_step(const Tensor& r_prev, const StageFn& auto_i);
/// One-shot reconstruction: r_i = r_0 - auto_i(r_{i-1}).
Tensor osr_step(const Tensor& r0, const Tensor& r_prev, const StageFn& auto_i);

/// Mean absolute error |pc - pc_hat|.
Tensor loss_inpaint(const Tensor& pc, const Tensor& pc_hat);
/// Sum over iterations of mean |r_i|.
Tensor loss_baseline(std::span<const Tensor> residuals);
/// loss_inpaint term (given as the first residual) plus mean |r_i| for i >= 2.
Tensor loss_binet(const Tensor& inpaint_residual, std::span<const Tensor> later_residuals);

struct TrainingGraph {
  Tensor loss;
  std::vector<Tensor> residuals;
};

/// Full differentiable forward pass for one batch. Non-context variants take
/// [B,3,32,32]; BINet, masked BINet and SINet take nine-patch blocks
/// [B,3,96,96] and reconstruct the centre patch.
TrainingGraph training_graph(const CodecModel& model, const Tensor& batch, BinarizeMode mode,
                             Rng* rng);

/// Size of the square crop training_graph expects for this variant.
int training_crop(Variant variant);

// ---------------------------------------------------------------------------
// Patch grids and whole-image coding
// ---------------------------------------------------------------------------

/// Image [3,H,W] split into non-overlapping 32x32 patches, row-major.
class PatchGrid {
 public:
  /// Throws CodecError unless H and W are positive multiples of 32.
  static PatchGrid from_image(const Tensor& image);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int count() const { return rows_ * cols_; }
  int index(int row, int col) const;
  bool contains(int row, int col) const;
  /// Patch at (row, col) as [3,32,32].
  const Tensor& patch(int row, int col) const;
  /// Neighbour at offset (dr, dc) or nullopt when off-grid.
  std::optional<Tensor> neighbour(int row, int col, int dr, int dc) const;
  Tensor to_image() const;

  static Tensor assemble(int rows, int cols, std::span<const Tensor> patches);

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Tensor> patches_;
};

/// Codes of one iteration for every patch of a grid.
struct CodeGrid {
  int rows = 0;
  int cols = 0;
  std::vector<BinaryCode> codes;  // row-major
};

/// Value written for codes of off-grid neighbours.
inline constexpr float kContextPad = 0.0f;

/// 3x3 neighbourhood of 2x2x32 codes around (row, col) as [32,6,6].
Tensor assemble_context(const CodeGrid& grid, int row, int col);

/// Compressed representation: codes[patch][iteration].
struct CompressedImage {
  int width = 0;
  int height = 0;
  int iterations = 0;
  std::vector<std::vector<BinaryCode>> codes;

  int rows() const { return height / kPatchSize; }
  int cols() const { return width / kPatchSize; }
  friend bool operator==(const CompressedImage&, const CompressedImage&) = default;
};

struct CodingOptions {
  /// Optional permutation of patch indices giving the processing order.
  std::vector<int> order;
  /// 0 = use BINEC_THREADS / hardware default.
  int threads = 0;
};

/// Single-patch encoder call at inference (deterministic binariser).
std::pair<BinaryCode, RecurrentState> encode_patch(const CodecModel& model, const Tensor& patch,
                                                   int iteration, RecurrentState state = {});
/// Single-patch decoder call: context [32,e,e] -> [3,32,32].
Tensor decode_patch(const CodecModel& model, const Tensor& context, int iteration,
                    RecurrentState* state = nullptr);

/// Image [3,H,W] in [-1,1] with 32 | H, W -> codes for `iterations` stages.
CompressedImage compress_image(const CodecModel& model, const Tensor& image, int iterations,
                               const CodingOptions& options = {});

/// Reconstruction after `iterations` stages, clamped to [-1,1]. Throws
/// CodecError when fewer stages are stored.
Tensor decompress_image(const CodecModel& model, const CompressedImage& codes, int iterations,
                        const CodingOptions& options = {});

/// Reconstructions after 1..iterations stages in one pass.
std::vector<Tensor> decompress_progressive(const CodecModel& model, const CompressedImage& codes,
                                           int iterations, const CodingOptions& options = {});

// ---------------------------------------------------------------------------
// Sequential inpainting baseline
// ---------------------------------------------------------------------------

/// A patch produced by a decoder. Only decoding routines can create one, so
/// SINet can never be handed original pixels.
class Reconstruction {
 public:
  const Tensor& pixels() const { return pixels_; }

 private:
  explicit Reconstruction(Tensor pixels) : pixels_(std::move(pixels)) {}
  Tensor pixels_;

  friend std::vector<Reconstruction> reconstruct_patches(const CodecModel&,
                                                         const CompressedImage&, int);
};

/// Decoded 32x32 patches (row-major) of an image.
std::vector<Reconstruction> reconstruct_patches(const CodecModel& model,
                                                const CompressedImage& codes, int iterations);

/// Causal neighbours available to a sequential decoder.
struct CausalContext {
  std::optional<Reconstruction> top_left;
  std::optional<Reconstruction> top;
  std::optional<Reconstruction> top_right;
  std::optional<Reconstruction> left;
};

CausalContext causal_context(std::span<const Reconstruction> decoded, int rows, int cols,
                             int row, int col);

/// SINet prediction of the patch below `top` and right of `left`.
Tensor sinet_predict(const CodecModel& sinet, const CausalContext& context);

/// Masked-BINet prediction of patch (row, col) from its neighbours' codes.
Tensor masked_inpaint(const CodecModel& masked, const CompressedImage& codes, int row, int col);

// ---------------------------------------------------------------------------
// Classical intra prediction
// ---------------------------------------------------------------------------

enum class IntraMode { kDC, kH, kV, kTM };

IntraMode parse_intra_mode(std::string_view name);
std::string_view intra_mode_name(IntraMode mode);

/// Border pixels of a 32x32 block, per channel. Missing borders are nullopt.
struct IntraBorders {
  std::optional<Tensor> top;     // [3,32]: row above the block
  std::optional<Tensor> left;    // [3,32]: column left of the block
  std::optional<Tensor> corner;  // [3]: pixel above-left
};

/// DC averages available borders (0 when none); H copies left, V copies top;
/// TM is left[i] + top[j] - corner clamped to [-1,1]. A mode whose border is
/// missing falls back to DC.
Tensor intra_predict(IntraMode mode, const IntraBorders& borders);

/// Borders of patch (row, col) taken from an image [3,H,W].
IntraBorders intra_borders(const Tensor& image, int row, int col);

}  // namespace binec
