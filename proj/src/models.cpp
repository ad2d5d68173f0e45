#include "binec/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

#include "binec/bitstream.hpp"
#include "binec/parallel.hpp"
#include "byte_io.hpp"

namespace binec {

namespace {

struct VariantInfo {
  Variant variant;
  std::string_view display;
  std::string_view key;  // lower-case, separators removed
};

constexpr std::array<VariantInfo, 6> kVariants{{
    {Variant::kConvAR, "ConvAR", "convar"},
    {Variant::kConvGruOsr, "ConvGRU-OSR", "convgruosr"},
    {Variant::kBINetAR, "BINetAR", "binetar"},
    {Variant::kBINetOSR, "BINetOSR", "binetosr"},
    {Variant::kSINet, "SINet", "sinet"},
    {Variant::kMaskedBINet, "MaskedBINet", "maskedbinet"},
}};

std::string squash(std::string_view name) {
  std::string out;
  for (char ch : name) {
    if (ch == '-' || ch == '_' || ch == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

Tensor context_conv(const ConvLayer& layer, const Tensor& context) {
  if (context.dim(2) == kContextExtent) {
    // The 3x3 kernel over the inner 4x4 window gives the central 2x2 outputs
    // a receptive field touching all nine code blocks.
    return conv2d(crop(context, 1, 1, 4, 4), layer.weight, layer.bias, {1, 0});
  }
  return conv2d(context, layer.weight, layer.bias, {1, 1});
}

Tensor zeros_like_batch(int batch, int channels, int extent) {
  return Tensor::zeros({batch, channels, extent, extent});
}

Tensor centre_mask(int batch) {
  Tensor mask = Tensor::full({batch, kCodeChannels, kContextExtent, kContextExtent}, 1.0f);
  auto m = mask.data();
  for (int n = 0; n < batch * kCodeChannels; ++n) {
    for (int y = 2; y < 4; ++y) {
      for (int x = 2; x < 4; ++x) m[(static_cast<std::size_t>(n) * 6 + y) * 6 + x] = 0.0f;
    }
  }
  return mask;
}

Tensor code_tensor(const BinaryCode& code) {
  if (code.size() != static_cast<std::size_t>(kCodeBits)) {
    throw CodecError("code has " + std::to_string(code.size()) + " bits, expected " +
                     std::to_string(kCodeBits));
  }
  return Tensor::from({kCodeChannels, kCodeExtent, kCodeExtent}, code.to_floats());
}

Tensor clamp_unit(const Tensor& t) {
  Tensor out = t.detach();
  for (float& v : out.data()) v = std::clamp(v, -1.0f, 1.0f);
  return out;
}

std::vector<int> resolve_order(const CodingOptions& options, int count) {
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (options.order.empty()) return order;
  if (static_cast<int>(options.order.size()) != count ||
      !std::is_permutation(options.order.begin(), options.order.end(), order.begin())) {
    throw CodecError("coding order is not a permutation of the patch indices");
  }
  return options.order;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& info : kVariants) {
    if (info.variant == v) return info.display;
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  const std::string key = squash(name);
  for (const auto& info : kVariants) {
    if (info.key == key) return info.variant;
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected convar, convgru-osr, binet-ar, binet-osr, sinet, "
                              "masked-binet)");
}

void Architecture::validate() const {
  for (int e : encoder) {
    if (e < 1) throw std::invalid_argument("encoder widths must be positive");
  }
  for (int d : decoder) {
    if (d < 4 || d % 4 != 0) throw std::invalid_argument("decoder widths must be multiples of 4");
  }
}

// ---------------------------------------------------------------------------
// Parameters and layers
// ---------------------------------------------------------------------------

Tensor ParameterSet::add(std::string name, Shape shape, float bound, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  std::uniform_real_distribution<float> uniform(-bound, bound);
  for (float& v : t.data()) v = uniform(rng);
  insert(std::move(name), t);
  return t;
}

void ParameterSet::insert(std::string name, Tensor tensor) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

ConvLayer ConvLayer::create(ParameterSet& params, const std::string& name, int in_channels,
                            int out_channels, int kernel, int stride, int padding, Rng& rng) {
  const float bound = std::sqrt(1.0f / static_cast<float>(in_channels * kernel * kernel));
  ConvLayer layer;
  layer.weight = params.add(name + ".weight", {out_channels, in_channels, kernel, kernel}, bound, rng);
  layer.bias = params.add(name + ".bias", {out_channels}, bound, rng);
  layer.stride = stride;
  layer.padding = padding;
  return layer;
}

Tensor ConvLayer::operator()(const Tensor& x) const {
  return conv2d(x, weight, bias, {stride, padding});
}

ConvGruCell ConvGruCell::create(ParameterSet& params, const std::string& name, int in_channels,
                                int hidden_channels, int stride, Rng& rng) {
  ConvGruCell cell;
  cell.hidden_channels = hidden_channels;
  cell.x_update = ConvLayer::create(params, name + ".x_update", in_channels, hidden_channels, 3, stride, 1, rng);
  cell.x_reset = ConvLayer::create(params, name + ".x_reset", in_channels, hidden_channels, 3, stride, 1, rng);
  cell.x_candidate = ConvLayer::create(params, name + ".x_candidate", in_channels, hidden_channels, 3, stride, 1, rng);
  cell.h_update = ConvLayer::create(params, name + ".h_update", hidden_channels, hidden_channels, 3, 1, 1, rng);
  cell.h_reset = ConvLayer::create(params, name + ".h_reset", hidden_channels, hidden_channels, 3, 1, 1, rng);
  cell.h_candidate = ConvLayer::create(params, name + ".h_candidate", hidden_channels, hidden_channels, 3, 1, 1, rng);
  return cell;
}

Tensor ConvGruCell::step(const Tensor& x, const Tensor& h) const {
  const Tensor z = sigmoid(add(x_update(x), h_update(h)));
  const Tensor r = sigmoid(add(x_reset(x), h_reset(h)));
  const Tensor n = tanh(add(x_candidate(x), h_candidate(mul(r, h))));
  return add(n, mul(z, sub(h, n)));
}

RecurrentState gather_state(const RecurrentState& state, std::span<const int> indices) {
  RecurrentState out;
  for (const Tensor& t : state.encoder) out.encoder.push_back(gather_batch(t, indices));
  for (const Tensor& t : state.decoder) out.decoder.push_back(gather_batch(t, indices));
  return out;
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

Tensor CodecModel::FeedForwardEncoder::operator()(const Tensor& x) const {
  Tensor h = x;
  for (const ConvLayer& conv : convs) h = tanh(conv(h));
  return h;
}

Tensor CodecModel::FeedForwardDecoder::operator()(const Tensor& context) const {
  Tensor h = tanh(context_conv(convs[0], context));
  h = depth_to_space(h, 2);
  h = tanh(convs[1](h));
  h = depth_to_space(h, 2);
  h = tanh(convs[2](h));
  h = depth_to_space(h, 2);
  h = convs[3](h);
  return tanh(depth_to_space(h, 2));
}

Tensor CodecModel::RecurrentEncoder::operator()(const Tensor& x, std::vector<Tensor>& state) const {
  const int batch = x.dim(0);
  if (state.empty()) {
    state = {zeros_like_batch(batch, gru1.hidden_channels, 8),
             zeros_like_batch(batch, gru2.hidden_channels, 4)};
  }
  const Tensor h0 = tanh(head(x));
  state[0] = gru1.step(h0, state[0]);
  state[1] = gru2.step(state[0], state[1]);
  return tanh(code(state[1]));
}

Tensor CodecModel::RecurrentDecoder::operator()(const Tensor& context,
                                                std::vector<Tensor>& state) const {
  const int batch = context.dim(0);
  if (state.empty()) {
    state = {zeros_like_batch(batch, gru1.hidden_channels, 2),
             zeros_like_batch(batch, gru2.hidden_channels, 4)};
  }
  const Tensor h = tanh(context_conv(head, context));
  state[0] = gru1.step(h, state[0]);
  state[1] = gru2.step(depth_to_space(state[0], 2), state[1]);
  Tensor u = tanh(conv3(depth_to_space(state[1], 2)));
  u = conv4(depth_to_space(u, 2));
  return tanh(depth_to_space(u, 2));
}

CodecModel::FeedForwardEncoder CodecModel::make_encoder(const std::string& prefix, Rng& rng) {
  const auto& e = arch_.encoder;
  return {{ConvLayer::create(params_, prefix + ".conv0", 3, e[0], 3, 2, 1, rng),
           ConvLayer::create(params_, prefix + ".conv1", e[0], e[1], 3, 2, 1, rng),
           ConvLayer::create(params_, prefix + ".conv2", e[1], e[2], 3, 2, 1, rng),
           ConvLayer::create(params_, prefix + ".conv3", e[2], kCodeChannels, 3, 2, 1, rng)}};
}

CodecModel::FeedForwardDecoder CodecModel::make_decoder(const std::string& prefix, Rng& rng) {
  const auto& d = arch_.decoder;
  return {{ConvLayer::create(params_, prefix + ".conv0", kCodeChannels, d[0], 3, 1, 1, rng),
           ConvLayer::create(params_, prefix + ".conv1", d[0] / 4, d[1], 3, 1, 1, rng),
           ConvLayer::create(params_, prefix + ".conv2", d[1] / 4, d[2], 3, 1, 1, rng),
           ConvLayer::create(params_, prefix + ".conv3", d[2] / 4, 12, 3, 1, 1, rng)}};
}

CodecModel::CodecModel(Variant variant, int iterations, Architecture arch, std::uint64_t seed)
    : variant_(variant), iterations_(iterations), arch_(arch) {
  if (iterations < 1) throw std::invalid_argument("iteration count must be >= 1");
  if ((variant == Variant::kSINet || variant == Variant::kMaskedBINet) && iterations != 1) {
    throw std::invalid_argument(std::string(variant_name(variant)) + " is a 1-iteration model");
  }
  arch_.validate();
  Rng rng(seed);
  build(rng);
}

void CodecModel::build(Rng& rng) {
  switch (variant_) {
    case Variant::kConvAR:
    case Variant::kBINetAR:
    case Variant::kMaskedBINet:
      for (int i = 0; i < iterations_; ++i) {
        const std::string prefix = "stage" + std::to_string(i);
        encoders_.push_back(make_encoder(prefix + ".enc", rng));
        decoders_.push_back(make_decoder(prefix + ".dec", rng));
      }
      break;
    case Variant::kConvGruOsr:
    case Variant::kBINetOSR: {
      const auto& e = arch_.encoder;
      const auto& d = arch_.decoder;
      RecurrentEncoder enc;
      enc.head = ConvLayer::create(params_, "enc.head", 3, e[0], 3, 2, 1, rng);
      enc.gru1 = ConvGruCell::create(params_, "enc.gru1", e[0], e[1], 2, rng);
      enc.gru2 = ConvGruCell::create(params_, "enc.gru2", e[1], e[2], 2, rng);
      enc.code = ConvLayer::create(params_, "enc.code", e[2], kCodeChannels, 3, 2, 1, rng);
      RecurrentDecoder dec;
      dec.head = ConvLayer::create(params_, "dec.head", kCodeChannels, d[0], 3, 1, 1, rng);
      dec.gru1 = ConvGruCell::create(params_, "dec.gru1", d[0], d[0], 1, rng);
      dec.gru2 = ConvGruCell::create(params_, "dec.gru2", d[0] / 4, d[1], 1, rng);
      dec.conv3 = ConvLayer::create(params_, "dec.conv3", d[1] / 4, d[2], 3, 1, 1, rng);
      dec.conv4 = ConvLayer::create(params_, "dec.conv4", d[2] / 4, 12, 3, 1, 1, rng);
      recurrent_encoder_ = std::move(enc);
      recurrent_decoder_ = std::move(dec);
      break;
    }
    case Variant::kSINet:
      encoders_.push_back(make_encoder("base.stage0.enc", rng));
      decoders_.push_back(make_decoder("base.stage0.dec", rng));
      inpaint_encoder_ = make_encoder("inpaint.enc", rng);
      inpaint_decoder_ = make_decoder("inpaint.dec", rng);
      break;
  }
}

bool CodecModel::recurrent() const {
  return variant_ == Variant::kConvGruOsr || variant_ == Variant::kBINetOSR;
}

bool CodecModel::binet() const {
  return variant_ == Variant::kBINetAR || variant_ == Variant::kBINetOSR ||
         variant_ == Variant::kMaskedBINet;
}

bool CodecModel::uses_context(int iteration) const { return binet() && iteration == 1; }

int CodecModel::context_extent(int iteration) const {
  return uses_context(iteration) ? kContextExtent : kCodeExtent;
}

std::vector<Tensor> CodecModel::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params_.entries()) {
    if (variant_ == Variant::kSINet && name.rfind("inpaint.", 0) != 0) continue;
    out.push_back(t);
  }
  return out;
}

void CodecModel::check_iteration(int iteration) const {
  if (iteration < 1 || iteration > iterations_) {
    throw CodecError("iteration " + std::to_string(iteration) + " outside 1.." +
                     std::to_string(iterations_));
  }
}

Tensor CodecModel::encode(const Tensor& input, int iteration, RecurrentState* state,
                          BinarizeMode mode, Rng* rng) const {
  check_iteration(iteration);
  if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != kPatchSize ||
      input.dim(3) != kPatchSize) {
    throw DimensionError("encode expects [N,3,32,32], got " + to_string(input.shape()));
  }
  Tensor pre;
  if (recurrent()) {
    RecurrentState local;
    RecurrentState& s = state != nullptr ? *state : local;
    pre = (*recurrent_encoder_)(input, s.encoder);
  } else {
    pre = encoders_[iteration - 1](input);
  }
  return binarize(pre, mode, rng);
}

Tensor CodecModel::decode(const Tensor& context, int iteration, RecurrentState* state) const {
  check_iteration(iteration);
  const int extent = context_extent(iteration);
  if (context.rank() != 4 || context.dim(1) != kCodeChannels || context.dim(2) != extent ||
      context.dim(3) != extent) {
    throw CodecError(std::string(variant_name(variant_)) + " decoder at iteration " +
                     std::to_string(iteration) + " expects [N,32," + std::to_string(extent) +
                     "," + std::to_string(extent) + "], got " + to_string(context.shape()));
  }
  Tensor input = masked() ? mul(context, centre_mask(context.dim(0))) : context;
  if (recurrent()) {
    RecurrentState local;
    RecurrentState& s = state != nullptr ? *state : local;
    return (*recurrent_decoder_)(input, s.decoder);
  }
  return decoders_[iteration - 1](input);
}

Tensor CodecModel::inpaint_features(const Tensor& reconstructions) const {
  if (!inpaint_encoder_) throw CodecError("inpaint_features: not a SINet model");
  return (*inpaint_encoder_)(reconstructions);
}

Tensor CodecModel::inpaint_decode(const Tensor& features) const {
  if (!inpaint_decoder_) throw CodecError("inpaint_decode: not a SINet model");
  if (features.rank() != 4 || features.dim(1) != kCodeChannels ||
      features.dim(2) != kContextExtent || features.dim(3) != kContextExtent) {
    throw CodecError("inpaint_decode expects [N,32,6,6], got " + to_string(features.shape()));
  }
  return (*inpaint_decoder_)(features);
}

// ---------------------------------------------------------------------------
// "BINW" weight files
//
//   "BINW" | u16 version | u8 variant | u16 iterations | u32 tensor count |
//   per tensor: u16 name length, name, u8 rank, u32 extents[rank],
//               float32 values (row-major)
//
// The first tensor, "meta.architecture", holds the six channel widths.
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint16_t kWeightsVersion = 1;
constexpr std::string_view kArchitectureName = "meta.architecture";

void write_tensor(detail::ByteWriter& w, std::string_view name, const Tensor& t) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.raw(name);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (int e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (float v : t.data()) w.f32(v);
}

}  // namespace

void CodecModel::save(const std::filesystem::path& path) const {
  detail::ByteWriter w;
  w.raw("BINW");
  w.u16(kWeightsVersion);
  w.u8(static_cast<std::uint8_t>(variant_));
  w.u16(static_cast<std::uint16_t>(iterations_));
  w.u32(static_cast<std::uint32_t>(params_.size() + 1));
  std::vector<float> widths;
  for (int e : arch_.encoder) widths.push_back(static_cast<float>(e));
  for (int d : arch_.decoder) widths.push_back(static_cast<float>(d));
  write_tensor(w, kArchitectureName, Tensor::from({6}, widths));
  for (const auto& [name, t] : params_.entries()) write_tensor(w, name, t);
  write_file_atomic(path, w.bytes());
}

CodecModel CodecModel::load(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  detail::ByteReader r(bytes);
  if (r.str(4) != "BINW") {
    throw FormatError(FormatErrorCode::kBadMagic, path.string() + ": not a BINW weight file");
  }
  const std::uint16_t version = r.u16();
  if (version != kWeightsVersion) {
    throw FormatError(FormatErrorCode::kBadVersion,
                      path.string() + ": unsupported weight format version " + std::to_string(version));
  }
  const std::uint8_t tag = r.u8();
  if (tag > static_cast<std::uint8_t>(Variant::kMaskedBINet)) {
    throw FormatError(FormatErrorCode::kInvalidHeader, "unknown variant tag " + std::to_string(tag));
  }
  const int iterations = r.u16();
  const std::uint32_t count = r.u32();

  std::map<std::string, Tensor> tensors;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str(r.u16());
    const int rank = r.u8();
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32()));
    std::vector<float> values(binec::numel(shape));
    for (float& v : values) v = r.f32();
    tensors.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) {
    throw FormatError(FormatErrorCode::kInvalidHeader, "trailing bytes after weight manifest");
  }

  auto arch_it = tensors.find(std::string(kArchitectureName));
  if (arch_it == tensors.end() || arch_it->second.numel() != 6) {
    throw FormatError(FormatErrorCode::kInvalidValue, "weight file lacks meta.architecture");
  }
  Architecture arch;
  const auto widths = arch_it->second.data();
  for (int i = 0; i < 3; ++i) {
    arch.encoder[i] = static_cast<int>(widths[i]);
    arch.decoder[i] = static_cast<int>(widths[3 + i]);
  }
  tensors.erase(arch_it);

  CodecModel model = [&] {
    try {
      return CodecModel(static_cast<Variant>(tag), iterations, arch, 0);
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatErrorCode::kInvalidHeader, e.what());
    }
  }();
  if (tensors.size() != model.params_.size()) {
    throw FormatError(FormatErrorCode::kInvalidValue,
                      "weight file holds " + std::to_string(tensors.size()) +
                          " tensors, model expects " + std::to_string(model.params_.size()));
  }
  for (const auto& [name, target] : model.params_.entries()) {
    auto it = tensors.find(name);
    if (it == tensors.end() || it->second.shape() != target.shape()) {
      throw FormatError(FormatErrorCode::kInvalidValue, "missing or misshapen tensor '" + name + "'");
    }
    Tensor dst = target;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.data().begin());
  }
  return model;
}

// ---------------------------------------------------------------------------
// Progressive steps and losses
// ---------------------------------------------------------------------------

Tensor ar_step(const Tensor& r_prev, const StageFn& auto_i) { return sub(r_prev, auto_i(r_prev)); }

Tensor osr_step(const Tensor& r0, const Tensor& r_prev, const StageFn& auto_i) {
  return sub(r0, auto_i(r_prev));
}

Tensor loss_inpaint(const Tensor& pc, const Tensor& pc_hat) { return mean_abs(sub(pc, pc_hat)); }

Tensor loss_baseline(std::span<const Tensor> residuals) {
  if (residuals.empty()) throw std::invalid_argument("loss_baseline: no residuals");
  Tensor total = mean_abs(residuals[0]);
  for (std::size_t i = 1; i < residuals.size(); ++i) total = add(total, mean_abs(residuals[i]));
  return total;
}

Tensor loss_binet(const Tensor& inpaint_residual, std::span<const Tensor> later_residuals) {
  Tensor total = mean_abs(inpaint_residual);
  for (const Tensor& r : later_residuals) total = add(total, mean_abs(r));
  return total;
}

int training_crop(Variant variant) {
  switch (variant) {
    case Variant::kBINetAR:
    case Variant::kBINetOSR:
    case Variant::kMaskedBINet:
    case Variant::kSINet:
      return 3 * kPatchSize;
    default:
      return kPatchSize;
  }
}

namespace {

std::vector<int> centre_indices(int batch) {
  std::vector<int> idx(batch);
  for (int b = 0; b < batch; ++b) idx[b] = b * 9 + 4;
  return idx;
}

// Iterations 2..I share one shape for both reconstruction schemes.
void refine(const CodecModel& model, const Tensor& r0, RecurrentState& state, BinarizeMode mode,
            Rng* rng, std::vector<Tensor>& residuals) {
  for (int i = 2; i <= model.iterations(); ++i) {
    StageFn stage = [&](const Tensor& x) {
      return model.decode(model.encode(x, i, &state, mode, rng), i, &state);
    };
    residuals.push_back(model.recurrent() ? osr_step(r0, residuals.back(), stage)
                                          : ar_step(residuals.back(), stage));
  }
}

TrainingGraph sinet_graph(const CodecModel& model, const Tensor& blocks, const Tensor& centre) {
  const int batch = centre.dim(0);
  // Causal slots of the 3x3 block: top-left, top, top-right, left.
  std::vector<int> causal;
  for (int b = 0; b < batch; ++b) {
    for (int slot = 0; slot < 4; ++slot) causal.push_back(b * 9 + slot);
  }
  Tensor decoded;
  {
    NoGradScope frozen;
    const Tensor neighbours = gather_batch(blocks, causal);
    decoded = model.decode(model.encode(neighbours, 1, nullptr, BinarizeMode::kDeterministic, nullptr), 1,
                           nullptr);
  }
  const Tensor features = model.inpaint_features(decoded);
  const Tensor padding = Tensor::zeros({5 * batch, kCodeChannels, kCodeExtent, kCodeExtent});
  const std::array<Tensor, 2> parts{features, padding};
  std::vector<int> order;
  for (int b = 0; b < batch; ++b) {
    for (int slot = 0; slot < 9; ++slot) {
      order.push_back(slot < 4 ? b * 4 + slot : 4 * batch + b * 5 + (slot - 4));
    }
  }
  const Tensor grid = blocks_to_grid(gather_batch(concat_batch(parts), order), 3);
  const Tensor prediction = model.inpaint_decode(grid);
  TrainingGraph g;
  g.residuals.push_back(sub(centre, prediction));
  g.loss = loss_inpaint(centre, prediction);
  return g;
}

}  // namespace

TrainingGraph training_graph(const CodecModel& model, const Tensor& batch, BinarizeMode mode,
                             Rng* rng) {
  const int crop = training_crop(model.variant());
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != crop || batch.dim(3) != crop) {
    throw DimensionError(std::string(variant_name(model.variant())) + " trains on [B,3," +
                         std::to_string(crop) + "," + std::to_string(crop) + "], got " +
                         to_string(batch.shape()));
  }
  TrainingGraph g;
  RecurrentState state;

  if (crop == kPatchSize) {
    const Tensor& r0 = batch;
    StageFn first = [&](const Tensor& x) {
      return model.decode(model.encode(x, 1, &state, mode, rng), 1, &state);
    };
    g.residuals.push_back(model.recurrent() ? osr_step(r0, r0, first) : ar_step(r0, first));
    refine(model, r0, state, mode, rng, g.residuals);
    g.loss = loss_baseline(g.residuals);
    return g;
  }

  Tensor blocks, centre;
  {
    NoGradScope constant;
    blocks = grid_to_blocks(batch, 3);
    centre = gather_batch(blocks, centre_indices(batch.dim(0)));
  }
  if (model.variant() == Variant::kSINet) return sinet_graph(model, blocks, centre);

  // Iteration 1: every patch of the block is encoded on its own, the centre
  // is decoded from the 3x3 neighbourhood of codes.
  RecurrentState all;
  const Tensor codes = model.encode(blocks, 1, &all, mode, rng);
  const auto centres = centre_indices(batch.dim(0));
  state = gather_state(all, centres);
  const Tensor prediction = model.decode(blocks_to_grid(codes, 3), 1, &state);
  g.residuals.push_back(sub(centre, prediction));
  refine(model, centre, state, mode, rng, g.residuals);
  g.loss = loss_binet(g.residuals.front(), std::span(g.residuals).subspan(1));
  return g;
}

// ---------------------------------------------------------------------------
// Patch grids
// ---------------------------------------------------------------------------

PatchGrid PatchGrid::from_image(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw CodecError("expected an image [3,H,W], got " + to_string(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  if (h <= 0 || w <= 0 || h % kPatchSize != 0 || w % kPatchSize != 0) {
    throw CodecError("image " + std::to_string(w) + "x" + std::to_string(h) +
                     " is not a multiple of the 32-pixel patch size; resize it first");
  }
  PatchGrid grid;
  grid.rows_ = h / kPatchSize;
  grid.cols_ = w / kPatchSize;
  const auto src = image.data();
  for (int r = 0; r < grid.rows_; ++r) {
    for (int c = 0; c < grid.cols_; ++c) {
      Tensor p = Tensor::zeros({3, kPatchSize, kPatchSize});
      auto dst = p.data();
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < kPatchSize; ++y) {
          const std::size_t s = (static_cast<std::size_t>(ch) * h + r * kPatchSize + y) * w +
                                c * kPatchSize;
          std::copy_n(src.begin() + s, kPatchSize,
                      dst.begin() + (static_cast<std::size_t>(ch) * kPatchSize + y) * kPatchSize);
        }
      }
      grid.patches_.push_back(p);
    }
  }
  return grid;
}

int PatchGrid::index(int row, int col) const {
  if (!contains(row, col)) {
    throw CodecError("patch (" + std::to_string(row) + "," + std::to_string(col) +
                     ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_) + " grid");
  }
  return row * cols_ + col;
}

bool PatchGrid::contains(int row, int col) const {
  return row >= 0 && col >= 0 && row < rows_ && col < cols_;
}

const Tensor& PatchGrid::patch(int row, int col) const { return patches_[index(row, col)]; }

std::optional<Tensor> PatchGrid::neighbour(int row, int col, int dr, int dc) const {
  index(row, col);
  if (!contains(row + dr, col + dc)) return std::nullopt;
  return patches_[index(row + dr, col + dc)];
}

Tensor PatchGrid::to_image() const { return assemble(rows_, cols_, patches_); }

Tensor PatchGrid::assemble(int rows, int cols, std::span<const Tensor> patches) {
  if (static_cast<int>(patches.size()) != rows * cols) {
    throw CodecError("assemble: patch count does not match grid");
  }
  const int h = rows * kPatchSize, w = cols * kPatchSize;
  Tensor image = Tensor::zeros({3, h, w});
  auto dst = image.data();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const auto src = patches[r * cols + c].data();
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < kPatchSize; ++y) {
          std::copy_n(src.begin() + (static_cast<std::size_t>(ch) * kPatchSize + y) * kPatchSize,
                      kPatchSize,
                      dst.begin() + (static_cast<std::size_t>(ch) * h + r * kPatchSize + y) * w +
                          c * kPatchSize);
        }
      }
    }
  }
  return image;
}

Tensor assemble_context(const CodeGrid& grid, int row, int col) {
  if (row < 0 || col < 0 || row >= grid.rows || col >= grid.cols) {
    throw CodecError("assemble_context: patch (" + std::to_string(row) + "," +
                     std::to_string(col) + ") outside the code grid");
  }
  if (static_cast<int>(grid.codes.size()) != grid.rows * grid.cols) {
    throw CodecError("assemble_context: code grid is incomplete");
  }
  Tensor context = Tensor::full({kCodeChannels, kContextExtent, kContextExtent}, kContextPad);
  auto dst = context.data();
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      const int r = row + dr, c = col + dc;
      if (r < 0 || c < 0 || r >= grid.rows || c >= grid.cols) continue;
      const BinaryCode& code = grid.codes[r * grid.cols + c];
      if (code.size() != static_cast<std::size_t>(kCodeBits)) {
        throw CodecError("assemble_context: missing code for a neighbour");
      }
      for (int ch = 0; ch < kCodeChannels; ++ch) {
        for (int y = 0; y < kCodeExtent; ++y) {
          for (int x = 0; x < kCodeExtent; ++x) {
            dst[(static_cast<std::size_t>(ch) * kContextExtent + (dr + 1) * 2 + y) * kContextExtent +
                (dc + 1) * 2 + x] = static_cast<float>(code[(ch * kCodeExtent + y) * kCodeExtent + x]);
          }
        }
      }
    }
  }
  return context;
}

// ---------------------------------------------------------------------------
// Whole-image coding
// ---------------------------------------------------------------------------

std::pair<BinaryCode, RecurrentState> encode_patch(const CodecModel& model, const Tensor& patch,
                                                   int iteration, RecurrentState state) {
  NoGradScope inference;
  if (patch.rank() != 3) throw DimensionError("encode_patch expects [3,32,32]");
  const Tensor code = model.encode(reshape(patch, {1, 3, kPatchSize, kPatchSize}), iteration,
                                   &state, BinarizeMode::kDeterministic, nullptr);
  return {BinaryCode(code.data()), std::move(state)};
}

Tensor decode_patch(const CodecModel& model, const Tensor& context, int iteration,
                    RecurrentState* state) {
  NoGradScope inference;
  if (context.rank() != 3) {
    throw CodecError("decode_patch expects a [32,e,e] context, got " + to_string(context.shape()));
  }
  Shape batched{1, context.dim(0), context.dim(1), context.dim(2)};
  const Tensor out = model.decode(reshape(context, batched), iteration, state);
  return reshape(out, {3, kPatchSize, kPatchSize});
}

CompressedImage compress_image(const CodecModel& model, const Tensor& image, int iterations,
                               const CodingOptions& options) {
  if (model.variant() == Variant::kSINet) {
    throw CodecError("SINet is an inpainting baseline, not a codec");
  }
  if (iterations < 1 || iterations > model.iterations()) {
    throw CodecError("cannot encode " + std::to_string(iterations) + " iterations with a " +
                     std::to_string(model.iterations()) + "-iteration model");
  }
  const PatchGrid grid = PatchGrid::from_image(image);
  const int count = grid.count();
  const std::vector<int> order = resolve_order(options, count);

  CompressedImage out;
  out.height = image.dim(1);
  out.width = image.dim(2);
  out.iterations = iterations;
  out.codes.assign(count, std::vector<BinaryCode>(iterations));
  std::vector<RecurrentState> states(count);

  const int threads = worker_count(options.threads);
  parallel_for(count, threads, [&](std::size_t k) {
    const int p = order[k];
    auto [code, state] = encode_patch(model, grid.patch(p / grid.cols(), p % grid.cols()), 1);
    out.codes[p][0] = std::move(code);
    states[p] = std::move(state);
  });
  if (iterations == 1) return out;

  CodeGrid first{grid.rows(), grid.cols(), {}};
  for (const auto& codes : out.codes) first.codes.push_back(codes[0]);

  parallel_for(count, threads, [&](std::size_t k) {
    NoGradScope inference;
    const int p = order[k];
    const int row = p / grid.cols(), col = p % grid.cols();
    RecurrentState& state = states[p];
    const Tensor& r0 = grid.patch(row, col);
    const Tensor context = model.uses_context(1) ? assemble_context(first, row, col)
                                                 : code_tensor(out.codes[p][0]);
    Tensor residual = sub(r0, decode_patch(model, context, 1, &state));
    for (int i = 2; i <= iterations; ++i) {
      auto [code, next] = encode_patch(model, residual, i, std::move(state));
      state = std::move(next);
      const Tensor output = decode_patch(model, code_tensor(code), i, &state);
      residual = model.recurrent() ? sub(r0, output) : sub(residual, output);
      out.codes[p][i - 1] = std::move(code);
    }
  });
  return out;
}

std::vector<Tensor> decompress_progressive(const CodecModel& model, const CompressedImage& codes,
                                           int iterations, const CodingOptions& options) {
  if (model.variant() == Variant::kSINet) {
    throw CodecError("SINet is an inpainting baseline, not a codec");
  }
  if (codes.width <= 0 || codes.height <= 0 || codes.width % kPatchSize != 0 ||
      codes.height % kPatchSize != 0) {
    throw CodecError("compressed image has invalid dimensions");
  }
  if (iterations < 1) throw CodecError("at least one iteration must be decoded");
  if (iterations > codes.iterations) {
    throw CodecError("code underflow: " + std::to_string(iterations) + " iterations requested, " +
                     std::to_string(codes.iterations) + " stored");
  }
  if (iterations > model.iterations()) {
    throw CodecError("model supports only " + std::to_string(model.iterations()) + " iterations");
  }
  const int rows = codes.rows(), cols = codes.cols(), count = rows * cols;
  if (static_cast<int>(codes.codes.size()) != count) {
    throw CodecError("code underflow: " + std::to_string(codes.codes.size()) +
                     " patches stored, " + std::to_string(count) + " expected");
  }
  for (const auto& per_patch : codes.codes) {
    if (static_cast<int>(per_patch.size()) < iterations) {
      throw CodecError("code underflow: a patch stores fewer iterations than requested");
    }
  }
  const std::vector<int> order = resolve_order(options, count);

  CodeGrid first{rows, cols, {}};
  for (const auto& per_patch : codes.codes) first.codes.push_back(per_patch[0]);

  std::vector<std::vector<Tensor>> patches(iterations, std::vector<Tensor>(count));
  parallel_for(count, worker_count(options.threads), [&](std::size_t k) {
    NoGradScope inference;
    const int p = order[k];
    RecurrentState state;
    Tensor reconstruction;
    for (int i = 1; i <= iterations; ++i) {
      const Tensor context = model.uses_context(i) ? assemble_context(first, p / cols, p % cols)
                                                   : code_tensor(codes.codes[p][i - 1]);
      const Tensor output = decode_patch(model, context, i, &state);
      reconstruction = (model.recurrent() || i == 1) ? output : add(reconstruction, output);
      patches[i - 1][p] = reconstruction;
    }
  });

  std::vector<Tensor> images;
  for (const auto& stage : patches) images.push_back(clamp_unit(PatchGrid::assemble(rows, cols, stage)));
  return images;
}

Tensor decompress_image(const CodecModel& model, const CompressedImage& codes, int iterations,
                        const CodingOptions& options) {
  return decompress_progressive(model, codes, iterations, options).back();
}

// ---------------------------------------------------------------------------
// Inpainting
// ---------------------------------------------------------------------------

std::vector<Reconstruction> reconstruct_patches(const CodecModel& model,
                                                const CompressedImage& codes, int iterations) {
  const PatchGrid grid = PatchGrid::from_image(decompress_image(model, codes, iterations));
  std::vector<Reconstruction> out;
  for (int r = 0; r < grid.rows(); ++r) {
    for (int c = 0; c < grid.cols(); ++c) out.push_back(Reconstruction(grid.patch(r, c)));
  }
  return out;
}

CausalContext causal_context(std::span<const Reconstruction> decoded, int rows, int cols, int row,
                             int col) {
  if (static_cast<int>(decoded.size()) != rows * cols || row < 0 || col < 0 || row >= rows ||
      col >= cols) {
    throw CodecError("causal_context: position outside the decoded grid");
  }
  auto at = [&](int r, int c) -> std::optional<Reconstruction> {
    if (r < 0 || c < 0 || r >= rows || c >= cols) return std::nullopt;
    return decoded[r * cols + c];
  };
  return {at(row - 1, col - 1), at(row - 1, col), at(row - 1, col + 1), at(row, col - 1)};
}

Tensor sinet_predict(const CodecModel& sinet, const CausalContext& context) {
  if (sinet.variant() != Variant::kSINet) throw CodecError("sinet_predict needs a SINet model");
  NoGradScope inference;
  Tensor blocks = Tensor::zeros({9, kCodeChannels, kCodeExtent, kCodeExtent});
  const std::array<const std::optional<Reconstruction>*, 4> slots{
      &context.top_left, &context.top, &context.top_right, &context.left};
  constexpr std::size_t kBlock = kCodeChannels * kCodeExtent * kCodeExtent;
  for (std::size_t slot = 0; slot < slots.size(); ++slot) {
    if (!slots[slot]->has_value()) continue;
    const Tensor features = sinet.inpaint_features(
        reshape((*slots[slot])->pixels(), {1, 3, kPatchSize, kPatchSize}));
    std::copy(features.data().begin(), features.data().end(), blocks.data().begin() + slot * kBlock);
  }
  const Tensor prediction = sinet.inpaint_decode(blocks_to_grid(blocks, 3));
  return reshape(prediction, {3, kPatchSize, kPatchSize});
}

Tensor masked_inpaint(const CodecModel& masked, const CompressedImage& codes, int row, int col) {
  if (!masked.masked()) throw CodecError("masked_inpaint needs a masked BINet model");
  CodeGrid first{codes.rows(), codes.cols(), {}};
  for (const auto& per_patch : codes.codes) {
    if (per_patch.empty()) throw CodecError("code underflow: no first-iteration code");
    first.codes.push_back(per_patch[0]);
  }
  return decode_patch(masked, assemble_context(first, row, col), 1);
}

// ---------------------------------------------------------------------------
// Intra prediction
// ---------------------------------------------------------------------------

IntraMode parse_intra_mode(std::string_view name) {
  std::string key = squash(name);
  if (key.size() > 4 && key.ends_with("pred")) key.resize(key.size() - 4);
  if (key == "dc") return IntraMode::kDC;
  if (key == "h") return IntraMode::kH;
  if (key == "v") return IntraMode::kV;
  if (key == "tm") return IntraMode::kTM;
  throw std::invalid_argument("unknown intra prediction mode '" + std::string(name) + "'");
}

std::string_view intra_mode_name(IntraMode mode) {
  switch (mode) {
    case IntraMode::kDC: return "DC_PRED";
    case IntraMode::kH: return "H_PRED";
    case IntraMode::kV: return "V_PRED";
    case IntraMode::kTM: return "TM_PRED";
  }
  return "unknown";
}

Tensor intra_predict(IntraMode mode, const IntraBorders& borders) {
  constexpr int n = kPatchSize;
  auto check = [](const std::optional<Tensor>& t, const Shape& shape, const char* what) {
    if (t && t->shape() != shape) {
      throw DimensionError(std::string("intra_predict: ") + what + " border must be " +
                           to_string(shape));
    }
  };
  check(borders.top, {3, n}, "top");
  check(borders.left, {3, n}, "left");
  check(borders.corner, {3}, "corner");

  const bool has_h = borders.left.has_value();
  const bool has_v = borders.top.has_value();
  const bool has_tm = has_h && has_v && borders.corner.has_value();
  if ((mode == IntraMode::kH && !has_h) || (mode == IntraMode::kV && !has_v) ||
      (mode == IntraMode::kTM && !has_tm)) {
    mode = IntraMode::kDC;
  }

  Tensor out = Tensor::zeros({3, n, n});
  auto p = out.data();
  auto at = [&](int c, int i, int j) -> float& {
    return p[(static_cast<std::size_t>(c) * n + i) * n + j];
  };
  for (int c = 0; c < 3; ++c) {
    switch (mode) {
      case IntraMode::kDC: {
        double acc = 0.0;
        int count = 0;
        for (const auto* border : {&borders.top, &borders.left}) {
          if (!border->has_value()) continue;
          const auto v = (*border)->data();
          for (int k = 0; k < n; ++k) acc += v[c * n + k];
          count += n;
        }
        const float dc = count > 0 ? static_cast<float>(acc / count) : 0.0f;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) at(c, i, j) = dc;
        }
        break;
      }
      case IntraMode::kH: {
        const auto left = borders.left->data();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) at(c, i, j) = left[c * n + i];
        }
        break;
      }
      case IntraMode::kV: {
        const auto top = borders.top->data();
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) at(c, i, j) = top[c * n + j];
        }
        break;
      }
      case IntraMode::kTM: {
        const auto top = borders.top->data();
        const auto left = borders.left->data();
        const float corner = borders.corner->data()[c];
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            at(c, i, j) = std::clamp(left[c * n + i] + top[c * n + j] - corner, -1.0f, 1.0f);
          }
        }
        break;
      }
    }
  }
  return out;
}

IntraBorders intra_borders(const Tensor& image, int row, int col) {
  const PatchGrid grid = PatchGrid::from_image(image);
  grid.index(row, col);
  const int h = image.dim(1), w = image.dim(2);
  const auto src = image.data();
  auto pixel = [&](int c, int y, int x) { return src[(static_cast<std::size_t>(c) * h + y) * w + x]; };
  const int y0 = row * kPatchSize, x0 = col * kPatchSize;
  IntraBorders b;
  if (row > 0) {
    Tensor top = Tensor::zeros({3, kPatchSize});
    for (int c = 0; c < 3; ++c) {
      for (int j = 0; j < kPatchSize; ++j) top.data()[c * kPatchSize + j] = pixel(c, y0 - 1, x0 + j);
    }
    b.top = top;
  }
  if (col > 0) {
    Tensor left = Tensor::zeros({3, kPatchSize});
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < kPatchSize; ++i) left.data()[c * kPatchSize + i] = pixel(c, y0 + i, x0 - 1);
    }
    b.left = left;
  }
  if (row > 0 && col > 0) {
    b.corner = Tensor::from({3}, {pixel(0, y0 - 1, x0 - 1), pixel(1, y0 - 1, x0 - 1),
                                  pixel(2, y0 - 1, x0 - 1)});
  }
  return b;
}

}  // namespace binec
