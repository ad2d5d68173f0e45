#include "binec/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "binec/bitstream.hpp"

namespace binec {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& text, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(item, key));
  }
  return out;
}

std::array<int, 3> parse_widths(const std::string& text, const std::string& key) {
  const std::vector<int> v = parse_int_list(text, key);
  if (v.size() != 3) throw std::invalid_argument("config key '" + key + "' needs three widths");
  return {v[0], v[1], v[2]};
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(decay_factor >= 1.0)) throw std::invalid_argument("decay_factor must be >= 1");
  if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
    throw std::invalid_argument("decay_epochs must be ascending");
  }
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (patch_size != kPatchSize) throw std::invalid_argument("patch_size must be 32");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  architecture.validate();
}

TrainConfig parse_config(const std::string& text, TrainConfig config) {
  std::stringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "batch_size") config.batch_size = parse_number<int>(value, key);
    else if (key == "learning_rate") config.learning_rate = parse_number<double>(value, key);
    else if (key == "decay_epochs") config.decay_epochs = parse_int_list(value, key);
    else if (key == "decay_factor") config.decay_factor = parse_number<double>(value, key);
    else if (key == "max_epochs") config.max_epochs = parse_number<int>(value, key);
    else if (key == "patch_size") config.patch_size = parse_number<int>(value, key);
    else if (key == "patience") config.patience = parse_number<int>(value, key);
    else if (key == "seed") config.seed = parse_number<std::uint64_t>(value, key);
    else if (key == "variant") config.variant = parse_variant(value);
    else if (key == "iterations") config.iterations = parse_number<int>(value, key);
    else if (key == "encoder_widths") config.architecture.encoder = parse_widths(value, key);
    else if (key == "decoder_widths") config.architecture.decoder = parse_widths(value, key);
    else if (key == "base_model") config.base_model = value;
    else if (key == "data_dir") config.data_dir = value;
    else if (key == "checkpoint") config.checkpoint = value;
    else if (key == "history") config.history = value;
    else {
      throw std::invalid_argument("config line " + std::to_string(number) + ": unknown key '" +
                                  key + "'");
    }
  }
  return config;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()), std::move(base));
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw std::invalid_argument("epoch must be >= 0");
  double lr = config.learning_rate;
  for (int boundary : config.decay_epochs) {
    if (epoch >= boundary) lr /= config.decay_factor;
  }
  return lr;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

namespace {

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    if (is_lossless_image(p)) {
      out.push_back(p);
      continue;
    }
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".jpg" || ext == ".jpeg" || ext == ".webp" || ext == ".heic") {
      throw std::invalid_argument(p.string() +
                                  ": lossy images would teach the codec their artefacts");
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

Dataset Dataset::from_directory(const std::filesystem::path& root) {
  Dataset d;
  for (auto [name, split] : {std::pair{"train", &d.train}, {"valid", &d.valid}, {"test", &d.test}}) {
    const auto dir = root / name;
    if (std::filesystem::is_directory(dir)) *split = list_images(dir);
  }
  return d;
}

const std::vector<std::filesystem::path>& Dataset::split(Split s) const {
  switch (s) {
    case Split::kTrain: return train;
    case Split::kValid: return valid;
    case Split::kTest: return test;
  }
  return train;
}

float normalize_value(std::uint8_t v) { return static_cast<float>(v / 127.5 - 1.0); }

std::uint8_t denormalize_value(float x) {
  const double v = std::nearbyint((static_cast<double>(x) + 1.0) * 127.5);
  if (!(v >= 0.0)) return 0;  // also catches NaN
  return static_cast<std::uint8_t>(std::min(v, 255.0));
}

Tensor normalize(const Image8& image) {
  Tensor out = Tensor::zeros({3, image.height, image.width});
  auto d = out.data();
  for (std::size_t i = 0; i < image.data.size(); ++i) d[i] = normalize_value(image.data[i]);
  return out;
}

Image8 denormalize(const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("denormalize expects [3,H,W], got " + to_string(image.shape()));
  }
  Image8 out(image.dim(2), image.dim(1));
  const auto s = image.data();
  for (std::size_t i = 0; i < s.size(); ++i) out.data[i] = denormalize_value(s[i]);
  return out;
}

Tensor sample_patch(const Tensor& image, int size, SampleMode mode, Rng* rng) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("sample_patch expects [3,H,W], got " + to_string(image.shape()));
  }
  const int h = image.dim(1), w = image.dim(2);
  if (h < size || w < size) {
    throw std::invalid_argument("image " + std::to_string(w) + "x" + std::to_string(h) +
                                " is smaller than the " + std::to_string(size) + "-pixel crop");
  }
  int top = (h - size) / 2, left = (w - size) / 2;
  if (mode == SampleMode::kRandom) {
    if (rng == nullptr) throw std::invalid_argument("random crops need an rng");
    top = std::uniform_int_distribution<int>(0, h - size)(*rng);
    left = std::uniform_int_distribution<int>(0, w - size)(*rng);
  }
  Tensor out = Tensor::zeros({3, size, size});
  const auto s = image.data();
  auto d = out.data();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      const auto row = s.begin() + (static_cast<std::size_t>(c) * h + top + y) * w + left;
      std::copy(row, row + size, d.begin() + (static_cast<std::size_t>(c) * size + y) * size);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

void adam_step(std::span<float> params, std::span<const float> grads, AdamMoments& m, int step,
               double lr, const AdamSettings& s) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: size mismatch");
  if (step < 1) throw std::invalid_argument("adam_step: steps count from 1");
  if (m.first.empty()) {
    m.first.assign(params.size(), 0.0f);
    m.second.assign(params.size(), 0.0f);
  }
  const double c1 = 1.0 - std::pow(s.beta1, step);
  const double c2 = 1.0 - std::pow(s.beta2, step);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m1 = s.beta1 * m.first[i] + (1.0 - s.beta1) * g;
    const double m2 = s.beta2 * m.second[i] + (1.0 - s.beta2) * g * g;
    m.first[i] = static_cast<float>(m1);
    m.second[i] = static_cast<float>(m2);
    params[i] -= static_cast<float>(lr * (m1 / c1) / (std::sqrt(m2 / c2) + s.epsilon));
  }
}

Adam::Adam(std::vector<Tensor> params, AdamSettings settings)
    : params_(std::move(params)), moments_(params_.size()), settings_(settings) {}

void Adam::step(double lr) {
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const auto g = params_[k].grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient in parameter tensor " + std::to_string(k) + " " +
                           to_string(params_[k].shape()) + " at element " + std::to_string(i) +
                           " (optimiser step " + std::to_string(steps_ + 1) + ")");
      }
    }
  }
  ++steps_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    adam_step(params_[k].data(), params_[k].grad(), moments_[k], steps_, lr, settings_);
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

Trainer::Trainer(CodecModel& model, std::uint64_t seed)
    : model_(model), adam_(model.trainable()), rng_(seed) {}

double Trainer::step(const Tensor& batch, double lr) {
  for (Tensor& p : model_.parameters().tensors()) p.zero_grad();
  Tape tape;
  double loss = 0.0;
  {
    TapeScope scope(tape);
    const TrainingGraph g = training_graph(model_, batch, BinarizeMode::kStochastic, &rng_);
    loss = g.loss.item();
    if (!std::isfinite(loss)) throw NumericError("training loss is not finite");
    tape.backward(g.loss);
  }
  adam_.step(lr);
  return loss;
}

double Trainer::evaluate(const Tensor& batch) const {
  NoGradScope inference;
  return training_graph(model_, batch, BinarizeMode::kDeterministic, nullptr).loss.item();
}

std::vector<Tensor> load_split(const Dataset& dataset, Split split) {
  std::vector<Tensor> out;
  for (const auto& path : dataset.split(split)) out.push_back(normalize(load_image(path)));
  return out;
}

void install_sinet_base(CodecModel& sinet, const CodecModel& base) {
  if (sinet.variant() != Variant::kSINet) throw std::invalid_argument("target is not a SINet");
  if (base.variant() != Variant::kConvAR || base.iterations() != 1) {
    throw std::invalid_argument("SINet's base must be a 1-iteration ConvAR");
  }
  for (const auto& [name, tensor] : base.parameters().entries()) {
    const std::string target = "base." + name;
    if (!sinet.parameters().contains(target) ||
        sinet.parameters().at(target).shape() != tensor.shape()) {
      throw std::invalid_argument("base model architecture does not match SINet ('" + name + "')");
    }
    Tensor dst = sinet.parameters().at(target);
    std::copy(tensor.data().begin(), tensor.data().end(), dst.data().begin());
  }
}

CodecModel extract_sinet_base(const CodecModel& sinet) {
  if (sinet.variant() != Variant::kSINet) throw std::invalid_argument("model is not a SINet");
  CodecModel base(Variant::kConvAR, 1, sinet.architecture(), 0);
  for (const auto& [name, tensor] : base.parameters().entries()) {
    const Tensor& src = sinet.parameters().at("base." + name);
    Tensor dst = tensor;
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
  return base;
}

namespace {

Tensor stack(std::span<const Tensor> crops) {
  std::vector<Tensor> batched;
  batched.reserve(crops.size());
  for (const Tensor& c : crops) {
    Shape s{1};
    s.insert(s.end(), c.shape().begin(), c.shape().end());
    batched.push_back(reshape(c, s));
  }
  return concat_batch(batched);
}

std::vector<std::vector<float>> snapshot(const CodecModel& model) {
  std::vector<std::vector<float>> out;
  for (const Tensor& t : model.parameters().tensors()) {
    out.emplace_back(t.data().begin(), t.data().end());
  }
  return out;
}

void restore(CodecModel& model, const std::vector<std::vector<float>>& values) {
  auto tensors = model.parameters().tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    std::copy(values[k].begin(), values[k].end(), tensors[k].data().begin());
  }
}

}  // namespace

double validation_loss(const CodecModel& model, std::span<const Tensor> images, int batch_size) {
  if (images.empty()) throw std::invalid_argument("validation split is empty");
  NoGradScope inference;
  const int crop = training_crop(model.variant());
  double total = 0.0;
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> crops;
    for (std::size_t i = start; i < end; ++i) {
      crops.push_back(sample_patch(images[i], crop, SampleMode::kCenter, nullptr));
    }
    const double loss =
        training_graph(model, stack(crops), BinarizeMode::kDeterministic, nullptr).loss.item();
    total += loss * static_cast<double>(end - start);
  }
  return total / static_cast<double>(images.size());
}

TrainResult train(CodecModel& model, std::span<const Tensor> train_images,
                  std::span<const Tensor> valid_images, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  if (train_images.empty()) throw std::invalid_argument("training split is empty");
  if (valid_images.empty()) throw std::invalid_argument("validation split is empty");

  const int crop = training_crop(model.variant());
  Trainer trainer(model, config.seed);
  Rng sampler(config.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(train_images.size());

  TrainResult result;
  std::vector<std::vector<float>> best;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), sampler);

    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<Tensor> crops;
      for (std::size_t i = start; i < end; ++i) {
        crops.push_back(sample_patch(train_images[order[i]], crop, SampleMode::kRandom, &sampler));
      }
      try {
        train_total += trainer.step(stack(crops), lr) * static_cast<double>(end - start);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + ": " + e.what());
      }
    }

    EpochRecord record{epoch, lr, train_total / static_cast<double>(order.size()),
                       validation_loss(model, valid_images, config.batch_size)};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (result.best_epoch < 0 || record.valid_loss < result.best_valid_loss) {
      result.best_epoch = epoch;
      result.best_valid_loss = record.valid_loss;
      best = snapshot(model);
      if (!config.checkpoint.empty()) model.save(config.checkpoint);
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }
  restore(model, best);
  if (!config.history.empty()) write_history_csv(config.history, result.history);
  return result;
}

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,lr,train_loss,valid_loss\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.lr << ',' << r.train_loss << ',' << r.valid_loss << '\n';
  }
  const std::string text = out.str();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace binec
