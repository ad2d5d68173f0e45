#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "binec/image.hpp"
#include "binec/models.hpp"

namespace binec {

/// A non-finite value showed up in a loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training and model settings, loadable from key=value text.
struct TrainConfig {
  // Optimisation.
  int batch_size = 32;
  double learning_rate = 1e-4;
  std::vector<int> decay_epochs{3000, 10000, 14000};
  double decay_factor = 2.0;
  int max_epochs = 15000;
  int patch_size = kPatchSize;
  int patience = 200;
  std::uint64_t seed = 1;

  // Model.
  Variant variant = Variant::kConvAR;
  int iterations = 1;
  Architecture architecture;
  /// SINet only: trained 1-iteration ConvAR checkpoint to freeze.
  std::filesystem::path base_model;

  // Data and outputs.
  std::filesystem::path data_dir;  // holds train/, valid/ and optionally test/
  std::filesystem::path checkpoint;
  std::filesystem::path history;

  void validate() const;
};

/// Parses "key = value" lines; '#' starts a comment. Unknown keys and
/// malformed values throw std::invalid_argument naming the line.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Learning rate at `epoch`: halved (by decay_factor) at each decay epoch,
/// the named epoch included.
double lr_at(int epoch, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

enum class Split { kTrain, kValid, kTest };

/// Image files of one corpus, sorted by path within each split.
struct Dataset {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> valid;
  std::vector<std::filesystem::path> test;

  /// Reads root/train, root/valid and root/test (the latter optional).
  /// Throws std::invalid_argument on lossy or unrecognised image files.
  static Dataset from_directory(const std::filesystem::path& root);
  const std::vector<std::filesystem::path>& split(Split s) const;
};

/// x / 127.5 - 1 per byte, [3,H,W].
Tensor normalize(const Image8& image);
/// Inverse of normalize: round to nearest, clamp to [0,255].
Image8 denormalize(const Tensor& image);
float normalize_value(std::uint8_t v);
std::uint8_t denormalize_value(float x);

enum class SampleMode { kRandom, kCenter };

/// size x size crop of an image [3,H,W]. Centre crops start at
/// floor((H - size) / 2), floor((W - size) / 2); random crops draw the
/// offsets uniformly from `rng`.
Tensor sample_patch(const Tensor& image, int size, SampleMode mode, Rng* rng);

// ---------------------------------------------------------------------------
// Optimiser
// ---------------------------------------------------------------------------

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamMoments {
  std::vector<float> first;
  std::vector<float> second;
};

/// One Adam update of `params` in place. `step` counts from 1. Moments are
/// sized on first use.
void adam_step(std::span<float> params, std::span<const float> grads, AdamMoments& moments,
               int step, double lr, const AdamSettings& settings = {});

class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamSettings settings = {});
  /// Applies one update from the accumulated gradients. Throws NumericError
  /// (parameters untouched) when any gradient is not finite.
  void step(double lr);
  int steps() const { return steps_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamMoments> moments_;
  AdamSettings settings_;
  int steps_ = 0;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One optimiser over one model.
class Trainer {
 public:
  Trainer(CodecModel& model, std::uint64_t seed);

  /// Stochastic-binariser forward/backward on `batch` plus one Adam update.
  /// Returns the loss before the update.
  double step(const Tensor& batch, double lr);
  /// Loss with the deterministic binariser, no gradients.
  double evaluate(const Tensor& batch) const;

 private:
  CodecModel& model_;
  Adam adam_;
  Rng rng_;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_valid_loss = 0.0;
};

/// Images of one split in memory, normalised.
std::vector<Tensor> load_split(const Dataset& dataset, Split split);

/// Copies the frozen "base." weights of a SINet from a 1-iteration ConvAR.
void install_sinet_base(CodecModel& sinet, const CodecModel& base);
/// The frozen base of a SINet as a stand-alone 1-iteration ConvAR.
CodecModel extract_sinet_base(const CodecModel& sinet);

/// Validation loss: centre crops, deterministic binariser.
double validation_loss(const CodecModel& model, std::span<const Tensor> images, int batch_size);

/// Epoch loop: one random crop per training image per epoch, batches of
/// config.batch_size, validation after every epoch, early stop after
/// config.patience epochs without improvement. On return the model holds the
/// best-validation weights, which are also written to config.checkpoint
/// (when set) each time they improve; the history is written to
/// config.history (when set).
TrainResult train(CodecModel& model, std::span<const Tensor> train_images,
                  std::span<const Tensor> valid_images, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace binec
