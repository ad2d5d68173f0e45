// binec: train, run and evaluate the patch codecs.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include "binec/bitstream.hpp"
#include "binec/inpaint_eval.hpp"
#include "binec/metrics.hpp"
#include "binec/models.hpp"
#include "binec/training.hpp"

namespace fs = std::filesystem;
using namespace binec;

namespace {

enum ExitCode {
  kOk = 0,
  kUnexpected = 1,
  kUsage = 2,
  kIoFailure = 3,
  kNumericFailure = 4,
};

constexpr int kEvalWidth = 320;
constexpr int kEvalHeight = 224;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Image8 prepare(const Image8& image, bool resize, const fs::path& source) {
  if (resize) return resize_to(image, kEvalWidth, kEvalHeight);
  if (image.width % kPatchSize != 0 || image.height % kPatchSize != 0) {
    throw UsageError(source.string() + " is " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) +
                     "; dimensions must be multiples of 32 (pass --resize)");
  }
  return image;
}

std::vector<fs::path> image_inputs(const fs::path& input) {
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (entry.is_regular_file() && is_lossless_image(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("no PNG images in " + input.string());
  return out;
}

CodecModel load_model(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint " + path.string() + " does not exist");
  return CodecModel::load(path);
}

Tensor stack_rows(std::span<const Tensor> images) {
  const int h = images[0].dim(1), w = images[0].dim(2);
  Tensor out = Tensor::zeros({3, h * static_cast<int>(images.size()), w});
  auto dst = out.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t k = 0; k < images.size(); ++k) {
    const auto src = images[k].data();
    for (int c = 0; c < 3; ++c) {
      std::copy_n(src.begin() + c * plane, plane,
                  dst.begin() + c * plane * images.size() + k * plane);
    }
  }
  return out;
}

struct Options {
  fs::path model, input, output, config, sinet, reconstructions;
  std::vector<fs::path> curves;
  std::string variant;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<bool> resize;
  std::string metric = "ssim";
};

int run_train(const Options& o) {
  TrainConfig config;
  if (!o.config.empty()) config = load_config(o.config);
  if (!o.variant.empty()) config.variant = parse_variant(o.variant);
  if (o.iterations) config.iterations = *o.iterations;
  if (o.seed) config.seed = *o.seed;
  if (!o.input.empty()) config.data_dir = o.input;
  if (!o.output.empty()) config.checkpoint = o.output;
  if (config.data_dir.empty()) throw UsageError("train needs --input DATA_DIR (or data_dir in the config)");
  if (config.checkpoint.empty()) throw UsageError("train needs --output CHECKPOINT (or checkpoint in the config)");
  if (config.history.empty()) config.history = fs::path(config.checkpoint).replace_extension(".history.csv");
  if (config.variant == Variant::kSINet && config.base_model.empty()) {
    throw UsageError("SINet training needs base_model = <1-iteration ConvAR checkpoint> in the config");
  }
  config.validate();

  const Dataset dataset = Dataset::from_directory(config.data_dir);
  if (dataset.train.empty() || dataset.valid.empty()) {
    throw UsageError(config.data_dir.string() + " needs non-empty train/ and valid/ folders");
  }
  CodecModel model(config.variant, config.iterations, config.architecture, config.seed);
  if (config.variant == Variant::kSINet) install_sinet_base(model, load_model(config.base_model));

  const auto train_images = load_split(dataset, Split::kTrain);
  const auto valid_images = load_split(dataset, Split::kValid);
  std::cerr << "training " << variant_name(config.variant) << " (" << config.iterations
            << " iterations) on " << train_images.size() << " images, validating on "
            << valid_images.size() << "\n";
  const TrainResult result = train(model, train_images, valid_images, config, [](const EpochRecord& r) {
    if (r.epoch % 10 == 0) {
      std::fprintf(stderr, "epoch %5d  lr %.3g  train %.5f  valid %.5f\n", r.epoch, r.lr,
                   r.train_loss, r.valid_loss);
    }
  });
  std::printf("best epoch %d, validation loss %.6f\ncheckpoint %s\nhistory %s\n", result.best_epoch,
              result.best_valid_loss, config.checkpoint.string().c_str(),
              config.history.string().c_str());
  return kOk;
}

int run_encode(const Options& o) {
  const CodecModel model = load_model(o.model);
  const int iterations = o.iterations.value_or(model.iterations());
  if (iterations < 1 || iterations > model.iterations()) {
    throw UsageError("--iterations must be in 1.." + std::to_string(model.iterations()));
  }
  const Image8 image = prepare(load_image(o.input), o.resize.value_or(false), o.input);
  const CompressedImage codes = compress_image(model, normalize(image), iterations);
  write_compressed(o.output, codes);
  std::printf("%s: %dx%d, %d iterations, %zu bytes (%.3f bpp)\n", o.output.string().c_str(),
              codes.width, codes.height, iterations,
              compressed_file_size(codes.width, codes.height, iterations),
              0.125 * iterations);
  return kOk;
}

int run_decode(const Options& o) {
  const CodecModel model = load_model(o.model);
  const CompressedImage codes = read_compressed(o.input);
  const int iterations = o.iterations.value_or(codes.iterations);
  if (iterations < 1 || iterations > codes.iterations) {
    throw UsageError("--iterations must be in 1.." + std::to_string(codes.iterations) +
                     " for this file");
  }
  save_image(o.output, denormalize(decompress_image(model, codes, iterations)));
  std::printf("%s: %d of %d iterations\n", o.output.string().c_str(), iterations, codes.iterations);
  return kOk;
}

int run_eval(const Options& o) {
  const CodecModel model = load_model(o.model);
  const int iterations = o.iterations.value_or(model.iterations());
  if (iterations < 1 || iterations > model.iterations()) {
    throw UsageError("--iterations must be in 1.." + std::to_string(model.iterations()));
  }
  const auto paths = image_inputs(o.input);
  std::vector<Image8> images;
  for (const auto& p : paths) images.push_back(prepare(load_image(p), o.resize.value_or(true), p));

  const bool keep = !o.reconstructions.empty();
  const RdEvaluation eval = evaluate_rd(model, images, iterations, {}, keep);
  const std::array<RdCurve, 2> curves{eval.ssim, eval.psnr};
  write_curves_csv(o.output, curves);
  if (keep) {
    fs::create_directories(o.reconstructions);
    for (int i = 0; i < iterations; ++i) {
      for (std::size_t k = 0; k < paths.size(); ++k) {
        const std::string name = paths[k].stem().string() + "_it" + std::to_string(i + 1) + ".png";
        save_image(o.reconstructions / name, eval.reconstructions[i][k]);
      }
    }
  }
  std::printf("%zu images, %d iterations\n", images.size(), iterations);
  std::printf("%6s %10s %10s\n", "bpp", "ssim", "psnr");
  for (int i = 0; i < iterations; ++i) {
    std::printf("%6.3f %10.5f %10.4f\n", eval.ssim.points[i].bpp, eval.ssim.points[i].score,
                eval.psnr.points[i].score);
  }
  if (iterations >= 2) {
    std::printf("AUC ssim %.5f psnr %.4f\n", auc(eval.ssim), auc(eval.psnr));
  }
  return kOk;
}

RdCurve pick_curve(const fs::path& path, const std::string& metric) {
  for (RdCurve& c : read_curves_csv(path)) {
    if (c.metric == metric) return c;
  }
  throw UsageError(path.string() + " has no " + metric + " curve");
}

int run_bdrate(const Options& o) {
  if (o.curves.size() != 2) throw UsageError("bdrate takes REFERENCE.csv TEST.csv");
  const RdCurve reference = pick_curve(o.curves[0], o.metric);
  const RdCurve test = pick_curve(o.curves[1], o.metric);
  const double rate = bd_rate(reference, test);
  std::printf("BD-rate (%s) of %s against %s: %.2f%%\n", o.metric.c_str(),
              o.curves[1].string().c_str(), o.curves[0].string().c_str(), rate);
  if (!o.output.empty()) {
    char row[256];
    std::snprintf(row, sizeof(row), "metric,reference,test,bd_rate_percent\n%s,%s,%s,%.6f\n",
                  o.metric.c_str(), o.curves[0].string().c_str(), o.curves[1].string().c_str(), rate);
    const std::string text = row;
    write_file_atomic(o.output, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return kOk;
}

int run_inpaint_demo(const Options& o) {
  const CodecModel masked = load_model(o.model);
  const CodecModel sinet = load_model(o.sinet);
  if (!masked.masked()) throw UsageError("--model must be a MaskedBINet checkpoint");
  if (sinet.variant() != Variant::kSINet) throw UsageError("--sinet must be a SINet checkpoint");
  const auto paths = image_inputs(o.input);
  std::vector<Image8> images;
  for (const auto& p : paths) images.push_back(prepare(load_image(p), o.resize.value_or(false), p));

  // Rows: original, masked BINet, SINet, DC, H, V, TM.
  const Tensor x = normalize(images.front());
  const InpaintPredictions p = predict_inpainting(masked, sinet, x);
  const std::array<Tensor, 7> rows{x, p.masked, p.sinet, p.intra[0], p.intra[1], p.intra[2], p.intra[3]};
  save_image(o.output, denormalize(stack_rows(rows)));

  std::printf("%-12s %10s %10s  (%s, interior patches)\n", "method", "psnr", "ssim",
              images.size() == 1 ? paths.front().string().c_str() : "all inputs");
  for (const InpaintScore& s : score_inpainting(masked, sinet, images)) {
    std::printf("%-12s %10.4f %10.5f\n", s.method.c_str(), s.psnr, s.ssim);
  }
  std::printf("panel %s\n", o.output.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Patch-based neural image codec with binary inpainting"};
  app.require_subcommand(1);
  Options o;

  auto add_model = [&](CLI::App* cmd, bool required) {
    auto* opt = cmd->add_option("--model", o.model, "Weight file (.binw)");
    if (required) opt->required();
  };
  auto add_resize = [&](CLI::App* cmd) {
    cmd->add_flag("--resize,!--no-resize", o.resize, "Resample inputs to 320x224 first");
  };

  auto* train = app.add_subcommand("train", "Train a model; writes a checkpoint and a loss CSV");
  train->add_option("--config", o.config, "key=value training configuration")->check(CLI::ExistingFile);
  train->add_option("--variant", o.variant, "ConvAR, ConvGRU-OSR, BINetAR, BINetOSR, SINet, MaskedBINet");
  train->add_option("--iterations", o.iterations, "Number of coding iterations");
  train->add_option("--seed", o.seed, "Random seed");
  train->add_option("--input", o.input, "Corpus directory with train/ and valid/");
  train->add_option("--output", o.output, "Checkpoint path");

  auto* encode = app.add_subcommand("encode", "Compress a PNG into a .binc file");
  add_model(encode, true);
  encode->add_option("--input", o.input, "PNG image")->required()->check(CLI::ExistingFile);
  encode->add_option("--output", o.output, "Output .binc file")->required();
  encode->add_option("--iterations", o.iterations, "Iterations to code (default: all)");
  add_resize(encode);

  auto* decode = app.add_subcommand("decode", "Reconstruct a PNG from a .binc file");
  add_model(decode, true);
  decode->add_option("--input", o.input, ".binc file")->required()->check(CLI::ExistingFile);
  decode->add_option("--output", o.output, "Output PNG")->required();
  decode->add_option("--iterations", o.iterations, "Iterations to decode (default: all stored)");

  auto* eval = app.add_subcommand("eval", "Rate-distortion curve over images");
  add_model(eval, true);
  eval->add_option("--input", o.input, "PNG image or directory of PNGs")->required()->check(CLI::ExistingPath);
  eval->add_option("--output", o.output, "Curve CSV (metric,bpp,score)")->required();
  eval->add_option("--iterations", o.iterations, "Iterations to evaluate (default: all)");
  eval->add_option("--reconstructions", o.reconstructions, "Directory for per-iteration PNGs");
  add_resize(eval);

  auto* bdrate = app.add_subcommand("bdrate", "Bjontegaard rate difference between two curve CSVs");
  bdrate->add_option("curves", o.curves, "REFERENCE.csv TEST.csv")->required()->expected(2)->check(CLI::ExistingFile);
  bdrate->add_option("--metric", o.metric, "Quality axis")->check(CLI::IsMember({"ssim", "psnr"}));
  bdrate->add_option("--output", o.output, "Optional report CSV");

  auto* inpaint = app.add_subcommand("inpaint-demo", "Masked BINet vs SINet vs intra prediction");
  add_model(inpaint, true);
  inpaint->add_option("--sinet", o.sinet, "SINet weight file")->required();
  inpaint->add_option("--input", o.input, "PNG image or directory")->required()->check(CLI::ExistingPath);
  inpaint->add_option("--output", o.output, "Side-by-side PNG panel")->required();
  add_resize(inpaint);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return run_train(o);
    if (*encode) return run_encode(o);
    if (*decode) return run_decode(o);
    if (*eval) return run_eval(o);
    if (*bdrate) return run_bdrate(o);
    if (*inpaint) return run_inpaint_demo(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumericFailure;
  } catch (const CodecError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::exception& e) {
    std::cerr << "unexpected failure: " << e.what() << "\n";
    return kUnexpected;
  }
  return kUsage;
}
