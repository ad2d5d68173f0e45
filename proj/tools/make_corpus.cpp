// Writes a small procedural PNG corpus for desk-scale training runs.

#include <CLI11.hpp>

#include <cstdio>

#include "binec/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a synthetic lossless training corpus"};
  std::filesystem::path output;
  std::uint64_t seed = 7;
  binec::CorpusLayout layout;
  app.add_option("--output", output, "Corpus root (train/, valid/, test/ are created)")->required();
  app.add_option("--seed", seed, "Generator seed");
  app.add_option("--train", layout.train, "Training images");
  app.add_option("--valid", layout.valid, "Validation images");
  app.add_option("--test", layout.test, "Test images");
  app.add_option("--size", layout.train_size, "Side of the square train/valid images");
  app.add_option("--test-width", layout.test_width, "Test image width");
  app.add_option("--test-height", layout.test_height, "Test image height");
  CLI11_PARSE(app, argc, argv);
  try {
    binec::write_synthetic_corpus(output, layout, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  std::printf("%d train, %d valid, %d test images in %s\n", layout.train, layout.valid,
              layout.test, output.string().c_str());
  return 0;
}
