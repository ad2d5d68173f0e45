#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "binec/bitstream.hpp"
#include "binec/metrics.hpp"
#include "binec/synthetic.hpp"
#include "binec/training.hpp"
#include "support/fixtures.hpp"

using namespace binec;
using binec::testing::TempDir;
using binec::testing::tiny_arch;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result binec_cli(const std::string& args) {
  Result r;
  const std::string command = std::string("'") + BINEC_CLI_PATH + "' " + args + " 2>&1";
  FILE* pipe = popen(command.c_str(), "r");
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    CodecModel(Variant::kConvAR, 16, tiny_arch(), 1).save(dir / "m.binw");
    save_image(dir / "img.png", synthetic_image(64, 96, 2));
    save_image(dir / "odd.png", synthetic_image(50, 40, 3));
  }
  TempDir dir{"cli"};
};

}  // namespace

TEST_F(Cli, UnknownFlagsAreUsageErrors) {
  EXPECT_EQ(binec_cli("encode --model " + q(dir / "m.binw") + " --input " + q(dir / "img.png") +
                      " --output x.binc --bogus").code, 2);
  EXPECT_EQ(binec_cli("").code, 2);
  EXPECT_EQ(binec_cli("frobnicate").code, 2);
}

TEST_F(Cli, HelpListsEveryFlag) {
  const Result r = binec_cli("eval --help");
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--model", "--input", "--output", "--iterations", "--reconstructions", "--resize"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
}

TEST_F(Cli, RaggedImageNeedsResize) {
  const std::string base = "encode --model " + q(dir / "m.binw") + " --input " + q(dir / "odd.png") + " --output " +
                           q(dir / "odd.binc");
  EXPECT_EQ(binec_cli(base).code, 2);
  EXPECT_FALSE(std::filesystem::exists(dir / "odd.binc"));
  EXPECT_EQ(binec_cli(base + " --resize").code, 0);
  EXPECT_EQ(read_compressed(dir / "odd.binc").width, 320);
}

TEST_F(Cli, MissingCheckpointAndUnknownVariant) {
  EXPECT_EQ(binec_cli("encode --model " + q(dir / "none.binw") + " --input " + q(dir / "img.png") +
                      " --output " + q(dir / "x.binc")).code, 2);
  EXPECT_EQ(binec_cli("train --variant JPEG --input " + q(dir.path()) + " --output " + q(dir / "t.binw")).code, 2);
}

TEST_F(Cli, CorruptInputIsAnIoFailure) {
  write_file_atomic(dir / "bad.binc", std::vector<std::uint8_t>{'B', 'I', 'N', 'X', 0, 0});
  EXPECT_EQ(binec_cli("decode --model " + q(dir / "m.binw") + " --input " + q(dir / "bad.binc") + " --output " +
                      q(dir / "bad.png")).code, 3);
}

TEST_F(Cli, ProgressiveDecodeMatchesLibrary) {
  ASSERT_EQ(binec_cli("encode --model " + q(dir / "m.binw") + " --input " + q(dir / "img.png") + " --output " +
                      q(dir / "a.binc")).code, 0);
  EXPECT_EQ(std::filesystem::file_size(dir / "a.binc"), compressed_file_size(64, 96, 16));
  ASSERT_EQ(binec_cli("decode --model " + q(dir / "m.binw") + " --input " + q(dir / "a.binc") +
                      " --iterations 4 --output " + q(dir / "d4.png")).code, 0);
  const CodecModel m = CodecModel::load(dir / "m.binw");
  const Image8 expected = denormalize(decompress_image(m, read_compressed(dir / "a.binc"), 4));
  EXPECT_EQ(load_image(dir / "d4.png"), expected);
  EXPECT_EQ(binec_cli("decode --model " + q(dir / "m.binw") + " --input " + q(dir / "a.binc") +
                      " --iterations 17 --output " + q(dir / "d17.png")).code, 2);
}

TEST_F(Cli, EvalAndSelfBdRate) {
  ASSERT_EQ(binec_cli("eval --no-resize --model " + q(dir / "m.binw") + " --input " + q(dir / "img.png") +
                      " --output " + q(dir / "c.csv")).code, 0);
  const auto curves = read_curves_csv(dir / "c.csv");
  ASSERT_EQ(curves.size(), 2u);
  EXPECT_EQ(curves[0].points.size(), 16u);
  EXPECT_DOUBLE_EQ(curves[0].points.back().bpp, 2.0);
  const Result r = binec_cli("bdrate " + q(dir / "c.csv") + " " + q(dir / "c.csv") + " --metric psnr");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.00%"), std::string::npos) << r.out;
}
