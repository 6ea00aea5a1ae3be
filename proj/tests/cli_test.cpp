#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>
#include <unistd.h>

#include "langxai/saliency_perturbation.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int status = -1;
  std::string out;
};

/// Runs the CLI with `args`; stderr is folded into the captured output.
CliRun cli(const std::string& args) {
  const std::string cmd = std::string(LANGXAI_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int raw = ::pclose(pipe);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

const std::string kData = LANGXAI_DATA_DIR;

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("langxai-cli-" + std::to_string(::getpid()) + "-" +
                                       std::to_string(counter()++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::string store() const { return "--store " + (dir / "store").string(); }
};

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli("eval --pairs " + kData + "/pairs_examples.jsonl --task classification --bogus").status, 2);
  EXPECT_EQ(cli("").status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);
  EXPECT_EQ(cli("eval --task classification").status, 2);
  const CliRun help_on_error = cli("masks --grid 4x4");
  EXPECT_EQ(help_on_error.status, 2);
  EXPECT_NE(help_on_error.out.find("Usage:"), std::string::npos);
  EXPECT_EQ(cli("--help").status, 0);
}

TEST(Cli, EvalPrintsTheOracleValues) {
  const CliRun r = cli("eval --pairs " + kData + "/pairs_examples.jsonl --task classification");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("cat-mat,0.000000,0.806667,0.833333,0.888889"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("single-token,0.000000,0.500000,1.000000,1.000000"), std::string::npos);
}

TEST(Cli, ExplainPrintsRecordAndText) {
  Scratch s;
  const std::string image = kData + "/fixtures/classification/left/cls-1.png";
  const CliRun r = cli(s.store() + " explain --image " + image +
                    " --task classification --model toy_region_scorer --method gradcam"
                    " --ground-truth left --lvm mock");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("record_id: 1\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("explanation: Model predicted left; salient region described; verdict match"),
            std::string::npos);
  const CliRun again = cli(s.store() + " explain --image " + image +
                        " --task classification --model toy_region_scorer --method gradcam");
  EXPECT_NE(again.out.find("record_id: 2\n"), std::string::npos) << again.out;
  EXPECT_NE(again.out.find("verdict: unverified"), std::string::npos);
}

TEST(Cli, DomainErrorsExitOne) {
  Scratch s;
  const std::string image = kData + "/fixtures/classification/left/cls-1.png";
  const CliRun r = cli(s.store() + " explain --image " + image +
                    " --task classification --model nope --method gradcam");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("model_not_found"), std::string::npos) << r.out;
}

TEST(Cli, BenchIsByteIdentical) {
  Scratch s;
  const std::string out = (s.dir / "report.txt").string();
  const CliRun first = cli("bench --manifest " + kData + "/bench.json --out " + out);
  const CliRun second = cli("bench --manifest " + kData + "/bench.json");
  ASSERT_EQ(first.status, 0) << first.out;
  EXPECT_EQ(first.out, second.out);
  const langxai::Bytes written = langxai::read_file(out);
  EXPECT_EQ(std::string(written.begin(), written.end()), first.out);
  EXPECT_NE(first.out.find("task,BLEU,METEOR,ROUGE-L,BERTScore\nclassification,"), std::string::npos);
  EXPECT_EQ(cli("bench --manifest " + kData + "/bench.json --dataset x").status, 2);
}

TEST(Cli, IngestThenBenchByDatasetId) {
  Scratch s;
  const CliRun ingest = cli(s.store() + " ingest --root " + kData +
                         "/fixtures/segmentation --format mask_pngs --id seg");
  ASSERT_EQ(ingest.status, 0) << ingest.out;
  EXPECT_NE(ingest.out.find("items: 5"), std::string::npos);
  const CliRun bench = cli(s.store() + " bench --dataset seg --model toy_threshold_segmenter"
                                    " --method hirescam --lvm mock");
  ASSERT_EQ(bench.status, 0) << bench.out;
  EXPECT_NE(bench.out.find("(n=5)"), std::string::npos);
  EXPECT_EQ(cli(s.store() + " bench --dataset missing --model m --method x").status, 1);
}

TEST(Cli, MasksRoundTrip) {
  Scratch s;
  const fs::path out = s.dir / "masks.bin";
  const CliRun r = cli("masks --grid 4x4 --n 20 --seed 3 --size 16x16 --out " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;
  const langxai::MaskSet loaded = langxai::load_masks(out);
  const langxai::MaskSet expected = langxai::generate_masks(20, {4, 4}, 0.5, {16, 16}, 3);
  EXPECT_EQ(loaded.values, expected.values);
  EXPECT_EQ(cli("masks --grid 4by4 --n 2 --seed 1 --out " + out.string()).status, 2);
}
