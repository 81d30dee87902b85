#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "midibert/cli.h"
#include "test_util.h"

using namespace midibert;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(MIDIBERT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

size_t csv_rows(const fs::path& p) {
  std::ifstream in(p);
  size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n - 1;
}

class Cli : public ::testing::Test {
 protected:
  // Each test gets its own directory so that ctest can run them in parallel.
  void SetUp() override {
    dir_ = fixtures::temp_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    ASSERT_EQ(run("synth --task melody --pieces 20 --bars 4 --seed 3 --out " + (dir_ / "mel_raw").string()), 0);
    ASSERT_EQ(run("synth --task pretrain --pieces 10 --bars 4 --seed 4 --out " + (dir_ / "pop_raw").string()), 0);
  }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run(""), kExitUsage);
  EXPECT_EQ(run("frobnicate"), kExitUsage);
  EXPECT_EQ(run("synth --task melody"), kExitUsage);
  EXPECT_EQ(run("synth --task nope --out " + (dir_ / "x").string()), kExitUsage);
  EXPECT_EQ(run("prepare --midi-dir " + (dir_ / "mel_raw/midi").string() + " --task melody --out " +
                (dir_ / "nolabels").string()),
            kExitUsage);
  EXPECT_FALSE(fs::exists(dir_ / "nolabels"));
  EXPECT_EQ(run("--version"), kExitOk);
}

TEST_F(Cli, IoErrors) {
  EXPECT_EQ(run("prepare --midi-dir " + (dir_ / "missing").string() + " --task pretrain --out " + (dir_ / "y").string()),
            kExitIo);
  EXPECT_EQ(run("eval --data " + (dir_ / "missing").string() + " --checkpoint x.mbpt --out " + (dir_ / "y").string()),
            kExitIo);
}

TEST_F(Cli, PrepareIsReproducible) {
  const std::string base = "prepare --midi-dir " + (dir_ / "mel_raw/midi").string() + " --labels " +
                           (dir_ / "mel_raw/note_labels.csv").string() + " --task melody --seed 1 --out ";
  ASSERT_EQ(run(base + (dir_ / "mel_a").string()), 0);
  ASSERT_EQ(run(base + (dir_ / "mel_b").string()), 0);
  for (const char* f : {"chunks.jsonl", "pieces.jsonl", "manifest.csv"}) {
    EXPECT_EQ(slurp(dir_ / "mel_a" / f), slurp(dir_ / "mel_b" / f)) << f;
  }
  EXPECT_EQ(csv_rows(dir_ / "mel_a/manifest.csv"), 20u);
  const auto rc = nlohmann::json::parse(slurp(dir_ / "mel_a/run_config.json"));
  EXPECT_EQ(rc["command"], "prepare");
  EXPECT_EQ(rc["version"], kToolkitVersion);
  EXPECT_EQ(rc["inputs"].size(), 21u);
}

TEST_F(Cli, BadFileSkippedOrStrict) {
  const fs::path midi = dir_ / "mixed_midi";
  fs::create_directories(midi);
  for (const auto& e : fs::directory_iterator(dir_ / "mel_raw/midi")) fs::copy_file(e.path(), midi / e.path().filename());
  // one label short for the first piece: drop its last row
  std::ifstream in(dir_ / "mel_raw/note_labels.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  const std::string first_id = lines.at(1).substr(0, lines[1].find(','));
  size_t last = 1;
  while (last + 1 < lines.size() && lines[last + 1].starts_with(first_id + ",")) ++last;
  std::ofstream out(dir_ / "short_labels.csv");
  for (size_t i = 0; i < lines.size(); ++i) {
    if (i != last) out << lines[i] << '\n';
  }
  out.close();
  const std::string base = "prepare --midi-dir " + midi.string() + " --labels " + (dir_ / "short_labels.csv").string() +
                           " --task melody --out ";
  ASSERT_EQ(run(base + (dir_ / "skipped").string()), 0);
  EXPECT_EQ(csv_rows(dir_ / "skipped/manifest.csv"), 19u);
  EXPECT_NE(slurp(dir_ / "skipped/prepare_report.txt").find(first_id), std::string::npos);
  EXPECT_EQ(run(base + (dir_ / "strict").string() + " --strict"), kExitData);

  std::ofstream(midi / "garbage.mid") << "not a midi file";
  EXPECT_EQ(run("prepare --midi-dir " + midi.string() + " --labels " + (dir_ / "mel_raw/note_labels.csv").string() +
                " --task melody --strict --out " + (dir_ / "strict2").string()),
            kExitData);
}

TEST_F(Cli, CorpusSelectionChangesManifest) {
  ASSERT_EQ(run("prepare --midi-dir " + (dir_ / "mel_raw/midi").string() + " --labels " +
                (dir_ / "mel_raw/note_labels.csv").string() + " --task melody --out " + (dir_ / "mel").string()),
            0);
  ASSERT_EQ(run("prepare --midi-dir " + (dir_ / "pop_raw/midi").string() + " --task pretrain --out " +
                (dir_ / "pop").string()),
            0);
  std::map<std::string, size_t> counts;
  for (const char* sel : {"all", "train-splits", "pretrain-only"}) {
    const fs::path out = dir_ / (std::string("pt_") + sel);
    ASSERT_EQ(run("pretrain --data " + (dir_ / "mel").string() + " --data " + (dir_ / "pop").string() +
                  " --corpus " + sel + " --epochs 1 --batch-size 8 --out " + out.string()),
              0);
    counts[sel] = csv_rows(out / "pretrain_manifest.csv");
  }
  EXPECT_EQ(counts["all"], 30u);
  EXPECT_EQ(counts["train-splits"], 16u + 10u);
  EXPECT_EQ(counts["pretrain-only"], 10u);

  // fine-tune, evaluate twice, compare
  const fs::path ft = dir_ / "ft";
  ASSERT_EQ(run("finetune --data " + (dir_ / "mel").string() + " --task melody --checkpoint " +
                (dir_ / "pt_all/best.mbpt").string() + " --epochs 1 --batch-size 8 --out " + ft.string()),
            0);
  EXPECT_TRUE(fs::exists(ft / "test/metrics.json"));
  const std::string ev = "eval --data " + (dir_ / "mel").string() + " --checkpoint " + (ft / "best.mbpt").string() +
                         " --split test --out ";
  ASSERT_EQ(run(ev + (dir_ / "ev1").string()), 0);
  ASSERT_EQ(run(ev + (dir_ / "ev2").string()), 0);
  EXPECT_EQ(slurp(dir_ / "ev1/metrics.json"), slurp(dir_ / "ev2/metrics.json"));
  const auto m = nlohmann::json::parse(slurp(dir_ / "ev1/metrics.json"));
  EXPECT_TRUE(m["extra"].contains("skyline_binary_accuracy"));
  EXPECT_TRUE(m["extra"].contains("majority_baseline_accuracy"));

  // exactly one of --checkpoint / --no-pretrain
  EXPECT_EQ(run("finetune --data " + (dir_ / "mel").string() + " --task melody --out " + (dir_ / "z").string()),
            kExitUsage);
  // the pre-training checkpoint has no melody head
  EXPECT_EQ(run("eval --data " + (dir_ / "mel").string() + " --checkpoint " + (dir_ / "pt_all/best.mbpt").string() +
                " --out " + (dir_ / "z").string()),
            kExitData);
}

TEST_F(Cli, SkylineScoresPerfectOnSynthetic) {
  ASSERT_EQ(run("prepare --midi-dir " + (dir_ / "mel_raw/midi").string() + " --labels " +
                (dir_ / "mel_raw/note_labels.csv").string() + " --task melody --out " + (dir_ / "mel_s").string()),
            0);
  ASSERT_EQ(run("skyline --data " + (dir_ / "mel_s").string() + " --split all --out " + (dir_ / "sky").string()), 0);
  const auto j = nlohmann::json::parse(slurp(dir_ / "sky/metrics.json"));
  EXPECT_EQ(j["binary_accuracy"].get<double>(), 1.0);
}

TEST(Sha256, KnownDigest) {
  const auto dir = fixtures::temp_dir("sha");
  std::ofstream(dir / "abc.txt", std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file((dir / "abc.txt").string()),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
