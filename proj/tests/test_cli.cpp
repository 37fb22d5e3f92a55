#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "signkit/common.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the CLI inside 'cwd', capturing stdout and stderr.
CliRun cli(const std::string& args, const fs::path& cwd) {
  const fs::path so = cwd / ".stdout", se = cwd / ".stderr";
  const std::string cmd =
      "cd '" + cwd.string() + "' && '" + SIGNKIT_CLI + "' " + args + " >'" + so.string() + "' 2>'" + se.string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = signkit::io::read_file(so.string());
  r.err = signkit::io::read_file(se.string());
  fs::remove(so);
  fs::remove(se);
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("signkit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const std::string& name, const std::string& text) { signkit::io::write_file((dir_ / name).string(), text); }

  fs::path dir_;
};

const char* kSmallSynth =
    R"({"n_classes": 3, "sequences_per_class": 10, "min_frames": 10, "max_frames": 14, "seed": 4})";
const char* kSmallTrain = R"({"lr0": 0.02, "max_epochs": 4, "hidden": 6, "seeds": [1, 2]})";

}  // namespace

TEST_F(Cli, NoArgumentsPrintsUsageAndFails) {
  const CliRun r = cli("", dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Subcommands"), std::string::npos);
  EXPECT_NE(r.err.find("error[usage]"), std::string::npos);
}

TEST_F(Cli, VersionListsSchemas) {
  const CliRun r = cli("--version", dir_);
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("signkit_checkpoint_v1"), std::string::npos);
  EXPECT_NE(r.out.find("signkit_dataset_v1"), std::string::npos);
}

TEST_F(Cli, DistinctExitCodes) {
  EXPECT_EQ(cli("train --dataset d --out o --no-such-flag", dir_).code, 2);
  const CliRun missing = cli("train --dataset missing_dir --out o", dir_);
  EXPECT_EQ(missing.code, 3);
  EXPECT_EQ(missing.err.rfind("error[io]: ", 0), 0u);
  EXPECT_EQ(std::count(missing.err.begin(), missing.err.end(), '\n'), 1);

  write("synth.json", kSmallSynth);
  ASSERT_EQ(cli("synth-data --config synth.json --out d", dir_).code, 0);
  write("bad.json", R"({"schema": "signkit_train_config_v0"})");
  const CliRun schema = cli("train --dataset d --config bad.json --out o", dir_);
  EXPECT_EQ(schema.code, 4);
  EXPECT_EQ(schema.err.rfind("error[schema_mismatch]: ", 0), 0u);

  write("one_class.json", R"({"n_classes": 1})");
  const CliRun invalid = cli("synth-data --config one_class.json --out e", dir_);
  EXPECT_EQ(invalid.code, 5);
  EXPECT_EQ(invalid.err.rfind("error[invalid_argument]: ", 0), 0u);
}

TEST_F(Cli, AblateWritesAllRowsDeterministically) {
  write("synth.json", kSmallSynth);
  write("train.json", kSmallTrain);
  ASSERT_EQ(cli("synth-data --config synth.json --out d", dir_).code, 0);
  ASSERT_EQ(cli("ablate --dataset d/dataset.json --config train.json --out r1", dir_).code, 0);
  ASSERT_EQ(cli("ablate --dataset d --config train.json --out r2 --jobs 2", dir_).code, 0);
  const std::string a = signkit::io::read_file((dir_ / "r1/results.csv").string());
  EXPECT_EQ(a, signkit::io::read_file((dir_ / "r2/results.csv").string()));
  for (const char* row : {"\nall,88,", "\nno_face,69,", "\nno_hands,64,", "\nno_body,53,"})
    EXPECT_NE(a.find(row), std::string::npos) << row;
  EXPECT_TRUE(fs::exists(dir_ / "r1/results.txt"));
}

TEST_F(Cli, TrainEvalRoundTrip) {
  write("synth.json", kSmallSynth);
  write("train.json", kSmallTrain);
  ASSERT_EQ(cli("synth-data --config synth.json --format jsonl --out d", dir_).code, 0);
  ASSERT_EQ(cli("train --dataset d --config train.json --mask no_face --seed 3 --out t", dir_).code, 0);
  for (const char* f : {"checkpoint.bin", "history.csv", "metrics.json"}) EXPECT_TRUE(fs::exists(dir_ / "t" / f)) << f;
  const CliRun e = cli("eval --dataset d --checkpoint t/checkpoint.bin --format csv --out ev", dir_);
  EXPECT_EQ(e.code, 0);
  EXPECT_NE(e.out.find("all,"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "ev/eval.csv"));
}

TEST_F(Cli, FitAndExtractStayInsideOut) {
  ASSERT_EQ(cli("synth-model --seed 2 --frames 6 --out m", dir_).code, 0);
  ASSERT_EQ(cli(std::string("fit --model m/model.json --dataset m/frames --keymap ") + SIGNKIT_ASSET_DIR +
                    "/toy_keymap.json --schedule " + SIGNKIT_ASSET_DIR + "/default_schedule.json --out f",
                dir_)
                .code,
            0);
  ASSERT_EQ(cli("extract --dataset f/fit.jsonl --model m/model.json --mask no_hands --out x", dir_).code, 0);
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(dir_)) {
    (void)e;
    ++entries;
  }
  EXPECT_EQ(entries, 3u);  // m, f, x
  const std::string features = signkit::io::read_file((dir_ / "x/features.jsonl").string());
  EXPECT_NE(features.find("\"D\":64"), std::string::npos);
  EXPECT_EQ(cli("fit --model m/model.json --dataset nowhere --out g", dir_).code, 3);
}

TEST_F(Cli, GradcheckPasses) {
  const CliRun r = cli("gradcheck --seed 7 --points 3", dir_);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}
