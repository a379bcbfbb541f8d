#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "assaysel/io.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using namespace assaysel;

namespace {

const std::string kSmall = std::string(ASSAYSEL_FIXTURE_DIR) + "/small.cfg";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "assaysel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("assaysel_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string run_dir(const std::string& name = "run") const { return (dir_ / name).string(); }

  std::vector<std::string> stages(const std::string& name = "run") const {
    const auto j = nlohmann::json::parse(io::read_file(dir_ / name / "manifest.json"));
    return j["stages"].get<std::vector<std::string>>();
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, AllIsIdempotent) {
  const auto first = invoke({"--config", kSmall, "--run-dir", run_dir(), "all"});
  ASSERT_EQ(first.code, cli::kOk) << first.err;
  EXPECT_EQ(stages().size(), 7u);
  const auto summary = io::read_file(dir_ / "run" / "results" / "summary.json");
  const auto second = invoke({"--config", kSmall, "--run-dir", run_dir(), "all"});
  ASSERT_EQ(second.code, cli::kOk);
  EXPECT_NE(second.out.find("synth: already complete, skipped"), std::string::npos);
  EXPECT_NE(second.out.find("report: already complete, skipped"), std::string::npos);
  EXPECT_EQ(io::read_file(dir_ / "run" / "results" / "summary.json"), summary);
  // Without --config the run directory's own snapshot is used.
  EXPECT_EQ(invoke({"--run-dir", run_dir(), "report"}).code, cli::kOk);
}

TEST_F(CliTest, StageBeforeItsInputExitsWithMissingStage) {
  ASSERT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(), "synth"}).code, cli::kOk);
  const auto r = invoke({"--config", kSmall, "--run-dir", run_dir(), "evaluate"});
  EXPECT_EQ(r.code, cli::kMissingStage);
  EXPECT_NE(r.err.find("trak"), std::string::npos);
}

TEST_F(CliTest, SeedOverrideIsReproducible) {
  for (const char* name : {"a", "b"}) {
    ASSERT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(name), "--seed", "7", "all"}).code, cli::kOk);
  }
  EXPECT_EQ(io::read_file(dir_ / "a" / "results" / "summary.json"),
            io::read_file(dir_ / "b" / "results" / "summary.json"));
}

TEST_F(CliTest, ForceInvalidatesLaterStages) {
  ASSERT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(), "all"}).code, cli::kOk);
  const auto r = invoke({"--config", kSmall, "--run-dir", run_dir(), "--force", "finetune"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(stages(), (std::vector<std::string>{"synth", "trak", "finetune"}));
  EXPECT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(), "report"}).code, cli::kMissingStage);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  fs::create_directories(dir_);
  io::write_file(dir_ / "bad.cfg", "[run]\nsed = 1\n");
  const auto r = invoke({"--config", (dir_ / "bad.cfg").string(), "--run-dir", run_dir(), "synth"});
  EXPECT_EQ(r.code, cli::kConfigError);
  EXPECT_NE(r.err.find("sed"), std::string::npos);
  EXPECT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(), "--jobs", "0", "synth"}).code, cli::kConfigError);
  EXPECT_EQ(invoke({"--config", kSmall, "--run-dir", run_dir(), "frobnicate"}).code, cli::kConfigError);
  EXPECT_EQ(invoke({"--run-dir", run_dir("nothing"), "synth"}).code, cli::kConfigError);
}

TEST_F(CliTest, MissingInputFilesExitThree) {
  fs::create_directories(dir_);
  io::write_file(dir_ / "files.cfg",
                 "[data]\nsource = files\nassays = nope.csv\nmeasurements = nope2.csv\nembeddings = e.csv\n");
  EXPECT_EQ(invoke({"--config", (dir_ / "files.cfg").string(), "--run-dir", run_dir(), "synth"}).code,
            cli::kDataError);
}
