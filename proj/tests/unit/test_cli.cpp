#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"

namespace {

namespace fs = std::filesystem;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = mtms::testkit::scratch_dir(std::string("cli_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    out_ = dir_ / "out";
    config_ = dir_ / "config.json";
    std::ofstream(config_) << mtms::testkit::tiny_config_json().dump(2);
  }

  int run(const std::string& args) const {
    const std::string cmd = "MTMS_OUT='" + out_.string() + "' '" MTMS_CLI_PATH "' " + args + " >>'" +
                            (dir_ / "stdout.txt").string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string cfg() const { return "--config '" + config_.string() + "'"; }

  static nlohmann::json read(const fs::path& p) {
    std::ifstream in(p);
    return nlohmann::json::parse(in);
  }

  fs::path dir_, out_, config_;
};

TEST_F(Cli, FullPipeline) {
  ASSERT_EQ(run("gen-data " + cfg()), 0);
  ASSERT_EQ(run("train-teachers " + cfg()), 0);
  ASSERT_EQ(run("train-student " + cfg()), 0);
  ASSERT_EQ(run("evaluate " + cfg()), 0);
  ASSERT_EQ(run("export-embeddings " + cfg()), 0);

  EXPECT_TRUE(fs::exists(out_ / "data" / "manifest.json"));
  EXPECT_TRUE(fs::exists(out_ / "teachers" / "T_DA.json"));
  EXPECT_TRUE(fs::exists(out_ / "students" / "student_L4.json"));
  EXPECT_TRUE(fs::exists(out_ / "students" / "aggregator_L8.json"));
  EXPECT_TRUE(fs::exists(out_ / "embeddings" / "e_kd_L8" / "target.csv"));
  EXPECT_TRUE(fs::exists(out_ / "embeddings" / "T_bright" / "grey.csv"));
  EXPECT_TRUE(fs::exists(out_ / "reports" / "evaluate.csv"));

  const auto report = read(out_ / "reports" / "evaluate.json");
  std::vector<std::string> models;
  for (const auto& m : report.at("models")) models.push_back(m.at("model"));
  EXPECT_EQ(models, (std::vector<std::string>{"T_bright", "T_grey", "T_DA", "student", "student"}));
  EXPECT_EQ(read(out_ / "effective_config.json").at("seed"), 11);

  std::ifstream log(out_ / "log.txt");
  std::string text((std::istreambuf_iterator<char>(log)), std::istreambuf_iterator<char>());
  EXPECT_NE(text.find("evaluate ok"), std::string::npos);
  EXPECT_NE(text.find("wall_clock_s="), std::string::npos);
}

TEST_F(Cli, EvaluateIsReproducible) {
  ASSERT_EQ(run("gen-data " + cfg()), 0);
  ASSERT_EQ(run("train-teachers " + cfg()), 0);
  ASSERT_EQ(run("train-student " + cfg() + " --labelled-size 8"), 0);
  ASSERT_EQ(run("evaluate " + cfg() + " --labelled-size 8"), 0);
  std::ifstream a(out_ / "reports" / "evaluate.json");
  const std::string first((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  ASSERT_EQ(run("evaluate " + cfg() + " --labelled-size 8 --force"), 0);
  std::ifstream b(out_ / "reports" / "evaluate.json");
  const std::string second((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  EXPECT_TRUE(first == second);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  EXPECT_EQ(run("gen-data"), 2);
  EXPECT_EQ(run("gen-data --config '" + (dir_ / "absent.json").string() + "'"), 2);
  EXPECT_EQ(run("no-such-command " + cfg()), 2);
  EXPECT_EQ(run("gen-data " + cfg() + " --jobs 0"), 2);
  EXPECT_EQ(run("train-student " + cfg() + " --labelled-size 5"), 2);
  auto j = mtms::testkit::tiny_config_json();
  j["unexpected"] = 1;
  std::ofstream(config_) << j.dump();
  EXPECT_EQ(run("gen-data " + cfg()), 2);
  EXPECT_FALSE(fs::exists(out_ / "data"));
}

TEST_F(Cli, MissingPrerequisitesExitThree) {
  EXPECT_EQ(run("train-teachers " + cfg()), 3);
  ASSERT_EQ(run("gen-data " + cfg()), 0);
  EXPECT_EQ(run("train-student " + cfg()), 3);
  EXPECT_EQ(run("evaluate " + cfg()), 3);
  // Data generated under another seed no longer matches the configuration.
  EXPECT_EQ(run("train-teachers " + cfg() + " --seed 12"), 3);
}

TEST_F(Cli, RefusesToOverwriteWithoutForce) {
  ASSERT_EQ(run("gen-data " + cfg()), 0);
  const auto before = fs::last_write_time(out_ / "data" / "manifest.json");
  EXPECT_EQ(run("gen-data " + cfg()), 4);
  EXPECT_EQ(fs::last_write_time(out_ / "data" / "manifest.json"), before);
  EXPECT_FALSE(fs::exists(out_ / "gen-data.incomplete"));
  EXPECT_EQ(run("gen-data " + cfg() + " --force"), 0);
}

TEST_F(Cli, CrossValidationCommand) {
  ASSERT_EQ(run("cv " + cfg() + " --folds 2 --labelled-size 8"), 0);
  const auto report = read(out_ / "reports" / "cv.json");
  EXPECT_EQ(report.at("fold_seeds"), nlohmann::json::array({11, 12}));
  EXPECT_EQ(run("gen-data " + cfg() + " --folds 2"), 2);
}

}  // namespace
