// Drives the tasc executable end to end on a tiny generated corpus.

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#ifndef TASC_CLI_PATH
#error "TASC_CLI_PATH must point at the tasc executable"
#endif

namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string output;
};

Result run(const std::string& args, const fs::path& cwd) {
  const auto log = cwd / "last_run.log";
  const std::string cmd = "cd '" + cwd.string() + "' && '" + TASC_CLI_PATH + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

void write_split(const fs::path& path, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const char* filler[] = {"the", "a", "movie", "plot", "was", "and", "it", "very"};
  std::uniform_int_distribution<int> word(0, 7), len(3, 7);
  std::ofstream out(path);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    std::string text;
    const int t = len(rng);
    const int at = static_cast<int>(rng() % static_cast<std::uint64_t>(t));
    for (int k = 0; k < t; ++k) {
      text += k == at ? (label ? "great " : "awful ") : std::string(filler[word(rng)]) + " ";
    }
    out << nlohmann::json{{"text", text}, {"label", label}}.dump() << '\n';
  }
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "tasc_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_ / "data");
    write_split(dir_ / "data/train.jsonl", 80, 1);
    write_split(dir_ / "data/dev.jsonl", 20, 2);
    write_split(dir_ / "data/test.jsonl", 20, 3);
    nlohmann::json cfg{{"dataset", "toy"},
                       {"train", "data/train.jsonl"},
                       {"dev", "data/dev.jsonl"},
                       {"test", "data/test.jsonl"},
                       {"embedding_dim", 8},
                       {"encoder", "mlp"},
                       {"attention", "dot"},
                       {"tasc", {"none", "lin"}},
                       {"hidden", 8},
                       {"conv_channels", 2},
                       {"max_epochs", 3},
                       {"patience", 3},
                       {"batch_size", 8},
                       {"learning_rate", 0.01},
                       {"seeds", {1}},
                       {"metrics", {"alpha_grad_alpha"}},
                       {"threads", 2},
                       {"output_dir", "out"}};
    std::ofstream(dir_ / "config.json") << cfg.dump(2);
    ::unsetenv("TASC_OUT");
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
};

TEST_F(Cli, FullPipeline) {
  auto r = run("train --config config.json", dir_);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "out/models/toy/mlp-dot-lin/seed1.ckpt"));
  EXPECT_TRUE(fs::exists(dir_ / "out/models/toy/mlp-dot-none/seed1.json"));

  r = run("evaluate --config config.json", dir_);
  ASSERT_EQ(r.code, 0) << r.output;

  r = run("explain --config config.json --metrics alpha,wo --format html", dir_);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "out/explanations/toy/mlp-dot-lin/seed1-wo.jsonl"));
  EXPECT_TRUE(fs::exists(dir_ / "out/explanations/toy/mlp-dot-lin/seed1-wo.html"));

  r = run("faithfulness --config config.json --ig-steps 8 --metrics alpha_grad_alpha,ig", dir_);
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "out/flips/toy/mlp-dot-none/seed1-ig.jsonl"));

  r = run("report --dir out", dir_);
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream md(dir_ / "out/report.md");
  std::stringstream ss;
  ss << md.rdbuf();
  const auto first = ss.str();
  EXPECT_NE(first.find("α∇α"), std::string::npos) << first;
  EXPECT_NE(first.find("Macro-F1"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "out/report.html"));

  // Reports are a pure function of the manifest.
  ASSERT_EQ(run("report --dir out", dir_).code, 0);
  std::ifstream md2(dir_ / "out/report.md");
  std::stringstream ss2;
  ss2 << md2.rdbuf();
  EXPECT_EQ(ss2.str(), first);
}

TEST_F(Cli, OutputDirFromEnvironment) {
  ::setenv("TASC_OUT", (dir_ / "env_out").c_str(), 1);
  const auto r = run("train --config config.json --seed 2", dir_);
  ::unsetenv("TASC_OUT");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(dir_ / "env_out/models/toy/mlp-dot-none/seed2.ckpt"));
  EXPECT_FALSE(fs::exists(dir_ / "out"));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("train --config config.json --bogus", dir_).code, 1);
  EXPECT_EQ(run("frobnicate", dir_).code, 1);
  EXPECT_EQ(run("train", dir_).code, 1);  // no config
  EXPECT_EQ(run("train --config config.json --seed x", dir_).code, 1);

  std::ofstream(dir_ / "bad.json") << R"({"encoder": "lstm", "tasc_variant": "lin"})";
  const auto bad = run("train --config bad.json", dir_);
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("tasc_variant"), std::string::npos) << bad.output;

  std::ofstream(dir_ / "bad2.json") << R"({"attention": "cosine"})";
  const auto bad2 = run("train --config bad2.json", dir_);
  EXPECT_EQ(bad2.code, 1);
  EXPECT_NE(bad2.output.find("attention"), std::string::npos) << bad2.output;

  // Nothing trained yet: a runtime failure, not a configuration error.
  EXPECT_EQ(run("evaluate --config config.json", dir_).code, 2);
}

}  // namespace
