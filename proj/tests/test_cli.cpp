#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("samrob_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static fs::path path(const std::string& name) { return dir_ / name; }

  static Outcome run(const std::string& args) {
    const fs::path err = path("stderr.txt");
    const std::string cmd = std::string(SAMROB_CLI_PATH) + " " + args + " >/dev/null 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  static std::size_t lines(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
  }

  static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

  // scheme -> dataset -> model -> report under a name prefix.
  static void pipeline(const std::string& tag) {
    const std::string p = dir_.string() + "/" + tag;
    write(path("small.json"), R"({"uniform_counts": [8, 8], "hidden": [8], "batch_size": 32})");
    ASSERT_EQ(run("gen-scheme --n-per-shell 12,12 --b-values 1000,2000 --seed 1 --out " + p + "s.txt").code, 0);
    ASSERT_EQ(run("synth --scheme " + p + "s.txt --dims 20x20 --seed 2 --out " + p + "d.bin").code, 0);
    ASSERT_EQ(run("train --dataset " + p + "d.bin --config " + path("small.json").string() + " --epochs 3 --out-model " +
                  p + "m.bin --log " + p + "log.csv")
                  .code,
              0);
    ASSERT_EQ(run("evaluate --model " + p + "m.bin --dataset " + p + "d.bin --protocol ss --seeds 0-2 --out-csv " + p +
                  "r.csv")
                  .code,
              0);
    ASSERT_EQ(run("fit-sh --dataset " + p + "d.bin --order 2 --out " + p + "c.bin").code, 0);
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

} // namespace

TEST_F(Cli, PipelineOutputsAndDeterminism) {
  pipeline("a_");
  pipeline("b_");
  for (const char* f : {"s.txt", "d.bin", "m.bin", "log.csv", "r.csv", "c.bin"}) {
    const std::string a = slurp(path(std::string("a_") + f)), b = slurp(path(std::string("b_") + f));
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, b) << f;
  }
  EXPECT_EQ(lines(path("a_s.txt")), 24u);
  EXPECT_EQ(lines(path("a_log.csv")), 4u);
  EXPECT_EQ(lines(path("a_r.csv")), 1u + 3u * 4u);
  EXPECT_EQ(slurp(path("a_log.csv")).rfind("epoch,loss,l_r,l_u,l_ru\n", 0), 0u);
}

TEST_F(Cli, UsageErrorsExitOne) {
  const Outcome r = run("gen-scheme --n-per-shell 3 --b-values 1000 --out " + path("x.txt").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("too few directions"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("x.txt")));

  const Outcome missing = run("evaluate --model nowhere.bin --dataset nowhere.bin --protocol ss --out-csv " +
                          path("r.csv").string());
  EXPECT_EQ(missing.code, 1);
  EXPECT_FALSE(fs::exists(path("r.csv")));

  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gen-scheme --n-per-shell 10 --b-values 1000,2000 --out " + path("y.txt").string()).code, 1);
  EXPECT_EQ(run("synth --scheme nowhere.txt --out " + path("d.bin").string()).code, 1);
}

TEST_F(Cli, FormatAndNumericalErrors) {
  pipeline("c_");
  write(path("junk.bin"), "not a container at all");
  EXPECT_EQ(run("fit-sh --dataset " + path("junk.bin").string() + " --out " + path("cc.bin").string()).code, 2);
  EXPECT_EQ(run("evaluate --model " + path("c_d.bin").string() + " --dataset " + path("c_d.bin").string() +
                " --protocol ss --out-csv " + path("rr.csv").string())
                .code,
            2);
  write(path("bad.json"), "{\"epochs\": ");
  EXPECT_EQ(run("train --dataset " + path("c_d.bin").string() + " --config " + path("bad.json").string() +
                " --out-model " + path("mm.bin").string())
                .code,
            2);
  write(path("diverge.json"), R"({"uniform_counts": [8, 8], "hidden": [8], "learning_rate": 1e300})");
  const Outcome div = run("train --dataset " + path("c_d.bin").string() + " --config " + path("diverge.json").string() +
                      " --epochs 3 --out-model " + path("mm.bin").string());
  EXPECT_EQ(div.code, 3);
  EXPECT_FALSE(fs::exists(path("mm.bin")));
}
