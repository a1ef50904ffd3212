#include "ife/io.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>

namespace fs = std::filesystem;
using ife::io::json;

namespace {

const std::string kCli = IFE_CLI_PATH;

class Cli : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("ife_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    ASSERT_EQ(run("simulate --n 30 --t 30 --reps 1 --dump-rep 0 --dump-dir " + q(dir_ / "dump") + " --out " +
                  q(dir_ / "sim.json")),
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string q(const fs::path& p) { return "'" + p.string() + "'"; }
  static int run(const std::string& args) {
    const int st = std::system(("'" + kCli + "' " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }
  static fs::path path(const std::string& name) { return dir_ / name; }
  static std::string data() { return q(dir_ / "dump" / "data.json"); }

  static json result(const fs::path& p) {
    json r = ife::io::load_json(p.string()).at("result");
    r.erase("data");
    return r;
  }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, PipelineMatchesStageCommands) {
  const fs::path s = path("stages");
  fs::create_directories(s);
  const int rpipe = run("pipeline --data " + data() + " --out-dir " + q(path("pipe")));
  ASSERT_TRUE(rpipe == 0 || rpipe == 4);
  ASSERT_EQ(run("estimate --data " + data() + " --out " + q(s / "fit.json")), 0);
  ASSERT_EQ(run("transform --data " + data() + " --out " + q(s / "tr" / "transformed.json")), 0);
  const std::string tman = q(s / "tr" / "transformed.json");
  const int rt = run("estimate --data " + tman + " --max-iter 100 --out " + q(s / "fit_t.json"));
  ASSERT_TRUE(rt == 0 || rt == 4);
  const int rp = run("estimate --data " + tman + " --warm " + q(s / "fit_t.json") + " --max-iter 100 --out " +
                     q(s / "fit_pt.json"));
  ASSERT_TRUE(rp == 0 || rp == 4);
  ASSERT_EQ(run("threshold --fit " + q(s / "fit_t.json") + " --data " + tman + " --out " + q(s / "thr.json")), 0);
  ASSERT_EQ(run("twostage --fit " + q(s / "fit_pt.json") + " --thr " + q(s / "thr.json") + " --data " + data() +
                " --out " + q(s / "ts1.json")),
            0);
  const int rb = run("twostage --fit " + q(s / "fit_pt.json") + " --thr " + q(s / "thr.json") + " --data " + data() +
                     " --method bai --out " + q(s / "ts2.json"));
  ASSERT_TRUE(rb == 0 || rb == 4);
  const fs::path p = path("pipe");
  EXPECT_EQ(result(s / "fit.json"), result(p / "fit.json"));
  EXPECT_EQ(result(s / "fit_t.json"), result(p / "fit_transformed.json"));
  EXPECT_EQ(result(s / "fit_pt.json"), result(p / "fit_pt.json"));
  EXPECT_EQ(result(s / "thr.json"), result(p / "thr.json"));
  EXPECT_EQ(result(s / "ts1.json"), result(p / "ts_annihilated.json"));
  EXPECT_EQ(result(s / "ts2.json"), result(p / "ts_bai.json"));
}

TEST_F(Cli, RerunsAreByteIdentical) {
  ASSERT_EQ(run("estimate --data " + data() + " --out " + q(path("a.json"))), 0);
  ASSERT_EQ(run("estimate --data " + data() + " --out " + q(path("b.json"))), 0);
  EXPECT_EQ(ife::io::read_file(path("a.json").string()), ife::io::read_file(path("b.json").string()));
  ASSERT_EQ(run("simulate --n 12 --t 12 --reps 3 --seed 4 --out " + q(path("s1.json"))), 0);
  ASSERT_EQ(run("simulate --n 12 --t 12 --reps 3 --seed 4 --out " + q(path("s2.json"))), 0);
  EXPECT_EQ(ife::io::read_file(path("s1.json").string()), ife::io::read_file(path("s2.json").string()));
}

TEST_F(Cli, InvalidInputExitsTwo) {
  ife::io::write_file(path("bad/y.csv").string(), "1,2\n3\n");
  ife::io::write_file(path("bad/data.json").string(), R"({"y": "y.csv"})");
  EXPECT_EQ(run("estimate --data " + q(path("bad/data.json")) + " --out " + q(path("bad/fit.json"))), 2);
  EXPECT_EQ(run("estimate --data " + data() + " --rho 2 --out " + q(path("x.json"))), 2);
  EXPECT_EQ(run("estimate --data " + data() + " --no-such-flag --out " + q(path("x.json"))), 2);
  ife::io::write_file(path("bad.ini").string(), "[solver]\ntoll = 1\n");
  EXPECT_EQ(run("estimate --config " + q(path("bad.ini")) + " --data " + data() + " --out " + q(path("x.json"))), 2);
  EXPECT_EQ(run("estimate --data " + q(path("missing.json")) + " --out " + q(path("x.json"))), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, NonConvergenceExitsFourAndWritesOutput) {
  EXPECT_EQ(run("estimate --data " + data() + " --max-iter 1 --out " + q(path("nc.json"))), 4);
  const json r = ife::io::load_json(path("nc.json").string()).at("result");
  EXPECT_FALSE(r.at("converged").get<bool>());
  EXPECT_EQ(r.at("iterations").get<int>(), 1);
}
