#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "susx/susx.hpp"
#include "test_support.hpp"

namespace susx {
namespace {

namespace fs = std::filesystem;
using testing::Rng;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("susx_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path path(const std::string& name) const { return dir_ / name; }
  std::string arg(const std::string& name) const { return "'" + path(name).string() + "'"; }

  RunResult run(const std::string& args) const {
    const std::string cmd = std::string("'") + SUSX_BIN + "' " + args + " >" + arg("stdout") + " 2>" + arg("stderr");
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(path("stdout"));
    r.err = slurp(path("stderr"));
    return r;
  }

  Report report_of(const std::string& text) const {
    std::istringstream in(text);
    return parse_report(in);
  }

  void write_bank(const std::string& name, const EmbeddingBank& b) const { save_bank(b, path(name)); }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream out(path(name), std::ios::binary);
    out << text;
  }

  // Two-class toy problem: classifier rows e1 and e2, a few labelled rows
  // near each axis.
  void write_toy() const {
    write_bank("cls.bank", classifier_to_bank({Matrix{{1, 0, 0}, {0, 1, 0}}, ClassVocabulary({"cat", "dog"})}, {}));
    auto test = testing::unit_bank(Matrix{{1, 0, 0}, {0.6, 0.8, 0}, {0, 1, 0}, {0.8, 0, 0.6}},
                                   std::vector<ClassIndex>{0, 0, 1, 0});
    test.meta["dataset"] = "toy";
    write_bank("test.bank", test);
    write_bank("support.bank", testing::unit_bank(Matrix{{1, 0, 0}, {0.6, 0, 0.8}, {0, 1, 0}, {0, 0.6, 0.8}},
                                                  std::vector<ClassIndex>{0, 0, 1, 1}));
  }

  fs::path dir_;
};

TEST_F(Cli, NormalizeWritesUnitRowsAndIsByteStable) {
  EmbeddingBank b;
  b.data = Matrix{{3, 4}, {0, 2}};
  write_bank("raw.bank", b);
  auto r = run("normalize " + arg("raw.bank") + " --out " + arg("n1.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto n = load_bank(path("n1.bank"));
  EXPECT_TRUE(n.normalized);
  EXPECT_NEAR(n.data(0, 0), 0.6, 1e-7);
  EXPECT_EQ(n.meta.at("normalization"), "l2");

  r = run("normalize " + arg("n1.bank") + " --out " + arg("n2.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("n1.bank")), slurp(path("n2.bank")));
}

TEST_F(Cli, NormalizeReportsDegenerateRow) {
  EmbeddingBank b;
  b.data = Matrix{{1, 0}, {0, 0}, {1, 1}};
  write_bank("raw.bank", b);
  const auto r = run("normalize " + arg("raw.bank") + " --out " + arg("n.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "DegenerateRow:1\n");
  EXPECT_FALSE(fs::exists(path("n.bank")));
}

TEST_F(Cli, MalformedBankIsReported) {
  write_text("junk.bank", "not a bank at all, definitely not");
  const auto r = run("normalize " + arg("junk.bank") + " --out " + arg("n.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("MalformedHeader", 0), 0u) << r.err;
}

TEST_F(Cli, BuildClassifierFromPrompts) {
  write_bank("prompts.bank", testing::unit_bank(Matrix{{1, 0}, {0.6, 0.8}, {0, 1}}, std::vector<ClassIndex>{0, 0, 1}));
  write_text("vocab.txt", "cat\ndog\n");
  auto r = run("build-classifier " + arg("prompts.bank") + " " + arg("vocab.txt") + " --out " + arg("cls.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto w = classifier_from_bank(load_bank(path("cls.bank")));
  EXPECT_EQ(w.vocabulary[1], "dog");
  EXPECT_NEAR(w.weights(0, 0), 0.8 / std::sqrt(0.8 * 0.8 + 0.4 * 0.4), 1e-6);

  write_text("vocab3.txt", "cat\ndog\nbird\n");
  r = run("build-classifier " + arg("prompts.bank") + " " + arg("vocab3.txt") + " --out " + arg("c3.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("EmptyClass", 0), 0u) << r.err;
}

TEST_F(Cli, RetrieveTopNAndDedup) {
  write_toy();
  write_bank("cand.bank", testing::unit_bank(Matrix{{1, 0, 0}, {0, 1, 0}, {0.6, 0.8, 0}, {0.8, 0.6, 0}}));
  auto r = run("retrieve " + arg("cand.bank") + " --classifier " + arg("cls.bank") + " --n-per-class 2 --out " +
               arg("s.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = load_bank(path("s.bank"));
  EXPECT_EQ(*s.labels, (std::vector<ClassIndex>{0, 0, 1, 1}));
  EXPECT_EQ(*s.ids, (std::vector<std::string>{"0", "3", "1", "2"}));
  EXPECT_EQ(s.meta.at("source"), "retrieval");
  EXPECT_EQ(s.meta.at("dedup"), "false");

  r = run("retrieve " + arg("cand.bank") + " --classifier " + arg("cls.bank") + " --n-per-class 3 --dedup --out " +
          arg("d.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("InsufficientCandidates", 0), 0u) << r.err;

  r = run("retrieve " + arg("cand.bank") + " --classifier " + arg("cls.bank") + " --n-per-class 5 --out " +
          arg("big.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("InsufficientCandidates", 0), 0u) << r.err;
}

TEST_F(Cli, SampleIsSeeded) {
  write_toy();
  Rng rng(3);
  std::vector<ClassIndex> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(static_cast<ClassIndex>(i % 2));
  write_bank("pool.bank", testing::unit_bank(testing::random_unit_rows(rng, 20, 3), labels));
  const std::string base = "sample " + arg("pool.bank") + " --classifier " + arg("cls.bank") + " --k-shot 3 --seed 9 --out ";
  ASSERT_EQ(run(base + arg("a.bank")).code, 0);
  ASSERT_EQ(run(base + arg("b.bank")).code, 0);
  EXPECT_EQ(slurp(path("a.bank")), slurp(path("b.bank")));
  EXPECT_EQ(load_bank(path("a.bank")).count(), 6u);
}

TEST_F(Cli, PredictZeroShotNeedsNoSupport) {
  write_toy();
  const auto r = run("predict --test-bank " + arg("test.bank") + " --classifier " + arg("cls.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report_of(r.out);
  EXPECT_EQ(*rep.find("mode"), "zs");
  EXPECT_EQ(*rep.find("dataset"), "toy");
  EXPECT_EQ(*rep.find("test_count"), "4");
  // Row (0.6, 0.8) is closer to dog, so 3 of 4 are right.
  EXPECT_EQ(*rep.find("accuracy"), "0.75");
  EXPECT_EQ(rep.find("alpha"), nullptr);
  EXPECT_EQ(rep.find("elapsed_ms"), nullptr);
  EXPECT_EQ(rep.find("test_bank_sha256")->size(), 64u);
}

TEST_F(Cli, PredictTipXWithZeroWeightsMatchesZeroShot) {
  write_toy();
  const auto zs = run("predict --test-bank " + arg("test.bank") + " --classifier " + arg("cls.bank"));
  const auto tx = run("predict --mode tipx --alpha 0 --gamma 0 --test-bank " + arg("test.bank") + " --classifier " +
                      arg("cls.bank") + " --support-bank " + arg("support.bank"));
  ASSERT_EQ(tx.code, 0) << tx.err;
  EXPECT_EQ(*report_of(tx.out).find("accuracy"), *report_of(zs.out).find("accuracy"));
  EXPECT_EQ(*report_of(tx.out).find("support_count"), "4");
}

TEST_F(Cli, PredictReportIsDeterministic) {
  write_toy();
  const std::string cmd = "predict --mode tipx --alpha 2 --beta 5 --gamma 1 --test-bank " + arg("test.bank") +
                          " --classifier " + arg("cls.bank") + " --support-bank " + arg("support.bank") + " --out ";
  ASSERT_EQ(run(cmd + arg("r1.txt")).code, 0);
  ASSERT_EQ(run("--threads 3 " + cmd + arg("r2.txt")).code, 0);
  EXPECT_EQ(slurp(path("r1.txt")), slurp(path("r2.txt")));
  EXPECT_EQ(*report_of(slurp(path("r1.txt"))).find("gamma"), "1");
}

TEST_F(Cli, PredictUsageErrors) {
  write_toy();
  auto r = run("predict --mode tip --test-bank " + arg("test.bank") + " --classifier " + arg("cls.bank"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("UsageError:", 0), 0u) << r.err;
  r = run("predict --test-bank " + arg("test.bank"));
  EXPECT_EQ(r.code, 2);
  r = run("frobnicate");
  EXPECT_EQ(r.code, 2);
  r = run("predict --mode nope --test-bank " + arg("test.bank") + " --classifier " + arg("cls.bank"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("InvalidArgument", 0), 0u) << r.err;
}

TEST_F(Cli, SweepSingletonGridAndTableRows) {
  write_toy();
  write_text("one.grid", "alpha=1\nbeta=5\ngamma=0.5\n");
  auto r = run("sweep --val-bank " + arg("test.bank") + " --classifier " + arg("cls.bank") + " --support-bank " +
               arg("support.bank") + " --grid " + arg("one.grid"));
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = report_of(r.out);
  EXPECT_EQ(*rep.find("best_alpha"), "1");
  EXPECT_EQ(*rep.find("best_beta"), "5");
  EXPECT_EQ(*rep.find("grid_points"), "1");
  ASSERT_TRUE(rep.grid);
  EXPECT_EQ(rep.grid->size(), 1u);

  const auto pr = run("predict --mode tipx --alpha 1 --beta 5 --gamma 0.5 --test-bank " + arg("test.bank") +
                      " --classifier " + arg("cls.bank") + " --support-bank " + arg("support.bank"));
  EXPECT_EQ(*rep.find("best_val_accuracy"), *report_of(pr.out).find("accuracy"));

  write_text("g.grid", "alpha=0,1,2\nbeta=1,5\ngamma=0,3\ntau=0.5,1\n");
  r = run("sweep --test-bank " + arg("test.bank") + " --classifier " + arg("cls.bank") + " --support-bank " +
          arg("support.bank") + " --grid " + arg("g.grid"));
  ASSERT_EQ(r.code, 0) << r.err;
  rep = report_of(r.out);
  ASSERT_TRUE(rep.grid);
  EXPECT_EQ(rep.grid->size(), 24u);
  EXPECT_GE(std::stod(*rep.find("best_val_accuracy")), std::stod(*rep.find("zeroshot_val_accuracy")));
}

TEST_F(Cli, SweepGridErrorNamesLine) {
  write_toy();
  write_text("bad.grid", "alpha=1\n# fine\nbeta=1,oops\n");
  const auto r = run("sweep --val-bank " + arg("test.bank") + " --classifier " + arg("cls.bank") +
                     " --support-bank " + arg("support.bank") + " --grid " + arg("bad.grid"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err, "GridParseError:line 3: bad number 'oops'\n");
}

TEST_F(Cli, DiversityValues) {
  write_bank("same.bank", testing::unit_bank(Matrix{{1, 0}, {1, 0}}, std::vector<ClassIndex>{0, 0}));
  write_bank("orth.bank", testing::unit_bank(Matrix{{1, 0}, {0, 1}}, std::vector<ClassIndex>{0, 0}));
  auto r = run("diversity " + arg("same.bank"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(*report_of(r.out).find("diversity"), "0");
  r = run("diversity " + arg("orth.bank"));
  EXPECT_EQ(*report_of(r.out).find("diversity"), "0.5");

  write_bank("unlabelled.bank", testing::unit_bank(Matrix{{1, 0}}));
  r = run("diversity " + arg("unlabelled.bank"));
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("UsageError:", 0), 0u);
}

TEST_F(Cli, GapStats) {
  write_toy();
  write_bank("img.bank", testing::unit_bank(Matrix{{1, 0, 0}, {1, 0, 0}}));
  const auto r = run("gap-stats " + arg("img.bank") + " --classifier " + arg("cls.bank") + " --out " + arg("g.txt"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = report_of(slurp(path("g.txt")));
  EXPECT_EQ(*rep.find("image_image_mean"), "1");
  EXPECT_EQ(*rep.find("image_image_variance"), "0");
  EXPECT_EQ(*rep.find("text_text_mean"), "0");
  EXPECT_EQ(*rep.find("image_text_mean"), "0.5");
  EXPECT_EQ(*rep.find("image_text_pairs"), "4");
}

}  // namespace
}  // namespace susx
