#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

// One scratch directory per test process; ctest may run several at once.
struct Scratch {
  fs::path dir = fs::temp_directory_path() / ("doc_test_cli_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
};

const fs::path& workdir() {
  static const Scratch scratch;
  return scratch.dir;
}

std::string at(const std::string& name) { return (workdir() / name).string(); }

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run(const std::string& args) {
  const auto log = at("last_output.txt");
  const std::string cmd = std::string(DOC_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream text;
  text << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str()};
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kSmallNet = " --feature-width 8 --conv1-channels 2 --conv2-channels 3";

// Shared fixtures: a tiny dataset with a one-class target file and a W_0.
void prepare() {
  static bool done = false;
  if (done) return;
  ASSERT_EQ(run("synth --out " + at("ref.docdata") + " --classes 5 --per-class 12 --image-size 8 --noise 0.5").code, 0);
  ASSERT_EQ(run("synth --out " + at("target.docdata") +
                " --classes 5 --per-class 12 --image-size 8 --noise 0.5 --select shape4 --seed 3")
                .code,
            0);
  ASSERT_EQ(run("pretrain --reference " + at("ref.docdata") + " --target " + at("target.docdata") +
                " --pretrain-epochs 2 --out " + at("w0.ckpt") + kSmallNet)
                .code,
            0);
  done = true;
}

std::string train_args(const std::string& out) {
  return "train --model " + at("w0.ckpt") + " --target " + at("target.docdata") + " --reference " +
         at("ref.docdata") + " --iterations 12 --batch-size-target 6 --batch-size-reference 8 --learning-rate 0.05" +
         " --out " + at(out);
}

std::string note(const std::string& csv, const std::string& key) {
  const auto pos = csv.find("# " + key + "=");
  if (pos == std::string::npos) return {};
  const auto start = pos + key.size() + 3;
  return csv.substr(start, csv.find('\n', start) - start);
}

}  // namespace

TEST(Cli, MissingRequiredFieldIsValidationError) {
  const auto r = run("pretrain --out " + at("nothing.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("reference"), std::string::npos) << r.output;
  EXPECT_EQ(run("train --out " + at("x.ckpt")).code, 2);
}

TEST(Cli, BadFlagsAndValues) {
  EXPECT_EQ(run("pretrain --no-such-flag 1").code, 2);
  EXPECT_EQ(run("").code, 2);
  prepare();
  const auto r = run(train_args("bad.ckpt") + " --variant sideways");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("variant"), std::string::npos);
  EXPECT_EQ(run("train --model " + at("missing.ckpt") + " --target " + at("target.docdata") + " --reference " +
                at("ref.docdata") + " --out " + at("m.ckpt"))
                .code,
            3);
}

TEST(Cli, PretrainIsDeterministicAndLogsEveryIteration) {
  prepare();
  const auto first = slurp(at("w0.ckpt"));
  ASSERT_EQ(run("pretrain --reference " + at("ref.docdata") + " --target " + at("target.docdata") +
                " --pretrain-epochs 2 --out " + at("w0.ckpt") + kSmallNet)
                .code,
            0);
  EXPECT_EQ(slurp(at("w0.ckpt")), first);
  // 4 reference classes x 12 images at 32 per batch: 2 batches per epoch.
  const auto log = slurp(at("w0.ckpt.log.csv"));
  const auto header = log.find("iteration,epoch");
  ASSERT_NE(header, std::string::npos);
  std::istringstream rows(log.substr(header));
  std::size_t lines = 0;
  for (std::string line; std::getline(rows, line);) ++lines;
  EXPECT_EQ(lines, 1u + 4u);
}

TEST(Cli, TrainLogAndDeterminism) {
  prepare();
  ASSERT_EQ(run(train_args("doc.ckpt")).code, 0);
  const auto ckpt = slurp(at("doc.ckpt"));
  const auto log = slurp(at("doc.ckpt.log.csv"));
  ASSERT_EQ(run(train_args("doc.ckpt")).code, 0);
  EXPECT_EQ(slurp(at("doc.ckpt")), ckpt);
  EXPECT_EQ(slurp(at("doc.ckpt.log.csv")), log);

  const auto header = log.find("iteration,epoch,l_D,l_C,l\n");
  ASSERT_NE(header, std::string::npos);
  std::istringstream rows(log.substr(header));
  std::size_t lines = 0;
  for (std::string line; std::getline(rows, line);) ++lines;
  EXPECT_EQ(lines, 1u + 12u);
  EXPECT_NE(log.find("# lambda=0.1\n"), std::string::npos);
  EXPECT_FALSE(note(log, "target_l_C").empty());
  EXPECT_FALSE(note(log, "collapsed").empty());
}

TEST(Cli, MemeffMatchJointReproducesTwoBranch) {
  prepare();
  ASSERT_EQ(run(train_args("joint.ckpt")).code, 0);
  ASSERT_EQ(run(train_args("memeff.ckpt") + " --variant memeff").code, 0);
  const auto a = note(slurp(at("joint.ckpt.log.csv")), "model_hash");
  const auto b = note(slurp(at("memeff.ckpt.log.csv")), "model_hash");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  ASSERT_EQ(run(train_args("avg.ckpt") + " --variant memeff --memeff-weighting convex-average").code, 0);
  EXPECT_NE(note(slurp(at("avg.ckpt.log.csv")), "model_hash"), a);
}

TEST(Cli, DefaultsAreEchoed) {
  prepare();
  ASSERT_EQ(run("train --model " + at("w0.ckpt") + " --target " + at("target.docdata") + " --reference " +
                at("ref.docdata") + " --batch-size-target 6 --out " + at("defaults.ckpt"))
                .code,
            0);
  const auto echo = slurp(at("defaults.ckpt.config"));
  EXPECT_NE(echo.find("lambda=0.1\n"), std::string::npos);
  EXPECT_NE(echo.find("learning_rate=5e-5\n"), std::string::npos);
  EXPECT_NE(echo.find("iterations=700\n"), std::string::npos);
  EXPECT_NE(echo.find("variant=two-branch\n"), std::string::npos);
  const auto log = slurp(at("defaults.ckpt.log.csv"));
  EXPECT_NE(log.find("\n699,"), std::string::npos);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  prepare();
  {
    std::ofstream cfg(at("run.cfg"));
    cfg << "lambda = 0.7\niterations = 3\nbatch-size-target = 6\n";
  }
  ASSERT_EQ(run(train_args("cfg.ckpt") + " --config " + at("run.cfg") + " --lambda 0.3").code, 0);
  const auto echo = slurp(at("cfg.ckpt.config"));
  EXPECT_NE(echo.find("lambda=0.3\n"), std::string::npos);
  EXPECT_NE(echo.find("iterations=12\n"), std::string::npos);
  EXPECT_EQ(run(train_args("cfg2.ckpt") + " --config " + at("absent.cfg")).code, 3);
}

TEST(Cli, TemplatesAndScores) {
  prepare();
  ASSERT_EQ(run(train_args("scored.ckpt")).code, 0);
  ASSERT_EQ(run("templates --model " + at("scored.ckpt") + " --target " + at("target.docdata") + " --template-count 5 --out " +
                at("t.doctmpl"))
                .code,
            0);
  const auto r = run("score --model " + at("scored.ckpt") + " --templates " + at("t.doctmpl") + " --data " +
                     at("target.docdata") + " --threshold 0 --out " + at("scores.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream csv(slurp(at("scores.csv")));
  std::size_t rows = 0, zeros = 0, accepted = 0;
  for (std::string line; std::getline(csv, line);) {
    if (line.empty() || line[0] == '#' || line.starts_with("id,")) continue;
    ++rows;
    const auto parts = line.substr(line.find(',', line.find(',') + 1) + 1);
    zeros += parts.starts_with("0,") ? 1 : 0;
    accepted += line.ends_with(",1") ? 1 : 0;
  }
  EXPECT_EQ(rows, 12u);
  EXPECT_EQ(zeros, 5u);
  EXPECT_EQ(accepted, 5u);
  // Templates refuse a different model.
  EXPECT_EQ(run("score --model " + at("w0.ckpt") + " --templates " + at("t.doctmpl") + " --data " +
                at("target.docdata") + " --out " + at("s2.csv"))
                .code,
            2);
}

TEST(Cli, TemplateCountDefaultsTo40) {
  prepare();
  const auto r = run("templates --model " + at("w0.ckpt") + " --target " + at("target.docdata") + " --out " +
                     at("t40.doctmpl"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("40"), std::string::npos) << r.output;
}

TEST(Cli, GradcheckExitCodes) {
  const auto ok = run("gradcheck --trials 1 --out " + at("gc.txt"));
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_NE(ok.output.find("gradcheck: all checks passed"), std::string::npos);
  const auto bad = run("gradcheck --trials 1 --perturb 1e-3");
  EXPECT_EQ(bad.code, 4);
  EXPECT_NE(bad.output.find("FAIL"), std::string::npos);
}
