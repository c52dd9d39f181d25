#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "doc/config.hpp"

using namespace doc;

TEST(RunConfig, ParsesKeyValueLines) {
  const auto cfg = RunConfig::parse("# comment\n\nlambda = 0.25\nlearning-rate=1e-3\n  name =  a b \nlambda=0.5\n");
  EXPECT_DOUBLE_EQ(cfg.real("lambda"), 0.5);
  EXPECT_DOUBLE_EQ(cfg.real("learning_rate"), 1e-3);
  EXPECT_EQ(cfg.text("name"), "a b");
  EXPECT_TRUE(cfg.has("learning-rate"));
}

TEST(RunConfig, MalformedLineNamesOriginAndLine) {
  try {
    RunConfig::parse("a=1\njunk\n", "run.cfg");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(RunConfig::parse(" = 3\n"), ValueError);
}

TEST(RunConfig, LayersOverrideInOrder) {
  auto cfg = RunConfig::parse("lambda=0.2\nseed=4\n");
  RunConfig flags;
  flags.set("lambda", "0.9");
  cfg.merge(flags);
  cfg.set_default("lambda", "0.1");
  cfg.set_default("iterations", "700");
  EXPECT_EQ(cfg.text("lambda"), "0.9");
  EXPECT_EQ(cfg.count("iterations"), 700u);
  EXPECT_EQ(cfg.u64("seed"), 4u);
}

TEST(RunConfig, TypedGettersValidate) {
  auto cfg = RunConfig::parse("x=1.5e\nn=-3\nb=maybe\nv=memeff\nempty=\nl= a, ,b ,c\n");
  EXPECT_THROW(cfg.real("x"), ValueError);
  EXPECT_THROW(cfg.u64("n"), ValueError);
  EXPECT_THROW(cfg.flag("b"), ValueError);
  EXPECT_EQ(cfg.choice("v", {"two-branch", "memeff"}), 1u);
  try {
    cfg.text("empty");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("'empty'"), std::string::npos);
  }
  try {
    cfg.choice("b", {"yes", "no"});
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("field 'b'"), std::string::npos);
  }
  EXPECT_EQ(cfg.list("l"), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(cfg.list("missing").empty());
  cfg.set("b", "off");
  EXPECT_FALSE(cfg.flag("b"));
}

TEST(RunConfig, EchoRoundTrips) {
  const auto cfg = RunConfig::parse("z=1\na=two\n");
  EXPECT_EQ(cfg.echo(), "a=two\nz=1\n");
  EXPECT_EQ(RunConfig::parse(cfg.echo()).values(), cfg.values());
}

TEST(RunConfig, FileLoading) {
  const auto path = std::filesystem::temp_directory_path() / "doc_test_config.cfg";
  { std::ofstream(path) << "seed = 12\n"; }
  EXPECT_EQ(RunConfig::from_file(path.string()).u64("seed"), 12u);
  std::filesystem::remove(path);
  EXPECT_THROW(RunConfig::from_file(path.string()), IoError);
}
