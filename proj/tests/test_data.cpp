#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doc/data.hpp"

using namespace doc;
namespace fs = std::filesystem;

namespace {

void write_pgm(const fs::path& p, std::size_t w, std::size_t h, unsigned char fill) {
  std::ofstream out(p, std::ios::binary);
  out << "P5\n# test\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < w * h; ++i) out.put(static_cast<char>(fill + i));
}

void write_ppm(const fs::path& p, unsigned char r, unsigned char g, unsigned char b) {
  std::ofstream out(p, std::ios::binary);
  out << "P6 2 2 255\n";
  for (int i = 0; i < 4; ++i) {
    out.put(static_cast<char>(r));
    out.put(static_cast<char>(g));
    out.put(static_cast<char>(b));
  }
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("doc_test_data_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::uint64_t> ids(const Dataset& d) {
  std::vector<std::uint64_t> out;
  for (const auto& s : d.samples) out.push_back(s.id);
  return out;
}

}  // namespace

TEST(ImageDir, ClassesInSortedOrder) {
  TempDir dir("sorted");
  for (const char* cls : {"b", "a"}) {
    fs::create_directories(dir.path / cls);
    for (int i = 0; i < 3; ++i) write_pgm(dir.path / cls / ("img" + std::to_string(i) + ".pgm"), 4, 4, cls[0] == 'a' ? 0 : 100);
  }
  const auto d = load_image_dir(dir.path.string(), ImageShape{1, 4, 4});
  EXPECT_EQ(d.size(), 6u);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.samples[0].label, 0u);
  EXPECT_EQ(d.samples[5].label, 1u);
  EXPECT_DOUBLE_EQ(d.samples[0].pixels[1], 1.0 / 255.0);
  EXPECT_DOUBLE_EQ(d.samples[3].pixels[0], 100.0 / 255.0);
  const auto again = load_image_dir(dir.path.string(), ImageShape{1, 4, 4});
  EXPECT_EQ(again.samples.size(), d.samples.size());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(again.samples[i].pixels, d.samples[i].pixels);
}

TEST(ImageDir, CorruptFileIsNamed) {
  TempDir dir("corrupt");
  fs::create_directories(dir.path / "a");
  write_pgm(dir.path / "a" / "good.pgm", 4, 4, 0);
  { std::ofstream(dir.path / "a" / "zbad.pgm") << "P5\n4 4\n255\nxx"; }
  try {
    load_image_dir(dir.path.string(), ImageShape{1, 4, 4});
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("zbad.pgm"), std::string::npos) << e.what();
  }
  fs::create_directories(dir.path / "empty");
  EXPECT_THROW(load_image_dir((dir.path / "missing").string(), ImageShape{}), IoError);
}

TEST(ImageDir, ResizeAndColourConversion) {
  TempDir dir("resize");
  fs::create_directories(dir.path / "c");
  write_ppm(dir.path / "c" / "x.ppm", 255, 0, 0);
  const auto gray = load_image_dir(dir.path.string(), ImageShape{1, 3, 3});
  for (double v : gray.samples[0].pixels) EXPECT_NEAR(v, 0.299, 1e-12);
  const auto rgb = load_image_dir(dir.path.string(), ImageShape{3, 5, 5});
  EXPECT_DOUBLE_EQ(rgb.samples[0].pixels[0], 1.0);
  EXPECT_DOUBLE_EQ(rgb.samples[0].pixels[25], 0.0);
}

TEST(Synth, NoiseFreeClassesAreConstant) {
  const auto d = synth_shapes(3, 5, 12, 0.0, 1);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto idx = d.indices_of(c);
    for (auto i : idx) EXPECT_EQ(d.samples[i].pixels, d.samples[idx[0]].pixels);
  }
  EXPECT_NE(d.samples[0].pixels, d.samples[5].pixels);
}

TEST(Synth, SeededAndValidated) {
  const auto a = synth_shapes(4, 6, 10, 0.7, 3), b = synth_shapes(4, 6, 10, 0.7, 3), c = synth_shapes(4, 6, 10, 0.7, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i].pixels, b.samples[i].pixels);
  EXPECT_NE(a.samples[0].pixels, c.samples[0].pixels);
  for (const auto& s : a.samples) {
    for (double v : s.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(synth_shapes(1, 5, 10, 0.1, 0), ValueError);
  EXPECT_THROW(synth_shapes(2, 5, 3, 0.1, 0), ValueError);
  EXPECT_THROW(synth_shapes(2, 5, 10, -1.0, 0), ValueError);
}

TEST(Synth, LinearProbeSeparatesTwoClasses) {
  // Logistic regression on raw pixels, trained on one half and tested on the other.
  const auto all = synth_shapes(10, 200, 16, 1.2, 100).select_classes({0, 1});
  const auto [train_set, test_set] = split(all, 0.5, 1);
  const std::size_t dim = all.shape.numel();
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  for (int epoch = 0; epoch < 200; ++epoch) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (const auto& s : train_set.samples) {
      double z = b;
      for (std::size_t j = 0; j < dim; ++j) z += w[j] * s.pixels[j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - static_cast<double>(s.label);
      for (std::size_t j = 0; j < dim; ++j) gw[j] += err * s.pixels[j];
      gb += err;
    }
    const double step = 0.5 / static_cast<double>(train_set.size());
    for (std::size_t j = 0; j < dim; ++j) w[j] -= step * gw[j];
    b -= step * gb;
  }
  std::size_t correct = 0;
  for (const auto& s : test_set.samples) {
    double z = b;
    for (std::size_t j = 0; j < dim; ++j) z += w[j] * s.pixels[j];
    correct += (z > 0.0) == (s.label == 1) ? 1 : 0;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(test_set.size()), 0.9);
}

TEST(Split, StratifiedPartition) {
  const auto d = synth_shapes(3, 10, 6, 0.3, 2);
  const auto [train_set, test_set] = split(d, 0.5, 7);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(train_set.indices_of(c).size(), 5u);
    EXPECT_EQ(test_set.indices_of(c).size(), 5u);
  }
  std::set<std::uint64_t> a, b;
  for (auto id : ids(train_set)) a.insert(id);
  for (auto id : ids(test_set)) b.insert(id);
  std::vector<std::uint64_t> common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  EXPECT_TRUE(common.empty());
  EXPECT_EQ(a.size() + b.size(), d.size());
  EXPECT_EQ(ids(split(d, 0.5, 7).first), ids(train_set));
  EXPECT_NE(ids(split(d, 0.5, 8).first), ids(train_set));
  EXPECT_THROW(split(d, 1.0, 0), ValueError);
  EXPECT_THROW(split(synth_shapes(2, 1, 6, 0.0, 0), 0.5, 0), ValueError);
}

TEST(Subsample, KeepsFractionOfEachClass) {
  const auto d = synth_shapes(2, 10, 6, 0.3, 2);
  const auto half = subsample(d, 0.3, 1);
  EXPECT_EQ(half.indices_of(0).size(), 3u);
  EXPECT_EQ(half.indices_of(1).size(), 3u);
  EXPECT_EQ(subsample(d, 1.0, 1).size(), d.size());
  EXPECT_THROW(subsample(d, 0.0, 1), ValueError);
}

TEST(FilterOverlap, DropsNamedClassesAndRenumbers) {
  const auto d = synth_shapes(10, 2, 6, 0.1, 2);
  const auto f = filter_overlap(d, {"shape4"});
  EXPECT_EQ(f.class_count(), 9u);
  EXPECT_EQ(f.size(), 18u);
  for (const auto& s : f.samples) EXPECT_LT(s.label, 9u);
  EXPECT_EQ(f.class_names[4], "shape5");
  const auto same = filter_overlap(d, {"other"});
  EXPECT_EQ(ids(same), ids(d));
  std::vector<std::string> every(d.class_names);
  EXPECT_THROW(filter_overlap(d, every), ValueError);
}

TEST(BatchStream, EpochsArePermutations) {
  const auto d = synth_shapes(2, 5, 6, 0.1, 2);
  BatchStream s(d, 3, 11, 2);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    // 10 samples at 3 per batch: batches of 3, 3, 3 and a dropped single.
    for (int b = 0; b < 3; ++b) {
      const auto idx = s.next();
      EXPECT_EQ(idx.size(), 3u);
      seen.insert(seen.end(), idx.begin(), idx.end());
    }
    std::sort(seen.begin(), seen.end());
    EXPECT_EQ(std::unique(seen.begin(), seen.end()), seen.end());
  }
  BatchStream all(d, 4, 11, 1);
  std::vector<std::size_t> seen;
  for (int b = 0; b < 3; ++b) {
    const auto idx = all.next();
    seen.insert(seen.end(), idx.begin(), idx.end());
  }
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
}

TEST(BatchStream, ShuffleOnceReplaysTheSameOrder) {
  const auto d = synth_shapes(2, 6, 6, 0.1, 2);
  BatchStream once(d, 4, 3, 1, ShufflePolicy::once), fresh(d, 4, 3, 1, ShufflePolicy::reshuffle);
  std::vector<std::vector<std::size_t>> first, second, fresh_first, fresh_second;
  for (int b = 0; b < 3; ++b) first.push_back(once.next()), fresh_first.push_back(fresh.next());
  for (int b = 0; b < 3; ++b) second.push_back(once.next()), fresh_second.push_back(fresh.next());
  EXPECT_EQ(first, second);
  EXPECT_EQ(first, fresh_first);
  EXPECT_NE(fresh_first, fresh_second);
  EXPECT_THROW(BatchStream(d, 0, 1), ValueError);
}

TEST(Container, RoundTripAndCorruption) {
  TempDir dir("container");
  const auto d = synth_shapes(3, 4, 6, 0.5, 9);
  const auto path = (dir.path / "d.bin").string();
  save_dataset(d, path);
  const auto back = load_dataset(path);
  EXPECT_EQ(back.class_names, d.class_names);
  EXPECT_EQ(back.source, d.source);
  EXPECT_EQ(ids(back), ids(d));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.samples[i].pixels, d.samples[i].pixels);
  EXPECT_EQ(load_any_dataset(path, ImageShape{}).size(), d.size());
  fs::resize_file(path, fs::file_size(path) - 1);
  EXPECT_THROW(load_dataset(path), FormatError);
  EXPECT_THROW(load_dataset((dir.path / "none.bin").string()), IoError);
}
