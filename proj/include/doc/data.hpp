#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "doc/binary_io.hpp"
#include "doc/errors.hpp"
#include "doc/model.hpp"
#include "doc/random.hpp"
#include "doc/tensor.hpp"

namespace doc {

struct Sample {
  std::vector<double> pixels;  // c x h x w, row-major, values in [0, 1]
  std::size_t label = 0;
  std::uint64_t id = 0;        // stable provenance id within the source
};

struct Dataset {
  ImageShape shape;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  std::string source;

  std::size_t size() const { return samples.size(); }
  std::size_t class_count() const { return class_names.size(); }

  void validate() const {
    for (const auto& s : samples) {
      if (s.pixels.size() != shape.numel()) throw ShapeError(source + ": sample " + std::to_string(s.id) + " has wrong size");
      if (s.label >= class_names.size()) throw ValueError(source + ": sample label out of range");
    }
  }

  std::vector<std::size_t> indices_of(std::size_t label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == label) out.push_back(i);
    }
    return out;
  }

  std::size_t class_index(const std::string& name) const {
    const auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw ValueError(source + ": no class named '" + name + "'");
    return static_cast<std::size_t>(it - class_names.begin());
  }

  // Stacks the selected samples into [n x c x h x w].
  Tensor batch(std::span<const std::size_t> indices) const {
    std::vector<double> values;
    values.reserve(indices.size() * shape.numel());
    for (auto i : indices) {
      const auto& px = samples.at(i).pixels;
      values.insert(values.end(), px.begin(), px.end());
    }
    return Tensor({indices.size(), shape.channels, shape.height, shape.width}, std::move(values));
  }

  std::vector<std::size_t> labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(samples.at(i).label);
    return out;
  }

  // Same classes and ids, only the selected samples (in the given order).
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out{shape, class_names, {}, source};
    out.samples.reserve(indices.size());
    for (auto i : indices) out.samples.push_back(samples.at(i));
    return out;
  }

  // Keeps only the listed classes, renumbered densely in the listed order.
  Dataset select_classes(const std::vector<std::size_t>& keep) const {
    Dataset out{shape, {}, {}, source};
    std::vector<std::size_t> remap(class_names.size(), static_cast<std::size_t>(-1));
    for (auto c : keep) {
      if (c >= class_names.size()) throw ValueError("select_classes: class index out of range");
      remap[c] = out.class_names.size();
      out.class_names.push_back(class_names[c]);
    }
    for (const auto& s : samples) {
      if (remap[s.label] == static_cast<std::size_t>(-1)) continue;
      Sample copy = s;
      copy.label = remap[s.label];
      out.samples.push_back(std::move(copy));
    }
    return out;
  }
};

// reshuffle: every epoch is a fresh permutation.
// once: one seeded permutation, replayed every epoch, so batch t and batch
// t + batches_per_epoch hold the same samples.
enum class ShufflePolicy { reshuffle, once };

// Seeded mini-batch sampler. Each epoch is a permutation of the dataset cut
// into consecutive batches. A trailing batch smaller than min_batch is
// dropped.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::size_t min_batch = 1,
              ShufflePolicy policy = ShufflePolicy::reshuffle)
      : data_(&data),
        batch_size_(batch_size),
        min_batch_(std::max<std::size_t>(min_batch, 1)),
        policy_(policy),
        rng_(seed) {
    if (batch_size_ == 0) throw ValueError("batch size must be positive");
    if (data.size() < min_batch_) {
      throw ValueError(data.source + ": " + std::to_string(data.size()) + " samples cannot fill a batch of " +
                       std::to_string(min_batch_));
    }
    order_.resize(data.size());
    reshuffle();
  }

  std::vector<std::size_t> next() {
    const std::size_t remaining = order_.size() - cursor_;
    if (remaining == 0 || remaining < std::min(batch_size_, min_batch_)) {
      ++epochs_;
      reshuffle();
    }
    const std::size_t take = std::min(batch_size_, order_.size() - cursor_);
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return out;
  }

  std::size_t epochs_completed() const { return epochs_; }
  std::size_t batch_size() const { return batch_size_; }
  const Dataset& dataset() const { return *data_; }

 private:
  void reshuffle() {
    cursor_ = 0;
    if (policy_ == ShufflePolicy::once && shuffled_) return;
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(std::span(order_));
    shuffled_ = true;
  }

  const Dataset* data_;
  std::size_t batch_size_;
  std::size_t min_batch_;
  ShufflePolicy policy_;
  bool shuffled_ = false;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t epochs_ = 0;
};

// Stratified seeded split. Each class contributes round(fraction * count)
// samples to train (at least one to each side). Both halves keep the
// original sample order.
inline std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValueError("split fraction must lie in (0, 1)");
  Rng rng(seed);
  std::vector<bool> to_train(data.size(), false);
  for (std::size_t c = 0; c < data.class_count(); ++c) {
    auto members = data.indices_of(c);
    if (members.empty()) continue;
    if (members.size() < 2) {
      throw ValueError(data.source + ": class '" + data.class_names[c] + "' has fewer than 2 samples to split");
    }
    rng.shuffle(std::span(members));
    auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    for (std::size_t i = 0; i < n_train; ++i) to_train[members[i]] = true;
  }
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < data.size(); ++i) (to_train[i] ? train : test).push_back(i);
  return {data.subset(train), data.subset(test)};
}

// Stratified random subset keeping `fraction` of every class (at least one
// sample each). fraction == 1 returns the data unchanged.
inline Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValueError("reference fraction must lie in (0, 1]");
  if (fraction == 1.0) return data;
  Rng rng(seed);
  std::vector<bool> keep(data.size(), false);
  for (std::size_t c = 0; c < data.class_count(); ++c) {
    auto members = data.indices_of(c);
    if (members.empty()) continue;
    rng.shuffle(std::span(members));
    auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    n = std::clamp<std::size_t>(n, 1, members.size());
    for (std::size_t i = 0; i < n; ++i) keep[members[i]] = true;
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (keep[i]) idx.push_back(i);
  }
  return data.subset(idx);
}

// Drops every reference class whose name appears among the target classes.
inline Dataset filter_overlap(const Dataset& reference, const std::vector<std::string>& target_classes) {
  const std::unordered_set<std::string> drop(target_classes.begin(), target_classes.end());
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < reference.class_count(); ++c) {
    if (!drop.contains(reference.class_names[c])) keep.push_back(c);
  }
  if (keep.empty()) throw ValueError(reference.source + ": removing overlapping classes leaves no reference class");
  return reference.select_classes(keep);
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

namespace detail {

// Coverage of the base pattern at normalised coordinates (u, v) in [-1, 1].
inline bool pattern_hit(std::size_t family, double u, double v) {
  const double r = std::hypot(u, v);
  const double d1 = std::abs(u - v) / std::numbers::sqrt2;
  const double d2 = std::abs(u + v) / std::numbers::sqrt2;
  switch (family % 10) {
    case 0: return std::abs(v) < 0.2 && std::abs(u) < 0.8;                 // horizontal bar
    case 1: return std::abs(u) < 0.2 && std::abs(v) < 0.8;                 // vertical bar
    case 2: return d1 < 0.16 && r < 0.85;                                   // diagonal
    case 3: return d2 < 0.16 && r < 0.85;                                   // anti-diagonal
    case 4: return std::abs(r - 0.6) < 0.14;                                // ring
    case 5: return r < 0.5;                                                 // disc
    case 6: return (std::abs(u) < 0.14 && std::abs(v) < 0.75) || (std::abs(v) < 0.14 && std::abs(u) < 0.75);  // plus
    case 7: return (d1 < 0.13 || d2 < 0.13) && r < 0.8;                     // cross
    case 8: return std::max(std::abs(u), std::abs(v)) > 0.5 && std::max(std::abs(u), std::abs(v)) < 0.7;  // square
    default: return std::hypot(u - 0.45, v) < 0.25 || std::hypot(u + 0.45, v) < 0.25;                   // two dots
  }
}

}  // namespace detail

// Procedural grayscale patterns, one family per class (bars, diagonals,
// ring, disc, plus, cross, square outline, dot pair; classes beyond ten reuse
// a family rotated by a class-specific angle). Shapes are rendered with 3x3
// supersampling at intensity 0.8 on a black background.
//
// `noise` scales every source of within-class variation: translation up to
// noise * 0.15 of the image, scale 1 +- noise * 0.2, rotation +- noise * 0.35
// rad, intensity 0.8 +- noise * 0.15, and additive Gaussian pixel noise with
// standard deviation noise * 0.3, clamped to [0, 1]. With noise == 0 every
// sample of a class is identical.
inline Dataset synth_shapes(std::size_t classes, std::size_t per_class, std::size_t image_size, double noise,
                            std::uint64_t seed) {
  if (classes < 2) throw ValueError("synth_shapes needs at least 2 classes");
  if (per_class == 0) throw ValueError("synth_shapes needs at least one sample per class");
  if (image_size < 4) throw ValueError("synth_shapes image size must be at least 4");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValueError("synth_shapes noise must be finite and >= 0");

  Dataset out;
  out.shape = {1, image_size, image_size};
  out.source = "synth_shapes(classes=" + std::to_string(classes) + ",per_class=" + std::to_string(per_class) +
               ",size=" + std::to_string(image_size) + ",noise=" + std::to_string(noise) +
               ",seed=" + std::to_string(seed) + ")";
  for (std::size_t c = 0; c < classes; ++c) out.class_names.push_back("shape" + std::to_string(c));

  Rng rng(seed);
  const double half = static_cast<double>(image_size) / 2.0;
  std::uint64_t id = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double base_angle = static_cast<double>(c / 10) * std::numbers::pi / 7.0;
    for (std::size_t s = 0; s < per_class; ++s) {
      const double dx = noise * rng.uniform(-0.15, 0.15) * static_cast<double>(image_size);
      const double dy = noise * rng.uniform(-0.15, 0.15) * static_cast<double>(image_size);
      const double zoom = 1.0 + noise * rng.uniform(-0.2, 0.2);
      const double angle = base_angle + noise * rng.uniform(-0.35, 0.35);
      const double level = 0.8 + noise * rng.uniform(-0.15, 0.15);
      const double ca = std::cos(angle), sa = std::sin(angle);

      Sample sample;
      sample.label = c;
      sample.id = id++;
      sample.pixels.resize(image_size * image_size);
      for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
          int hits = 0;
          for (int sy = 0; sy < 3; ++sy) {
            for (int sx = 0; sx < 3; ++sx) {
              const double px = static_cast<double>(x) + (sx + 0.5) / 3.0 - half - dx;
              const double py = static_cast<double>(y) + (sy + 0.5) / 3.0 - half - dy;
              const double u = (ca * px + sa * py) / (half * zoom);
              const double v = (-sa * px + ca * py) / (half * zoom);
              hits += detail::pattern_hit(c, u, v) ? 1 : 0;
            }
          }
          double value = level * hits / 9.0;
          if (noise > 0.0) value += noise * 0.3 * rng.normal();
          sample.pixels[y * image_size + x] = std::clamp(value, 0.0, 1.0);
        }
      }
      out.samples.push_back(std::move(sample));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image directories (binary PGM/PPM)
// ---------------------------------------------------------------------------

struct RawImage {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // c x h x w in [0, 1]
};

// Reads binary Netpbm: P5 (grayscale) or P6 (RGB), maxval 1..255.
inline RawImage read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto bad = [&](const std::string& why) -> FormatError { return FormatError("image '" + path + "': " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw bad("malformed header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1u << 20) throw bad("header value too large");
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw bad("not a binary PGM/PPM file");
  }
  RawImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  img.width = read_int();
  img.height = read_int();
  const auto maxval = read_int();
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 255) throw bad("unsupported dimensions or maxval");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw bad("malformed header");
  ++pos;
  const std::size_t count = img.channels * img.width * img.height;
  if (bytes.size() - pos < count) throw bad("truncated pixel data");
  img.pixels.resize(count);
  // Interleaved RGB -> planar.
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t ch = 0; ch < img.channels; ++ch) {
        const auto raw = bytes[pos + (y * img.width + x) * img.channels + ch];
        img.pixels[(ch * img.height + y) * img.width + x] = static_cast<double>(raw) / static_cast<double>(maxval);
      }
    }
  }
  return img;
}

// Bilinear resampling with half-pixel centres plus channel conversion
// (RGB -> gray by Rec.601 luma, gray -> RGB by replication).
inline std::vector<double> resize_bilinear(const RawImage& img, const ImageShape& target) {
  std::vector<double> planes;
  if (img.channels == target.channels) {
    planes = img.pixels;
  } else if (img.channels == 3 && target.channels == 1) {
    const std::size_t n = img.height * img.width;
    planes.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      planes[i] = 0.299 * img.pixels[i] + 0.587 * img.pixels[n + i] + 0.114 * img.pixels[2 * n + i];
    }
  } else if (img.channels == 1) {
    for (std::size_t c = 0; c < target.channels; ++c) planes.insert(planes.end(), img.pixels.begin(), img.pixels.end());
  } else {
    throw ShapeError("cannot convert " + std::to_string(img.channels) + "-channel image to " +
                     std::to_string(target.channels) + " channels");
  }
  std::vector<double> out(target.numel());
  const double sy = static_cast<double>(img.height) / static_cast<double>(target.height);
  const double sx = static_cast<double>(img.width) / static_cast<double>(target.width);
  for (std::size_t c = 0; c < target.channels; ++c) {
    const double* src = planes.data() + c * img.height * img.width;
    for (std::size_t y = 0; y < target.height; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < target.width; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, img.width - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = src[y0 * img.width + x0] * (1 - wx) + src[y0 * img.width + x1] * wx;
        const double bottom = src[y1 * img.width + x0] * (1 - wx) + src[y1 * img.width + x1] * wx;
        out[(c * target.height + y) * target.width + x] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

// One subdirectory per class, classes numbered by sorted directory name,
// files read in sorted order. Every non-hidden regular file must be a binary
// PGM or PPM image.
inline Dataset load_image_dir(const std::string& path, const ImageShape& target) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw IoError("image directory '" + path + "' does not exist");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (entry.is_directory() && entry.path().filename().string().front() != '.') class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ValueError("image directory '" + path + "' has no class subdirectories");

  Dataset out;
  out.shape = target;
  out.source = "image_dir(" + path + ")";
  std::uint64_t id = 0;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename().string().front() != '.') files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValueError("class directory '" + dir.string() + "' is empty");
    const std::size_t label = out.class_names.size();
    out.class_names.push_back(dir.filename().string());
    for (const auto& file : files) {
      Sample s;
      s.pixels = resize_bilinear(read_netpbm(file.string()), target);
      s.label = label;
      s.id = id++;
      out.samples.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Raw dataset container
// ---------------------------------------------------------------------------
//
//   "DOCDATA\0", u32 version (1), u32 channels, height, width,
//   u32 class_count + class names (u32 length + bytes each),
//   u32 length + source string, u64 sample_count,
//   per sample: u32 label, u64 id, c*h*w float64 pixels,
//   u64 FNV-1a checksum.

inline constexpr std::string_view kDatasetMagic{"DOCDATA\0", 8};
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& data, const std::string& path) {
  data.validate();
  BinaryWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.shape.channels));
  w.u32(static_cast<std::uint32_t>(data.shape.height));
  w.u32(static_cast<std::uint32_t>(data.shape.width));
  w.u32(static_cast<std::uint32_t>(data.class_names.size()));
  for (const auto& name : data.class_names) w.string(name);
  w.string(data.source);
  w.u64(data.samples.size());
  for (const auto& s : data.samples) {
    w.u32(static_cast<std::uint32_t>(s.label));
    w.u64(s.id);
    w.f64s(s.pixels);
  }
  w.seal();
  w.write_file(path);
}

inline Dataset load_dataset(const std::string& path) {
  auto r = BinaryReader::from_file(path);
  r.verify_seal();
  r.expect_magic(kDatasetMagic);
  const auto version = r.u32();
  if (version != kDatasetVersion) r.fail("unsupported dataset version " + std::to_string(version));
  Dataset data;
  data.shape.channels = r.u32();
  data.shape.height = r.u32();
  data.shape.width = r.u32();
  const auto classes = r.u32();
  for (std::uint32_t c = 0; c < classes; ++c) data.class_names.push_back(r.string());
  data.source = r.string();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.label = r.u32();
    s.id = r.u64();
    s.pixels = r.f64s(data.shape.numel());
    data.samples.push_back(std::move(s));
  }
  r.expect_end();
  data.validate();
  return data;
}

// A path naming a directory is read as an image directory; anything else as
// a dataset container.
inline Dataset load_any_dataset(const std::string& path, const ImageShape& image_shape) {
  if (std::filesystem::is_directory(path)) return load_image_dir(path, image_shape);
  return load_dataset(path);
}

}  // namespace doc
