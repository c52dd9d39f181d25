#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "doc/binary_io.hpp"
#include "doc/errors.hpp"
#include "doc/model.hpp"

namespace doc {

// Checkpoint layout, all integers and floats little-endian:
//
//   "DOCCKPT\0"                      8-byte magic
//   u32 version                      currently 1
//   u32 channels, height, width      input image shape
//   u32 frozen_layers
//   u32 layer_count, then per layer: u8 kind, u32 width, kernel, stride, padding, in_width
//   u64 seed, u64 iterations, f64 lambda
//   u32 length + bytes               resolved run configuration (key=value lines)
//   u32 param_count, then per param: u32 length + name,
//                                    weight tensor, bias tensor
//   u64 FNV-1a checksum of all preceding bytes
//
// A tensor is u32 rank, rank x u32 dims, then the float64 payload.
inline constexpr std::string_view kCheckpointMagic{"DOCCKPT\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_tensor(BinaryWriter& w, const Tensor& t) {
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  w.f64s(t.data());
}

inline std::vector<double> read_tensor(BinaryReader& r, const Shape& expected, const std::string& name) {
  const auto rank = r.u32();
  if (rank > 8) r.fail("implausible tensor rank for " + name);
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  if (shape != expected) {
    throw ShapeError("checkpoint parameter " + name + " has shape " + shape_string(shape) + ", model expects " +
                     shape_string(expected));
  }
  return r.f64s(shape_numel(shape));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model& m) {
  BinaryWriter w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& in = m.input_shape();
  w.u32(static_cast<std::uint32_t>(in.channels));
  w.u32(static_cast<std::uint32_t>(in.height));
  w.u32(static_cast<std::uint32_t>(in.width));
  w.u32(static_cast<std::uint32_t>(m.frozen_layers()));
  w.u32(static_cast<std::uint32_t>(m.layers().size()));
  for (const auto& l : m.layers()) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u32(static_cast<std::uint32_t>(l.width));
    w.u32(static_cast<std::uint32_t>(l.kernel));
    w.u32(static_cast<std::uint32_t>(l.stride));
    w.u32(static_cast<std::uint32_t>(l.padding));
    w.u32(static_cast<std::uint32_t>(l.in_width));
  }
  w.u64(m.metadata().seed);
  w.u64(m.metadata().iterations);
  w.f64(m.metadata().lambda);
  w.string(m.metadata().config);
  w.u32(static_cast<std::uint32_t>(m.params().size()));
  for (const auto& p : m.params()) {
    w.string(p.name);
    detail::write_tensor(w, p.weight);
    detail::write_tensor(w, p.bias);
  }
  w.seal();
  return w.buffer();
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  BinaryWriter w;
  const auto bytes = encode_checkpoint(m);
  w.bytes(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  w.write_file(path);
}

// When expected_layers is given, a checkpoint built from a different layer
// table is rejected with ShapeError.
inline Model decode_checkpoint(BinaryReader r, const std::optional<std::vector<LayerSpec>>& expected_layers = {}) {
  r.verify_seal();
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  ImageShape in;
  in.channels = r.u32();
  in.height = r.u32();
  in.width = r.u32();
  const std::size_t frozen = r.u32();
  const auto layer_count = r.u32();
  if (layer_count > 4096) r.fail("implausible layer count");
  std::vector<LayerSpec> layers(layer_count);
  for (auto& l : layers) {
    const auto kind = r.u8();
    if (kind < 1 || kind > 5) r.fail("unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.width = r.u32();
    l.kernel = r.u32();
    l.stride = r.u32();
    l.padding = r.u32();
    l.in_width = r.u32();
  }
  if (expected_layers && *expected_layers != layers) {
    throw ShapeError("checkpoint layer table does not match the expected architecture");
  }
  ModelMetadata meta;
  meta.seed = r.u64();
  meta.iterations = r.u64();
  meta.lambda = r.f64();
  meta.config = r.string();

  Model m = Model::build(layers, in, meta.seed, frozen);
  m.metadata() = meta;
  const auto count = r.u32();
  if (count != m.params().size()) {
    throw ShapeError("checkpoint stores " + std::to_string(count) + " parameter layers, architecture has " +
                     std::to_string(m.params().size()));
  }
  for (auto& p : m.params()) {
    const auto name = r.string();
    if (name != p.name) throw ShapeError("checkpoint parameter '" + name + "' where '" + p.name + "' was expected");
    const auto w = detail::read_tensor(r, p.weight.shape(), name + ".weight");
    const auto b = detail::read_tensor(r, p.bias.shape(), name + ".bias");
    std::copy(w.begin(), w.end(), p.weight.mutable_data().begin());
    std::copy(b.begin(), b.end(), p.bias.mutable_data().begin());
  }
  r.expect_end();
  return m;
}

inline Model load_checkpoint(const std::string& path,
                             const std::optional<std::vector<LayerSpec>>& expected_layers = {}) {
  return decode_checkpoint(BinaryReader::from_file(path), expected_layers);
}

}  // namespace doc
