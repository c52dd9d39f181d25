#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "doc/errors.hpp"

namespace doc {

// 64-bit FNV-1a, used for model identity and file checksums.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) {
    for (auto b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view text) {
    update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  void update_u64(std::uint64_t v) {
    std::uint8_t bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<std::uint8_t>(v >> (8 * i));
    update(bytes);
  }
  void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

// Little-endian encoder into an in-memory buffer.
class BinaryWriter {
 public:
  void bytes(std::string_view raw) { buffer_.insert(buffer_.end(), raw.begin(), raw.end()); }
  void u8(std::uint8_t v) { buffer_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void f64s(std::span<const double> values) {
    for (double v : values) f64(v);
  }
  void string(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }

  // Appends an FNV-1a checksum of everything written so far.
  void seal() {
    Fnv1a h;
    h.update(buffer_);
    u64(h.digest());
  }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(buffer_.size()));
    if (!out) throw IoError("failed writing '" + path + "'");
  }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buffer_;
};

// Bounds-checked little-endian decoder. Running past the end is reported as
// a truncated file.
class BinaryReader {
 public:
  BinaryReader(std::vector<std::uint8_t> data, std::string origin)
      : data_(std::move(data)), origin_(std::move(origin)) {}

  static BinaryReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return BinaryReader(std::move(data), path);
  }

  // Checks and strips the trailing checksum written by BinaryWriter::seal().
  void verify_seal() {
    if (data_.size() < 8) fail("truncated");
    const std::size_t body = data_.size() - 8;
    Fnv1a h;
    h.update(std::span(data_.data(), body));
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(data_[body + i]) << (8 * i);
    if (stored != h.digest()) fail("checksum mismatch (corrupt or truncated file)");
    end_ = body;
  }

  void expect_magic(std::string_view magic) {
    need(magic.size());
    if (std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) fail("bad magic bytes");
    pos_ += magic.size();
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::vector<double> f64s(std::size_t count) {
    need(count * 8);
    std::vector<double> out(count);
    for (auto& v : out) v = f64();
    return out;
  }
  std::string string() {
    const auto len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  bool at_end() const { return pos_ == limit(); }
  void expect_end() {
    if (!at_end()) fail("unexpected trailing bytes");
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  std::size_t limit() const { return end_ == npos ? data_.size() : end_; }
  void need(std::size_t n) const {
    if (pos_ + n > limit() || pos_ + n < pos_) fail("truncated");
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::uint8_t> data_;
  std::string origin_;
  std::size_t pos_ = 0;
  std::size_t end_ = npos;
};

}  // namespace doc
