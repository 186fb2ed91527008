// aspool/serialize.hpp
//
// Copyright 2026 The aspool Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ASPOOL_SERIALIZE_HPP_
#define ASPOOL_SERIALIZE_HPP_

// Little-endian binary encoding shared by the feature, checkpoint and
// backend containers. Every container starts with a 4-byte magic and a u32
// version.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "aspool/errors.hpp"

namespace aspool {

class ByteWriter {
 public:
  void PutBytes(std::string_view s) { buf_.append(s); }
  void PutU32(std::uint32_t v) { PutLe(v, 4); }
  void PutI32(std::int32_t v) { PutLe(static_cast<std::uint32_t>(v), 4); }
  void PutU64(std::uint64_t v) { PutLe(v, 8); }
  void PutF32(float v) { PutLe(std::bit_cast<std::uint32_t>(v), 4); }
  void PutF64(double v) { PutLe(std::bit_cast<std::uint64_t>(v), 8); }
  void PutF64s(std::span<const double> v) {
    for (double x : v) PutF64(x);
  }

  const std::string &bytes() const { return buf_; }
  std::string Take() { return std::move(buf_); }

 private:
  void PutLe(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data, std::string what = "file")
      : data_(data), what_(std::move(what)) {}

  std::string_view GetBytes(std::size_t n) {
    Need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t GetU32() { return std::uint32_t(GetLe(4)); }
  std::int32_t GetI32() { return static_cast<std::int32_t>(GetU32()); }
  std::uint64_t GetU64() { return GetLe(8); }
  float GetF32() { return std::bit_cast<float>(GetU32()); }
  double GetF64() { return std::bit_cast<double>(GetLe(8)); }
  void GetF64s(std::span<double> out) {
    for (double &x : out) x = GetF64();
  }

  std::size_t remaining() const { return data_.size() - pos_; }

  void ExpectMagic(std::string_view magic) {
    if (data_.size() < magic.size() || data_.substr(0, magic.size()) != magic)
      throw FormatError(what_ + ": bad magic (expected \"" +
                        std::string(magic) + "\")");
    pos_ = magic.size();
  }
  void ExpectVersion(std::uint32_t expected) {
    const std::uint32_t v = GetU32();
    if (v != expected)
      throw VersionError(what_ + ": unsupported version " + std::to_string(v) +
                         " (expected " + std::to_string(expected) + ")");
  }
  void ExpectEnd() const {
    if (remaining() != 0)
      throw FormatError(what_ + ": " + std::to_string(remaining()) +
                        " trailing bytes");
  }

 private:
  void Need(std::size_t n) const {
    if (remaining() < n) throw FormatError(what_ + ": truncated");
  }
  std::uint64_t GetLe(int n) {
    Need(std::size_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += std::size_t(n);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::string ReadFileBytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void WriteFileBytes(const std::filesystem::path &path,
                           std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace aspool

#endif  // ASPOOL_SERIALIZE_HPP_
