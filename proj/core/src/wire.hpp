#pragma once

// Little-endian byte plumbing shared by the binary file formats. Every
// multi-byte field is serialized least significant byte first regardless
// of host endianness; doubles travel as their IEEE-754 bit pattern.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mcst/error.hpp"

namespace mcst::wire {

template <typename T>
void put_le(std::string& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  put_le(out, std::bit_cast<uint64_t>(v));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

  template <typename T>
  T le() {
    need(sizeof(T), "integer");
    T v = 0;
    for (size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += sizeof(T);
    return v;
  }

  double f64() { return std::bit_cast<double>(le<uint64_t>()); }

  std::string str(size_t n) {
    need(n, "string");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string rest() {
    std::string s = bytes_.substr(pos_);
    pos_ = bytes_.size();
    return s;
  }

  /// Consumes the 4-byte magic or throws FormatError naming the expected
  /// file kind.
  void expect_magic(const char magic[4], const char* kind) {
    need(4, "magic");
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw FormatError(path_ + ": not a " + kind + " file (bad magic at "
                        "byte " + std::to_string(pos_) + ")");
    pos_ += 4;
  }

  void expect_end() const {
    if (!at_end())
      throw FormatError(path_ + ": trailing bytes at byte " +
                        std::to_string(pos_));
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_ + ": " + what + " at byte " +
                      std::to_string(pos_));
  }

 private:
  void need(size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw FormatError(path_ + ": truncated " + what + " at byte " +
                        std::to_string(pos_));
  }

  std::string bytes_;
  std::string path_;
  size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace mcst::wire
