#pragma once

// Little-endian primitive encoding shared by the feature-file and checkpoint
// formats. Values are assembled byte by byte, so host endianness is irrelevant.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "hssal/error.hpp"

namespace hssal::io {

class ByteWriter {
 public:
  void raw(std::string_view bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

  template <typename UInt>
  void uint(UInt v) {
    for (std::size_t i = 0; i < sizeof(UInt); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  const std::vector<char>& bytes() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& data, std::string context) : data_(data), context_(std::move(context)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw ParseError(ParseError::Kind::kTruncated,
                       context_ + ": truncated payload, missing " + std::to_string(pos_ + n - data_.size()) +
                           " bytes at offset " + std::to_string(pos_));
    }
  }

  std::string raw(std::size_t n) {
    need(n);
    std::string out(data_.data() + pos_, n);
    pos_ += n;
    return out;
  }

  template <typename UInt>
  UInt uint() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  const std::string& context() const noexcept { return context_; }

 private:
  const std::vector<char>& data_;
  std::string context_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<char>& bytes);

}  // namespace hssal::io
