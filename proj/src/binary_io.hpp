#pragma once

// Little-endian encoding helpers shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ifsl::detail {

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(char(v)); }

inline void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string_view take(std::size_t n) {
    if (pos_ + n > data_.size()) throw std::runtime_error(what_ + ": truncated input");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return std::uint8_t(take(1)[0]); }
  std::uint16_t u16() {
    auto s = take(2);
    return std::uint16_t(std::uint8_t(s[0]) | (std::uint8_t(s[1]) << 8));
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(s[std::size_t(i)]);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace ifsl::detail
