// Copyright (c) 2026, The mvp-tok Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvptok/common.hpp"

namespace mvptok::utf8 {

/// Thrown on undecodable input; offset is the byte position of the bad sequence.
class DecodeError : public Error {
 public:
  explicit DecodeError(std::size_t offset)
      : Error("invalid UTF-8 at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Decodes one code point starting at `pos`, advancing it. Returns nullopt on
/// malformed, overlong or surrogate sequences without advancing.
inline std::optional<char32_t> decode_one(std::string_view s, std::size_t& pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) {
    ++pos;
    return b0;
  }
  int len;
  char32_t cp;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return std::nullopt;
  }
  if (pos + len > s.size()) return std::nullopt;
  for (int i = 1; i < len; ++i) {
    const auto b = static_cast<unsigned char>(s[pos + i]);
    if ((b & 0xC0) != 0x80) return std::nullopt;
    cp = (cp << 6) | (b & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return std::nullopt;
  pos += len;
  return cp;
}

inline std::u32string decode(std::string_view s) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t at = pos;
    auto cp = decode_one(s, pos);
    if (!cp) throw DecodeError(at);
    out.push_back(*cp);
  }
  return out;
}

inline bool valid(std::string_view s) {
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (!decode_one(s, pos)) return false;
  }
  return true;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

inline std::string encode(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size() * 3);
  for (char32_t cp : cps) append(out, cp);
  return out;
}

inline std::string encode(char32_t cp) {
  std::string out;
  append(out, cp);
  return out;
}

/// Splits a valid UTF-8 string into one view per code point.
inline std::vector<std::string_view> chars(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t at = pos;
    if (!decode_one(s, pos)) throw DecodeError(at);
    out.push_back(s.substr(at, pos - at));
  }
  return out;
}

inline std::size_t length(std::string_view s) {
  std::size_t n = 0, pos = 0;
  while (pos < s.size()) {
    const std::size_t at = pos;
    if (!decode_one(s, pos)) throw DecodeError(at);
    ++n;
  }
  return n;
}

/// CJK Unified Ideographs, extensions A-F and the compatibility blocks.
constexpr bool is_cjk(char32_t c) {
  return (c >= 0x4E00 && c <= 0x9FFF) || (c >= 0x3400 && c <= 0x4DBF) ||
         (c >= 0xF900 && c <= 0xFAFF) || (c >= 0x20000 && c <= 0x2A6DF) ||
         (c >= 0x2A700 && c <= 0x2EBEF) || (c >= 0x2F800 && c <= 0x2FA1F) ||
         (c >= 0x30000 && c <= 0x3134F);
}

constexpr bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
         c == 0x00A0 || c == 0x3000 || (c >= 0x2000 && c <= 0x200A) || c == 0x2028 ||
         c == 0x2029 || c == 0x202F || c == 0x205F;
}

constexpr bool is_control(char32_t c) {
  return (c < 0x20 && c != '\t' && c != '\n') || c == 0x7F || (c >= 0x80 && c < 0xA0);
}

enum class CharClass { kCjk, kSpace, kOther };

constexpr CharClass classify(char32_t c) {
  if (is_cjk(c)) return CharClass::kCjk;
  if (is_space(c)) return CharClass::kSpace;
  return CharClass::kOther;
}

/// True when every code point of `s` is a CJK ideograph (and s is non-empty).
inline bool all_cjk(std::string_view s) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto cp = decode_one(s, pos);
    if (!cp || !is_cjk(*cp)) return false;
  }
  return true;
}

/// Width-folding and lowercasing: fullwidth ASCII to ASCII, ideographic space
/// to space, A-Z to a-z. Maps code points one to one, so character offsets
/// of the normalized text line up with the original.
constexpr char32_t normalize_char(char32_t c) {
  if (c >= 0xFF01 && c <= 0xFF5E) c -= 0xFEE0;
  if (c == 0x3000) c = ' ';
  if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return c;
}

inline std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const std::size_t at = pos;
    auto cp = decode_one(s, pos);
    if (!cp) throw DecodeError(at);
    append(out, normalize_char(*cp));
  }
  return out;
}

}  // namespace mvptok::utf8
