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

// Dictionary-driven Chinese word segmentation.
//
// The bundled segmenter is a unigram dynamic program over runs of CJK
// ideographs; everything else (Latin, digits, punctuation, whitespace) is
// passed through as maximal runs. Any other implementation of `Segmenter`
// can be plugged into the vocabulary builders.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/utf8.hpp"

namespace mvptok {

class SegDictionary {
 public:
  SegDictionary() = default;

  /// Adds or raises an entry. Multi-character entries must be all-CJK;
  /// returns false (and stores nothing) otherwise.
  bool add(const std::string& word, std::uint64_t count) {
    if (word.empty()) return false;
    const std::size_t len = utf8::length(word);
    if (len > 1 && !utf8::all_cjk(word)) return false;
    auto [it, inserted] = entries_.emplace(word, count);
    if (!inserted) {
      total_ -= it->second;
      it->second = std::max(it->second, count);
    }
    total_ += it->second;
    max_word_len_ = std::max(max_word_len_, len);
    return true;
  }

  std::optional<std::uint64_t> count(const std::string& word) const {
    auto it = entries_.find(word);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& word) const { return entries_.count(word) > 0; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t max_word_len() const { return max_word_len_; }
  std::uint64_t total_count() const { return total_; }
  const std::unordered_map<std::string, std::uint64_t>& entries() const { return entries_; }

  /// Smoothed log-probability of a word with `count` occurrences. Count-0
  /// entries and uncovered characters both score log(1/Z).
  double log_prob(std::uint64_t count) const {
    const double z = static_cast<double>(total_) + static_cast<double>(entries_.size()) + 1.0;
    return std::log(static_cast<double>(count) + 1.0) - std::log(z);
  }

  /// `word<TAB>count` lines sorted by descending count, then word.
  std::string serialize() const {
    std::vector<std::pair<std::string, std::uint64_t>> sorted(entries_.begin(), entries_.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    std::string out;
    for (const auto& [w, c] : sorted) out += w + "\t" + std::to_string(c) + "\n";
    return out;
  }

 private:
  std::unordered_map<std::string, std::uint64_t> entries_;
  std::size_t max_word_len_ = 0;
  std::uint64_t total_ = 0;
};

/// Parses `word<TAB>count` lines. Multi-character entries that are not pure
/// CJK are skipped; `rejected` (if given) receives how many.
inline SegDictionary load_dictionary(std::string_view source, std::size_t* rejected = nullptr) {
  SegDictionary dict;
  std::size_t skipped = 0;
  const auto lines = split_lines(source);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const std::string_view line = lines[i];
    if (trim(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError("dictionary line has no tab", lineno);
    const std::string_view word = line.substr(0, tab);
    const std::string_view count_text = trim(line.substr(tab + 1));
    if (word.empty()) throw ParseError("empty dictionary word", lineno);
    if (!utf8::valid(word)) throw ParseError("dictionary word is not UTF-8", lineno);
    std::uint64_t count = 0;
    auto [end, ec] = std::from_chars(count_text.data(), count_text.data() + count_text.size(), count);
    if (count_text.empty() || ec != std::errc() || end != count_text.data() + count_text.size()) {
      throw ParseError("dictionary count is not a non-negative integer", lineno);
    }
    if (!dict.add(std::string(word), count)) ++skipped;
  }
  if (dict.empty()) throw ParseError("dictionary is empty", 0);
  if (rejected) *rejected = skipped;
  return dict;
}

inline SegDictionary load_dictionary_file(const std::string& path) {
  return load_dictionary(read_file(path));
}

/// One word of a segmentation; offsets are in code points, half-open.
struct SegWord {
  std::string surface;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const SegWord&) const = default;
};

struct SegmentedText {
  std::vector<SegWord> words;

  std::vector<std::string> surfaces() const {
    std::vector<std::string> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(w.surface);
    return out;
  }
  bool operator==(const SegmentedText&) const = default;
};

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual SegmentedText segment(std::string_view text) const = 0;
};

namespace detail {

/// Best segmentation of a CJK run by right-to-left DP. Returns word lengths
/// in characters. Ties on score (within 1e-9) prefer fewer words, then the
/// longer first word at the leftmost position where candidates differ.
inline std::vector<std::size_t> segment_cjk_run(const std::vector<std::string_view>& chars,
                                                const SegDictionary& dict) {
  const std::size_t n = chars.size();
  struct Cell {
    double score = 0.0;
    std::size_t words = 0;
    std::size_t first_len = 0;
  };
  constexpr double kTie = 1e-9;
  std::vector<Cell> best(n + 1);
  const std::size_t max_len = std::max<std::size_t>(1, dict.max_word_len());
  for (std::size_t i = n; i-- > 0;) {
    bool have = false;
    std::string word;
    for (std::size_t len = 1; len <= max_len && i + len <= n; ++len) {
      word.append(chars[i + len - 1]);
      const auto count = dict.count(word);
      if (len > 1 && !count) continue;
      const double s = dict.log_prob(count.value_or(0)) + best[i + len].score;
      const std::size_t words = best[i + len].words + 1;
      bool better = !have;
      if (have) {
        if (s > best[i].score + kTie) {
          better = true;
        } else if (s >= best[i].score - kTie) {
          better = words < best[i].words || (words == best[i].words && len > best[i].first_len);
        }
      }
      if (better) {
        best[i] = {s, words, len};
        have = true;
      }
    }
  }
  std::vector<std::size_t> lens;
  for (std::size_t i = 0; i < n; i += best[i].first_len) lens.push_back(best[i].first_len);
  return lens;
}

}  // namespace detail

/// Segments `text`: CJK runs by unigram DP, other runs (whitespace, and
/// non-CJK non-space text) emitted whole. Concatenating the surfaces
/// reproduces `text` exactly.
inline SegmentedText segment(std::string_view text, const SegDictionary& dict) {
  SegmentedText out;
  const auto chars = utf8::chars(text);
  std::vector<utf8::CharClass> cls;
  cls.reserve(chars.size());
  for (auto c : chars) {
    std::size_t p = 0;
    cls.push_back(utf8::classify(*utf8::decode_one(c, p)));
  }
  std::size_t i = 0;
  while (i < chars.size()) {
    std::size_t j = i + 1;
    while (j < chars.size() && cls[j] == cls[i]) ++j;
    if (cls[i] == utf8::CharClass::kCjk) {
      std::vector<std::string_view> run(chars.begin() + i, chars.begin() + j);
      std::size_t at = i;
      for (std::size_t len : detail::segment_cjk_run(run, dict)) {
        std::string s;
        for (std::size_t k = at; k < at + len; ++k) s.append(chars[k]);
        out.words.push_back({std::move(s), at, at + len});
        at += len;
      }
    } else {
      std::string s;
      for (std::size_t k = i; k < j; ++k) s.append(chars[k]);
      out.words.push_back({std::move(s), i, j});
    }
    i = j;
  }
  return out;
}

/// Total DP score of a segmentation under `dict`; whitespace and non-CJK
/// runs contribute nothing.
inline double segmentation_score(const SegmentedText& seg, const SegDictionary& dict) {
  double s = 0.0;
  for (const auto& w : seg.words) {
    if (!utf8::all_cjk(w.surface)) continue;
    s += dict.log_prob(dict.count(w.surface).value_or(0));
  }
  return s;
}

class UnigramSegmenter : public Segmenter {
 public:
  explicit UnigramSegmenter(std::shared_ptr<const SegDictionary> dict) : dict_(std::move(dict)) {}
  SegmentedText segment(std::string_view text) const override { return mvptok::segment(text, *dict_); }
  const SegDictionary& dictionary() const { return *dict_; }

 private:
  std::shared_ptr<const SegDictionary> dict_;
};

}  // namespace mvptok
