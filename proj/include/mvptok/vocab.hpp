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

// Vocabularies: BPE learning, the char / seg_tok / seg / derived-char
// constructions, and tokenization under each of them.
//
// Every word-initial token carries the boundary marker U+2581 ("▁");
// tokens inside a word carry none. Ids 0-4 are the reserved specials.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/cws.hpp"
#include "mvptok/utf8.hpp"

namespace mvptok {

inline constexpr std::string_view kMarker = "\xE2\x96\x81";  // U+2581
inline constexpr std::string_view kNormalization = "nfkc_lower";

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecials = 5;
inline constexpr std::string_view kSpecialTokens[kNumSpecials] = {"[PAD]", "[UNK]", "[CLS]",
                                                                  "[SEP]", "[MASK]"};

enum class TokenKind { kSpecial, kChineseSingle, kChineseMulti, kNonChinese };

inline std::string_view to_string(TokenKind k) {
  switch (k) {
    case TokenKind::kSpecial: return "special";
    case TokenKind::kChineseSingle: return "chinese_single";
    case TokenKind::kChineseMulti: return "chinese_multi";
    case TokenKind::kNonChinese: return "non_chinese";
  }
  return "?";
}

inline TokenKind parse_token_kind(std::string_view s) {
  if (s == "special") return TokenKind::kSpecial;
  if (s == "chinese_single") return TokenKind::kChineseSingle;
  if (s == "chinese_multi") return TokenKind::kChineseMulti;
  if (s == "non_chinese") return TokenKind::kNonChinese;
  throw ParseError("unknown token kind '" + std::string(s) + "'", 0);
}

/// How a vocabulary was built, which also fixes how text is pre-tokenized.
enum class VocabMode { kChar, kSegTok, kSeg, kDerivedChar };

inline std::string_view to_string(VocabMode m) {
  switch (m) {
    case VocabMode::kChar: return "char";
    case VocabMode::kSegTok: return "seg_tok";
    case VocabMode::kSeg: return "seg";
    case VocabMode::kDerivedChar: return "derived_char";
  }
  return "?";
}

inline VocabMode parse_vocab_mode(std::string_view s) {
  if (s == "char") return VocabMode::kChar;
  if (s == "seg_tok") return VocabMode::kSegTok;
  if (s == "seg") return VocabMode::kSeg;
  if (s == "derived_char") return VocabMode::kDerivedChar;
  throw ValidationError("unknown vocab mode '" + std::string(s) + "'");
}

inline bool has_marker(std::string_view tok) { return tok.substr(0, kMarker.size()) == kMarker; }

inline std::string_view strip_marker(std::string_view tok) {
  return has_marker(tok) ? tok.substr(kMarker.size()) : tok;
}

/// Kind of a non-special token, decided by its content without the marker.
inline TokenKind kind_of(std::string_view tok) {
  const auto body = strip_marker(tok);
  if (!utf8::all_cjk(body)) return TokenKind::kNonChinese;
  return utf8::length(body) == 1 ? TokenKind::kChineseSingle : TokenKind::kChineseMulti;
}

class Vocab {
 public:
  explicit Vocab(VocabMode mode = VocabMode::kSegTok) : mode_(mode) {
    for (auto s : kSpecialTokens) {
      id_of_.emplace(std::string(s), static_cast<int>(tokens_.size()));
      tokens_.emplace_back(s);
      kinds_.push_back(TokenKind::kSpecial);
    }
  }

  /// Appends `tok` unless present; returns its id either way.
  int add(const std::string& tok) {
    auto it = id_of_.find(tok);
    if (it != id_of_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    id_of_.emplace(tok, id);
    tokens_.push_back(tok);
    kinds_.push_back(kind_of(tok));
    return id;
  }

  std::optional<int> find(const std::string& tok) const {
    auto it = id_of_.find(tok);
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
  }
  int id_or_unk(const std::string& tok) const { return find(tok).value_or(kUnkId); }
  bool contains(const std::string& tok) const { return id_of_.count(tok) > 0; }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenKind kind(int id) const { return kinds_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  VocabMode mode() const { return mode_; }
  void set_mode(VocabMode m) { mode_ = m; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::size_t count_kind(TokenKind k) const {
    return static_cast<std::size_t>(std::count(kinds_.begin(), kinds_.end(), k));
  }

  std::string serialize() const {
    std::string out;
    out += "#marker ";
    out += kMarker;
    out += "\n#normalization ";
    out += kNormalization;
    out += "\n#mode ";
    out += to_string(mode_);
    out += "\n";
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      out += tokens_[i];
      out += "\t";
      out += to_string(kinds_[i]);
      out += "\n";
    }
    return out;
  }

  static Vocab parse(std::string_view text) {
    Vocab v;
    const auto lines = split_lines(text);
    std::size_t i = 0;
    std::vector<std::pair<std::string, TokenKind>> rows;
    for (; i < lines.size(); ++i) {
      const auto line = lines[i];
      if (line.empty()) continue;
      if (line[0] == '#') {
        const auto sp = line.find(' ');
        const auto key = line.substr(1, sp == std::string_view::npos ? line.size() : sp - 1);
        const auto val = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
        if (key == "marker" && val != kMarker) throw ParseError("unsupported boundary marker", i + 1);
        if (key == "normalization" && val != kNormalization) {
          throw ParseError("unsupported normalization '" + std::string(val) + "'", i + 1);
        }
        if (key == "mode") v.mode_ = parse_vocab_mode(val);
        continue;
      }
      const auto tab = line.find('\t');
      if (tab == std::string_view::npos || tab == 0) throw ParseError("vocab line is not token<TAB>kind", i + 1);
      rows.emplace_back(std::string(line.substr(0, tab)), parse_token_kind(line.substr(tab + 1)));
    }
    if (rows.size() < kNumSpecials) throw ParseError("vocab is missing the reserved tokens", 0);
    for (int s = 0; s < kNumSpecials; ++s) {
      if (rows[s].first != kSpecialTokens[s] || rows[s].second != TokenKind::kSpecial) {
        throw ParseError("reserved token " + std::string(kSpecialTokens[s]) + " not at id " +
                             std::to_string(s),
                         0);
      }
    }
    for (std::size_t r = kNumSpecials; r < rows.size(); ++r) {
      if (v.contains(rows[r].first)) throw ParseError("duplicate token " + rows[r].first, 0);
      v.add(rows[r].first);
    }
    return v;
  }

  bool operator==(const Vocab& o) const { return mode_ == o.mode_ && tokens_ == o.tokens_; }

 private:
  VocabMode mode_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> id_of_;
  std::vector<TokenKind> kinds_;
};

/// Ordered BPE merges with rank lookup.
class MergeList {
 public:
  void add(std::string left, std::string right) {
    const std::string key = left + ' ' + right;
    if (rank_.count(key)) return;
    rank_.emplace(key, merges_.size());
    merges_.emplace_back(std::move(left), std::move(right));
  }

  std::optional<std::size_t> rank(const std::string& left, const std::string& right) const {
    auto it = rank_.find(left + ' ' + right);
    if (it == rank_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const { return merges_.size(); }
  bool empty() const { return merges_.empty(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

  /// Applies merges to a symbol sequence, lowest rank first, all occurrences
  /// of a pair per pass, left to right.
  std::vector<std::string> apply(std::vector<std::string> syms) const {
    if (merges_.empty()) return syms;
    for (;;) {
      std::size_t best = SIZE_MAX;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        if (auto r = rank(syms[i], syms[i + 1]); r && *r < best) best = *r;
      }
      if (best == SIZE_MAX) return syms;
      const auto& [l, r] = merges_[best];
      std::vector<std::string> next;
      next.reserve(syms.size());
      for (std::size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == l && syms[i + 1] == r) {
          next.push_back(l + r);
          ++i;
        } else {
          next.push_back(std::move(syms[i]));
        }
      }
      syms = std::move(next);
    }
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [l, r] : merges_) out += l + " " + r + "\n";
    return out;
  }

  static MergeList parse(std::string_view text) {
    MergeList m;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto parts = split(lines[i], ' ');
      if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
        throw ParseError("merge line is not 'left right'", i + 1);
      }
      m.add(std::string(parts[0]), std::string(parts[1]));
    }
    return m;
  }

  bool operator==(const MergeList& o) const { return merges_ == o.merges_; }

 private:
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, std::size_t> rank_;
};

/// Initial BPE symbols of a word: first character marked, the rest bare.
inline std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> syms;
  for (auto c : utf8::chars(word)) syms.emplace_back(c);
  if (!syms.empty()) syms[0] = std::string(kMarker) + syms[0];
  return syms;
}

/// Everything needed to tokenize: the vocab, the subword merges it was built
/// on (seg_tok's merges for seg and derived_char), and the segmentation
/// dictionary for word-based modes.
struct VocabBundle {
  Vocab vocab;
  MergeList merges;
  std::shared_ptr<const SegDictionary> dict;

  VocabMode mode() const { return vocab.mode(); }
  bool needs_dict() const { return mode() != VocabMode::kChar; }
};

/// One pre-tokenized word: normalized surface and code-point span.
struct PreWord {
  std::string surface;
  std::size_t start = 0;
  std::size_t end = 0;
};

/// Normalizes and splits text into words. With a dictionary the words come
/// from segmentation; without one every CJK character is its own word. Non-CJK
/// runs are words either way; whitespace is dropped.
inline std::vector<PreWord> pretokenize(std::string_view text, const SegDictionary* dict) {
  const std::string norm = utf8::normalize(text);
  std::vector<PreWord> out;
  if (dict) {
    for (auto& w : segment(norm, *dict).words) {
      std::size_t p = 0;
      if (utf8::is_space(*utf8::decode_one(w.surface, p))) continue;
      out.push_back({std::move(w.surface), w.start, w.end});
    }
    return out;
  }
  const auto chars = utf8::chars(norm);
  std::size_t i = 0;
  while (i < chars.size()) {
    std::size_t p = 0;
    const auto cls = utf8::classify(*utf8::decode_one(chars[i], p));
    if (cls == utf8::CharClass::kSpace) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    if (cls == utf8::CharClass::kOther) {
      while (j < chars.size()) {
        std::size_t q = 0;
        if (utf8::classify(*utf8::decode_one(chars[j], q)) != cls) break;
        ++j;
      }
    }
    std::string s;
    for (std::size_t k = i; k < j; ++k) s.append(chars[k]);
    out.push_back({std::move(s), i, j});
    i = j;
  }
  return out;
}

/// Splits a chinese_multi piece into characters, keeping the marker on the first.
inline std::vector<std::string> split_chinese_piece(const std::string& piece) {
  const bool marked = has_marker(piece);
  std::vector<std::string> out;
  for (auto c : utf8::chars(strip_marker(piece))) out.emplace_back(c);
  if (marked && !out.empty()) out[0] = std::string(kMarker) + out[0];
  return out;
}

/// Subword pieces (vocab strings, before id lookup) for one word.
inline std::vector<std::string> encode_word(const std::string& word, const VocabBundle& b) {
  switch (b.mode()) {
    case VocabMode::kChar: {
      if (!utf8::all_cjk(word)) return b.merges.apply(initial_symbols(word));
      std::vector<std::string> out;
      for (auto c : utf8::chars(word)) out.push_back(std::string(kMarker) + std::string(c));
      return out;
    }
    case VocabMode::kSegTok:
      return b.merges.apply(initial_symbols(word));
    case VocabMode::kSeg: {
      std::string whole = std::string(kMarker) + word;
      if (b.vocab.contains(whole)) return {std::move(whole)};
      return b.merges.apply(initial_symbols(word));
    }
    case VocabMode::kDerivedChar: {
      std::vector<std::string> out;
      for (auto& p : b.merges.apply(initial_symbols(word))) {
        if (kind_of(p) == TokenKind::kChineseMulti) {
          for (auto& c : split_chinese_piece(p)) out.push_back(std::move(c));
        } else {
          out.push_back(std::move(p));
        }
      }
      return out;
    }
  }
  return {};
}

/// A sentence under one vocabulary. `offsets` are code-point spans in the
/// normalized text; `word_index` indexes the pre-tokenized words.
struct TokenSeq {
  std::vector<int> ids;
  std::vector<std::string> surfaces;
  std::vector<int> word_index;
  std::vector<std::pair<int, int>> offsets;
  int num_words = 0;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
};

/// Tokenizes already pre-tokenized words.
inline TokenSeq tokenize_words(std::span<const PreWord> words, const VocabBundle& b) {
  TokenSeq seq;
  seq.num_words = static_cast<int>(words.size());
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::size_t at = words[w].start;
    for (auto& piece : encode_word(words[w].surface, b)) {
      const std::size_t len = utf8::length(strip_marker(piece));
      const int id = b.vocab.id_or_unk(piece);
      seq.ids.push_back(id);
      seq.surfaces.push_back(b.vocab.token(id));
      seq.word_index.push_back(static_cast<int>(w));
      seq.offsets.emplace_back(static_cast<int>(at), static_cast<int>(at + len));
      at += len;
    }
  }
  return seq;
}

/// Tokenizes raw text. Word-based vocabs segment with the bundle's dictionary
/// (or `dict` when given); char vocabs split CJK per character unless a
/// dictionary is passed explicitly, in which case word_index follows its
/// words (tokens are identical either way).
inline TokenSeq tokenize(std::string_view text, const VocabBundle& b,
                         const SegDictionary* dict = nullptr) {
  if (!dict && b.needs_dict()) {
    if (!b.dict) throw ValidationError("vocab mode " + std::string(to_string(b.mode())) +
                                       " needs a segmentation dictionary");
    dict = b.dict.get();
  }
  const auto words = pretokenize(text, dict);
  return tokenize_words(words, b);
}

/// Concatenates surfaces without markers. Adjacent non-Chinese words (which
/// only arise from whitespace-separated text) are rejoined with one space.
inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  bool prev_word_non_chinese = false;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const int id = seq.ids[i];
    if (id == kUnkId) throw Error("lossy detokenization: [UNK] at position " + std::to_string(i));
    if (id < kNumSpecials) continue;
    const std::string& tok = vocab.token(id);
    if (has_marker(tok)) {
      const bool non_chinese = vocab.kind(id) == TokenKind::kNonChinese;
      if (non_chinese && prev_word_non_chinese) out += ' ';
      prev_word_non_chinese = non_chinese;
    }
    out += strip_marker(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// BPE learning

using WordCounts = std::map<std::string, std::uint64_t>;

/// Adds `b` into `a`; sharded counts merge this way before learn_bpe.
inline void merge_counts(WordCounts& a, const WordCounts& b) {
  for (const auto& [w, c] : b) a[w] += c;
}

/// Word frequencies of sentences after pre-tokenization.
inline WordCounts count_words(const std::vector<std::string>& sentences, const SegDictionary* dict) {
  WordCounts counts;
  for (const auto& s : sentences) {
    for (auto& w : pretokenize(s, dict)) ++counts[w.surface];
  }
  return counts;
}

struct BpeResult {
  MergeList merges;
  Vocab vocab;
};

/// Frequency-greedy BPE over marked words. Stops at `target_size` tokens or
/// when no adjacent pair occurs twice. Pair-count ties go to the
/// lexicographically smallest (left, right). Characters outside `alphabet`
/// never enter the vocab and never merge.
inline BpeResult learn_bpe(const WordCounts& word_counts, int target_size,
                           const std::set<std::string>& alphabet, VocabMode mode = VocabMode::kSegTok) {
  if (word_counts.empty()) throw ValidationError("learn_bpe: no words");

  std::vector<std::string> sym_str;
  std::unordered_map<std::string, int> sym_id;
  std::vector<bool> blocked;
  auto intern = [&](const std::string& s, bool is_blocked) {
    auto [it, inserted] = sym_id.emplace(s, static_cast<int>(sym_str.size()));
    if (inserted) {
      sym_str.push_back(s);
      blocked.push_back(is_blocked);
    }
    return it->second;
  };

  struct Word {
    std::vector<int> syms;
    std::int64_t count;
  };
  std::vector<Word> words;
  std::set<std::string> base;
  for (const auto& [w, c] : word_counts) {
    if (w.empty()) throw ValidationError("learn_bpe: empty word");
    Word word{{}, static_cast<std::int64_t>(c)};
    const auto chars = utf8::chars(w);
    for (std::size_t i = 0; i < chars.size(); ++i) {
      const bool ok = alphabet.count(std::string(chars[i])) > 0;
      std::string s = (i == 0 ? std::string(kMarker) : std::string()) + std::string(chars[i]);
      if (ok) base.insert(s);
      word.syms.push_back(intern(s, !ok));
    }
    words.push_back(std::move(word));
  }

  if (target_size < kNumSpecials + static_cast<int>(base.size())) {
    throw ValidationError("learn_bpe: target size " + std::to_string(target_size) +
                          " is smaller than specials + " + std::to_string(base.size()) +
                          " base symbols");
  }

  BpeResult result{MergeList{}, Vocab(mode)};
  for (const auto& s : base) result.vocab.add(s);

  auto key = [](int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  std::unordered_map<std::uint64_t, std::int64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<int>> where;
  auto mergeable = [&](int a, int b) { return !blocked[a] && !blocked[b]; };
  auto add_pairs = [&](int wi, std::int64_t sign, std::vector<std::uint64_t>* touched) {
    const auto& s = words[wi].syms;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      if (!mergeable(s[i], s[i + 1])) continue;
      const auto k = key(s[i], s[i + 1]);
      pair_count[k] += sign * words[wi].count;
      if (sign > 0) where[k].push_back(wi);
      if (touched) touched->push_back(k);
    }
  };
  for (int wi = 0; wi < static_cast<int>(words.size()); ++wi) add_pairs(wi, 1, nullptr);

  // Max-heap on count; on ties the smaller (left, right) strings win.
  struct Entry {
    std::int64_t count;
    int left, right;
  };
  auto worse = [&](const Entry& a, const Entry& b) {
    if (a.count != b.count) return a.count < b.count;
    if (sym_str[a.left] != sym_str[b.left]) return sym_str[a.left] > sym_str[b.left];
    return sym_str[a.right] > sym_str[b.right];
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [k, c] : pair_count) {
    heap.push({c, static_cast<int>(k >> 32), static_cast<int>(k & 0xFFFFFFFFu)});
  }

  std::vector<int> seen(words.size(), -1);
  int iteration = 0;
  while (result.vocab.size() < target_size && !heap.empty()) {
    const Entry top = heap.top();
    heap.pop();
    const auto k = key(top.left, top.right);
    auto pc = pair_count.find(k);
    if (pc == pair_count.end() || pc->second != top.count) continue;  // stale
    if (top.count < 2) break;

    const std::string merged = sym_str[top.left] + sym_str[top.right];
    const int merged_id = intern(merged, false);
    result.merges.add(sym_str[top.left], sym_str[top.right]);
    result.vocab.add(merged);

    std::vector<std::uint64_t> touched;
    auto affected = std::move(where[k]);
    where.erase(k);
    for (int wi : affected) {
      if (seen[wi] == iteration) continue;
      seen[wi] = iteration;
      auto& s = words[wi].syms;
      bool present = false;
      for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        if (s[i] == top.left && s[i + 1] == top.right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      add_pairs(wi, -1, &touched);
      std::vector<int> next;
      next.reserve(s.size());
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (i + 1 < s.size() && s[i] == top.left && s[i + 1] == top.right) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(s[i]);
        }
      }
      s = std::move(next);
      add_pairs(wi, 1, &touched);
    }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (auto t : touched) {
      auto it = pair_count.find(t);
      if (it == pair_count.end()) continue;
      if (it->second <= 0) {
        pair_count.erase(it);
        continue;
      }
      heap.push({it->second, static_cast<int>(t >> 32), static_cast<int>(t & 0xFFFFFFFFu)});
    }
    ++iteration;
  }
  return result;
}

inline std::set<std::string> alphabet_of(const WordCounts& counts) {
  std::set<std::string> out;
  for (const auto& [w, c] : counts) {
    for (auto ch : utf8::chars(w)) out.emplace(ch);
  }
  return out;
}

/// The `char` vocabulary: every CJK character is its own word, so Chinese
/// tokens are all single characters; non-CJK runs may form subwords.
inline VocabBundle build_char_vocab(const std::vector<std::string>& corpus, int target_size) {
  if (corpus.empty()) throw ValidationError("build_char_vocab: empty corpus");
  const auto counts = count_words(corpus, nullptr);
  if (counts.empty()) throw ValidationError("build_char_vocab: corpus has no words");
  auto bpe = learn_bpe(counts, target_size, alphabet_of(counts), VocabMode::kChar);
  return {std::move(bpe.vocab), std::move(bpe.merges), nullptr};
}

/// The `seg_tok` vocabulary: BPE learned over segmented words.
inline VocabBundle build_seg_tok_vocab(const std::vector<std::string>& corpus,
                                       std::shared_ptr<const SegDictionary> dict, int target_size) {
  if (corpus.empty()) throw ValidationError("build_seg_tok_vocab: empty corpus");
  if (!dict) throw ValidationError("build_seg_tok_vocab: dictionary required");
  const auto counts = count_words(corpus, dict.get());
  if (counts.empty()) throw ValidationError("build_seg_tok_vocab: corpus has no words");
  auto bpe = learn_bpe(counts, target_size, alphabet_of(counts), VocabMode::kSegTok);
  return {std::move(bpe.vocab), std::move(bpe.merges), std::move(dict)};
}

/// Raised when the top-N entries cannot reach the requested coverage.
class CoverageError : public ValidationError {
 public:
  CoverageError(double achieved, double required, int n)
      : ValidationError("top " + std::to_string(n) + " entries cover " + format_double(achieved, 6) +
                        " of word occurrences, need " + format_double(required, 6) +
                        "; raise N"),
        achieved_(achieved) {}
  double achieved() const { return achieved_; }

 private:
  double achieved_;
};

struct SegVocabResult {
  VocabBundle bundle;
  double coverage = 0.0;          // covered word occurrences / all word occurrences
  std::size_t natural_words = 0;  // entries kept as whole segmented words
  int rounds = 0;
};

/// The `seg` vocabulary of size `n` (specials included):
///  (a) segment the corpus and count words;
///  (b) inject every seg_tok token with frequency 0;
///  (c) tokenize tail Chinese words and all non-Chinese words with seg_tok,
///      adding their frequency to the sub-tokens;
///  (d) sort by frequency and keep the top n if they cover `coverage` of the
///      corpus word occurrences.
/// The head in (c) is the set of words surviving the cut in (d); the two
/// steps are iterated to a fixed point (at most 10 rounds).
inline SegVocabResult build_seg_vocab(const std::vector<std::string>& corpus,
                                      std::shared_ptr<const SegDictionary> dict,
                                      const VocabBundle& seg_tok, int n, double coverage) {
  if (corpus.empty()) throw ValidationError("build_seg_vocab: empty corpus");
  if (!dict) throw ValidationError("build_seg_vocab: dictionary required");
  if (!(coverage > 0.0 && coverage <= 1.0)) throw ValidationError("coverage must be in (0, 1]");
  if (n <= kNumSpecials) throw ValidationError("seg vocab size must exceed the reserved tokens");
  if (seg_tok.mode() != VocabMode::kSegTok) throw ValidationError("build_seg_vocab needs a seg_tok vocab");

  const WordCounts counts = count_words(corpus, dict.get());
  std::uint64_t total = 0;
  struct WordInfo {
    std::string whole;
    bool chinese;
    std::uint64_t count;
    std::vector<std::string> pieces;
  };
  std::vector<WordInfo> info;
  for (const auto& [w, c] : counts) {
    total += c;
    info.push_back({std::string(kMarker) + w, utf8::all_cjk(w), c, seg_tok.merges.apply(initial_symbols(w))});
  }
  if (total == 0) throw ValidationError("build_seg_vocab: corpus has no words");

  const std::size_t slots = static_cast<std::size_t>(n - kNumSpecials);
  std::vector<bool> head(info.size());
  for (std::size_t i = 0; i < info.size(); ++i) head[i] = info[i].chinese;

  std::vector<std::string> selected;
  int rounds = 0;
  for (; rounds < 10;) {
    ++rounds;
    std::unordered_map<std::string, std::uint64_t> freq;
    for (int id = kNumSpecials; id < seg_tok.vocab.size(); ++id) freq.emplace(seg_tok.vocab.token(id), 0);
    for (std::size_t i = 0; i < info.size(); ++i) {
      if (head[i]) {
        freq[info[i].whole] += info[i].count;
      } else {
        for (const auto& p : info[i].pieces) freq[p] += info[i].count;
      }
    }
    std::vector<std::pair<std::string, std::uint64_t>> sorted(freq.begin(), freq.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (sorted.size() < slots) {
      throw ValidationError("build_seg_vocab: only " + std::to_string(sorted.size() + kNumSpecials) +
                            " candidate entries for N=" + std::to_string(n));
    }
    sorted.resize(slots);
    std::unordered_set<std::string> top;
    for (auto& [t, f] : sorted) top.insert(t);

    std::vector<bool> next(info.size());
    for (std::size_t i = 0; i < info.size(); ++i) next[i] = info[i].chinese && top.count(info[i].whole);
    selected.clear();
    for (auto& [t, f] : sorted) selected.push_back(t);
    if (next == head) break;
    head = std::move(next);
  }

  std::unordered_set<std::string> chosen(selected.begin(), selected.end());
  std::uint64_t covered = 0;
  std::unordered_set<std::string> natural;
  for (std::size_t i = 0; i < info.size(); ++i) {
    if (info[i].chinese && chosen.count(info[i].whole)) {
      covered += info[i].count;
      natural.insert(info[i].whole);
      continue;
    }
    bool ok = true;
    for (const auto& p : info[i].pieces) ok = ok && chosen.count(p);
    if (ok) covered += info[i].count;
  }
  const double achieved = static_cast<double>(covered) / static_cast<double>(total);
  if (achieved < coverage) throw CoverageError(achieved, coverage, n);

  SegVocabResult res{{Vocab(VocabMode::kSeg), seg_tok.merges, std::move(dict)}, achieved, natural.size(), rounds};
  for (const auto& t : selected) res.bundle.vocab.add(t);
  return res;
}

/// Splits every chinese_multi token into characters (marker kept on the
/// first), dedupes, and keeps everything else. Tokenizing with the result
/// uses the source merges and then splits, so it is [UNK]-free wherever the
/// source vocab is.
inline Vocab derive_char_vocab(const Vocab& seg_tok) {
  Vocab out(VocabMode::kDerivedChar);
  for (int id = kNumSpecials; id < seg_tok.size(); ++id) {
    const auto& tok = seg_tok.token(id);
    if (seg_tok.kind(id) == TokenKind::kChineseMulti) {
      for (const auto& c : split_chinese_piece(tok)) out.add(c);
    } else {
      out.add(tok);
    }
  }
  return out;
}

inline VocabBundle derive_char_bundle(const VocabBundle& seg_tok) {
  return {derive_char_vocab(seg_tok.vocab), seg_tok.merges, seg_tok.dict};
}

// ---------------------------------------------------------------------------
// Stats and persistence

struct VocabStats {
  int size = 0;
  std::map<TokenKind, std::size_t> kind_counts;
  std::map<TokenKind, double> kind_shares;  // over non-special tokens
  double coverage = 0.0;                    // word occurrences tokenized without [UNK]
  double unk_rate = 0.0;                    // [UNK] tokens / all tokens
  double tokens_per_char = 0.0;
  std::size_t sentences = 0;
  std::size_t tokens = 0;

  std::string to_text() const {
    std::string out;
    out += "size=" + std::to_string(size) + "\n";
    for (auto k : {TokenKind::kSpecial, TokenKind::kChineseSingle, TokenKind::kChineseMulti,
                   TokenKind::kNonChinese}) {
      auto c = kind_counts.count(k) ? kind_counts.at(k) : 0;
      out += "count." + std::string(to_string(k)) + "=" + std::to_string(c) + "\n";
      if (k != TokenKind::kSpecial) {
        auto s = kind_shares.count(k) ? kind_shares.at(k) : 0.0;
        out += "share." + std::string(to_string(k)) + "=" + format_double(s) + "\n";
      }
    }
    out += "sentences=" + std::to_string(sentences) + "\n";
    out += "tokens=" + std::to_string(tokens) + "\n";
    out += "coverage=" + format_double(coverage) + "\n";
    out += "unk_rate=" + format_double(unk_rate) + "\n";
    out += "tokens_per_char=" + format_double(tokens_per_char) + "\n";
    return out;
  }
};

inline VocabStats vocab_stats(const VocabBundle& b, const std::vector<std::string>& corpus) {
  VocabStats st;
  st.size = b.vocab.size();
  for (int id = 0; id < b.vocab.size(); ++id) ++st.kind_counts[b.vocab.kind(id)];
  const double non_special = static_cast<double>(b.vocab.size() - kNumSpecials);
  for (auto k : {TokenKind::kChineseSingle, TokenKind::kChineseMulti, TokenKind::kNonChinese}) {
    st.kind_shares[k] = non_special > 0 ? static_cast<double>(st.kind_counts[k]) / non_special : 0.0;
  }
  std::size_t words = 0, covered = 0, unk = 0, chars = 0;
  const SegDictionary* dict = b.needs_dict() ? b.dict.get() : nullptr;
  if (b.needs_dict() && !dict) throw ValidationError("vocab_stats: dictionary required");
  for (const auto& s : corpus) {
    const auto pw = pretokenize(s, dict);
    const auto seq = tokenize_words(pw, b);
    ++st.sentences;
    st.tokens += seq.size();
    std::vector<bool> bad(pw.size());
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq.ids[i] == kUnkId) {
        ++unk;
        bad[seq.word_index[i]] = true;
      }
    }
    for (std::size_t w = 0; w < pw.size(); ++w) {
      ++words;
      chars += pw[w].end - pw[w].start;
      if (!bad[w]) ++covered;
    }
  }
  st.coverage = words ? static_cast<double>(covered) / static_cast<double>(words) : 0.0;
  st.unk_rate = st.tokens ? static_cast<double>(unk) / static_cast<double>(st.tokens) : 0.0;
  st.tokens_per_char = chars ? static_cast<double>(st.tokens) / static_cast<double>(chars) : 0.0;
  return st;
}

/// Writes vocab.txt, merges.txt and (when present) dict.txt into `dir`.
inline void save_bundle(const VocabBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file((dir / "vocab.txt").string(), b.vocab.serialize());
  write_file((dir / "merges.txt").string(), b.merges.serialize());
  if (b.dict) write_file((dir / "dict.txt").string(), b.dict->serialize());
}

inline VocabBundle load_bundle(const std::filesystem::path& dir) {
  VocabBundle b{Vocab::parse(read_file((dir / "vocab.txt").string())),
                MergeList::parse(read_file((dir / "merges.txt").string())), nullptr};
  if (std::filesystem::exists(dir / "dict.txt")) {
    b.dict = std::make_shared<const SegDictionary>(load_dictionary_file((dir / "dict.txt").string()));
  }
  if (b.needs_dict() && !b.dict) {
    throw ValidationError("vocab in " + dir.string() + " needs dict.txt");
  }
  return b;
}

}  // namespace mvptok
