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

// Dual-vocabulary alignment and whole-word masking plans.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/vocab.hpp"

namespace mvptok {

class AlignmentError : public Error {
 public:
  AlignmentError(const std::string& what, int word) : Error(what), word_(word) {}
  int word() const { return word_; }

 private:
  int word_;
};

/// For each coarse token j, the half-open range of fine tokens it covers.
struct Alignment {
  std::vector<std::pair<int, int>> spans;

  std::size_t size() const { return spans.size(); }
  bool operator==(const Alignment&) const = default;
};

/// True when the spans are sorted, non-empty, disjoint and tile [0, fine_len).
inline bool is_partition(const Alignment& a, std::size_t fine_len) {
  int at = 0;
  for (const auto& [b, e] : a.spans) {
    if (b != at || e <= b) return false;
    at = e;
  }
  return static_cast<std::size_t>(at) == fine_len;
}

inline std::string stripped_concat(const TokenSeq& seq, int begin, int end) {
  std::string s;
  for (int i = begin; i < end; ++i) s += strip_marker(seq.surfaces[i]);
  return s;
}

/// Aligns two tokenizations of the same pre-tokenized words. Spans follow
/// word_index runs and character offsets; every span must reproduce the
/// coarse surface, which rules out [UNK] on only one side.
inline Alignment align(const TokenSeq& fine, const TokenSeq& coarse) {
  Alignment out;
  out.spans.reserve(coarse.size());
  int i = 0;
  const int nf = static_cast<int>(fine.size());
  for (std::size_t j = 0; j < coarse.size(); ++j) {
    const int word = coarse.word_index[j];
    const auto [cb, ce] = coarse.offsets[j];
    if (i >= nf || fine.word_index[i] != word || fine.offsets[i].first != cb) {
      throw AlignmentError("alignment: fine and coarse token boundaries differ in word " +
                               std::to_string(word),
                           word);
    }
    const int begin = i;
    while (i < nf && fine.word_index[i] == word && fine.offsets[i].second <= ce) {
      ++i;
      if (fine.offsets[i - 1].second == ce) break;
    }
    if (i == begin || fine.offsets[i - 1].second != ce) {
      throw AlignmentError("alignment: fine tokens cross a coarse token boundary in word " +
                               std::to_string(word),
                           word);
    }
    if (stripped_concat(fine, begin, i) != strip_marker(coarse.surfaces[j])) {
      throw AlignmentError("alignment: surfaces irreconcilable in word " + std::to_string(word) +
                               " (" + stripped_concat(fine, begin, i) + " vs " +
                               std::string(strip_marker(coarse.surfaces[j])) + ")",
                           word);
    }
    out.spans.emplace_back(begin, i);
  }
  if (i != nf) throw AlignmentError("alignment: trailing fine tokens", nf ? fine.word_index[i] : -1);
  return out;
}

/// One sentence under a fine and (optionally) a coarse vocabulary.
struct TokenizedPair {
  TokenSeq fine;
  TokenSeq coarse;
  Alignment alignment;
  int num_words = 0;
  bool has_coarse = false;

  static TokenizedPair single(TokenSeq seq) {
    TokenizedPair p;
    p.num_words = seq.num_words;
    p.fine = std::move(seq);
    return p;
  }
};

/// Tokenizes `text` under both bundles from one shared word segmentation.
inline TokenizedPair tokenize_pair(std::string_view text, const VocabBundle& fine,
                                   const VocabBundle* coarse, const SegDictionary& dict) {
  const auto words = pretokenize(text, &dict);
  TokenizedPair p;
  p.fine = tokenize_words(words, fine);
  p.num_words = static_cast<int>(words.size());
  if (coarse) {
    p.coarse = tokenize_words(words, *coarse);
    p.alignment = align(p.fine, p.coarse);
    p.has_coarse = true;
  }
  return p;
}

enum class Corruption : std::uint8_t { kMask, kRandom, kKeep };
enum class Schedule : std::uint8_t { kFineOnly, kCoarseOnly, kBoth };
enum class Side : std::uint8_t { kFine, kCoarse };

inline std::string_view to_string(Schedule s) {
  switch (s) {
    case Schedule::kFineOnly: return "fine_only";
    case Schedule::kCoarseOnly: return "coarse_only";
    case Schedule::kBoth: return "both";
  }
  return "?";
}

inline bool predicts(Schedule s, Side side) {
  return s == Schedule::kBoth || (side == Side::kFine ? s == Schedule::kFineOnly : s == Schedule::kCoarseOnly);
}

/// Per-position masking of one side. `targets` and `replacement` are -1 on
/// positions that are not masked.
struct SideMask {
  std::vector<bool> indicators;
  std::vector<int> targets;
  std::vector<Corruption> corruption;
  std::vector<int> replacement;

  std::size_t size() const { return indicators.size(); }
  std::size_t masked() const { return static_cast<std::size_t>(std::count(indicators.begin(), indicators.end(), true)); }
};

struct MaskingPlan {
  std::vector<int> masked_words;  // sorted
  SideMask fine;
  SideMask coarse;
  Schedule schedule = Schedule::kBoth;

  bool empty() const { return masked_words.empty(); }
  const SideMask& side(Side s) const { return s == Side::kFine ? fine : coarse; }
};

struct MaskOptions {
  double rate = 0.15;
  bool use_schedule = true;
  double mask_prob = 0.8;
  double random_prob = 0.1;
  std::optional<Corruption> force;  // test override for every masked word
};

/// Number of words to mask: rate * n rounded stochastically (unbiased), at
/// least one for sentences of four or more words.
inline int masked_word_count(int n, double rate, Rng& rng) {
  if (n <= 0) return 0;
  const double x = rate * n;
  int k;
  if (std::abs(x - std::round(x)) < 1e-9) {
    k = static_cast<int>(std::round(x));
  } else {
    k = static_cast<int>(std::floor(x));
    if (rng.uniform_real() < x - std::floor(x)) ++k;
  }
  if (n >= 4) k = std::max(k, 1);
  return std::min(k, n);
}

namespace detail {

inline SideMask build_side(const TokenSeq& seq, const std::vector<bool>& word_masked,
                           const std::vector<Corruption>& word_corruption, int vocab_size, Rng& rng) {
  SideMask m;
  const std::size_t n = seq.size();
  m.indicators.assign(n, false);
  m.targets.assign(n, -1);
  m.corruption.assign(n, Corruption::kKeep);
  m.replacement.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    const int w = seq.word_index[i];
    if (!word_masked[w]) continue;
    m.indicators[i] = true;
    m.targets[i] = seq.ids[i];
    m.corruption[i] = word_corruption[w];
    if (m.corruption[i] == Corruption::kRandom) {
      const auto span = static_cast<std::uint64_t>(std::max(1, vocab_size - kNumSpecials));
      m.replacement[i] = kNumSpecials + static_cast<int>(rng.uniform(span));
    }
  }
  return m;
}

}  // namespace detail

/// Whole-word masking: picks words uniformly without replacement, marks all
/// their tokens on both sides, draws one corruption per word (mask / random
/// / keep) applied identically on both sides, and samples which side is
/// predicted (fine only, coarse only, both) with probability 1/3 each.
inline MaskingPlan plan_whole_word_mask(const TokenizedPair& pair, const MaskOptions& opt,
                                        int fine_vocab_size, int coarse_vocab_size, Rng& rng) {
  if (!(opt.rate > 0.0 && opt.rate < 1.0)) throw ValidationError("masking rate must be in (0, 1)");
  MaskingPlan plan;
  const int n = pair.num_words;
  if (n == 0 || pair.fine.empty()) return plan;

  const int k = masked_word_count(n, opt.rate, rng);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(rng.uniform(static_cast<std::uint64_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  plan.masked_words.assign(order.begin(), order.begin() + k);
  std::sort(plan.masked_words.begin(), plan.masked_words.end());

  std::vector<bool> word_masked(n, false);
  std::vector<Corruption> word_corruption(n, Corruption::kKeep);
  for (int w : plan.masked_words) {
    word_masked[w] = true;
    if (opt.force) {
      word_corruption[w] = *opt.force;
    } else {
      const double u = rng.uniform_real();
      word_corruption[w] = u < opt.mask_prob ? Corruption::kMask
                           : u < opt.mask_prob + opt.random_prob ? Corruption::kRandom
                                                                 : Corruption::kKeep;
    }
  }
  plan.fine = detail::build_side(pair.fine, word_masked, word_corruption, fine_vocab_size, rng);
  if (pair.has_coarse) {
    plan.coarse = detail::build_side(pair.coarse, word_masked, word_corruption, coarse_vocab_size, rng);
  }
  plan.schedule = opt.use_schedule ? static_cast<Schedule>(rng.uniform(3)) : Schedule::kBoth;
  return plan;
}

/// Plan for an explicit word set with one corruption for all of them.
inline MaskingPlan plan_words(const TokenizedPair& pair, std::vector<int> words, Schedule schedule,
                              Corruption corruption, int fine_vocab_size, int coarse_vocab_size, Rng& rng) {
  MaskingPlan plan;
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<bool> word_masked(pair.num_words, false);
  for (int w : words) {
    if (w < 0 || w >= pair.num_words) throw ValidationError("plan_words: word index out of range");
    word_masked[w] = true;
  }
  const std::vector<Corruption> word_corruption(pair.num_words, corruption);
  plan.masked_words = std::move(words);
  plan.fine = detail::build_side(pair.fine, word_masked, word_corruption, fine_vocab_size, rng);
  if (pair.has_coarse) {
    plan.coarse = detail::build_side(pair.coarse, word_masked, word_corruption, coarse_vocab_size, rng);
  }
  plan.schedule = schedule;
  return plan;
}

struct CorruptedSide {
  std::vector<int> ids;
  std::vector<int> labels;  // original id where masked, -1 elsewhere
};

inline CorruptedSide apply_plan(const TokenSeq& seq, const MaskingPlan& plan, Side side) {
  const SideMask& m = plan.side(side);
  const bool no_mask = plan.empty() && m.size() == 0;
  if (!no_mask && m.size() != seq.size()) {
    throw ValidationError("apply_plan: plan was built for a sequence of " + std::to_string(m.size()) +
                          " tokens on this side, got " + std::to_string(seq.size()));
  }
  CorruptedSide out{seq.ids, std::vector<int>(seq.size(), -1)};
  if (no_mask) return out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (!m.indicators[i]) continue;
    out.labels[i] = seq.ids[i];
    switch (m.corruption[i]) {
      case Corruption::kMask: out.ids[i] = kMaskId; break;
      case Corruption::kRandom: out.ids[i] = m.replacement[i]; break;
      case Corruption::kKeep: break;
    }
  }
  return out;
}

/// One line per plan for debugging: masked words and 0/1 indicator strings.
inline std::string dump_plan(const MaskingPlan& plan) {
  std::string out = "words=";
  for (std::size_t i = 0; i < plan.masked_words.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(plan.masked_words[i]);
  }
  auto bits = [](const SideMask& m) {
    std::string s;
    for (bool b : m.indicators) s += b ? '1' : '0';
    return s;
  };
  out += "\tfine=" + bits(plan.fine) + "\tcoarse=" + bits(plan.coarse) + "\tschedule=";
  out += to_string(plan.schedule);
  return out;
}

}  // namespace mvptok
