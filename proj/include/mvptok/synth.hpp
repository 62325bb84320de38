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

// Deterministic synthetic Chinese text: a Zipf-weighted lexicon over a fixed
// character inventory, templated sentences with person/location/organization
// mentions, and matching classification, pair and tagging datasets.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/utf8.hpp"

namespace mvptok::synth {

// Frequent hanzi; duplicates are removed on load.
inline constexpr std::string_view kCharPool =
    "的一是不了人我在有他这为之大来以个中上们到说国和地也子时道出而要于就下得可你年生自会那后能对着事其里所去行过家"
    "十用发天如然作方成者多日都三小军二无同么经法当起与好看学进种将还分此心前面又定见只主没公从知使全意两长把机本外"
    "开动因现实点果加相工文明力高理气回第提西电向物问体正新情月老重间位期关路次白实山水车手美间东平等合反色业接代员"
    "题光走表通性最变内信入教头样门放告更处常化海世特望何连口南北打声已品话术少直王战流干才思百书识受活风政元今先"
    "城放义结该红格需给马指取论运交据研林究规任图米言比完花节民科华数利制万则带各单办记住早产历系计决林金确容往量"
    "难并件题深英深报尽领传统观场求清达收离包音安德死设队改算认复组及步许管类团角远程备建达转友区千克愿难江叫离"
    "轻段五息奇快失音思飞集愿陆服紧半功注专夜术病极装近钱影消士视讲团武引切造府号青愿字够确尔火级满爱选边费条"
    "热志阿称虽存强越亲破式爸阳吃约李张刘陈杨黄赵吴周徐孙朱马胡郭林何高罗郑梁谢宋唐许韩冯邓曹彭曾";

inline std::vector<std::string> char_pool() {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto c : utf8::chars(kCharPool)) {
    if (seen.insert(std::string(c)).second) out.emplace_back(c);
  }
  return out;
}

struct Options {
  std::uint64_t seed = 2026;
  int lexicon_size = 6000;
  double zipf_exponent = 1.05;
  int min_words = 6;
  int max_words = 18;
  double entity_rate = 0.25;     // chance of an entity slot per sentence position
  double non_chinese_rate = 0.04;  // chance of a latin/digit token per sentence
};

/// Named entity mention inside a generated sentence (character offsets).
struct Mention {
  int start = 0;
  int end = 0;
  std::string label;
};

struct Sentence {
  std::vector<std::string> words;  // includes the final punctuation mark
  std::vector<Mention> mentions;

  std::string text() const {
    std::string s;
    for (const auto& w : words) s += w;
    return s;
  }
};

/// The generator: lexicon, entity inventories and a seeded stream.
class Generator {
 public:
  explicit Generator(const Options& opt = {}) : opt_(opt), rng_(opt.seed) {
    Rng lex_rng = rng_.fork(1);
    chars_ = char_pool();
    build_lexicon(lex_rng);
    build_entities(lex_rng);
    double z = 0.0;
    cumulative_.reserve(lexicon_.size());
    for (std::size_t r = 0; r < lexicon_.size(); ++r) {
      z += 1.0 / std::pow(static_cast<double>(r + 1), opt_.zipf_exponent);
      cumulative_.push_back(z);
    }
    for (auto& c : cumulative_) c /= z;
  }

  const std::vector<std::string>& lexicon() const { return lexicon_; }
  const std::vector<std::string>& positive_cues() const { return positive_; }
  const std::vector<std::string>& negative_cues() const { return negative_; }
  const std::vector<std::string>& topics() const { return topics_; }

  /// A lexicon word drawn by Zipf rank.
  const std::string& word(Rng& rng) const {
    const double u = rng.uniform_real();
    const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), u);
    return lexicon_[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), lexicon_.size() - 1)];
  }

  Sentence sentence(Rng& rng) const {
    Sentence s;
    int at = 0;
    auto push = [&](const std::string& w, const char* label) {
      const int len = static_cast<int>(utf8::length(w));
      if (label) s.mentions.push_back({at, at + len, label});
      s.words.push_back(w);
      at += len;
    };
    const int n = opt_.min_words + static_cast<int>(rng.uniform(static_cast<std::uint64_t>(opt_.max_words - opt_.min_words + 1)));
    bool prev_entity = false;
    for (int i = 0; i < n; ++i) {
      if (!prev_entity && rng.uniform_real() < opt_.entity_rate) {
        const int kind = static_cast<int>(rng.uniform(3));
        if (kind == 0) push(persons_[rng.uniform(persons_.size())], "PER");
        else if (kind == 1) push(places_[rng.uniform(places_.size())], "LOC");
        else push(orgs_[rng.uniform(orgs_.size())], "ORG");
        prev_entity = true;
        continue;
      }
      prev_entity = false;
      if (rng.uniform_real() < opt_.non_chinese_rate) {
        push(std::to_string(1 + rng.uniform(2030)), nullptr);
        continue;
      }
      push(word(rng), nullptr);
    }
    static const char* kEnd[] = {"。", "。", "。", "！", "？"};
    push(kEnd[rng.uniform(5)], nullptr);
    return s;
  }

  /// Documents of several sentences, one per line, until `bytes` is reached.
  std::string corpus(std::size_t bytes, std::uint64_t salt = 2) const {
    Rng rng = Rng(opt_.seed).fork(salt);
    std::string out;
    while (out.size() < bytes) {
      const int k = 1 + static_cast<int>(rng.uniform(4));
      for (int i = 0; i < k; ++i) out += sentence(rng).text();
      out += '\n';
    }
    return out;
  }

  /// Dictionary text (`word<TAB>count`) with counts from a reference sample:
  /// the whole lexicon plus every entity string.
  std::string dictionary() const {
    Rng rng = Rng(opt_.seed).fork(3);
    std::map<std::string, std::uint64_t> counts;
    for (const auto& w : lexicon_) counts[w] = 1;
    for (const auto* list : {&persons_, &places_, &orgs_, &positive_, &negative_, &topics_}) {
      for (const auto& w : *list) counts[w] += 2;
    }
    for (int i = 0; i < 20000; ++i) {
      for (const auto& w : sentence(rng).words) {
        if (utf8::all_cjk(w)) ++counts[w];
      }
    }
    std::string out;
    for (const auto& [w, c] : counts) out += w + "\t" + std::to_string(c) + "\n";
    return out;
  }

  /// `label<TAB>text` sentiment records; the label is decided by 2-3 cue words.
  std::string classify_dataset(int n, std::uint64_t salt) const {
    Rng rng = Rng(opt_.seed).fork(salt);
    std::string out;
    for (int i = 0; i < n; ++i) {
      const bool pos = rng.uniform(2) == 0;
      const auto& cues = pos ? positive_ : negative_;
      Sentence s = sentence(rng);
      for (std::uint64_t k = 0, n_cues = 2 + rng.uniform(2); k < n_cues; ++k) {
        const std::size_t at = rng.uniform(s.words.size() + 1);
        s.words.insert(s.words.begin() + static_cast<std::ptrdiff_t>(at), cues[rng.uniform(cues.size())]);
      }
      out += std::string(pos ? "pos" : "neg") + "\t" + s.text() + "\n";
    }
    return out;
  }

  /// `label<TAB>a<TAB>b`; label 1 when both sentences mention the same topic.
  std::string pair_dataset(int n, std::uint64_t salt) const {
    Rng rng = Rng(opt_.seed).fork(salt);
    std::string out;
    for (int i = 0; i < n; ++i) {
      const bool same = rng.uniform(2) == 0;
      const std::size_t ta = rng.uniform(topics_.size());
      std::size_t tb = ta;
      if (!same) tb = (ta + 1 + rng.uniform(topics_.size() - 1)) % topics_.size();
      auto with_topic = [&](std::size_t t) {
        Sentence s = sentence(rng);
        s.words.insert(s.words.begin(), topics_[t]);
        return s.text();
      };
      const std::string a = with_topic(ta);
      out += std::string(same ? "1" : "0") + "\t" + a + "\t" + with_topic(tb) + "\n";
    }
    return out;
  }

  /// Character-per-line BIO records with blank lines between sentences.
  std::string tag_dataset(int n, std::uint64_t salt) const {
    Rng rng = Rng(opt_.seed).fork(salt);
    std::string out;
    for (int i = 0; i < n; ++i) {
      const Sentence s = sentence(rng);
      const std::string text = s.text();
      const auto chars = utf8::chars(text);
      std::vector<std::string> tags(chars.size(), "O");
      for (const auto& m : s.mentions) {
        tags[m.start] = "B-" + m.label;
        for (int k = m.start + 1; k < m.end; ++k) tags[k] = "I-" + m.label;
      }
      for (std::size_t k = 0; k < chars.size(); ++k) out += std::string(chars[k]) + " " + tags[k] + "\n";
      out += "\n";
    }
    return out;
  }

 private:
  std::string random_word(Rng& rng, int len) const {
    std::string w;
    for (int i = 0; i < len; ++i) {
      // Square of a uniform favors the front (more frequent) part of the pool.
      const double u = rng.uniform_real();
      w += chars_[static_cast<std::size_t>(u * u * static_cast<double>(chars_.size()))];
    }
    return w;
  }

  void build_lexicon(Rng& rng) {
    std::set<std::string> seen;
    // Single characters come first so the most frequent ranks include them.
    for (std::size_t i = 0; i < 60 && i < chars_.size(); ++i) {
      seen.insert(chars_[i]);
      lexicon_.push_back(chars_[i]);
    }
    while (static_cast<int>(lexicon_.size()) < opt_.lexicon_size) {
      const double u = rng.uniform_real();
      const int len = u < 0.1 ? 1 : u < 0.72 ? 2 : u < 0.92 ? 3 : 4;
      std::string w = random_word(rng, len);
      if (seen.insert(w).second) lexicon_.push_back(std::move(w));
    }
    // Interleave lengths across ranks.
    for (std::size_t i = lexicon_.size(); i > 61; --i) {
      std::swap(lexicon_[i - 1], lexicon_[60 + rng.uniform(i - 60)]);
    }
    auto pick = [&](std::size_t k) {
      std::vector<std::string> out;
      while (out.size() < k) {
        std::string w = random_word(rng, 2);
        if (seen.insert(w).second) out.push_back(std::move(w));
      }
      return out;
    };
    positive_ = pick(8);
    negative_ = pick(8);
    topics_ = pick(12);
  }

  void build_entities(Rng& rng) {
    static const char* kSurnames = "李张刘陈杨黄赵吴周徐孙朱马胡郭林何高罗郑梁谢宋唐许韩冯邓曹彭曾";
    static const char* kPlaceSuffix[] = {"市", "省", "县", "江", "山"};
    static const char* kOrgSuffix[] = {"公司", "大学", "银行", "集团", "医院"};
    const auto surnames = utf8::chars(kSurnames);
    std::set<std::string> seen;
    auto unique = [&](std::vector<std::string>& dst, std::string w) {
      if (seen.insert(w).second) dst.push_back(std::move(w));
    };
    while (persons_.size() < 300) {
      unique(persons_, std::string(surnames[rng.uniform(surnames.size())]) + random_word(rng, 1 + static_cast<int>(rng.uniform(2))));
    }
    while (places_.size() < 200) unique(places_, random_word(rng, 2) + kPlaceSuffix[rng.uniform(5)]);
    while (orgs_.size() < 150) unique(orgs_, random_word(rng, 2) + kOrgSuffix[rng.uniform(5)]);
  }

  Options opt_;
  Rng rng_;
  std::vector<std::string> chars_;
  std::vector<std::string> lexicon_;
  std::vector<double> cumulative_;
  std::vector<std::string> positive_, negative_, topics_;
  std::vector<std::string> persons_, places_, orgs_;
};

}  // namespace mvptok::synth
