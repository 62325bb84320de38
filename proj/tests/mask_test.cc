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

#include "mvptok/mask.hpp"

#include <gtest/gtest.h>

#include <string>
#include <vector>

namespace mvptok {
namespace {

const std::string M(kMarker);

class MaskTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dict_ = std::make_shared<const SegDictionary>(load_dictionary(
        "我\t100\n喜欢\t50\n篮球\t40\n他\t60\n也\t70\n是\t90\n足球\t20\n我们\t30\n运动\t25\n打\t10\n"));
    words_ = {"我", "喜欢", "篮球", "他", "也", "是", "足球", "我们", "运动", "打", "abc", "，"};
    Rng rng(9);
    for (int i = 0; i < 200; ++i) corpus_.push_back(RandomSentence(rng, 2 + rng.uniform(10)));
    corpus_.push_back("我喜欢篮球");
    seg_tok_ = build_seg_tok_vocab(corpus_, dict_, 60);
    derived_ = derive_char_bundle(seg_tok_);
  }

  std::string RandomSentence(Rng& rng, std::uint64_t n) {
    std::string s;
    for (std::uint64_t k = 0; k < n; ++k) s += words_[rng.uniform(words_.size())];
    return s;
  }

  TokenizedPair Pair(const std::string& s) { return tokenize_pair(s, derived_, &seg_tok_, *dict_); }

  std::shared_ptr<const SegDictionary> dict_;
  std::vector<std::string> words_, corpus_;
  VocabBundle seg_tok_, derived_;
};

TEST_F(MaskTest, BasketballAlignment) {
  auto p = Pair("我喜欢篮球");
  EXPECT_EQ(p.fine.surfaces, (std::vector<std::string>{M + "我", M + "喜", "欢", M + "篮", "球"}));
  EXPECT_EQ(p.alignment.spans, (std::vector<std::pair<int, int>>{{0, 1}, {1, 3}, {3, 5}}));
}

TEST_F(MaskTest, IdenticalSequencesAlignOneToOne) {
  auto seq = tokenize("他也是", seg_tok_);
  auto a = align(seq, seq);
  ASSERT_EQ(a.size(), seq.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.spans[i], std::make_pair(int(i), int(i) + 1));
}

TEST_F(MaskTest, UnkOnOneSideIsAlignmentError) {
  auto coarse = tokenize("我喜欢", seg_tok_);
  auto fine = tokenize("我喜欢", derived_);
  fine.ids[1] = kUnkId;
  fine.surfaces[1] = "[UNK]";
  try {
    align(fine, coarse);
    FAIL();
  } catch (const AlignmentError& e) {
    EXPECT_EQ(e.word(), 1);
  }
}

TEST_F(MaskTest, PartitionHoldsOnRandomSentences) {
  for (const auto& s : corpus_) {
    auto p = Pair(s);
    ASSERT_TRUE(is_partition(p.alignment, p.fine.size())) << s;
    // Oracle: each span's stripped fine surfaces spell the coarse token.
    for (std::size_t j = 0; j < p.coarse.size(); ++j) {
      std::string joined;
      for (int i = p.alignment.spans[j].first; i < p.alignment.spans[j].second; ++i) {
        joined += strip_marker(p.fine.surfaces[i]);
      }
      EXPECT_EQ(joined, strip_marker(p.coarse.surfaces[j]));
    }
  }
}

TEST_F(MaskTest, TwentyWordSentenceMasksThree) {
  std::string s;
  for (int i = 0; i < 20; ++i) s += (i % 2 ? "，" : "我");  // 20 words: 10 x 我, 10 x ，
  auto p = Pair(s);
  ASSERT_EQ(p.num_words, 20);
  Rng rng(42);
  auto plan = plan_whole_word_mask(p, {}, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
  EXPECT_EQ(plan.masked_words.size(), 3u);
}

TEST_F(MaskTest, MaskedWordMarksAllItsTokensOnBothSides) {
  auto p = Pair("我喜欢篮球");
  MaskOptions opt;
  opt.force = Corruption::kMask;
  bool seen = false;
  for (std::uint64_t seed = 0; seed < 200 && !seen; ++seed) {
    Rng rng(seed);
    auto plan = plan_whole_word_mask(p, opt, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
    if (plan.masked_words != std::vector<int>{1}) continue;
    seen = true;
    EXPECT_EQ(plan.fine.indicators, (std::vector<bool>{false, true, true, false, false}));
    EXPECT_EQ(plan.coarse.indicators, (std::vector<bool>{false, true, false}));
    auto fine = apply_plan(p.fine, plan, Side::kFine);
    auto coarse = apply_plan(p.coarse, plan, Side::kCoarse);
    EXPECT_EQ(coarse.ids[1], kMaskId);
    EXPECT_EQ(fine.ids[1], kMaskId);
    EXPECT_EQ(fine.ids[2], kMaskId);
    EXPECT_EQ(coarse.labels[1], *seg_tok_.vocab.find(M + "喜欢"));
    EXPECT_EQ(fine.labels[1], *derived_.vocab.find(M + "喜"));
    EXPECT_EQ(fine.labels[2], *derived_.vocab.find("欢"));
  }
  EXPECT_TRUE(seen);
}

TEST_F(MaskTest, ScheduleFrequenciesAreOneThirdEach) {
  auto p = Pair("我喜欢篮球");
  Rng rng(123);
  int counts[3] = {0, 0, 0};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    auto plan = plan_whole_word_mask(p, {}, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
    ++counts[static_cast<int>(plan.schedule)];
  }
  for (int c : counts) EXPECT_NEAR(c / double(n), 1.0 / 3.0, 0.02);
}

TEST_F(MaskTest, ScheduleCanBeDisabled) {
  auto p = Pair("我喜欢篮球");
  Rng rng(1);
  MaskOptions opt;
  opt.use_schedule = false;
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(plan_whole_word_mask(p, opt, 100, 100, rng).schedule, Schedule::kBoth);
  }
}

TEST_F(MaskTest, ZeroMaskedWordsLeavesSequenceIntact) {
  auto p = Pair("我喜欢");  // 2 words: may mask 0
  MaskingPlan plan;
  auto out = apply_plan(p.fine, plan, Side::kFine);
  EXPECT_EQ(out.ids, p.fine.ids);
  EXPECT_EQ(out.labels, std::vector<int>(p.fine.size(), -1));
}

TEST_F(MaskTest, ForcedMaskCorruptsEveryIndicatedPosition) {
  MaskOptions opt;
  opt.force = Corruption::kMask;
  opt.rate = 0.5;
  Rng rng(77);
  for (const auto& s : corpus_) {
    auto p = Pair(s);
    auto plan = plan_whole_word_mask(p, opt, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
    auto f = apply_plan(p.fine, plan, Side::kFine);
    for (std::size_t i = 0; i < f.ids.size(); ++i) {
      EXPECT_EQ(f.ids[i] == kMaskId, bool(plan.fine.indicators[i]));
    }
  }
}

TEST_F(MaskTest, SideMismatchIsError) {
  auto p = Pair("我喜欢篮球他也是足球");
  Rng rng(5);
  auto plan = plan_whole_word_mask(p, {}, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
  EXPECT_THROW(apply_plan(p.coarse, plan, Side::kFine), ValidationError);
}

TEST_F(MaskTest, EmptySentenceGivesEmptyPlan) {
  auto p = Pair("");
  Rng rng(5);
  EXPECT_TRUE(plan_whole_word_mask(p, {}, 10, 10, rng).empty());
  EXPECT_THROW(plan_whole_word_mask(p, MaskOptions{1.0}, 10, 10, rng), ValidationError);
}

TEST_F(MaskTest, InvariantsOverManyPlans) {
  Rng gen(2024);
  double frac_sum = 0;
  int long_sentences = 0;
  for (int t = 0; t < 3000; ++t) {
    auto s = RandomSentence(gen, 1 + gen.uniform(40));
    auto p = Pair(s);
    Rng a(1000 + t), b(1000 + t);
    auto plan = plan_whole_word_mask(p, {}, derived_.vocab.size(), seg_tok_.vocab.size(), a);
    // Determinism: identical seed, identical plan.
    auto again = plan_whole_word_mask(p, {}, derived_.vocab.size(), seg_tok_.vocab.size(), b);
    ASSERT_EQ(dump_plan(plan), dump_plan(again));
    ASSERT_EQ(plan.fine.replacement, again.fine.replacement);

    std::vector<bool> masked(p.num_words, false);
    for (int w : plan.masked_words) masked[w] = true;
    // Whole-word atomicity on both sides.
    for (std::size_t i = 0; i < p.fine.size(); ++i) EXPECT_EQ(plan.fine.indicators[i], masked[p.fine.word_index[i]]);
    for (std::size_t i = 0; i < p.coarse.size(); ++i) {
      EXPECT_EQ(plan.coarse.indicators[i], masked[p.coarse.word_index[i]]);
      // Same corruption on both sides of a word.
      if (plan.coarse.indicators[i]) {
        EXPECT_EQ(plan.coarse.corruption[i], plan.fine.corruption[p.alignment.spans[i].first]);
      }
    }
    // Labels recoverable by scattering back.
    for (auto side : {Side::kFine, Side::kCoarse}) {
      const auto& seq = side == Side::kFine ? p.fine : p.coarse;
      auto c = apply_plan(seq, plan, side);
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (c.labels[i] >= 0) c.ids[i] = c.labels[i];
      }
      EXPECT_EQ(c.ids, seq.ids);
    }
    if (p.num_words >= 20) {
      frac_sum += double(plan.masked_words.size()) / p.num_words;
      ++long_sentences;
    }
  }
  ASSERT_GT(long_sentences, 500);
  EXPECT_NEAR(frac_sum / long_sentences, 0.15, 0.01);
}

TEST(MaskedWordCountTest, RoundingRule) {
  Rng rng(1);
  EXPECT_EQ(masked_word_count(20, 0.15, rng), 3);
  EXPECT_EQ(masked_word_count(0, 0.15, rng), 0);
  EXPECT_EQ(masked_word_count(4, 0.15, rng), 1);
  double sum = 0;
  for (int i = 0; i < 20000; ++i) sum += masked_word_count(3, 0.15, rng);
  EXPECT_NEAR(sum / 20000, 0.45, 0.02);
}

}  // namespace
}  // namespace mvptok
