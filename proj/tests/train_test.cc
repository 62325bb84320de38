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

#include "mvptok/train.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "grad_check.hpp"

namespace mvptok {
namespace {

const std::string M(kMarker);

class TrainTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dict_ = std::make_shared<const SegDictionary>(load_dictionary(
        "我\t100\n喜欢\t50\n篮球\t40\n他\t60\n也\t70\n是\t90\n足球\t20\n我们\t30\n运动\t25\n打\t10\n"));
    const std::vector<std::string> words = {"我", "喜欢", "篮球", "他", "也", "是", "足球", "我们", "运动", "打"};
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
      std::string s;
      for (std::uint64_t k = 0, n = 2 + rng.uniform(8); k < n; ++k) s += words[rng.uniform(words.size())];
      corpus_.push_back(s);
    }
    corpus_.push_back("我们喜欢打篮球也是");
    seg_tok_ = build_seg_tok_vocab(corpus_, dict_, 40);
    derived_ = derive_char_bundle(seg_tok_);
  }

  TokenizedPair Pair(const std::string& s) { return tokenize_pair(s, derived_, &seg_tok_, *dict_); }

  EncoderConfig SmallConfig(int layers = 2, int e = 16, int h = 32) const {
    EncoderConfig c;
    c.num_layers = layers;
    c.embed_dim = e;
    c.hidden_dim = h;
    c.num_heads = 2;
    c.ffn_dim = 2 * h;
    c.max_positions = 32;
    c.vocab_sizes = {{"fine", derived_.vocab.size()}, {"coarse", seg_tok_.vocab.size()}};
    return c;
  }

  Model<double> RandomModel(std::uint64_t seed, int layers = 2) const {
    Rng rng(seed);
    auto m = init_model<double>(SmallConfig(layers), rng);
    for (auto& [name, t] : m.params) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.05 * rng.normal();
    }
    return m;
  }

  // The fixed six-word batch: 我们/喜欢/打/篮球/也/是, words 1 and 3 masked
  // (one with [MASK], one kept), plus a second sentence with a random swap.
  std::vector<MaskedExample> SixWordBatch(Schedule schedule = Schedule::kBoth) {
    const auto p = Pair("我们喜欢打篮球也是");
    EXPECT_EQ(p.num_words, 6);
    Rng rng(3);
    auto a = plan_words(p, {1}, schedule, Corruption::kMask, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
    auto b = plan_words(p, {3}, schedule, Corruption::kRandom, derived_.vocab.size(), seg_tok_.vocab.size(), rng);
    return {make_masked_example(p, a), make_masked_example(p, b)};
  }

  std::shared_ptr<const SegDictionary> dict_;
  std::vector<std::string> corpus_;
  VocabBundle seg_tok_, derived_;
};

TEST(LossMlmTest, UniformLogitsGiveLogV) {
  Matrix<double> logits = Matrix<double>::Constant(3, 7, 0.25);
  EXPECT_NEAR(loss_mlm(logits, {-1, 4, -1}), std::log(7.0), 1e-12);
}

TEST(LossMlmTest, NoLabelsGiveZero) {
  Matrix<float> logits = Matrix<float>::Random(2, 5);
  EXPECT_EQ(loss_mlm(logits, {-1, -1}), 0.0);
}

TEST(LossMlmTest, HandBuiltCase) {
  Matrix<double> logits(3, 5);
  logits << 1.0, 2.0, 0.5, -1.0, 0.0,  //
      0.0, 0.0, 3.0, 0.0, 1.0,         //
      -2.0, 1.0, 1.0, 1.0, 0.5;
  const std::vector<int> labels = {1, -1, 4};
  // Oracle: direct softmax probabilities.
  auto p = [&](int r, int k) {
    double z = 0;
    for (int j = 0; j < 5; ++j) z += std::exp(logits(r, j));
    return std::exp(logits(r, k)) / z;
  };
  const double expected = -(std::log(p(0, 1)) + std::log(p(2, 4))) / 2.0;
  EXPECT_NEAR(loss_mlm(logits, labels), expected, 1e-12);
}

TEST_F(TrainTest, WrapAddsSpecialsAndShiftsAlignment) {
  const auto p = Pair("我喜欢篮球");
  const auto w = wrap(p);
  EXPECT_EQ(w.fine_ids.front(), kClsId);
  EXPECT_EQ(w.fine_ids.back(), kSepId);
  EXPECT_EQ(w.coarse_ids.size(), 5u);
  EXPECT_EQ(w.alignment.spans, (std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {2, 4}, {4, 6}, {6, 7}}));
  EXPECT_TRUE(is_partition(w.alignment, w.fine_ids.size()));

  const auto q = Pair("他也是");
  const auto two = wrap({&p, &q});
  EXPECT_EQ(two.fine_ids.size(), 1 + p.fine.size() + 1 + q.fine.size() + 1);
  EXPECT_EQ(two.fine_types.back(), 1);
  EXPECT_EQ(two.fine_types[p.fine.size() + 1], 0);  // first [SEP]
  EXPECT_TRUE(is_partition(two.alignment, two.fine_ids.size()));
  EXPECT_EQ(two.fine_words[p.fine.size() + 2], p.num_words);
}

TEST_F(TrainTest, HierPredictsMaskedWordFromCoarseVocab) {
  const auto p = Pair("我喜欢篮球");
  Rng rng(1);
  const auto plan = plan_words(p, {1}, Schedule::kBoth, Corruption::kMask, derived_.vocab.size(),
                               seg_tok_.vocab.size(), rng);
  const auto ex = make_masked_example(p, plan);
  // Word position 1 (after [CLS] at 0) on the coarse side carries ▁喜欢.
  EXPECT_EQ(ex.coarse_labels, (std::vector<int>{-1, -1, *seg_tok_.vocab.find(M + "喜欢"), -1, -1}));
  EXPECT_EQ(ex.input.fine_ids[2], kMaskId);
  EXPECT_EQ(ex.input.fine_ids[3], kMaskId);
  const auto m = RandomModel(2);
  const auto r = step_hier(m, {ex});
  EXPECT_EQ(r.coarse_count, 1);
  EXPECT_EQ(r.fine_count, 0);
  EXPECT_GT(r.loss_coarse, 0.0);
  EXPECT_EQ(r.total, r.loss_coarse);
}

TEST_F(TrainTest, PairPredictsPiecesAndWholeWord) {
  const auto p = Pair("我喜欢篮球");
  Rng rng(1);
  const auto plan = plan_words(p, {1}, Schedule::kBoth, Corruption::kMask, derived_.vocab.size(),
                               seg_tok_.vocab.size(), rng);
  const auto ex = make_masked_example(p, plan);
  EXPECT_EQ(ex.fine_labels[2], *derived_.vocab.find(M + "喜"));
  EXPECT_EQ(ex.fine_labels[3], *derived_.vocab.find("欢"));
  EXPECT_EQ(std::count_if(ex.fine_labels.begin(), ex.fine_labels.end(), [](int y) { return y >= 0; }), 2);
  EXPECT_EQ(ex.coarse_labels[2], *seg_tok_.vocab.find(M + "喜欢"));
  const auto r = step_pair(RandomModel(2), {ex}, 1.0);
  EXPECT_EQ(r.fine_count, 2);
  EXPECT_EQ(r.coarse_count, 1);
}

TEST_F(TrainTest, ZeroMaskedWordsGiveZeroLossAndGradients) {
  const auto p = Pair("我喜欢篮球");
  Rng rng(1);
  const auto plan = plan_words(p, {}, Schedule::kBoth, Corruption::kMask, derived_.vocab.size(),
                               seg_tok_.vocab.size(), rng);
  const std::vector<MaskedExample> batch = {make_masked_example(p, plan)};
  const auto m = RandomModel(4);
  for (int which = 0; which < 4; ++which) {
    auto g = m.params.zeros_like();
    StepResult r;
    switch (which) {
      case 0: r = step_mlm(m, batch, &g); break;
      case 1: r = step_hier(m, batch, AggregateMode::kMean, &g); break;
      case 2: r = step_obj(m, batch, 2.0, &g); break;
      default: r = step_pair(m, batch, 1.0, &g); break;
    }
    EXPECT_EQ(r.total, 0.0) << which;
    for (const auto& [name, t] : g) EXPECT_TRUE(t.isZero()) << which << " " << name;
  }
}

enum class Which { kMlm, kHierMean, kHierFirst, kObj, kPair };

class StepGradientTest : public TrainTest, public ::testing::WithParamInterface<Which> {};

TEST_P(StepGradientTest, MatchesFiniteDifferences) {
  auto m = RandomModel(21);
  const auto batch = SixWordBatch();
  auto run = [&](ParamStore<double>* g) {
    switch (GetParam()) {
      case Which::kMlm: return step_mlm(m, batch, g).total;
      case Which::kHierMean: return step_hier(m, batch, AggregateMode::kMean, g).total;
      case Which::kHierFirst: return step_hier(m, batch, AggregateMode::kFirstToken, g).total;
      case Which::kObj: return step_obj(m, batch, 2.0, g).total;
      case Which::kPair: return step_pair(m, batch, 0.7, g).total;
    }
    return 0.0;
  };
  auto grads = m.params.zeros_like();
  run(&grads);
  Rng rng(77);
  const auto res = testing::check_gradients(m.params, grads, [&] { return run(nullptr); }, rng);
  EXPECT_GT(res.probes.size(), 20u);
  EXPECT_LT(res.max_rel_error(), 1e-4) << res.worst().tensor << "[" << res.worst().index
                                        << "] analytic=" << res.worst().analytic << " numeric=" << res.worst().numeric;
}

INSTANTIATE_TEST_SUITE_P(Objectives, StepGradientTest,
                         ::testing::Values(Which::kMlm, Which::kHierMean, Which::kHierFirst, Which::kObj, Which::kPair));

TEST_F(TrainTest, ObjWithZeroLambdaIsVanillaMlm) {
  const auto m = RandomModel(5);
  const auto batch = SixWordBatch();
  auto g_mlm = m.params.zeros_like(), g_obj = m.params.zeros_like(), g_pair = m.params.zeros_like();
  const auto mlm = step_mlm(m, batch, &g_mlm);
  const auto obj = step_obj(m, batch, 0.0, &g_obj);
  const auto pair = step_pair(m, batch, 0.0, &g_pair);
  EXPECT_NEAR(obj.total, mlm.total, 1e-10);
  EXPECT_NEAR(pair.total, mlm.total, 1e-10);
  EXPECT_TRUE(g_obj == g_mlm);
  EXPECT_TRUE(g_pair == g_mlm);
}

TEST_F(TrainTest, ObjTotalCombinesIndependentComponents) {
  const auto m = RandomModel(6);
  const auto batch = SixWordBatch();
  const double lambda = 2.0;
  const auto r = step_obj(m, batch, lambda);
  // Oracle: encode, read first-token states, score with loss_mlm directly.
  double fine_sum = 0, coarse_sum = 0;
  int nf = 0, nc = 0;
  for (const auto& ex : batch) {
    const auto h = encode(m, "fine", ex.input.fine_input()).hidden;
    const int kf = std::count_if(ex.fine_labels.begin(), ex.fine_labels.end(), [](int y) { return y >= 0; });
    const int kc = std::count_if(ex.coarse_labels.begin(), ex.coarse_labels.end(), [](int y) { return y >= 0; });
    fine_sum += loss_mlm(mlm_logits(m, "fine", h), ex.fine_labels) * kf;
    Matrix<double> first(static_cast<Eigen::Index>(ex.input.alignment.size()), h.cols());
    for (std::size_t j = 0; j < ex.input.alignment.size(); ++j) first.row(j) = h.row(ex.input.alignment.spans[j].first);
    coarse_sum += loss_mlm(mlm_logits(m, "coarse", first), ex.coarse_labels) * kc;
    nf += kf;
    nc += kc;
  }
  EXPECT_NEAR(r.loss_fine, fine_sum / nf, 1e-10);
  EXPECT_NEAR(r.loss_coarse, coarse_sum / nc, 1e-10);
  EXPECT_NEAR(r.total, fine_sum / nf + lambda * coarse_sum / nc, 1e-10);
}

TEST_F(TrainTest, PairSharedGradientIsSumOfSides) {
  const auto m = RandomModel(7);
  auto both = m.params.zeros_like(), fine = m.params.zeros_like(), coarse = m.params.zeros_like();
  step_pair(m, SixWordBatch(Schedule::kBoth), 1.5, &both);
  step_pair(m, SixWordBatch(Schedule::kFineOnly), 1.5, &fine);
  step_pair(m, SixWordBatch(Schedule::kCoarseOnly), 1.5, &coarse);
  for (const auto& [name, g] : both) {
    const Matrix<double> sum = fine[name] + coarse[name];
    EXPECT_LE((g - sum).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + g.cwiseAbs().maxCoeff())) << name;
  }
  EXPECT_FALSE(fine["block.ffn.in.w"].isZero());
  EXPECT_FALSE(coarse["block.ffn.in.w"].isZero());
}

TEST_F(TrainTest, PairSymmetryUnderSwap) {
  const auto m = RandomModel(8);
  Model<double> swapped{m.config, {}};
  std::swap(swapped.config.vocab_sizes["fine"], swapped.config.vocab_sizes["coarse"]);
  for (const auto& [name, t] : m.params) {
    std::string n = name;
    if (n.find(".fine.") != std::string::npos) {
      n.replace(n.find(".fine."), 6, ".coarse.");
    } else if (n.find(".coarse.") != std::string::npos) {
      n.replace(n.find(".coarse."), 8, ".fine.");
    }
    swapped.params.add(n, t.rows(), t.cols()) = t;
  }
  for (auto schedule : {Schedule::kBoth, Schedule::kFineOnly}) {
    const auto batch = SixWordBatch(schedule);
    std::vector<MaskedExample> swapped_batch;
    for (const auto& ex : batch) swapped_batch.push_back(swap_sides(ex));
    for (double lambda : {0.5, 2.0, 10.0}) {
      const double a = step_pair(m, batch, lambda).total;
      const double b = step_pair(swapped, swapped_batch, 1.0 / lambda).total;
      EXPECT_NEAR(a, lambda * b, 1e-10 * std::abs(a));
    }
  }
}

TEST_F(TrainTest, FineOnlyScheduleGivesCoarseParamsNoGradient) {
  const auto m = RandomModel(9);
  const auto batch = SixWordBatch(Schedule::kFineOnly);
  auto g_obj = m.params.zeros_like(), g_pair = m.params.zeros_like();
  const auto obj = step_obj(m, batch, 2.0, &g_obj);
  const auto pair = step_pair(m, batch, 2.0, &g_pair);
  EXPECT_EQ(obj.coarse_count, 0);
  EXPECT_EQ(pair.coarse_count, 0);
  for (const auto& [name, g] : g_obj) {
    if (name.rfind("head.coarse.", 0) == 0 || name == "emb.coarse.token") EXPECT_TRUE(g.isZero()) << name;
  }
  EXPECT_TRUE(g_pair["emb.coarse.token"].isZero());
  EXPECT_TRUE(g_pair["emb.coarse.proj.w"].isZero());
  EXPECT_FALSE(g_pair["emb.fine.token"].isZero());
}

TEST_F(TrainTest, CoarseOnlyScheduleDropsFineTerm) {
  const auto m = RandomModel(9);
  const auto r = step_obj(m, SixWordBatch(Schedule::kCoarseOnly), 2.0);
  EXPECT_EQ(r.fine_count, 0);
  EXPECT_EQ(r.loss_fine, 0.0);
  EXPECT_DOUBLE_EQ(r.total, 2.0 * r.loss_coarse);
}

TEST_F(TrainTest, MismatchedMaskedWordsRejected) {
  auto batch = SixWordBatch();
  // Unmask one coarse position of a masked word.
  for (auto& y : batch[0].coarse_labels) y = -1;
  const auto m = RandomModel(10);
  EXPECT_THROW(step_pair(m, batch, 1.0), ValidationError);
}

TEST_F(TrainTest, NegativeLambdaRejected) {
  const auto m = RandomModel(10);
  EXPECT_THROW(step_obj(m, SixWordBatch(), -0.5), ValidationError);
  EXPECT_THROW(step_pair(m, SixWordBatch(), -1.0), ValidationError);
}

TEST_F(TrainTest, HierNeedsAlignment) {
  const auto single = TokenizedPair::single(tokenize("我喜欢", derived_, dict_.get()));
  Rng rng(1);
  const auto plan = plan_words(single, {0}, Schedule::kBoth, Corruption::kMask, derived_.vocab.size(), 0, rng);
  const auto m = RandomModel(10);
  EXPECT_THROW(step_hier(m, {make_masked_example(single, plan)}), ValidationError);
}

TEST(AdamTest, ZeroGradientLeavesParamsUnchanged) {
  ParamStore<double> p;
  p.add("w", 2, 2) << 1, 2, 3, 4;
  const auto before = p;
  auto state = AdamState<double>::for_params(p);
  adam_step(p, p.zeros_like(), state, 0.1);
  EXPECT_TRUE(p == before);
}

TEST(AdamTest, ScalarOracle) {
  ParamStore<double> p;
  p.add("x", 1, 1)(0, 0) = 1.0;
  auto state = AdamState<double>::for_params(p);
  ParamStore<double> g = p.zeros_like();
  const double lr = 0.01, g1 = 0.3, g2 = -0.2;
  g["x"](0, 0) = g1;
  adam_step(p, g, state, lr);
  // Step 1: m = 0.1 g, v = 0.001 g^2; bias-corrected m/sqrt(v) = g/|g|.
  double x = 1.0 - lr * g1 / (std::abs(g1) + 1e-8);
  EXPECT_NEAR(p["x"](0, 0), x, 1e-15);
  g["x"](0, 0) = g2;
  adam_step(p, g, state, lr);
  const double m = 0.9 * 0.1 * g1 + 0.1 * g2, v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
  x -= lr * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  EXPECT_NEAR(p["x"](0, 0), x, 1e-15);
}

TEST(AdamTest, StateMismatchRejected) {
  ParamStore<double> p;
  p.add("x", 1, 1);
  ParamStore<double> q;
  q.add("y", 1, 1);
  auto state = AdamState<double>::for_params(q);
  EXPECT_THROW(adam_step(p, p.zeros_like(), state, 0.1), ValidationError);
}

TEST_F(TrainTest, PretrainZeroStepsEqualsInit) {
  PretrainConfig cfg;
  cfg.objective = Objective::kPair;
  cfg.steps = 0;
  cfg.num_layers = 1;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.max_len = 24;
  cfg.seed = 5;
  const auto r = pretrain<float>(cfg, corpus_, *dict_, derived_, &seg_tok_);
  Rng root(5);
  Rng init_rng = root.fork(1);
  const auto init = init_model<float>(cfg.encoder_config(pretrain_vocab_sizes(cfg.objective, derived_, &seg_tok_)),
                                      init_rng);
  EXPECT_TRUE(r.model.params == init.params);
  EXPECT_TRUE(r.log.empty());
}

TEST_F(TrainTest, PretrainIsDeterministicAndLearns) {
  PretrainConfig cfg;
  cfg.objective = Objective::kObj;
  cfg.lambda = 2.0;
  cfg.steps = 40;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  cfg.num_layers = 1;
  cfg.embed_dim = 16;
  cfg.hidden_dim = 32;
  cfg.max_len = 32;
  const auto a = pretrain<float>(cfg, corpus_, *dict_, derived_, &seg_tok_);
  const auto b = pretrain<float>(cfg, corpus_, *dict_, derived_, &seg_tok_);
  EXPECT_TRUE(a.model.params == b.model.params);
  ASSERT_EQ(a.log.size(), 40u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].total, b.log[i].total);
  double early = 0, late = 0;
  for (int i = 0; i < 10; ++i) early += a.log[i].total, late += a.log[30 + i].total;
  EXPECT_LT(late, early);
}

TEST_F(TrainTest, PretrainConfigValidation) {
  PretrainConfig cfg;
  cfg.batch_size = 1024;
  cfg.learning_rate = 1e-4;
  cfg.steps = 12500;
  cfg.max_len = 512;
  EXPECT_NO_THROW(cfg.validate());
  cfg.lambda = -1;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.lambda = 1;
  cfg.hidden_dim = 100;
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), ValidationError);
  PretrainConfig two;
  two.objective = Objective::kPair;
  EXPECT_THROW(pretrain<float>(two, corpus_, *dict_, derived_, nullptr), ValidationError);
  EXPECT_THROW(pretrain<float>(PretrainConfig{}, {}, *dict_, derived_, nullptr), ValidationError);
}

TEST_F(TrainTest, PackingRespectsMaxLength) {
  for (auto objective : {Objective::kHier, Objective::kObj, Objective::kPair}) {
    const auto ex = prepare_pretrain_examples(corpus_, *dict_, derived_, &seg_tok_, objective, 20, true);
    const auto unpacked = prepare_pretrain_examples(corpus_, *dict_, derived_, &seg_tok_, objective, 20, false);
    EXPECT_LT(ex.size(), unpacked.size());
    int words = 0, unpacked_words = 0;
    for (const auto& p : ex) {
      const int f = p.fine.size(), c = p.coarse.size();
      const int len = objective == Objective::kHier ? c : objective == Objective::kObj ? f : std::max(f, c);
      EXPECT_LE(len + 2, 20);
      EXPECT_TRUE(is_partition(p.alignment, p.fine.size()));
      EXPECT_EQ(align(p.fine, p.coarse), p.alignment);
      words += p.num_words;
    }
    for (const auto& p : unpacked) unpacked_words += p.num_words;
    EXPECT_EQ(words, unpacked_words);
  }
}

TEST_F(TrainTest, LongSentencesTruncatedAtWordBoundary) {
  std::string s;
  for (int i = 0; i < 30; ++i) s += "喜欢";
  const auto ex = prepare_pretrain_examples({s}, *dict_, derived_, &seg_tok_, Objective::kObj, 12, false);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].fine.size(), 10u);
  EXPECT_EQ(ex[0].num_words, 5);
}

TEST_F(TrainTest, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "mvptok_train_test_ckpt";
  std::filesystem::remove_all(dir);
  Rng rng(3);
  const auto model = init_model<float>(SmallConfig(), rng);
  CheckpointMeta meta;
  meta.objective = Objective::kPair;
  meta.lambda = 1.0;
  save_checkpoint(dir, meta, model, derived_, &seg_tok_, *dict_);
  const auto back = load_checkpoint<float>(dir);
  EXPECT_TRUE(back.model.params == model.params);
  EXPECT_EQ(back.meta.objective, Objective::kPair);
  ASSERT_TRUE(back.coarse.has_value());
  EXPECT_EQ(back.coarse->vocab.serialize(), seg_tok_.vocab.serialize());
  EXPECT_EQ(back.fine.vocab.serialize(), derived_.vocab.serialize());
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace mvptok
