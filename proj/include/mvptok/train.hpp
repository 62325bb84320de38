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

// Pretraining objectives over one or two vocabularies, Adam, and the
// pretraining loop.
//
//   mlm   plain masked LM on the fine vocabulary.
//   hier  fine embeddings pooled per coarse token, encoded at coarse length,
//         predicting coarse tokens.
//   obj   fine encoding; fine MLM plus lambda * coarse MLM read from the first
//         fine state of each coarse token.
//   pair  two passes through the shared block with separate token tables;
//         fine MLM plus lambda * coarse MLM.
//
// Per-side losses are means over that side's predicted positions in the
// batch. Gradients are accumulated sequentially in batch order.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvptok/mask.hpp"
#include "mvptok/model.hpp"
#include "mvptok/vocab.hpp"

namespace mvptok {

enum class Objective : std::uint8_t { kMlm, kHier, kObj, kPair };

inline std::string_view to_string(Objective o) {
  switch (o) {
    case Objective::kMlm: return "mlm";
    case Objective::kHier: return "hier";
    case Objective::kObj: return "obj";
    case Objective::kPair: return "pair";
  }
  return "?";
}

inline Objective parse_objective(std::string_view s) {
  if (s == "mlm") return Objective::kMlm;
  if (s == "hier") return Objective::kHier;
  if (s == "obj") return Objective::kObj;
  if (s == "pair") return Objective::kPair;
  throw ValidationError("unknown objective '" + std::string(s) + "' (expected mlm, hier, obj or pair)");
}

inline bool uses_two_vocabs(Objective o) { return o != Objective::kMlm; }

// ---------------------------------------------------------------------------
// Model inputs with [CLS]/[SEP].

/// One or more segments wrapped as [CLS] a [SEP] (b [SEP]). Specials get
/// their own 1:1 alignment spans, word id -1 and offsets (-1, -1).
struct WrappedInput {
  std::vector<int> fine_ids, fine_types, fine_words;
  std::vector<int> coarse_ids, coarse_types, coarse_words;
  std::vector<std::pair<int, int>> fine_offsets, coarse_offsets;
  Alignment alignment;
  bool has_coarse = false;

  static EncoderInput make_input(const std::vector<int>& ids, const std::vector<int>& types) {
    auto in = EncoderInput::of(ids);
    in.type_ids = types;
    return in;
  }
  EncoderInput fine_input() const { return make_input(fine_ids, fine_types); }
  EncoderInput coarse_input() const { return make_input(coarse_ids, coarse_types); }
};

inline WrappedInput wrap(const std::vector<const TokenizedPair*>& segments) {
  WrappedInput w;
  w.has_coarse = !segments.empty() && segments[0]->has_coarse;
  auto push_special = [&](int id, int type) {
    w.fine_ids.push_back(id);
    w.fine_types.push_back(type);
    w.fine_words.push_back(-1);
    w.fine_offsets.emplace_back(-1, -1);
    if (w.has_coarse) {
      const int at = static_cast<int>(w.fine_ids.size()) - 1;
      w.coarse_ids.push_back(id);
      w.coarse_types.push_back(type);
      w.coarse_words.push_back(-1);
      w.coarse_offsets.emplace_back(-1, -1);
      w.alignment.spans.emplace_back(at, at + 1);
    }
  };
  push_special(kClsId, 0);
  int word_base = 0;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const TokenizedPair& p = *segments[s];
    if (p.has_coarse != w.has_coarse) throw ValidationError("wrap: segments disagree on the coarse side");
    const int type = s == 0 ? 0 : 1;
    const int fine_base = static_cast<int>(w.fine_ids.size());
    for (std::size_t i = 0; i < p.fine.size(); ++i) {
      w.fine_ids.push_back(p.fine.ids[i]);
      w.fine_types.push_back(type);
      w.fine_words.push_back(word_base + p.fine.word_index[i]);
      w.fine_offsets.push_back(p.fine.offsets[i]);
    }
    if (w.has_coarse) {
      for (std::size_t j = 0; j < p.coarse.size(); ++j) {
        w.coarse_ids.push_back(p.coarse.ids[j]);
        w.coarse_types.push_back(type);
        w.coarse_words.push_back(word_base + p.coarse.word_index[j]);
        w.coarse_offsets.push_back(p.coarse.offsets[j]);
        w.alignment.spans.emplace_back(fine_base + p.alignment.spans[j].first, fine_base + p.alignment.spans[j].second);
      }
    }
    word_base += p.num_words;
    push_special(kSepId, type);
  }
  return w;
}

inline WrappedInput wrap(const TokenizedPair& p) { return wrap(std::vector<const TokenizedPair*>{&p}); }

/// A wrapped sentence after corruption. Labels are -1 where nothing is
/// predicted; both sides carry labels for every masked word and the schedule
/// decides which side's loss is used.
struct MaskedExample {
  WrappedInput input;
  std::vector<int> fine_labels, coarse_labels;
  Schedule schedule = Schedule::kBoth;
};

inline MaskedExample make_masked_example(const TokenizedPair& pair, const MaskingPlan& plan) {
  MaskedExample ex;
  ex.input = wrap(pair);
  ex.schedule = plan.schedule;
  auto fill = [](const TokenSeq& seq, const MaskingPlan& plan, Side side, std::vector<int>& ids,
                 std::vector<int>& labels) {
    const auto c = apply_plan(seq, plan, side);
    labels.assign(seq.size() + 2, -1);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      ids[i + 1] = c.ids[i];
      labels[i + 1] = c.labels[i];
    }
  };
  fill(pair.fine, plan, Side::kFine, ex.input.fine_ids, ex.fine_labels);
  if (pair.has_coarse) fill(pair.coarse, plan, Side::kCoarse, ex.input.coarse_ids, ex.coarse_labels);
  return ex;
}

// ---------------------------------------------------------------------------
// Losses.

/// Mean negative log-likelihood over rows with label >= 0; 0 if none.
template <typename T>
double loss_mlm(const Matrix<T>& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw ValidationError("loss_mlm: label count mismatch");
  double sum = 0.0;
  int n = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const int y = labels[i];
    if (y < 0) continue;
    if (y >= logits.cols()) throw ValidationError("loss_mlm: label out of range");
    const double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<double>(logits(i, k)) - mx);
    sum += mx + std::log(z) - static_cast<double>(logits(i, y));
    ++n;
  }
  return n ? sum / n : 0.0;
}

namespace detail {

/// MLM cross-entropy of `slot` at the labeled rows of `hidden`, weighted by
/// `scale`. Adds the unweighted NLL sum to `loss_sum`; accumulates d(hidden)
/// and parameter gradients when `g` is given.
template <typename T>
void head_loss(const Model<T>& model, std::string_view slot, const Matrix<T>& hidden, const std::vector<int>& labels,
               double scale, double& loss_sum, int& correct, Matrix<T>* d_hidden, ParamStore<T>* g) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) rows.push_back(static_cast<Eigen::Index>(i));
  }
  if (rows.empty()) return;
  Matrix<T> x(static_cast<Eigen::Index>(rows.size()), hidden.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) x.row(r) = hidden.row(rows[r]);
  HeadCache<T> hc;
  const Matrix<T> logits = mlm_logits(model, slot, x, g ? &hc : nullptr);
  Matrix<T> dl(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[rows[r]];
    if (y >= logits.cols()) throw ValidationError("label id out of range for vocabulary '" + std::string(slot) + "'");
    Eigen::Index arg;
    const T mx = logits.row(r).maxCoeff(&arg);
    correct += arg == y;
    const auto e = (logits.row(r).array() - mx).exp();
    const T z = e.sum();
    loss_sum += static_cast<double>(mx + std::log(z) - logits(r, y));
    if (g) {
      dl.row(r) = e / z;
      dl(r, y) -= T(1);
    }
  }
  if (!g) return;
  dl *= static_cast<T>(scale);
  const Matrix<T> dx = mlm_logits_backward(model, hc, dl, *g);
  for (std::size_t r = 0; r < rows.size(); ++r) d_hidden->row(rows[r]) += dx.row(r);
}

inline int count_labels(const std::vector<int>& labels) {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(), [](int y) { return y >= 0; }));
}

}  // namespace detail

struct StepResult {
  double loss_fine = 0.0;
  double loss_coarse = 0.0;
  double total = 0.0;
  int fine_count = 0;  // predicted positions after schedule gating
  int coarse_count = 0;
  int fine_correct = 0;
  int coarse_correct = 0;

  double fine_accuracy() const { return fine_count ? static_cast<double>(fine_correct) / fine_count : 0.0; }
  double coarse_accuracy() const { return coarse_count ? static_cast<double>(coarse_correct) / coarse_count : 0.0; }
};

/// Vanilla MLM on the fine side (schedule ignored).
template <typename T>
StepResult step_mlm(const Model<T>& model, const std::vector<MaskedExample>& batch, ParamStore<T>* grads = nullptr) {
  StepResult r;
  for (const auto& ex : batch) r.fine_count += detail::count_labels(ex.fine_labels);
  if (r.fine_count == 0) return r;
  double sum = 0.0;
  for (const auto& ex : batch) {
    EncodeCache<T> ec;
    const auto act = encode(model, kFineSlot, ex.input.fine_input(), grads ? &ec : nullptr);
    Matrix<T> dh = Matrix<T>::Zero(act.hidden.rows(), act.hidden.cols());
    detail::head_loss(model, kFineSlot, act.hidden, ex.fine_labels, 1.0 / r.fine_count, sum, r.fine_correct, &dh, grads);
    if (grads) encode_backward(model, ec, dh, *grads);
  }
  r.loss_fine = sum / r.fine_count;
  r.total = r.loss_fine;
  return r;
}

/// Hierarchical objective: fine token embeddings pooled per coarse token at
/// the embedding width, projected with the fine projection, encoded at
/// coarse length, scored against coarse labels.
template <typename T>
StepResult step_hier(const Model<T>& model, const std::vector<MaskedExample>& batch,
                     AggregateMode mode = AggregateMode::kMean, ParamStore<T>* grads = nullptr) {
  StepResult r;
  for (const auto& ex : batch) {
    if (!ex.input.has_coarse) throw ValidationError("step_hier: example has no coarse tokenization / alignment");
    r.coarse_count += detail::count_labels(ex.coarse_labels);
  }
  if (r.coarse_count == 0) return r;
  double sum = 0.0;
  for (const auto& ex : batch) {
    const Matrix<T> fine_emb = lookup(model, kFineSlot, ex.input.fine_ids);
    const Matrix<T> words = aggregate(fine_emb, ex.input.alignment, mode);
    EncodeCache<T> ec;
    const auto act = encode_embedded(model, kFineSlot, words, ex.input.coarse_input(), grads ? &ec : nullptr);
    Matrix<T> dh = Matrix<T>::Zero(act.hidden.rows(), act.hidden.cols());
    detail::head_loss(model, kCoarseSlot, act.hidden, ex.coarse_labels, 1.0 / r.coarse_count, sum, r.coarse_correct,
                      &dh, grads);
    if (grads) {
      const Matrix<T> dwords = encode_embedded_backward(model, ec, dh, *grads);
      lookup_backward(kFineSlot, ex.input.fine_ids, aggregate_backward(dwords, ex.input.alignment, mode, fine_emb.rows()),
                      *grads);
    }
  }
  r.loss_coarse = sum / r.coarse_count;
  r.total = r.loss_coarse;
  return r;
}

namespace detail {

inline void check_lambda(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("lambda must be a finite non-negative number, got " + format_double(lambda));
  }
}

inline int gated_count(const std::vector<MaskedExample>& batch, Side side) {
  int n = 0;
  for (const auto& ex : batch) {
    if (predicts(ex.schedule, side)) n += count_labels(side == Side::kFine ? ex.fine_labels : ex.coarse_labels);
  }
  return n;
}

}  // namespace detail

/// Auxiliary-objective step: one fine encoding, fine MLM plus lambda times a
/// coarse MLM read from the first fine state of every coarse token.
template <typename T>
StepResult step_obj(const Model<T>& model, const std::vector<MaskedExample>& batch, double lambda,
                    ParamStore<T>* grads = nullptr) {
  detail::check_lambda(lambda);
  StepResult r;
  for (const auto& ex : batch) {
    if (!ex.input.has_coarse) throw ValidationError("step_obj: example has no coarse tokenization / alignment");
  }
  r.fine_count = detail::gated_count(batch, Side::kFine);
  r.coarse_count = detail::gated_count(batch, Side::kCoarse);
  double fine_sum = 0.0, coarse_sum = 0.0;
  const double wf = r.fine_count ? 1.0 / r.fine_count : 0.0;
  const double wc = r.coarse_count ? lambda / r.coarse_count : 0.0;
  for (const auto& ex : batch) {
    const bool do_fine = predicts(ex.schedule, Side::kFine);
    const bool do_coarse = predicts(ex.schedule, Side::kCoarse);
    EncodeCache<T> ec;
    const auto act = encode(model, kFineSlot, ex.input.fine_input(), grads ? &ec : nullptr);
    Matrix<T> dh = Matrix<T>::Zero(act.hidden.rows(), act.hidden.cols());
    if (do_fine) detail::head_loss(model, kFineSlot, act.hidden, ex.fine_labels, wf, fine_sum, r.fine_correct, &dh, grads);
    if (do_coarse) {
      const Matrix<T> words = aggregate(act.hidden, ex.input.alignment, AggregateMode::kFirstToken);
      Matrix<T> dw = Matrix<T>::Zero(words.rows(), words.cols());
      detail::head_loss(model, kCoarseSlot, words, ex.coarse_labels, wc, coarse_sum, r.coarse_correct, &dw, grads);
      if (grads) dh += aggregate_backward(dw, ex.input.alignment, AggregateMode::kFirstToken, act.hidden.rows());
    }
    if (grads) encode_backward(model, ec, dh, *grads);
  }
  r.loss_fine = r.fine_count ? fine_sum / r.fine_count : 0.0;
  r.loss_coarse = r.coarse_count ? coarse_sum / r.coarse_count : 0.0;
  r.total = r.loss_fine + lambda * r.loss_coarse;
  return r;
}

/// Throws unless every word with a label on one side is labeled at all of
/// its positions on both sides.
inline void check_pair_consistency(const MaskedExample& ex) {
  if (!ex.input.has_coarse) throw ValidationError("step_pair: example has no coarse tokenization");
  if (ex.fine_labels.size() != ex.input.fine_ids.size() || ex.coarse_labels.size() != ex.input.coarse_ids.size()) {
    throw ValidationError("step_pair: label and id counts differ");
  }
  std::map<int, std::pair<int, int>> fine, coarse;  // word -> (labeled, total)
  for (std::size_t i = 0; i < ex.fine_labels.size(); ++i) {
    if (ex.input.fine_words[i] < 0) continue;
    auto& c = fine[ex.input.fine_words[i]];
    c.first += ex.fine_labels[i] >= 0;
    c.second++;
  }
  for (std::size_t i = 0; i < ex.coarse_labels.size(); ++i) {
    if (ex.input.coarse_words[i] < 0) continue;
    auto& c = coarse[ex.input.coarse_words[i]];
    c.first += ex.coarse_labels[i] >= 0;
    c.second++;
  }
  for (const auto& [word, f] : fine) {
    const auto& c = coarse[word];
    const bool fm = f.first > 0, cm = c.first > 0;
    if (fm != cm || (fm && (f.first != f.second || c.first != c.second))) {
      throw ValidationError("step_pair: masked words differ between the two sides (word " + std::to_string(word) + ")");
    }
  }
}

/// Paired-encoder step: fine and coarse sequences each pass through the
/// shared block with their own token table and projection.
template <typename T>
StepResult step_pair(const Model<T>& model, const std::vector<MaskedExample>& batch, double lambda,
                     ParamStore<T>* grads = nullptr) {
  detail::check_lambda(lambda);
  for (const auto& ex : batch) check_pair_consistency(ex);
  StepResult r;
  r.fine_count = detail::gated_count(batch, Side::kFine);
  r.coarse_count = detail::gated_count(batch, Side::kCoarse);
  double fine_sum = 0.0, coarse_sum = 0.0;
  const double wf = r.fine_count ? 1.0 / r.fine_count : 0.0;
  const double wc = r.coarse_count ? lambda / r.coarse_count : 0.0;
  for (const auto& ex : batch) {
    if (predicts(ex.schedule, Side::kFine)) {
      EncodeCache<T> ec;
      const auto act = encode(model, kFineSlot, ex.input.fine_input(), grads ? &ec : nullptr);
      Matrix<T> dh = Matrix<T>::Zero(act.hidden.rows(), act.hidden.cols());
      detail::head_loss(model, kFineSlot, act.hidden, ex.fine_labels, wf, fine_sum, r.fine_correct, &dh, grads);
      if (grads) encode_backward(model, ec, dh, *grads);
    }
    if (predicts(ex.schedule, Side::kCoarse)) {
      EncodeCache<T> ec;
      const auto act = encode(model, kCoarseSlot, ex.input.coarse_input(), grads ? &ec : nullptr);
      Matrix<T> dh = Matrix<T>::Zero(act.hidden.rows(), act.hidden.cols());
      detail::head_loss(model, kCoarseSlot, act.hidden, ex.coarse_labels, wc, coarse_sum, r.coarse_correct, &dh, grads);
      if (grads) encode_backward(model, ec, dh, *grads);
    }
  }
  r.loss_fine = r.fine_count ? fine_sum / r.fine_count : 0.0;
  r.loss_coarse = r.coarse_count ? coarse_sum / r.coarse_count : 0.0;
  r.total = r.loss_fine + lambda * r.loss_coarse;
  return r;
}

/// Swaps the roles of the two sides (and of fine_only / coarse_only).
inline MaskedExample swap_sides(const MaskedExample& ex) {
  MaskedExample s = ex;
  auto& in = s.input;
  std::swap(in.fine_ids, in.coarse_ids);
  std::swap(in.fine_types, in.coarse_types);
  std::swap(in.fine_words, in.coarse_words);
  std::swap(in.fine_offsets, in.coarse_offsets);
  std::swap(s.fine_labels, s.coarse_labels);
  in.alignment = {};
  if (ex.schedule == Schedule::kFineOnly) s.schedule = Schedule::kCoarseOnly;
  if (ex.schedule == Schedule::kCoarseOnly) s.schedule = Schedule::kFineOnly;
  return s;
}

// ---------------------------------------------------------------------------
// Adam.

template <typename T>
struct AdamState {
  ParamStore<T> m, v;
  std::int64_t step = 0;

  static AdamState for_params(const ParamStore<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction.
template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, double lr,
               const AdamOptions& opt = {}) {
  if (state.m.size() != params.size() || grads.size() != params.size()) {
    throw ValidationError("adam_step: optimizer state does not match the parameters");
  }
  for (const auto& [name, p] : params) {
    if (!grads.contains(name) || !state.m.contains(name) || !state.v.contains(name)) {
      throw ValidationError("adam_step: no state or gradient for '" + name + "'");
    }
  }
  ++state.step;
  const T b1 = static_cast<T>(opt.beta1), b2 = static_cast<T>(opt.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(opt.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(opt.beta2, static_cast<double>(state.step)));
  const T step = static_cast<T>(lr), eps = static_cast<T>(opt.eps);
  for (auto& [name, p] : params) {
    const Matrix<T>& g = grads[name];
    Matrix<T>& m = state.m[name];
    Matrix<T>& v = state.v[name];
    if (g.rows() != p.rows() || g.cols() != p.cols() || m.rows() != p.rows() || m.cols() != p.cols()) {
      throw ValidationError("adam_step: shape mismatch for '" + name + "'");
    }
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= step * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

// ---------------------------------------------------------------------------
// Pretraining.

struct PretrainConfig {
  Objective objective = Objective::kMlm;
  double lambda = 1.0;
  double mask_rate = 0.15;
  bool schedule = true;  // only obj and pair use it
  int steps = 100;
  int batch_size = 16;
  double learning_rate = 1e-3;
  int warmup_steps = 0;  // linear ramp from 0 to learning_rate
  bool lr_decay = false;  // linear decay to 0 after warmup
  std::uint64_t seed = 0;
  int max_len = 128;
  bool pack = true;
  AggregateMode hier_aggregate = AggregateMode::kMean;
  int num_layers = 3;
  int embed_dim = 128;
  int hidden_dim = 256;
  int num_heads = 0;  // 0: hidden / 64
  int ffn_dim = 0;    // 0: 4 * hidden

  void validate() const {
    detail::check_lambda(lambda);
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) throw ValidationError("mask rate must be in (0, 1)");
    if (steps < 0) throw ValidationError("steps must be non-negative");
    if (batch_size <= 0) throw ValidationError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (warmup_steps < 0) throw ValidationError("warmup steps must be non-negative");
    if (max_len < 3) throw ValidationError("max length must be at least 3");
    encoder_config({{std::string(kFineSlot), kNumSpecials + 1}}).validate();
  }

  EncoderConfig encoder_config(std::map<std::string, int> vocab_sizes) const {
    EncoderConfig c = make_encoder_config(num_layers, embed_dim, hidden_dim, max_len, std::move(vocab_sizes));
    if (num_heads > 0) c.num_heads = num_heads;
    if (ffn_dim > 0) c.ffn_dim = ffn_dim;
    return c;
  }

  /// Learning rate used at `step` (0-based).
  double learning_rate_at(int step) const {
    if (step < warmup_steps) return learning_rate * (step + 1) / warmup_steps;
    if (!lr_decay || steps <= warmup_steps) return learning_rate;
    return learning_rate * static_cast<double>(steps - step) / (steps - warmup_steps);
  }

  /// Side whose masked accuracy is the objective's headline number.
  Side primary_side() const { return objective == Objective::kHier ? Side::kCoarse : Side::kFine; }
};

namespace detail {

inline int accounted_length(const TokenizedPair& p, Objective o) {
  const int f = static_cast<int>(p.fine.size()), c = static_cast<int>(p.coarse.size());
  switch (o) {
    case Objective::kHier: return c + 2;
    case Objective::kPair: return std::max(f, c) + 2;
    default: return f + 2;
  }
}

inline TokenizedPair tokenize_words_pair(std::span<const PreWord> words, const VocabBundle& fine,
                                         const VocabBundle* coarse) {
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

inline void append_seq(TokenSeq& dst, const TokenSeq& src, int word_shift, int char_shift) {
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst.ids.push_back(src.ids[i]);
    dst.surfaces.push_back(src.surfaces[i]);
    dst.word_index.push_back(src.word_index[i] + word_shift);
    dst.offsets.emplace_back(src.offsets[i].first + char_shift, src.offsets[i].second + char_shift);
  }
  dst.num_words += src.num_words;
}

}  // namespace detail

/// Appends `src` after `dst` as one longer sequence.
inline void append_pair(TokenizedPair& dst, const TokenizedPair& src) {
  const int word_shift = dst.num_words;
  const int char_shift = dst.fine.empty() ? 0 : dst.fine.offsets.back().second + 1;
  const int fine_shift = static_cast<int>(dst.fine.size());
  detail::append_seq(dst.fine, src.fine, word_shift, char_shift);
  if (src.has_coarse) {
    detail::append_seq(dst.coarse, src.coarse, word_shift, char_shift);
    for (const auto& [b, e] : src.alignment.spans) dst.alignment.spans.emplace_back(b + fine_shift, e + fine_shift);
  }
  dst.num_words += src.num_words;
  dst.has_coarse = src.has_coarse;
}

/// Tokenizes the corpus for `objective`, truncating sentences that exceed
/// max_len at a word boundary and, when packing, concatenating consecutive
/// sentences up to max_len. Length is counted on the coarse side for hier,
/// the fine side for mlm/obj and the longer side for pair.
inline std::vector<TokenizedPair> prepare_pretrain_examples(const std::vector<std::string>& corpus,
                                                            const SegDictionary& dict, const VocabBundle& fine,
                                                            const VocabBundle* coarse, Objective objective,
                                                            int max_len, bool pack) {
  if (uses_two_vocabs(objective) && !coarse) {
    throw ValidationError(std::string("objective ") + std::string(to_string(objective)) + " needs a coarse vocabulary");
  }
  std::vector<TokenizedPair> out;
  std::optional<TokenizedPair> open;
  for (const auto& sentence : corpus) {
    auto words = pretokenize(sentence, &dict);
    if (words.empty()) continue;
    TokenizedPair p = detail::tokenize_words_pair(words, fine, coarse);
    if (detail::accounted_length(p, objective) > max_len) {
      // Longest word prefix that fits.
      std::size_t lo = 0, hi = words.size();
      while (lo < hi) {
        const std::size_t mid = (lo + hi + 1) / 2;
        const auto q = detail::tokenize_words_pair(std::span<const PreWord>(words.data(), mid), fine, coarse);
        if (detail::accounted_length(q, objective) <= max_len) {
          lo = mid;
        } else {
          hi = mid - 1;
        }
      }
      if (lo == 0) continue;
      p = detail::tokenize_words_pair(std::span<const PreWord>(words.data(), lo), fine, coarse);
    }
    if (!pack) {
      out.push_back(std::move(p));
      continue;
    }
    if (open) {
      TokenizedPair merged = *open;
      append_pair(merged, p);
      if (detail::accounted_length(merged, objective) <= max_len) {
        open = std::move(merged);
        continue;
      }
      out.push_back(std::move(*open));
    }
    open = std::move(p);
  }
  if (open) out.push_back(std::move(*open));
  return out;
}

inline MaskOptions mask_options(const PretrainConfig& cfg) {
  MaskOptions o;
  o.rate = cfg.mask_rate;
  o.use_schedule = cfg.schedule && (cfg.objective == Objective::kObj || cfg.objective == Objective::kPair);
  return o;
}

template <typename T>
StepResult run_step(const PretrainConfig& cfg, const Model<T>& model, const std::vector<MaskedExample>& batch,
                    ParamStore<T>* grads) {
  switch (cfg.objective) {
    case Objective::kMlm: return step_mlm(model, batch, grads);
    case Objective::kHier: return step_hier(model, batch, cfg.hier_aggregate, grads);
    case Objective::kObj: return step_obj(model, batch, cfg.lambda, grads);
    case Objective::kPair: return step_pair(model, batch, cfg.lambda, grads);
  }
  throw Error("unreachable");
}

/// Masks every example with its own generator forked from `rng`.
inline std::vector<MaskedExample> mask_batch(const std::vector<const TokenizedPair*>& pairs, const MaskOptions& opt,
                                             int fine_vocab, int coarse_vocab, Rng& rng) {
  std::vector<MaskedExample> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng local = rng.fork(i);
    out.push_back(make_masked_example(*pairs[i], plan_whole_word_mask(*pairs[i], opt, fine_vocab, coarse_vocab, local)));
  }
  return out;
}

struct StepLog {
  int step = 0;
  double loss_fine = 0.0;
  double loss_coarse = 0.0;
  double total = 0.0;

  std::string to_text() const {
    return "step=" + std::to_string(step) + "\tloss_fine=" + format_double(loss_fine) +
           "\tloss_coarse=" + format_double(loss_coarse) + "\ttotal=" + format_double(total);
  }
};

template <typename T>
struct PretrainResult {
  Model<T> model;
  std::vector<StepLog> log;
  std::vector<TokenizedPair> examples;
};

inline std::map<std::string, int> pretrain_vocab_sizes(Objective o, const VocabBundle& fine, const VocabBundle* coarse) {
  std::map<std::string, int> v{{std::string(kFineSlot), fine.vocab.size()}};
  if (uses_two_vocabs(o)) v[std::string(kCoarseSlot)] = coarse->vocab.size();
  return v;
}

/// Runs `cfg.steps` Adam steps of the chosen objective. Each step draws
/// batch_size examples from a reshuffled pass over the data and fresh
/// masking plans. Aborts on a non-finite loss.
template <typename T = float>
PretrainResult<T> pretrain(const PretrainConfig& cfg, const std::vector<std::string>& corpus, const SegDictionary& dict,
                           const VocabBundle& fine, const VocabBundle* coarse,
                           const std::function<void(const StepLog&)>& on_step = {}) {
  cfg.validate();
  if (corpus.empty()) throw ValidationError("pretrain: corpus is empty");
  if (uses_two_vocabs(cfg.objective) && !coarse) {
    throw ValidationError("objective " + std::string(to_string(cfg.objective)) + " needs two vocabularies");
  }
  if (!uses_two_vocabs(cfg.objective)) coarse = nullptr;
  PretrainResult<T> res;
  res.examples = prepare_pretrain_examples(corpus, dict, fine, coarse, cfg.objective, cfg.max_len, cfg.pack);
  if (res.examples.empty()) throw ValidationError("pretrain: no usable sentences in the corpus");

  Rng root(cfg.seed);
  Rng init_rng = root.fork(1), order_rng = root.fork(2), mask_rng = root.fork(3);
  res.model = init_model<T>(cfg.encoder_config(pretrain_vocab_sizes(cfg.objective, fine, coarse)), init_rng);
  auto state = AdamState<T>::for_params(res.model.params);
  auto grads = res.model.params.zeros_like();
  const MaskOptions opt = mask_options(cfg);
  const int fine_v = fine.vocab.size(), coarse_v = coarse ? coarse->vocab.size() : 0;

  const std::size_t batch_size = std::min(static_cast<std::size_t>(cfg.batch_size), res.examples.size());
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<const TokenizedPair*> pairs;
    while (pairs.size() < batch_size) {
      if (cursor == order.size()) {
        order.resize(res.examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.uniform(i)]);
        cursor = 0;
      }
      pairs.push_back(&res.examples[order[cursor++]]);
    }
    Rng step_rng = mask_rng.fork(static_cast<std::uint64_t>(step));
    const auto batch = mask_batch(pairs, opt, fine_v, coarse_v, step_rng);
    grads.set_zero();
    const StepResult r = run_step(cfg, res.model, batch, &grads);
    StepLog entry{step, r.loss_fine, r.loss_coarse, r.total};
    if (!std::isfinite(r.total)) {
      throw Error("pretrain: loss diverged at step " + std::to_string(step) + " (" + entry.to_text() +
                  "); try a smaller learning rate");
    }
    adam_step(res.model.params, grads, state, cfg.learning_rate_at(step));
    res.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return res;
}

/// Masked-token accuracy on `examples` (the first `max_examples` when
/// nonzero) with every masked word replaced by [MASK] and both sides
/// predicted. Deterministic in `seed`.
template <typename T>
StepResult evaluate_masked(const PretrainConfig& cfg, const Model<T>& model, const std::vector<TokenizedPair>& examples,
                           std::uint64_t seed, std::size_t max_examples = 0) {
  MaskOptions opt = mask_options(cfg);
  opt.use_schedule = false;
  opt.force = Corruption::kMask;
  Rng rng(seed);
  std::vector<const TokenizedPair*> pairs;
  for (const auto& e : examples) {
    if (max_examples && pairs.size() == max_examples) break;
    pairs.push_back(&e);
  }
  const int coarse_v = model.has_slot(kCoarseSlot) ? model.vocab_size(kCoarseSlot) : 0;
  const auto batch = mask_batch(pairs, opt, model.vocab_size(kFineSlot), coarse_v, rng);
  PretrainConfig eval_cfg = cfg;
  if (eval_cfg.lambda == 0.0) eval_cfg.lambda = 1.0;  // still score the coarse side
  return run_step<T>(eval_cfg, model, batch, nullptr);
}

// ---------------------------------------------------------------------------
// Checkpoints: encoder tensors plus the vocabularies and dictionary used.

struct CheckpointMeta {
  Objective objective = Objective::kMlm;
  double lambda = 0.0;
  AggregateMode hier_aggregate = AggregateMode::kMean;
  std::uint64_t seed = 0;
  int steps = 0;

  std::string serialize() const {
    return "objective = " + std::string(to_string(objective)) + "\nlambda = " + format_double(lambda, 17) +
           "\nhier_aggregate = " + std::string(to_string(hier_aggregate)) + "\nseed = " + std::to_string(seed) +
           "\nsteps = " + std::to_string(steps) + "\n";
  }

  static CheckpointMeta parse(std::string_view text) {
    CheckpointMeta m;
    const auto lines = split_lines(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto line = trim(lines[i]);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("checkpoint meta: expected key = value", i + 1);
      const std::string key(trim(line.substr(0, eq))), value(trim(line.substr(eq + 1)));
      try {
        if (key == "objective") m.objective = parse_objective(value);
        else if (key == "lambda") m.lambda = std::stod(value);
        else if (key == "hier_aggregate") m.hier_aggregate = parse_aggregate_mode(value);
        else if (key == "seed") m.seed = std::stoull(value);
        else if (key == "steps") m.steps = std::stoi(value);
      } catch (const std::logic_error&) {
        throw ParseError("checkpoint meta: bad value for '" + key + "'", i + 1);
      }
    }
    return m;
  }
};

template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  Model<T> model;
  VocabBundle fine;
  std::optional<VocabBundle> coarse;
  std::shared_ptr<const SegDictionary> dict;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const CheckpointMeta& meta, const Model<T>& model,
                     const VocabBundle& fine, const VocabBundle* coarse, const SegDictionary& dict) {
  std::filesystem::create_directories(dir);
  save_model(model, dir);
  write_file((dir / "meta.txt").string(), meta.serialize());
  save_bundle(fine, dir / "vocab_fine");
  if (coarse) save_bundle(*coarse, dir / "vocab_coarse");
  write_file((dir / "dict.txt").string(), dict.serialize());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " does not exist");
  Checkpoint<T> c;
  c.meta = CheckpointMeta::parse(read_file((dir / "meta.txt").string()));
  c.model = load_model<T>(dir);
  c.fine = load_bundle(dir / "vocab_fine");
  if (std::filesystem::exists(dir / "vocab_coarse")) c.coarse = load_bundle(dir / "vocab_coarse");
  c.dict = std::make_shared<const SegDictionary>(load_dictionary_file((dir / "dict.txt").string()));
  if (c.model.vocab_size(kFineSlot) != c.fine.vocab.size() ||
      (c.model.has_slot(kCoarseSlot) && (!c.coarse || c.model.vocab_size(kCoarseSlot) != c.coarse->vocab.size()))) {
    throw ValidationError("checkpoint: vocabulary sizes do not match the model");
  }
  return c;
}

}  // namespace mvptok
