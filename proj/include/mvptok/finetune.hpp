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

// Fine-tuning on sentence classification, sentence-pair classification and
// character tagging, with one encoder or with both encoders of a
// pair-pretrained checkpoint.
//
// Tag tasks predict one label per token. A token's gold label is the tag of
// its first character; predictions are expanded back to characters (B-X on
// the first, I-X on the rest) and scored with exact span F1.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvptok/metrics.hpp"
#include "mvptok/train.hpp"

namespace mvptok {

enum class Task : std::uint8_t { kClassify, kPairClassify, kTag };
enum class FinetuneMode : std::uint8_t { kSingle, kEnsemble };
enum class Direction : std::uint8_t { kNone, kFtc, kCtf };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::kClassify: return "classify";
    case Task::kPairClassify: return "pair_classify";
    case Task::kTag: return "tag";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "classify") return Task::kClassify;
  if (s == "pair_classify") return Task::kPairClassify;
  if (s == "tag") return Task::kTag;
  throw ValidationError("unknown task '" + std::string(s) + "' (expected classify, pair_classify or tag)");
}

inline std::string_view to_string(FinetuneMode m) { return m == FinetuneMode::kSingle ? "single" : "ensemble"; }

inline FinetuneMode parse_finetune_mode(std::string_view s) {
  if (s == "single") return FinetuneMode::kSingle;
  if (s == "ensemble") return FinetuneMode::kEnsemble;
  throw ValidationError("unknown mode '" + std::string(s) + "' (expected single or ensemble)");
}

inline std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::kNone: return "none";
    case Direction::kFtc: return "ftc";
    case Direction::kCtf: return "ctf";
  }
  return "?";
}

inline Direction parse_direction(std::string_view s) {
  if (s == "none" || s.empty()) return Direction::kNone;
  if (s == "ftc") return Direction::kFtc;
  if (s == "ctf") return Direction::kCtf;
  throw ValidationError("unknown direction '" + std::string(s) + "' (expected ftc or ctf)");
}

inline std::string_view to_string(Side s) { return s == Side::kFine ? "fine" : "coarse"; }

inline Side parse_side(std::string_view s) {
  if (s == "fine") return Side::kFine;
  if (s == "coarse") return Side::kCoarse;
  throw ValidationError("unknown side '" + std::string(s) + "' (expected fine or coarse)");
}

struct FinetuneConfig {
  Task task = Task::kClassify;
  FinetuneMode mode = FinetuneMode::kSingle;
  Direction direction = Direction::kNone;
  Side side = Side::kFine;  // which encoder of a pair checkpoint in single mode
  int num_labels = 0;       // 0: taken from the training data
  int epochs = 3;
  double learning_rate = 2e-5;
  int batch_size = 16;
  std::uint64_t seed = 0;
  AggregateMode aggregate = AggregateMode::kMean;  // fine-to-coarse pooling for ftc
  ClassifyMetric metric = ClassifyMetric::kAccuracy;

  void validate() const {
    if (epochs < 0) throw ValidationError("epochs must be non-negative");
    if (batch_size <= 0) throw ValidationError("batch size must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (num_labels < 0) throw ValidationError("label count must be non-negative");
    if (direction != Direction::kNone && (task != Task::kTag || mode != FinetuneMode::kEnsemble)) {
      throw ValidationError("ftc/ctf directions apply only to tag tasks in ensemble mode");
    }
    if (task == Task::kTag && mode == FinetuneMode::kEnsemble && direction == Direction::kNone) {
      throw ValidationError("tag ensembles need a direction (ftc or ctf)");
    }
  }

  std::string metric_name() const {
    return task == Task::kTag ? "exact_span_f1" : std::string(to_string(metric));
  }
};

// ---------------------------------------------------------------------------
// Datasets.

struct LabeledText {
  std::string label;
  std::string a, b;
};

struct TaggedSentence {
  std::vector<std::string> chars;
  std::vector<std::string> tags;

  std::string text() const {
    std::string s;
    for (const auto& c : chars) s += c;
    return s;
  }
};

struct Dataset {
  Task task = Task::kClassify;
  std::vector<LabeledText> texts;
  std::vector<TaggedSentence> tagged;

  std::size_t size() const { return task == Task::kTag ? tagged.size() : texts.size(); }
  bool empty() const { return size() == 0; }
};

/// classify: `label<TAB>text`; pair_classify: `label<TAB>text_a<TAB>text_b`;
/// tag: `char tag` per line with a blank line between sentences.
inline Dataset parse_dataset(std::string_view text, Task task) {
  if (!utf8::valid(text)) throw ParseError("dataset is not valid UTF-8", 0);
  Dataset d;
  d.task = task;
  const auto lines = split_lines(text);
  if (task == Task::kTag) {
    TaggedSentence cur;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto line = trim(lines[i]);
      if (line.empty()) {
        if (!cur.chars.empty()) d.tagged.push_back(std::move(cur));
        cur = {};
        continue;
      }
      const auto sp = line.find_first_of(" \t");
      if (sp == std::string_view::npos) throw ParseError("expected 'char tag'", i + 1);
      const auto ch = line.substr(0, sp);
      const auto tag = trim(line.substr(sp + 1));
      if (utf8::length(ch) != 1) throw ParseError("expected a single character, got '" + std::string(ch) + "'", i + 1);
      if (tag.empty() || tag.find_first_of(" \t") != std::string_view::npos) throw ParseError("expected one tag", i + 1);
      cur.chars.emplace_back(ch);
      cur.tags.emplace_back(tag);
    }
    if (!cur.chars.empty()) d.tagged.push_back(std::move(cur));
    return d;
  }
  const std::size_t fields = task == Task::kPairClassify ? 3 : 2;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto parts = split(lines[i], '\t');
    if (parts.size() != fields) {
      throw ParseError("expected " + std::to_string(fields) + " tab-separated fields, got " +
                           std::to_string(parts.size()),
                       i + 1);
    }
    LabeledText t{std::string(trim(parts[0])), std::string(parts[1]), fields == 3 ? std::string(parts[2]) : ""};
    if (t.label.empty()) throw ParseError("empty label", i + 1);
    d.texts.push_back(std::move(t));
  }
  return d;
}

inline Dataset load_dataset(const std::string& path, Task task) { return parse_dataset(read_file(path), task); }

/// Sorted label inventory; unknown labels map to -1.
struct LabelMap {
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(labels.size()); }
  int id(const std::string& label) const {
    const auto it = std::lower_bound(labels.begin(), labels.end(), label);
    return it != labels.end() && *it == label ? static_cast<int>(it - labels.begin()) : -1;
  }
  const std::string& name(int id) const { return labels.at(static_cast<std::size_t>(id)); }

  static LabelMap from(const Dataset& d) {
    std::set<std::string> s;
    if (d.task == Task::kTag) {
      for (const auto& t : d.tagged) s.insert(t.tags.begin(), t.tags.end());
      s.insert("O");
    } else {
      for (const auto& t : d.texts) s.insert(t.label);
    }
    return {std::vector<std::string>(s.begin(), s.end())};
  }
};

inline bool is_bio_tag(std::string_view t) {
  return t == "O" || (t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-');
}

/// Expands per-token tags to characters: the token's tag on its first
/// character, I-X (or O) on the rest. Uncovered characters are O.
inline std::vector<std::string> unit_tags_to_chars(int num_chars, const std::vector<std::pair<int, int>>& offsets,
                                                   const std::vector<std::string>& tags) {
  std::vector<std::string> out(static_cast<std::size_t>(num_chars), "O");
  for (std::size_t u = 0; u < offsets.size(); ++u) {
    const auto [s, e] = offsets[u];
    if (s < 0 || s >= num_chars) continue;
    out[s] = tags[u];
    const std::string inside = tags[u] == "O" ? "O" : "I-" + tags[u].substr(2);
    for (int k = s + 1; k < std::min(e, num_chars); ++k) out[k] = inside;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task model.

/// Which encoding a single-mode model runs: one embedding table, or the
/// hierarchical path (fine embeddings pooled to coarse tokens).
enum class View : std::uint8_t { kFine, kCoarse, kHier };

template <typename T>
struct TaskModel {
  FinetuneConfig config;
  CheckpointMeta meta;
  Model<T> model;
  VocabBundle fine;
  std::optional<VocabBundle> coarse;
  std::shared_ptr<const SegDictionary> dict;
  LabelMap labels;
  View view = View::kFine;

  bool ensemble() const { return config.mode == FinetuneMode::kEnsemble; }
  int feature_dim() const { return (ensemble() ? 2 : 1) * model.config.hidden_dim; }

  /// Side whose tokens carry tag predictions.
  Side unit_side() const {
    if (ensemble()) return config.direction == Direction::kFtc ? Side::kCoarse : Side::kFine;
    return view == View::kFine ? Side::kFine : Side::kCoarse;
  }
};

/// A tokenized task example. `targets` has one entry for classification and
/// one per unit token for tagging; -1 marks labels unseen in training.
struct TaskExample {
  WrappedInput input;
  std::vector<int> targets;
  std::vector<std::pair<int, int>> unit_offsets;
  int num_chars = 0;
};

namespace detail {

/// Longest word prefix whose longer side fits in `budget` tokens.
inline TokenizedPair fit_segment(std::string_view text, const SegDictionary& dict, const VocabBundle& fine,
                                 const VocabBundle* coarse, int budget) {
  const auto words = pretokenize(text, &dict);
  auto len = [&](std::size_t n) {
    return detail::tokenize_words_pair(std::span<const PreWord>(words.data(), n), fine, coarse);
  };
  TokenizedPair p = len(words.size());
  if (accounted_length(p, Objective::kPair) - 2 <= budget) return p;
  std::size_t lo = 0, hi = words.size();
  while (lo < hi) {
    const std::size_t mid = (lo + hi + 1) / 2;
    if (accounted_length(len(mid), Objective::kPair) - 2 <= budget) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  return len(lo);
}

inline View choose_view(const FinetuneConfig& cfg, const CheckpointMeta& meta) {
  const bool pair = meta.objective == Objective::kPair;
  if (cfg.mode == FinetuneMode::kEnsemble && !pair) {
    throw ValidationError("ensemble fine-tuning needs a pair-pretrained checkpoint, got " +
                          std::string(to_string(meta.objective)));
  }
  if (cfg.side == Side::kCoarse && !pair) {
    throw ValidationError("the coarse encoder is only available in pair-pretrained checkpoints");
  }
  if (meta.objective == Objective::kHier) return View::kHier;
  return cfg.side == Side::kCoarse ? View::kCoarse : View::kFine;
}

template <typename T>
Matrix<T> encode_view(const TaskModel<T>& tm, View view, const WrappedInput& in, EncodeCache<T>* c) {
  switch (view) {
    case View::kFine: return encode(tm.model, kFineSlot, in.fine_input(), c).hidden;
    case View::kCoarse: return encode(tm.model, kCoarseSlot, in.coarse_input(), c).hidden;
    case View::kHier: {
      const Matrix<T> words = aggregate(lookup(tm.model, kFineSlot, in.fine_ids), in.alignment, tm.meta.hier_aggregate);
      return encode_embedded(tm.model, kFineSlot, words, in.coarse_input(), c).hidden;
    }
  }
  throw Error("unreachable");
}

template <typename T>
void encode_view_backward(const TaskModel<T>& tm, View view, const WrappedInput& in, const EncodeCache<T>& c,
                          const Matrix<T>& dh, ParamStore<T>& g) {
  if (view != View::kHier) {
    encode_backward(tm.model, c, dh, g);
    return;
  }
  const Matrix<T> dw = encode_embedded_backward(tm.model, c, dh, g);
  lookup_backward(kFineSlot, in.fine_ids,
                  aggregate_backward(dw, in.alignment, tm.meta.hier_aggregate,
                                     static_cast<Eigen::Index>(in.fine_ids.size())),
                  g);
}

/// Inner rows of a single-segment wrapped sequence (drops [CLS] and [SEP]).
template <typename T>
Matrix<T> inner(const Matrix<T>& h) {
  return h.middleRows(1, h.rows() - 2);
}

template <typename T>
Matrix<T> hcat(const Matrix<T>& a, const Matrix<T>& b) {
  Matrix<T> out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

/// Forward state of one example; `backward` accumulates parameter gradients
/// given d(features).
template <typename T>
struct TaskPass {
  Matrix<T> features;
  EncodeCache<T> c1, c2;
  Matrix<T> h1, h2;
  PoolCache<T> p1, p2;
};

template <typename T>
void task_forward(const TaskModel<T>& tm, const WrappedInput& in, TaskPass<T>& s, bool keep) {
  const bool classify = tm.config.task != Task::kTag;
  if (!tm.ensemble()) {
    s.h1 = encode_view(tm, tm.view, in, keep ? &s.c1 : nullptr);
    s.features = classify ? pool_cls(tm.model, s.h1, &s.p1) : inner(s.h1);
    return;
  }
  s.h1 = encode(tm.model, kFineSlot, in.fine_input(), keep ? &s.c1 : nullptr).hidden;
  s.h2 = encode(tm.model, kCoarseSlot, in.coarse_input(), keep ? &s.c2 : nullptr).hidden;
  if (classify) {
    s.features = hcat<T>(pool_cls(tm.model, s.h1, &s.p1), pool_cls(tm.model, s.h2, &s.p2));
  } else if (tm.config.direction == Direction::kFtc) {
    s.features = inner<T>(hcat<T>(aggregate(s.h1, in.alignment, tm.config.aggregate), s.h2));
  } else {
    s.features = inner<T>(hcat<T>(s.h1, broadcast(s.h2, in.alignment, s.h1.rows())));
  }
}

template <typename T>
void task_backward(const TaskModel<T>& tm, const WrappedInput& in, const TaskPass<T>& s, const Matrix<T>& df,
                   ParamStore<T>& g) {
  const bool classify = tm.config.task != Task::kTag;
  const Eigen::Index h = tm.model.config.hidden_dim;
  auto pad = [](const Matrix<T>& d, Eigen::Index rows) {
    Matrix<T> out = Matrix<T>::Zero(rows, d.cols());
    out.middleRows(1, d.rows()) = d;
    return out;
  };
  if (!tm.ensemble()) {
    const Matrix<T> dh = classify ? pool_cls_backward(tm.model, s.p1, df, s.h1.rows(), g) : pad(df, s.h1.rows());
    encode_view_backward(tm, tm.view, in, s.c1, dh, g);
    return;
  }
  Matrix<T> dh1, dh2;
  if (classify) {
    dh1 = pool_cls_backward<T>(tm.model, s.p1, df.leftCols(h), s.h1.rows(), g);
    dh2 = pool_cls_backward<T>(tm.model, s.p2, df.rightCols(h), s.h2.rows(), g);
  } else if (tm.config.direction == Direction::kFtc) {
    const Matrix<T> full = pad(df, s.h2.rows());
    dh1 = aggregate_backward<T>(full.leftCols(h), in.alignment, tm.config.aggregate, s.h1.rows());
    dh2 = full.rightCols(h);
  } else {
    const Matrix<T> full = pad(df, s.h1.rows());
    dh1 = full.leftCols(h);
    dh2 = broadcast_backward<T>(full.rightCols(h), in.alignment);
  }
  encode_backward(tm.model, s.c1, dh1, g);
  encode_backward(tm.model, s.c2, dh2, g);
}

}  // namespace detail

/// Tokenizes one dataset under the task model's vocabularies and labels.
template <typename T>
std::vector<TaskExample> prepare_task_examples(const TaskModel<T>& tm, const Dataset& d) {
  if (d.task != tm.config.task) {
    throw ValidationError("dataset is for task " + std::string(to_string(d.task)) + ", model is for " +
                          std::string(to_string(tm.config.task)));
  }
  const VocabBundle* coarse = tm.coarse ? &*tm.coarse : nullptr;
  const int max_pos = tm.model.config.max_positions;
  std::vector<TaskExample> out;
  out.reserve(d.size());
  if (d.task == Task::kTag) {
    for (const auto& s : d.tagged) {
      TaskExample ex;
      const auto p = detail::fit_segment(s.text(), *tm.dict, tm.fine, coarse, max_pos - 2);
      ex.input = wrap(p);
      ex.num_chars = static_cast<int>(s.chars.size());
      const bool fine_units = tm.unit_side() == Side::kFine;
      const auto& offs = fine_units ? ex.input.fine_offsets : ex.input.coarse_offsets;
      ex.unit_offsets.assign(offs.begin() + 1, offs.end() - 1);
      for (const auto& [b, e] : ex.unit_offsets) ex.targets.push_back(tm.labels.id(s.tags.at(b)));
      out.push_back(std::move(ex));
    }
    return out;
  }
  for (const auto& t : d.texts) {
    TaskExample ex;
    if (d.task == Task::kPairClassify) {
      const int half = (max_pos - 3) / 2;
      const auto a = detail::fit_segment(t.a, *tm.dict, tm.fine, coarse, half);
      const auto b = detail::fit_segment(t.b, *tm.dict, tm.fine, coarse, half);
      ex.input = wrap({&a, &b});
    } else {
      ex.input = wrap(detail::fit_segment(t.a, *tm.dict, tm.fine, coarse, max_pos - 2));
    }
    ex.targets = {tm.labels.id(t.label)};
    out.push_back(std::move(ex));
  }
  return out;
}

/// Mean cross-entropy over all labeled targets of the batch.
template <typename T>
double task_loss(const TaskModel<T>& tm, const std::vector<const TaskExample*>& batch, ParamStore<T>* grads = nullptr) {
  int n = 0;
  for (const auto* ex : batch) n += detail::count_labels(ex->targets);
  if (n == 0) return 0.0;
  const Matrix<T>& w = tm.model.params["task.w"];
  const Matrix<T>& b = tm.model.params["task.b"];
  double sum = 0.0;
  for (const auto* ex : batch) {
    detail::TaskPass<T> s;
    detail::task_forward(tm, ex->input, s, grads != nullptr);
    Matrix<T> logits;
    layers::linear_forward(s.features, w, b, logits);
    Matrix<T> dl = Matrix<T>::Zero(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const int y = ex->targets[r];
      if (y < 0) continue;
      const T mx = logits.row(r).maxCoeff();
      const auto e = (logits.row(r).array() - mx).exp();
      const T z = e.sum();
      sum += static_cast<double>(mx + std::log(z) - logits(r, y));
      dl.row(r) = e / z;
      dl(r, y) -= T(1);
    }
    if (!grads) continue;
    dl /= static_cast<T>(n);
    const Matrix<T> df = layers::linear_backward(s.features, w, dl, (*grads)["task.w"], (*grads)["task.b"]);
    detail::task_backward(tm, ex->input, s, df, *grads);
  }
  return sum / n;
}

/// Argmax label per target slot.
template <typename T>
std::vector<int> predict_example(const TaskModel<T>& tm, const TaskExample& ex) {
  detail::TaskPass<T> s;
  detail::task_forward(tm, ex.input, s, false);
  Matrix<T> logits;
  layers::linear_forward(s.features, tm.model.params["task.w"], tm.model.params["task.b"], logits);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index arg;
    logits.row(r).maxCoeff(&arg);
    out[r] = static_cast<int>(arg);
  }
  return out;
}

/// Task metric of `tm` on `d`: accuracy / macro F1 for classification,
/// character-level exact span F1 for tagging.
template <typename T>
double evaluate_task(const TaskModel<T>& tm, const Dataset& d) {
  const auto examples = prepare_task_examples(tm, d);
  if (examples.empty()) throw ValidationError("evaluate: empty dataset");
  if (d.task == Task::kTag) {
    std::vector<std::vector<Span>> pred, gold;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto ids = predict_example(tm, examples[i]);
      std::vector<std::string> tags;
      for (int id : ids) tags.push_back(tm.labels.name(id));
      pred.push_back(spans_from_bio(unit_tags_to_chars(examples[i].num_chars, examples[i].unit_offsets, tags)));
      gold.push_back(spans_from_bio(d.tagged[i].tags));
    }
    return corpus_span_f1(pred, gold).f1;
  }
  std::vector<int> preds, golds;
  for (const auto& ex : examples) {
    preds.push_back(predict_example(tm, ex)[0]);
    golds.push_back(ex.targets[0]);
  }
  return classify_metrics(preds, golds, tm.config.metric);
}

template <typename T>
struct FinetuneResult {
  TaskModel<T> model;
  std::vector<double> epoch_loss;
  double train_score = 0.0;
  std::optional<double> eval_score;
};

/// Builds the task model around a copy of the checkpoint encoder; the task
/// head is freshly initialized from `config.seed`.
template <typename T>
TaskModel<T> make_task_model(const FinetuneConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train) {
  cfg.validate();
  TaskModel<T> tm;
  tm.config = cfg;
  tm.meta = ckpt.meta;
  tm.view = detail::choose_view(cfg, ckpt.meta);
  tm.model = ckpt.model;
  tm.fine = ckpt.fine;
  tm.coarse = ckpt.coarse;
  tm.dict = ckpt.dict;
  if (tm.view != View::kFine && !tm.coarse) throw ValidationError("checkpoint has no coarse vocabulary");
  if (tm.ensemble() && !tm.model.has_slot(kCoarseSlot)) throw ValidationError("checkpoint has no coarse encoder");
  if (train.task != cfg.task) {
    throw ValidationError("dataset is for task " + std::string(to_string(train.task)) + ", config says " +
                          std::string(to_string(cfg.task)));
  }
  tm.labels = LabelMap::from(train);
  if (cfg.task == Task::kTag) {
    for (const auto& l : tm.labels.labels) {
      if (!is_bio_tag(l)) throw ValidationError("tag '" + l + "' is not a BIO tag");
    }
  }
  if (cfg.num_labels > 0 && cfg.num_labels != tm.labels.size()) {
    throw ValidationError("config expects " + std::to_string(cfg.num_labels) + " labels, training data has " +
                          std::to_string(tm.labels.size()));
  }
  if (tm.labels.size() < 2) throw ValidationError("training data needs at least two labels");
  std::vector<std::string> heads;
  for (const auto& [name, t] : tm.model.params) {
    if (name.rfind("head.", 0) == 0) heads.push_back(name);
  }
  for (const auto& name : heads) tm.model.params.erase(name);
  Rng rng = Rng(cfg.seed).fork(1);
  Matrix<T>& w = tm.model.params.add("task.w", tm.feature_dim(), tm.labels.size());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = static_cast<T>(detail::truncated_normal(rng, tm.model.config.init_std));
  }
  tm.model.params.add("task.b", 1, tm.labels.size());
  return tm;
}

/// Trains encoder and task head with Adam for `config.epochs` passes.
template <typename T = float>
FinetuneResult<T> finetune(const FinetuneConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train,
                           const Dataset* eval = nullptr) {
  if (train.empty()) throw ValidationError("finetune: training set is empty");
  FinetuneResult<T> res{make_task_model(cfg, ckpt, train), {}, 0.0, std::nullopt};
  TaskModel<T>& tm = res.model;
  const auto examples = prepare_task_examples(tm, train);
  auto state = AdamState<T>::for_params(tm.model.params);
  auto grads = tm.model.params.zeros_like();
  Rng order_rng = Rng(cfg.seed).fork(2);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.uniform(i)]);
    double total = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const TaskExample*> batch;
      for (std::size_t k = at; k < std::min(order.size(), at + cfg.batch_size); ++k) batch.push_back(&examples[order[k]]);
      grads.set_zero();
      const double loss = task_loss(tm, batch, &grads);
      if (!std::isfinite(loss)) {
        throw Error("finetune: loss diverged in epoch " + std::to_string(epoch) + "; try a smaller learning rate");
      }
      adam_step(tm.model.params, grads, state, cfg.learning_rate);
      total += loss;
      ++batches;
    }
    res.epoch_loss.push_back(total / batches);
  }
  res.train_score = evaluate_task(tm, train);
  if (eval) res.eval_score = evaluate_task(tm, *eval);
  return res;
}

}  // namespace mvptok
