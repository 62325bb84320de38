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

// Experiment plumbing: corpus ingestion, tokenization efficiency, repeated
// fine-tuning runs and the lambda sweep. Reports are `key=value` lines;
// tables are tab-separated with a header row.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvptok/finetune.hpp"
#include "mvptok/metrics.hpp"
#include "mvptok/train.hpp"

namespace mvptok {

// ---------------------------------------------------------------------------
// Ingestion.

/// Splits documents into sentences after 。！？ and at newlines, dropping
/// control characters and surrounding whitespace. Throws utf8::DecodeError
/// with the byte offset of the first malformed sequence.
inline std::vector<std::string> ingest_text(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto t = trim(cur);
    if (!t.empty()) out.emplace_back(t);
    cur.clear();
  };
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t at = pos;
    const auto cp = utf8::decode_one(text, pos);
    if (!cp) throw utf8::DecodeError(at);
    if (*cp == '\n') {
      flush();
      continue;
    }
    if (utf8::is_control(*cp)) continue;
    utf8::append(cur, *cp);
    if (*cp == U'。' || *cp == U'！' || *cp == U'？') flush();
  }
  flush();
  return out;
}

inline std::vector<std::string> ingest_corpus(const std::string& path) { return ingest_text(read_file(path)); }

// ---------------------------------------------------------------------------
// Report helpers.

/// FNV-1a of `text`, as 16 hex digits.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string describe(const FinetuneConfig& c) {
  return "task=" + std::string(to_string(c.task)) + "\nmode=" + std::string(to_string(c.mode)) +
         "\ndirection=" + std::string(to_string(c.direction)) + "\nside=" + std::string(to_string(c.side)) +
         "\nnum_labels=" + std::to_string(c.num_labels) + "\nepochs=" + std::to_string(c.epochs) +
         "\nlearning_rate=" + format_double(c.learning_rate, 10) + "\nbatch_size=" + std::to_string(c.batch_size) +
         "\nseed=" + std::to_string(c.seed) + "\naggregate=" + std::string(to_string(c.aggregate)) +
         "\nmetric=" + c.metric_name() + "\n";
}

inline std::string describe(const PretrainConfig& c) {
  return "objective=" + std::string(to_string(c.objective)) + "\nlambda=" + format_double(c.lambda, 10) +
         "\nmask_rate=" + format_double(c.mask_rate, 10) + "\nschedule=" + (c.schedule ? "on" : "off") +
         "\nsteps=" + std::to_string(c.steps) + "\nbatch_size=" + std::to_string(c.batch_size) +
         "\nlearning_rate=" + format_double(c.learning_rate, 10) + "\nwarmup_steps=" + std::to_string(c.warmup_steps) +
         "\nlr_decay=" + (c.lr_decay ? "on" : "off") + "\nseed=" + std::to_string(c.seed) +
         "\nmax_len=" + std::to_string(c.max_len) + "\npack=" + (c.pack ? "on" : "off") +
         "\nhier_aggregate=" + std::string(to_string(c.hier_aggregate)) + "\nlayers=" + std::to_string(c.num_layers) +
         "\nembed_dim=" + std::to_string(c.embed_dim) + "\nhidden_dim=" + std::to_string(c.hidden_dim) +
         "\nheads=" + std::to_string(c.num_heads) + "\nffn_dim=" + std::to_string(c.ffn_dim) + "\n";
}

// ---------------------------------------------------------------------------
// Efficiency.

struct LengthRatio {
  std::string numerator, denominator;
  double ratio = 0.0;              // mean(numerator) / mean(denominator)
  double min_sentence_ratio = 0.0;  // over sentences with a non-empty denominator
};

struct EfficiencyReport {
  static constexpr double kReferenceSpeedup = 1.35;

  std::size_t sentences = 0;
  std::vector<std::string> names;
  std::vector<double> mean_tokens;
  std::vector<LengthRatio> ratios;
  std::vector<double> forward_ms;  // median forward time per batch; empty when not timed
  int batch_size = 0;

  /// `timings` off keeps the report byte-stable across runs.
  std::string to_text(bool timings = false) const {
    std::string out = "sentences=" + std::to_string(sentences) + "\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      out += "mean_tokens." + names[i] + "=" + format_double(mean_tokens[i]) + "\n";
    }
    for (const auto& r : ratios) {
      const std::string key = r.numerator + "/" + r.denominator;
      out += "ratio." + key + "=" + format_double(r.ratio) + "\n";
      out += "min_sentence_ratio." + key + "=" + format_double(r.min_sentence_ratio) + "\n";
      out += "reference_delta." + key + "=" + format_double(r.ratio - kReferenceSpeedup) + "\n";
    }
    if (timings && !forward_ms.empty()) {
      out += "timing.batch_size=" + std::to_string(batch_size) + "\n";
      for (std::size_t i = 0; i < names.size(); ++i) {
        out += "timing.forward_ms." + names[i] + "=" + format_double(forward_ms[i], 3) + "\n";
      }
      for (std::size_t i = 1; i < names.size(); ++i) {
        out += "timing.speedup." + names[0] + "/" + names[i] + "=" + format_double(forward_ms[0] / forward_ms[i], 3) +
               "\n";
      }
    }
    return out;
  }
};

struct NamedBundle {
  std::string name;
  const VocabBundle* bundle = nullptr;
};

struct EfficiencyOptions {
  bool time_forward = false;
  int batch_size = 16;
  int warm_runs = 5;
  int num_layers = 3;
  int embed_dim = 128;
  int hidden_dim = 256;
  int max_len = 128;
};

/// Token counts per sentence under each vocabulary (segmented with `dict`
/// when given), all pairwise ratios against later entries, and optionally
/// the median of `warm_runs` timed forward passes over the first batch.
inline EfficiencyReport efficiency_report(const std::vector<std::string>& corpus, const std::vector<NamedBundle>& vocabs,
                                          const SegDictionary* dict, const EfficiencyOptions& opt = {}) {
  if (vocabs.size() < 2) throw ValidationError("efficiency_report: needs at least two vocabularies");
  EfficiencyReport rep;
  rep.sentences = corpus.size();
  rep.batch_size = opt.batch_size;
  std::vector<std::vector<std::size_t>> lengths(vocabs.size());
  for (std::size_t v = 0; v < vocabs.size(); ++v) {
    rep.names.push_back(vocabs[v].name);
    const SegDictionary* d = dict ? dict : vocabs[v].bundle->dict.get();
    double sum = 0.0;
    for (const auto& s : corpus) {
      lengths[v].push_back(tokenize_words(pretokenize(s, d), *vocabs[v].bundle).size());
      sum += static_cast<double>(lengths[v].back());
    }
    rep.mean_tokens.push_back(corpus.empty() ? 0.0 : sum / static_cast<double>(corpus.size()));
  }
  for (std::size_t a = 0; a < vocabs.size(); ++a) {
    for (std::size_t b = a + 1; b < vocabs.size(); ++b) {
      LengthRatio r{rep.names[a], rep.names[b], 0.0, 0.0};
      r.ratio = rep.mean_tokens[b] > 0 ? rep.mean_tokens[a] / rep.mean_tokens[b] : 0.0;
      bool first = true;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (lengths[b][i] == 0) continue;
        const double q = static_cast<double>(lengths[a][i]) / static_cast<double>(lengths[b][i]);
        r.min_sentence_ratio = first ? q : std::min(r.min_sentence_ratio, q);
        first = false;
      }
      rep.ratios.push_back(r);
    }
  }
  if (!opt.time_forward) return rep;
  for (std::size_t v = 0; v < vocabs.size(); ++v) {
    const auto& b = *vocabs[v].bundle;
    Rng rng(17);
    const auto model = init_model<float>(
        make_encoder_config(opt.num_layers, opt.embed_dim, opt.hidden_dim, opt.max_len, {{"fine", b.vocab.size()}}),
        rng);
    const SegDictionary* d = dict ? dict : b.dict.get();
    std::vector<EncoderInput> batch;
    for (std::size_t i = 0; i < corpus.size() && static_cast<int>(batch.size()) < opt.batch_size; ++i) {
      auto p = detail::tokenize_words_pair(pretokenize(corpus[i], d), b, nullptr);
      if (p.fine.empty()) continue;
      auto in = wrap(p).fine_input();
      if (static_cast<int>(in.size()) > opt.max_len) {
        in = EncoderInput::of(std::vector<int>(in.ids.begin(), in.ids.begin() + opt.max_len));
      }
      batch.push_back(std::move(in));
    }
    std::vector<double> runs;
    for (int r = 0; r <= opt.warm_runs; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& in : batch) encode(model, kFineSlot, in);
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      if (r > 0) runs.push_back(ms);  // first run is the warm-up
    }
    std::sort(runs.begin(), runs.end());
    rep.forward_ms.push_back(runs.empty() ? 0.0 : runs[runs.size() / 2]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Repeated runs.

struct EvalReport {
  std::string task;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> scores;
  std::string config_fingerprint;

  std::string to_text() const {
    std::string out = "task=" + task + "\nmetric=" + metric + "\nruns=" + std::to_string(scores.size()) +
                      "\nmean=" + format_double(mean) + "\nstd=" + format_double(std) + "\n";
    for (std::size_t i = 0; i < scores.size(); ++i) {
      out += "run." + std::to_string(i) + "=" + format_double(scores[i]) + "\n";
    }
    out += "config=" + config_fingerprint + "\n";
    return out;
  }
};

/// Fine-tunes `n` times with seeds seed, seed+1, ... and reports the dev
/// score (or the training score without a dev set) as mean and std.
template <typename T = float>
EvalReport repeat_eval(const FinetuneConfig& cfg, const Checkpoint<T>& ckpt, const Dataset& train, const Dataset* dev,
                       int n, const std::function<void(int, double)>& on_run = {}) {
  if (n < 1) throw ValidationError("repeat_eval: need at least one run");
  EvalReport rep;
  rep.task = std::string(to_string(cfg.task));
  rep.metric = cfg.metric_name();
  rep.config_fingerprint = fingerprint(describe(cfg) + "runs=" + std::to_string(n) + "\n");
  for (int i = 0; i < n; ++i) {
    FinetuneConfig run = cfg;
    run.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const auto r = finetune(run, ckpt, train, dev);
    rep.scores.push_back(r.eval_score.value_or(r.train_score));
    if (on_run) on_run(i, rep.scores.back());
  }
  std::tie(rep.mean, rep.std) = mean_std(rep.scores);
  return rep;
}

// ---------------------------------------------------------------------------
// Lambda sweep.

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> grid = {0.1, 0.5, 1.0, 2.0, 10.0};
  return grid;
}

struct SweepSpec {
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  std::vector<double> lambdas = default_lambda_grid();
};

struct SweepRow {
  double lambda = 0.0;
  std::string mode;  // single, ensemble, ftc or ctf
  std::string metric;
  double score = 0.0;
  double final_loss = 0.0;
  double masked_accuracy = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;

  std::string to_tsv() const {
    std::string out = "lambda\tmode\tmetric\tscore\tpretrain_loss\tmasked_accuracy\n";
    for (const auto& r : rows) {
      out += format_double(r.lambda, 4) + "\t" + r.mode + "\t" + r.metric + "\t" + format_double(r.score) + "\t" +
             format_double(r.final_loss) + "\t" + format_double(r.masked_accuracy) + "\n";
    }
    return out;
  }
};

/// Fine-tuning variants reported per lambda: the single fine encoder, plus
/// the ensemble (classification) or both directions (tagging) for pair.
inline std::vector<std::pair<std::string, FinetuneConfig>> sweep_modes(const SweepSpec& spec) {
  std::vector<std::pair<std::string, FinetuneConfig>> out;
  FinetuneConfig single = spec.finetune;
  single.mode = FinetuneMode::kSingle;
  single.direction = Direction::kNone;
  single.side = Side::kFine;
  out.emplace_back("single", single);
  if (spec.pretrain.objective != Objective::kPair) return out;
  FinetuneConfig ens = single;
  ens.mode = FinetuneMode::kEnsemble;
  if (spec.finetune.task == Task::kTag) {
    ens.direction = Direction::kFtc;
    out.emplace_back("ftc", ens);
    ens.direction = Direction::kCtf;
    out.emplace_back("ctf", ens);
  } else {
    out.emplace_back("ensemble", ens);
  }
  return out;
}

/// Pretrains once per lambda (same seed) and fine-tunes every mode on the
/// result. Failures are rethrown with the lambda that caused them.
template <typename T = float>
SweepTable sweep_lambda(const SweepSpec& spec, const std::vector<std::string>& corpus,
                        std::shared_ptr<const SegDictionary> dict, const VocabBundle& fine, const VocabBundle& coarse,
                        const Dataset& train, const Dataset* dev, const std::function<void(const SweepRow&)>& on_row = {}) {
  if (spec.pretrain.objective != Objective::kObj && spec.pretrain.objective != Objective::kPair) {
    throw ValidationError("sweep_lambda: objective must be obj or pair");
  }
  if (spec.lambdas.empty()) throw ValidationError("sweep_lambda: empty lambda grid");
  if (!dict) throw ValidationError("sweep_lambda: dictionary required");
  SweepTable table;
  for (double lambda : spec.lambdas) {
    const std::string tag = "lambda=" + format_double(lambda, 4) + ": ";
    try {
      PretrainConfig pc = spec.pretrain;
      pc.lambda = lambda;
      auto pre = pretrain<T>(pc, corpus, *dict, fine, &coarse);
      const StepResult acc = evaluate_masked(pc, pre.model, pre.examples, pc.seed + 1, 256);
      Checkpoint<T> ck;
      ck.meta = {pc.objective, lambda, pc.hier_aggregate, pc.seed, pc.steps};
      ck.model = std::move(pre.model);
      ck.fine = fine;
      ck.coarse = coarse;
      ck.dict = dict;
      for (const auto& [mode, fc] : sweep_modes(spec)) {
        const auto r = finetune(fc, ck, train, dev);
        SweepRow row{lambda, mode, fc.metric_name(), r.eval_score.value_or(r.train_score),
                     pre.log.empty() ? 0.0 : pre.log.back().total, acc.fine_accuracy()};
        table.rows.push_back(row);
        if (on_row) on_row(row);
      }
    } catch (const ValidationError& e) {
      throw ValidationError(tag + e.what());
    } catch (const Error& e) {
      throw Error(tag + e.what());
    }
  }
  return table;
}

}  // namespace mvptok
