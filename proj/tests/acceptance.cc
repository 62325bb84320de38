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

// Acceptance runner: one [PASS]/[FAIL] line per release criterion, each at
// its stated tolerance and time budget. Exit status is the number of
// failed criteria (capped at 1).
//
// Usage: acceptance DATA_DIR MVP_TOK_BINARY WORK_DIR [--only NAME]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "mvptok/harness.hpp"
#include "mvptok/synth.hpp"
#include "span_oracle.hpp"

namespace fs = std::filesystem;
using namespace mvptok;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Env {
  std::string data;
  std::string bin;
  fs::path work;
  std::shared_ptr<const SegDictionary> dict;
  std::vector<std::string> corpus;
  VocabBundle seg_tok, chars;  // built once by the first criterion
};

std::string fmt(double v, int p = 4) { return format_double(v, p); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// The tiny encoder used by the overfit and sweep criteria.
PretrainConfig tiny_config(Objective o) {
  PretrainConfig c;
  c.objective = o;
  c.lambda = o == Objective::kObj ? 2.0 : 1.0;
  c.num_layers = 2;
  c.embed_dim = 128;
  c.hidden_dim = 128;
  c.num_heads = 8;
  c.ffn_dim = 256;
  c.max_len = 128;
  c.learning_rate = 5e-3;
  c.warmup_steps = 30;
  c.lr_decay = true;
  return c;
}

// ---------------------------------------------------------------------------

Outcome vocab_mechanics(Env& env) {
  const auto t0 = std::chrono::steady_clock::now();
  env.seg_tok = build_seg_tok_vocab(env.corpus, env.dict, 2000);
  env.chars = derive_char_bundle(env.seg_tok);
  const auto st = vocab_stats(env.seg_tok, env.corpus);
  std::size_t unk_sentences = 0;
  for (const auto& s : env.corpus) {
    for (int id : tokenize(s, env.chars).ids) {
      if (id == kUnkId) {
        ++unk_sentences;
        break;
      }
    }
  }
  const double secs = seconds_since(t0);
  const double multi = st.kind_shares.at(TokenKind::kChineseMulti);
  return {env.seg_tok.vocab.size() == 2000 && multi > 0.0 && unk_sentences == 0 && secs < 60.0,
          "size=" + std::to_string(env.seg_tok.vocab.size()) + " chinese_multi=" + fmt(multi) +
              " derived_char_unk_sentences=" + std::to_string(unk_sentences) + "/" +
              std::to_string(env.corpus.size()) + " time=" + fmt(secs, 1) + "s"};
}

Outcome coverage_rule(Env&) {
  // Exact-count oracle: word occurrences a vocabulary of top entries covers.
  std::string detail;
  bool ok = true;
  {
    auto dict = std::make_shared<const SegDictionary>(load_dictionary("喜欢\t10\n篮球\t10\n"));
    std::vector<std::string> corpus(9996, "喜欢");
    corpus.insert(corpus.end(), 4, "篮球");
    const auto st = build_seg_tok_vocab(corpus, dict, 12);
    const auto r = build_seg_vocab(corpus, dict, st, 6, 0.9995);
    const double oracle = 9996.0 / 10000.0;
    ok = ok && r.bundle.vocab.size() == 6 && r.coverage == oracle && r.coverage >= 0.9995;
    detail += "dominant: N=" + std::to_string(r.bundle.vocab.size()) + " coverage=" + fmt(r.coverage, 6);
  }
  {
    std::string dict_text;
    std::vector<std::string> corpus;
    for (int i = 0; i < 100; ++i) {
      const std::string w = utf8::encode(static_cast<char32_t>(0x4E00 + 2 * i)) +
                            utf8::encode(static_cast<char32_t>(0x4E01 + 2 * i));
      dict_text += w + "\t5\n";
      corpus.insert(corpus.end(), 3, w);
    }
    auto dict = std::make_shared<const SegDictionary>(load_dictionary(dict_text));
    const auto st = build_seg_tok_vocab(corpus, dict, 400);
    // 5 free slots hold 5 whole words of 3 occurrences each.
    const double oracle = 15.0 / 300.0;
    try {
      build_seg_vocab(corpus, dict, st, 10, 0.9995);
      ok = false;
      detail += "; uniform: no error";
    } catch (const CoverageError& e) {
      ok = ok && e.achieved() == oracle;
      detail += "; uniform: error achieved=" + fmt(e.achieved(), 6) + " oracle=" + fmt(oracle, 6);
    }
  }
  return {ok, detail};
}

Outcome alignment_masking(Env& env) {
  const auto t0 = std::chrono::steady_clock::now();
  const synth::Generator gen;
  Rng text_rng(11), mask_rng(12);
  const int n = 10000;
  int violations = 0;
  double frac_sum = 0.0;
  int counts[3] = {0, 0, 0};
  for (int t = 0; t < n; ++t) {
    const std::string text = gen.sentence(text_rng).text();
    const auto p = tokenize_pair(text, env.chars, &env.seg_tok, *env.dict);
    bool ok = is_partition(p.alignment, p.fine.size()) && p.alignment.spans.size() == p.coarse.size();
    for (std::size_t j = 0; ok && j < p.coarse.size(); ++j) {
      std::string joined;
      for (int i = p.alignment.spans[j].first; i < p.alignment.spans[j].second; ++i) {
        joined += strip_marker(p.fine.surfaces[i]);
      }
      ok = joined == strip_marker(p.coarse.surfaces[j]);
    }
    violations += !ok;
    const auto plan = plan_whole_word_mask(p, {}, env.chars.vocab.size(), env.seg_tok.vocab.size(), mask_rng);
    frac_sum += static_cast<double>(plan.masked_words.size()) / p.num_words;
    ++counts[static_cast<int>(plan.schedule)];
  }
  const double secs = seconds_since(t0);
  const double frac = frac_sum / n;
  bool sched_ok = true;
  std::string sched;
  for (int c : counts) {
    const double f = static_cast<double>(c) / n;
    sched_ok = sched_ok && f >= 0.31 && f <= 0.35;
    sched += (sched.empty() ? "" : ",") + fmt(f);
  }
  return {violations == 0 && frac >= 0.14 && frac <= 0.16 && sched_ok && secs < 120.0,
          "violations=" + std::to_string(violations) + " masked_fraction=" + fmt(frac) + " schedule=" + sched +
              " time=" + fmt(secs, 1) + "s"};
}

// The fixed six-word toy batch shared by the gradient and degeneration checks.
struct ToyBatch {
  std::shared_ptr<const SegDictionary> dict;
  VocabBundle seg_tok, chars;
  std::vector<MaskedExample> batch;
  int six = 0;

  ToyBatch() {
    dict = std::make_shared<const SegDictionary>(load_dictionary(
        "我\t100\n喜欢\t50\n篮球\t40\n他\t60\n也\t70\n是\t90\n足球\t20\n我们\t30\n运动\t25\n打\t10\n"));
    const std::vector<std::string> words = {"我", "喜欢", "篮球", "他", "也", "是", "足球", "我们", "运动", "打"};
    Rng rng(9);
    std::vector<std::string> corpus;
    for (int i = 0; i < 200; ++i) {
      std::string s;
      for (std::uint64_t k = 0, n = 2 + rng.uniform(8); k < n; ++k) s += words[rng.uniform(words.size())];
      corpus.push_back(s);
    }
    corpus.push_back("我们喜欢打篮球也是");
    seg_tok = build_seg_tok_vocab(corpus, dict, 40);
    chars = derive_char_bundle(seg_tok);
    const auto p = tokenize_pair("我们喜欢打篮球也是", chars, &seg_tok, *dict);
    six = p.num_words;
    Rng plan_rng(3);
    const auto a = plan_words(p, {1}, Schedule::kBoth, Corruption::kMask, chars.vocab.size(), seg_tok.vocab.size(),
                              plan_rng);
    const auto b = plan_words(p, {3}, Schedule::kBoth, Corruption::kRandom, chars.vocab.size(),
                              seg_tok.vocab.size(), plan_rng);
    batch = {make_masked_example(p, a), make_masked_example(p, b)};
  }

  int num_words() const { return six; }

  Model<double> model(std::uint64_t seed) const {
    EncoderConfig c = make_encoder_config(2, 16, 32, 32,
                                          {{std::string(kFineSlot), chars.vocab.size()},
                                           {std::string(kCoarseSlot), seg_tok.vocab.size()}});
    c.num_heads = 2;
    c.ffn_dim = 64;
    Rng rng(seed);
    auto m = init_model<double>(c, rng);
    for (auto& [name, t] : m.params) {
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] += 0.05 * rng.normal();
    }
    return m;
  }
};

Outcome gradients(Env&) {
  const auto t0 = std::chrono::steady_clock::now();
  const ToyBatch toy;
  auto m = toy.model(21);
  bool ok = toy.num_words() == 6;
  std::string detail = "words=" + std::to_string(toy.num_words());
  const std::vector<std::pair<std::string, std::function<double(ParamStore<double>*)>>> steps = {
      {"hier", [&](ParamStore<double>* g) { return step_hier(m, toy.batch, AggregateMode::kMean, g).total; }},
      {"obj", [&](ParamStore<double>* g) { return step_obj(m, toy.batch, 2.0, g).total; }},
      {"pair", [&](ParamStore<double>* g) { return step_pair(m, toy.batch, 1.0, g).total; }},
  };
  for (const auto& [name, run] : steps) {
    auto grads = m.params.zeros_like();
    run(&grads);
    Rng rng(77);
    const auto res = testing::check_gradients(m.params, grads, [&] { return run(nullptr); }, rng, 4, 40);
    ok = ok && res.max_rel_error() < 1e-4;
    detail += " " + name + "=" + format_double(res.max_rel_error(), 10) + "(" + std::to_string(res.probes.size()) +
              " probes)";
  }
  const double secs = seconds_since(t0);
  return {ok && secs < 300.0, detail + " time=" + fmt(secs, 1) + "s"};
}

Outcome degeneration(Env&) {
  const ToyBatch toy;
  const auto m = toy.model(5);
  const double mlm = step_mlm(m, toy.batch).total;
  const double obj = step_obj(m, toy.batch, 0.0).total;
  const double pair = step_pair(m, toy.batch, 0.0).total;
  const double d_obj = std::abs(obj - mlm), d_pair = std::abs(pair - mlm);
  std::ostringstream os;
  os.precision(3);
  os << "mlm=" << format_double(mlm, 12) << " |obj-mlm|=" << d_obj << " |pair-mlm|=" << d_pair;
  return {d_obj <= 1e-10 && d_pair <= 1e-10, os.str()};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome overfit(Env& env, Objective o) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> small(env.corpus.begin(), env.corpus.begin() + 32);
  PretrainConfig cfg = tiny_config(o);
  cfg.steps = 300;
  cfg.batch_size = 32;
  cfg.pack = false;
  const auto r = pretrain<float>(cfg, small, *env.dict, env.chars, &env.seg_tok);
  // Masked accuracy pooled over several independent maskings.
  int count = 0, correct = 0;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto e = evaluate_masked(cfg, r.model, r.examples, seed);
    const bool fine = cfg.primary_side() == Side::kFine;
    count += fine ? e.fine_count : e.coarse_count;
    correct += fine ? e.fine_correct : e.coarse_correct;
  }
  const double acc = count ? static_cast<double>(correct) / count : 0.0;
  std::vector<double> early, late;
  for (const auto& l : r.log) {
    if (l.step <= 100) early.push_back(l.total);
    if (l.step >= 200) late.push_back(l.total);
  }
  const double m_early = median(early), m_late = median(late);
  const double secs = seconds_since(t0);
  return {acc >= 0.95 && m_late < m_early && secs < 600.0,
          std::string(to_string(cfg.primary_side())) + "_accuracy=" + fmt(acc) + " (" + std::to_string(correct) + "/" +
              std::to_string(count) + ") loss_median[0,100]=" + fmt(m_early) + " loss_median[200,300]=" +
              fmt(m_late) + " time=" + fmt(secs, 1) + "s"};
}

Outcome ensemble(Env& env) {
  bool ok = true;
  std::string detail;
  {
    const synth::Generator gen;
    const auto data = parse_dataset(gen.tag_dataset(200, 15), Task::kTag);
    PretrainConfig pcfg = tiny_config(Objective::kPair);
    pcfg.steps = 0;
    pcfg.max_len = 256;
    auto pre = pretrain<float>(pcfg, env.corpus, *env.dict, env.chars, &env.seg_tok);
    const Checkpoint<float> ck{{Objective::kPair, 1.0, AggregateMode::kMean, 0, 0}, std::move(pre.model), env.chars,
                               env.seg_tok, env.dict};
    for (auto dir : {Direction::kFtc, Direction::kCtf}) {
      FinetuneConfig cfg;
      cfg.task = Task::kTag;
      cfg.mode = FinetuneMode::kEnsemble;
      cfg.direction = dir;
      const auto tm = make_task_model(cfg, ck, data);
      const auto examples = prepare_task_examples(tm, data);
      int mismatches = 0;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        // Independent lengths: tokenize the sentence under each vocab alone.
        const auto text = data.tagged[i].text();
        const std::size_t l_x = tokenize(text, env.chars).size(), l_y = tokenize(text, env.seg_tok).size();
        mismatches += predict_example(tm, examples[i]).size() != (dir == Direction::kFtc ? l_y : l_x);
      }
      ok = ok && mismatches == 0 && !examples.empty();
      detail += std::string(to_string(dir)) + "_length_mismatches=" + std::to_string(mismatches) + "/" +
                std::to_string(examples.size()) + " ";
    }
  }
  Rng rng(31);
  int mismatches = 0;
  const int cases = 1000;
  for (int t = 0; t < cases; ++t) {
    const auto c = testing::random_span_case(rng, 6);
    const auto got = exact_span_f1(spans_from_bio(c.pred_tags), spans_from_bio(c.gold_tags));
    const auto want = testing::brute_force_span_f1(c.pred, c.gold);
    mismatches += got.true_positives != want.true_positives || got.f1 != want.f1 || got.precision != want.precision || got.recall != want.recall;
  }
  ok = ok && mismatches == 0;
  detail += "span_f1_mismatches=" + std::to_string(mismatches) + "/" + std::to_string(cases);
  return {ok, detail};
}

Outcome efficiency(Env& env) {
  const auto rep = efficiency_report(env.corpus, {{"char", &env.chars}, {"seg_tok", &env.seg_tok}}, env.dict.get(), {});
  const auto& r = rep.ratios.front();
  return {r.ratio >= 1.15 && r.min_sentence_ratio >= 1.0,
          "ratio=" + fmt(r.ratio) + " min_sentence_ratio=" + fmt(r.min_sentence_ratio) + " reference=" +
              fmt(EfficiencyReport::kReferenceSpeedup, 2) + " delta=" + fmt(r.ratio - EfficiencyReport::kReferenceSpeedup)};
}

int run_command(const std::string& cmd) {
  const int rc = std::system(cmd.c_str());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome lambda_sweep(Env& env) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = env.work / "sweep";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_bundle(env.seg_tok, dir / "seg_tok");
  save_bundle(env.chars, dir / "char");
  const PretrainConfig t = tiny_config(Objective::kPair);
  auto command = [&](const std::string& table) {
    return "'" + env.bin + "' sweep-lambda --objective pair --fine-vocab '" + (dir / "char").string() +
           "' --coarse-vocab '" + (dir / "seg_tok").string() + "' --corpus '" + env.data +
           "/sample_corpus.txt' --dict '" + env.data + "/dict.txt' --steps 100 --batch-size 16 --lr " +
           format_double(t.learning_rate, 6) + " --warmup-steps 10 --lr-decay --layers " +
           std::to_string(t.num_layers) + " --embed-dim " + std::to_string(t.embed_dim) + " --hidden-dim " +
           std::to_string(t.hidden_dim) + " --heads " + std::to_string(t.num_heads) +
           " --ffn-dim " + std::to_string(t.ffn_dim) + " --max-len 64 --task classify --data '" + env.data +
           "/classify_train.tsv' --eval '" + env.data + "/classify_dev.tsv' --epochs 5 --ft-lr 1e-3 " +
           "--ft-batch-size 16 --lambdas 0.1,0.5,1,2,10 --table '" + (dir / table).string() + "' > /dev/null 2>&1";
  };
  const int rc1 = run_command(command("a.tsv"));
  const int rc2 = run_command(command("b.tsv"));
  const double secs = seconds_since(t0);
  if (rc1 != 0 || rc2 != 0) {
    return {false, "sweep-lambda exit codes " + std::to_string(rc1) + "," + std::to_string(rc2)};
  }
  const std::string a = read_file((dir / "a.tsv").string()), b = read_file((dir / "b.tsv").string());
  // Fully populated: every lambda, every mode, finite numbers in every cell.
  const auto lines = split_lines(a);
  int rows = 0;
  bool populated = true;
  std::vector<std::string> lambdas_seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const auto cells = split(lines[i], '\t');
    populated = populated && cells.size() == 6;
    for (std::size_t c = 0; populated && c < cells.size(); ++c) {
      if (c == 1 || c == 2) {
        populated = !cells[c].empty();
      } else {
        populated = std::isfinite(std::stod(std::string(cells[c])));
      }
    }
    if (populated && (lambdas_seen.empty() || lambdas_seen.back() != cells[0])) lambdas_seen.emplace_back(cells[0]);
    ++rows;
  }
  const bool all_lambdas = lambdas_seen.size() == 5;
  return {a == b && populated && all_lambdas && rows == 10 && secs < 1800.0,
          "rows=" + std::to_string(rows) + " lambdas=" + std::to_string(lambdas_seen.size()) +
              " identical_reruns=" + (a == b ? "yes" : "no") + " time=" + fmt(secs, 1) + "s"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 4) {
    std::cerr << "usage: acceptance DATA_DIR MVP_TOK_BINARY WORK_DIR [--only NAME]\n";
    return 2;
  }
  Env env;
  env.data = argv[1];
  env.bin = argv[2];
  env.work = argv[3];
  const std::string only = argc > 5 && std::string(argv[4]) == "--only" ? argv[5] : "";
  fs::create_directories(env.work);
  env.dict = std::make_shared<const SegDictionary>(load_dictionary_file(env.data + "/dict.txt"));
  env.corpus = ingest_corpus(env.data + "/sample_corpus.txt");

  const std::vector<std::pair<std::string, std::function<Outcome(Env&)>>> criteria = {
      {"vocab_mechanics", vocab_mechanics},
      {"coverage_rule", coverage_rule},
      {"alignment_masking", alignment_masking},
      {"gradient_correctness", gradients},
      {"degeneration", degeneration},
      {"overfit_mlm", [](Env& e) { return overfit(e, Objective::kMlm); }},
      {"overfit_hier", [](Env& e) { return overfit(e, Objective::kHier); }},
      {"overfit_obj", [](Env& e) { return overfit(e, Objective::kObj); }},
      {"overfit_pair", [](Env& e) { return overfit(e, Objective::kPair); }},
      {"ensemble_finetuning", ensemble},
      {"efficiency_proxy", efficiency},
      {"lambda_sweep", lambda_sweep},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    // Vocabularies come from the first criterion; always build them.
    if (!only.empty() && name != only && name != "vocab_mechanics") continue;
    Outcome o;
    try {
      o = run(env);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << "\n";
  return failed ? 1 : 0;
}
