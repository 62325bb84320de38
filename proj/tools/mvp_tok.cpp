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

// mvp-tok: vocabulary building, tokenization, pretraining, fine-tuning and
// experiment reports from the command line.
//
// Exit status: 0 on success, 2 on invalid arguments or data, 1 otherwise.
// `--config FILE` supplies `key = value` lines for flags not given on the
// command line; MVPTOK_SEED sets the default seed.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mvptok/harness.hpp"
#include "mvptok/synth.hpp"

namespace fs = std::filesystem;
using namespace mvptok;

namespace {

constexpr const char* kSeedEnv = "MVPTOK_SEED";

/// Prints `text` and, when `path` is set, writes it there too.
void emit(const std::string& text, const std::string& path) {
  std::cout << text;
  if (!path.empty()) write_file(path, text);
}

std::shared_ptr<const SegDictionary> load_dict(const std::string& path) {
  return std::make_shared<const SegDictionary>(load_dictionary_file(path));
}

/// Moves `--config FILE` contents into the argument list as `--key=value`
/// for every key not already present. Returns arguments without argv[0].
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::optional<std::string> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!config) return args;
  const std::string text = read_file(*config);
  const auto lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto line = trim(lines[i]);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(*config + ": expected key = value", i + 1);
    std::string key(trim(line.substr(0, eq)));
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) args.push_back(flag + "=" + std::string(trim(line.substr(eq + 1))));
  }
  return args;
}

// ---------------------------------------------------------------------------

struct VocabArgs {
  std::string mode, corpus, dict, from, out, report;
  int size = 2000;
  double coverage = 0.9995;
};

void run_build_vocab(const VocabArgs& a) {
  const VocabMode mode = parse_vocab_mode(a.mode);
  VocabBundle bundle;
  std::vector<std::string> corpus;
  std::string extra;
  if (mode != VocabMode::kDerivedChar) {
    if (a.corpus.empty()) throw ValidationError("--corpus is required for mode " + a.mode);
    corpus = ingest_corpus(a.corpus);
  }
  switch (mode) {
    case VocabMode::kChar:
      bundle = build_char_vocab(corpus, a.size);
      break;
    case VocabMode::kSegTok:
      if (a.dict.empty()) throw ValidationError("--dict is required for mode seg_tok");
      bundle = build_seg_tok_vocab(corpus, load_dict(a.dict), a.size);
      break;
    case VocabMode::kSeg: {
      if (a.from.empty()) throw ValidationError("--from (a seg_tok vocab directory) is required for mode seg");
      const auto seg_tok = load_bundle(a.from);
      auto dict = a.dict.empty() ? seg_tok.dict : load_dict(a.dict);
      auto r = build_seg_vocab(corpus, dict, seg_tok, a.size, a.coverage);
      extra = "coverage=" + format_double(r.coverage) + "\nnatural_words=" + std::to_string(r.natural_words) + "\n";
      bundle = std::move(r.bundle);
      break;
    }
    case VocabMode::kDerivedChar:
      if (a.from.empty()) throw ValidationError("--from (a seg_tok vocab directory) is required for mode derived_char");
      bundle = derive_char_bundle(load_bundle(a.from));
      break;
  }
  save_bundle(bundle, a.out);
  std::string text = "mode=" + std::string(to_string(bundle.mode())) + "\nout=" + a.out + "\n" + extra;
  if (!corpus.empty()) {
    text += vocab_stats(bundle, corpus).to_text();
  } else {
    text += "size=" + std::to_string(bundle.vocab.size()) + "\n";
  }
  emit(text, a.report);
}

struct TokenizeArgs {
  std::string vocab, text, input, dict;
  bool ids = false;
};

void run_tokenize(const TokenizeArgs& a) {
  const auto b = load_bundle(a.vocab);
  std::shared_ptr<const SegDictionary> dict = a.dict.empty() ? nullptr : load_dict(a.dict);
  std::vector<std::string> lines;
  if (!a.text.empty()) lines.push_back(a.text);
  if (!a.input.empty()) {
    for (auto l : split_lines(read_file(a.input))) lines.emplace_back(l);
  }
  if (lines.empty()) throw ValidationError("give --text or --input");
  for (const auto& line : lines) {
    const auto seq = tokenize(line, b, dict.get());
    std::string out;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (i) out += ' ';
      out += a.ids ? std::to_string(seq.ids[i]) : seq.surfaces[i];
    }
    std::cout << out << "\n";
  }
}

struct StatsArgs {
  std::string vocab, corpus, report;
};

void run_stats(const StatsArgs& a) {
  emit(vocab_stats(load_bundle(a.vocab), ingest_corpus(a.corpus)).to_text(), a.report);
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  PretrainConfig cfg;
  std::string objective = "mlm", fine_vocab, coarse_vocab, corpus, dict, out, log, report, hier_aggregate = "mean";
  bool no_schedule = false, no_pack = false;
  int dump_plan = -1;

  void add(CLI::App* c, bool with_output) {
    c->add_option("--objective", objective, "mlm, hier, obj or pair")->capture_default_str();
    c->add_option("--fine-vocab", fine_vocab, "fine (char-level) vocab directory")->required();
    c->add_option("--coarse-vocab", coarse_vocab, "coarse vocab directory (hier, obj, pair)");
    c->add_option("--corpus", corpus, "pretraining corpus")->required();
    c->add_option("--dict", dict, "segmentation dictionary (default: the vocab's)");
    c->add_option("--lambda", cfg.lambda, "coarse loss weight")->capture_default_str();
    c->add_option("--steps", cfg.steps)->capture_default_str();
    c->add_option("--seed", cfg.seed)->envname(kSeedEnv)->capture_default_str();
    c->add_option("--batch-size", cfg.batch_size)->capture_default_str();
    c->add_option("--lr", cfg.learning_rate)->capture_default_str();
    c->add_option("--warmup-steps", cfg.warmup_steps)->capture_default_str();
    c->add_flag("--lr-decay", cfg.lr_decay, "decay the learning rate linearly to 0");
    c->add_option("--mask-rate", cfg.mask_rate)->capture_default_str();
    c->add_flag("--no-schedule", no_schedule, "predict both sides for every sentence");
    c->add_option("--max-len", cfg.max_len)->capture_default_str();
    c->add_flag("--no-pack", no_pack, "one sentence per example");
    c->add_option("--layers", cfg.num_layers)->capture_default_str();
    c->add_option("--embed-dim", cfg.embed_dim)->capture_default_str();
    c->add_option("--hidden-dim", cfg.hidden_dim)->capture_default_str();
    c->add_option("--heads", cfg.num_heads, "attention heads (0: hidden / 64)")->capture_default_str();
    c->add_option("--ffn-dim", cfg.ffn_dim, "feed-forward width (0: 4 * hidden)")->capture_default_str();
    c->add_option("--hier-aggregate", hier_aggregate, "mean or first_token")->capture_default_str();
    if (with_output) {
      c->add_option("--out", out, "checkpoint directory");
      c->add_option("--log", log, "per-step loss log (TSV)");
      c->add_option("--dump-plan", dump_plan, "print masking plans for the first N examples and exit");
    }
  }

  void finish() {
    cfg.objective = parse_objective(objective);
    cfg.schedule = !no_schedule;
    cfg.pack = !no_pack;
    cfg.hier_aggregate = parse_aggregate_mode(hier_aggregate);
  }
};

struct Vocabs {
  VocabBundle fine;
  std::optional<VocabBundle> coarse;
  std::shared_ptr<const SegDictionary> dict;
};

Vocabs load_vocabs(const PretrainArgs& a) {
  Vocabs v;
  v.fine = load_bundle(a.fine_vocab);
  if (!a.coarse_vocab.empty()) v.coarse = load_bundle(a.coarse_vocab);
  if (!a.dict.empty()) {
    v.dict = load_dict(a.dict);
  } else if (v.coarse && v.coarse->dict) {
    v.dict = v.coarse->dict;
  } else {
    v.dict = v.fine.dict;
  }
  if (!v.dict) throw ValidationError("no segmentation dictionary: pass --dict or use a vocab directory with dict.txt");
  return v;
}

void run_pretrain(PretrainArgs& a) {
  a.finish();
  a.cfg.validate();
  const auto v = load_vocabs(a);
  const VocabBundle* coarse = v.coarse ? &*v.coarse : nullptr;
  if (uses_two_vocabs(a.cfg.objective) && !coarse) {
    throw ValidationError("objective " + a.objective + " needs --coarse-vocab");
  }
  const auto corpus = ingest_corpus(a.corpus);
  if (a.dump_plan >= 0) {
    const auto examples = prepare_pretrain_examples(corpus, *v.dict, v.fine, uses_two_vocabs(a.cfg.objective) ? coarse : nullptr,
                                                    a.cfg.objective, a.cfg.max_len, a.cfg.pack);
    Rng rng(a.cfg.seed);
    const int coarse_v = coarse ? coarse->vocab.size() : 0;
    for (int i = 0; i < a.dump_plan && i < static_cast<int>(examples.size()); ++i) {
      Rng local = rng.fork(static_cast<std::uint64_t>(i));
      std::cout << "example=" << i << "\t"
                << dump_plan(plan_whole_word_mask(examples[i], mask_options(a.cfg), v.fine.vocab.size(), coarse_v, local))
                << "\n";
    }
    return;
  }
  if (a.out.empty()) throw ValidationError("--out is required");
  std::string log;
  auto res = pretrain<float>(a.cfg, corpus, *v.dict, v.fine, coarse, [&](const StepLog& s) { log += s.to_text() + "\n"; });
  if (!a.log.empty()) write_file(a.log, log);
  const CheckpointMeta meta{a.cfg.objective, a.cfg.lambda, a.cfg.hier_aggregate, a.cfg.seed, a.cfg.steps};
  save_checkpoint(a.out, meta, res.model, v.fine, uses_two_vocabs(a.cfg.objective) ? coarse : nullptr, *v.dict);
  const StepResult acc = evaluate_masked(a.cfg, res.model, res.examples, a.cfg.seed + 1, 1024);
  std::string text = describe(a.cfg);
  text += "examples=" + std::to_string(res.examples.size()) + "\n";
  if (!res.log.empty()) {
    text += "final_loss_fine=" + format_double(res.log.back().loss_fine) + "\nfinal_loss_coarse=" +
            format_double(res.log.back().loss_coarse) + "\nfinal_total=" + format_double(res.log.back().total) + "\n";
  }
  text += "masked_accuracy_fine=" + format_double(acc.fine_accuracy()) +
          "\nmasked_accuracy_coarse=" + format_double(acc.coarse_accuracy()) + "\ncheckpoint=" + a.out + "\n";
  emit(text, a.report);
}

// ---------------------------------------------------------------------------

struct FinetuneArgs {
  FinetuneConfig cfg;
  std::string task = "classify", mode = "single", direction = "none", side = "fine", aggregate = "mean",
              metric = "accuracy";
  std::string ckpt, data, eval, report, table;
  int runs = 10;

  void add(CLI::App* c, bool with_ckpt) {
    c->add_option("--task", task, "classify, pair_classify or tag")->capture_default_str();
    c->add_option("--mode", mode, "single or ensemble")->capture_default_str();
    c->add_option("--direction", direction, "ftc or ctf (tag ensembles)")->capture_default_str();
    c->add_option("--side", side, "encoder of a pair checkpoint in single mode")->capture_default_str();
    if (with_ckpt) c->add_option("--ckpt", ckpt, "pretrained checkpoint directory")->required();
    c->add_option("--data", data, "training data")->required();
    c->add_option("--eval", eval, "evaluation data");
    c->add_option("--epochs", cfg.epochs)->capture_default_str();
    c->add_option("--ft-lr", cfg.learning_rate, "fine-tuning learning rate")->capture_default_str();
    c->add_option("--ft-batch-size", cfg.batch_size)->capture_default_str();
    c->add_option("--ft-seed", cfg.seed)->envname(kSeedEnv)->capture_default_str();
    c->add_option("--num-labels", cfg.num_labels, "expected label count (0: from data)")->capture_default_str();
    c->add_option("--aggregate", aggregate, "ftc pooling: mean or first_token")->capture_default_str();
    c->add_option("--metric", metric, "accuracy or macro_f1 (classification)")->capture_default_str();
  }

  void finish() {
    cfg.task = parse_task(task);
    cfg.mode = parse_finetune_mode(mode);
    cfg.direction = parse_direction(direction);
    cfg.side = parse_side(side);
    cfg.aggregate = parse_aggregate_mode(aggregate);
    cfg.metric = parse_classify_metric(metric);
    cfg.validate();
  }

  std::optional<Dataset> eval_set() const {
    if (eval.empty()) return std::nullopt;
    return load_dataset(eval, cfg.task);
  }
};

void run_finetune(FinetuneArgs& a) {
  a.finish();
  const auto ck = load_checkpoint<float>(a.ckpt);
  const auto train = load_dataset(a.data, a.cfg.task);
  const auto dev = a.eval_set();
  const auto r = finetune(a.cfg, ck, train, dev ? &*dev : nullptr);
  std::string text = describe(a.cfg);
  text += "pretrain_objective=" + std::string(to_string(ck.meta.objective)) + "\nlabels=" +
          std::to_string(r.model.labels.size()) + "\n";
  if (!r.epoch_loss.empty()) text += "final_epoch_loss=" + format_double(r.epoch_loss.back()) + "\n";
  text += "train_score=" + format_double(r.train_score) + "\n";
  if (r.eval_score) text += "eval_score=" + format_double(*r.eval_score) + "\n";
  text += "config=" + fingerprint(describe(a.cfg)) + "\n";
  emit(text, a.report);
}

void run_evaluate(FinetuneArgs& a) {
  a.finish();
  const auto ck = load_checkpoint<float>(a.ckpt);
  const auto train = load_dataset(a.data, a.cfg.task);
  const auto dev = a.eval_set();
  const auto rep = repeat_eval(a.cfg, ck, train, dev ? &*dev : nullptr, a.runs);
  emit(rep.to_text(), a.report);
  if (!a.table.empty()) {
    std::string tsv = "run\tseed\tscore\n";
    for (std::size_t i = 0; i < rep.scores.size(); ++i) {
      tsv += std::to_string(i) + "\t" + std::to_string(a.cfg.seed + i) + "\t" + format_double(rep.scores[i]) + "\n";
    }
    write_file(a.table, tsv);
  }
}

void run_sweep(PretrainArgs& p, FinetuneArgs& f, const std::string& lambdas) {
  p.finish();
  f.finish();
  SweepSpec spec;
  spec.pretrain = p.cfg;
  spec.finetune = f.cfg;
  if (!lambdas.empty()) {
    spec.lambdas.clear();
    for (auto tok : split(lambdas, ',')) {
      try {
        spec.lambdas.push_back(std::stod(std::string(trim(tok))));
      } catch (const std::logic_error&) {
        throw ValidationError("bad lambda value '" + std::string(tok) + "'");
      }
    }
  }
  const auto v = load_vocabs(p);
  if (!v.coarse) throw ValidationError("sweep-lambda needs --coarse-vocab");
  const auto corpus = ingest_corpus(p.corpus);
  const auto train = load_dataset(f.data, f.cfg.task);
  const auto dev = f.eval_set();
  const auto table = sweep_lambda(spec, corpus, v.dict, v.fine, *v.coarse, train, dev ? &*dev : nullptr,
                                  [](const SweepRow& r) {
                                    std::cerr << "lambda=" << format_double(r.lambda, 4) << " mode=" << r.mode
                                              << " score=" << format_double(r.score) << "\n";
                                  });
  const std::string tsv = table.to_tsv();
  std::cout << tsv;
  if (!f.table.empty()) write_file(f.table, tsv);
  if (!f.report.empty()) {
    write_file(f.report, describe(spec.pretrain) + describe(spec.finetune) + "rows=" + std::to_string(table.rows.size()) +
                             "\n");
  }
}

struct EfficiencyArgs {
  std::string corpus, dict, report;
  std::vector<std::string> vocabs;
  EfficiencyOptions opt;
};

void run_efficiency(EfficiencyArgs& a) {
  std::vector<std::pair<std::string, VocabBundle>> loaded;
  for (const auto& spec : a.vocabs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ValidationError("--vocab expects NAME=DIR, got '" + spec + "'");
    loaded.emplace_back(spec.substr(0, eq), load_bundle(spec.substr(eq + 1)));
  }
  std::vector<NamedBundle> named;
  for (const auto& [name, b] : loaded) named.push_back({name, &b});
  std::shared_ptr<const SegDictionary> dict;
  if (!a.dict.empty()) {
    dict = load_dict(a.dict);
  } else {
    for (const auto& [name, b] : loaded) {
      if (b.dict) {
        dict = b.dict;
        break;
      }
    }
  }
  const auto rep = efficiency_report(ingest_corpus(a.corpus), named, dict.get(), a.opt);
  emit(rep.to_text(a.opt.time_forward), a.report);
}

struct SynthArgs {
  std::string out;
  std::size_t bytes = 1 << 20;
  std::uint64_t seed = 2026;
  int train = 400, dev = 200;
};

void run_synth(const SynthArgs& a) {
  synth::Options o;
  o.seed = a.seed;
  const synth::Generator g(o);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  write_file((dir / "dict.txt").string(), g.dictionary());
  write_file((dir / "sample_corpus.txt").string(), g.corpus(a.bytes));
  write_file((dir / "classify_train.tsv").string(), g.classify_dataset(a.train, 10));
  write_file((dir / "classify_dev.tsv").string(), g.classify_dataset(a.dev, 11));
  write_file((dir / "pair_train.tsv").string(), g.pair_dataset(a.train, 12));
  write_file((dir / "pair_dev.tsv").string(), g.pair_dataset(a.dev, 13));
  write_file((dir / "tag_train.txt").string(), g.tag_dataset(a.train, 14));
  write_file((dir / "tag_dev.txt").string(), g.tag_dataset(a.dev, 15));
  std::cout << "out=" << a.out << "\nseed=" << a.seed << "\ncorpus_bytes=" << a.bytes << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvp-tok: multi-vocabulary pretraining toolkit", "mvp-tok"};
  app.require_subcommand(1);
  std::string config_file;  // consumed by expand_config, listed for --help
  app.add_option("--config", config_file, "key = value file supplying defaults for flags");

  VocabArgs vocab;
  auto* bv = app.add_subcommand("build-vocab", "build a vocabulary directory");
  bv->add_option("--mode", vocab.mode, "char, seg_tok, seg or derived_char")->required();
  bv->add_option("--corpus", vocab.corpus);
  bv->add_option("--dict", vocab.dict);
  bv->add_option("--from", vocab.from, "seg_tok vocab directory (seg, derived_char)");
  bv->add_option("--size", vocab.size)->capture_default_str();
  bv->add_option("--coverage", vocab.coverage)->capture_default_str();
  bv->add_option("--out", vocab.out)->required();
  bv->add_option("--report", vocab.report);

  TokenizeArgs tok;
  auto* tk = app.add_subcommand("tokenize", "tokenize text with a vocabulary");
  tk->add_option("--vocab", tok.vocab)->required();
  tk->add_option("--text", tok.text);
  tk->add_option("--input", tok.input);
  tk->add_option("--dict", tok.dict);
  tk->add_flag("--ids", tok.ids, "print ids instead of tokens");

  StatsArgs stats;
  auto* st = app.add_subcommand("stats", "vocabulary statistics on a corpus");
  st->add_option("--vocab", stats.vocab)->required();
  st->add_option("--corpus", stats.corpus)->required();
  st->add_option("--report", stats.report);

  PretrainArgs pre;
  auto* pt = app.add_subcommand("pretrain", "pretrain an encoder");
  pre.add(pt, true);
  pt->add_option("--report", pre.report);

  FinetuneArgs ft;
  auto* fc = app.add_subcommand("finetune", "fine-tune a checkpoint on a task");
  ft.add(fc, true);
  fc->add_option("--report", ft.report);

  FinetuneArgs ev;
  auto* ec = app.add_subcommand("evaluate", "repeated fine-tuning runs with mean and std");
  ev.add(ec, true);
  ec->add_option("--runs", ev.runs)->capture_default_str();
  ec->add_option("--report", ev.report);
  ec->add_option("--table", ev.table, "per-run scores (TSV)");

  PretrainArgs sp;
  sp.objective = "obj";
  FinetuneArgs sf;
  std::string lambdas;
  auto* sw = app.add_subcommand("sweep-lambda", "pretrain and fine-tune over a lambda grid");
  sp.add(sw, false);
  sf.add(sw, false);
  sw->add_option("--lambdas", lambdas, "comma-separated grid (default 0.1,0.5,1,2,10)");
  sw->add_option("--table", sf.table, "result table (TSV)");
  sw->add_option("--report", sf.report, "configuration report");

  EfficiencyArgs eff;
  auto* ef = app.add_subcommand("efficiency", "sequence lengths and forward time per vocabulary");
  ef->add_option("--corpus", eff.corpus)->required();
  ef->add_option("--vocab", eff.vocabs, "NAME=DIR, at least twice")->required();
  ef->add_option("--dict", eff.dict);
  ef->add_flag("--timing", eff.opt.time_forward, "time forward passes (not byte-stable)");
  ef->add_option("--batch-size", eff.opt.batch_size)->capture_default_str();
  ef->add_option("--report", eff.report);

  SynthArgs syn;
  auto* sy = app.add_subcommand("synth", "write the synthetic dictionary, corpus and task datasets");
  sy->add_option("--out", syn.out)->required();
  sy->add_option("--bytes", syn.bytes)->capture_default_str();
  sy->add_option("--seed", syn.seed)->envname(kSeedEnv)->capture_default_str();
  sy->add_option("--train", syn.train)->capture_default_str();
  sy->add_option("--dev", syn.dev)->capture_default_str();

  try {
    auto args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const mvptok::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (bv->parsed()) run_build_vocab(vocab);
    else if (tk->parsed()) run_tokenize(tok);
    else if (st->parsed()) run_stats(stats);
    else if (pt->parsed()) run_pretrain(pre);
    else if (fc->parsed()) run_finetune(ft);
    else if (ec->parsed()) run_evaluate(ev);
    else if (sw->parsed()) run_sweep(sp, sf, lambdas);
    else if (ef->parsed()) run_efficiency(eff);
    else if (sy->parsed()) run_synth(syn);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
