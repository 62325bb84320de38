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

// Quickstart: build the seg_tok and derived char vocabularies from the
// bundled corpus, tokenize a sentence both ways, pretrain a tiny two-vocab
// encoder for a few steps and fine-tune it on the bundled classification set.
//
// Usage: quickstart [DATA_DIR]

#include <iostream>
#include <string>

#include "mvptok/harness.hpp"

using namespace mvptok;

int main(int argc, char** argv) {
  const std::string data = argc > 1 ? argv[1] : "data";
  try {
    auto dict = std::make_shared<const SegDictionary>(load_dictionary_file(data + "/dict.txt"));
    const auto corpus = ingest_corpus(data + "/sample_corpus.txt");
    const VocabBundle seg_tok = build_seg_tok_vocab(corpus, dict, 2000);
    const VocabBundle chars = derive_char_bundle(seg_tok);
    std::cout << "sentences: " << corpus.size() << "\n"
              << "seg_tok size: " << seg_tok.vocab.size() << ", derived char size: " << chars.vocab.size() << "\n";

    const std::string& s = corpus.front();
    for (const auto* b : {&chars, &seg_tok}) {
      const auto seq = tokenize(s, *b);
      std::cout << to_string(b->mode()) << " (" << seq.size() << "):";
      for (const auto& t : seq.surfaces) std::cout << " " << t;
      std::cout << "\n";
    }

    PretrainConfig pcfg;
    pcfg.objective = Objective::kObj;
    pcfg.lambda = 2.0;
    pcfg.steps = 30;
    pcfg.batch_size = 8;
    pcfg.learning_rate = 3e-3;
    pcfg.num_layers = 1;
    pcfg.embed_dim = 32;
    pcfg.hidden_dim = 64;
    pcfg.max_len = 64;
    const std::vector<std::string> head(corpus.begin(), corpus.begin() + 400);
    auto pre = pretrain<float>(pcfg, head, *dict, chars, &seg_tok, [](const StepLog& l) {
      if (l.step % 10 == 0) std::cout << l.to_text() << "\n";
    });

    Checkpoint<float> ckpt{{pcfg.objective, pcfg.lambda, pcfg.hier_aggregate, pcfg.seed, pcfg.steps},
                           std::move(pre.model), chars, seg_tok, dict};
    FinetuneConfig fcfg;
    fcfg.task = Task::kClassify;
    fcfg.epochs = 5;
    fcfg.learning_rate = 1e-3;
    const auto train = load_dataset(data + "/classify_train.tsv", fcfg.task);
    const auto dev = load_dataset(data + "/classify_dev.tsv", fcfg.task);
    const auto ft = finetune(fcfg, ckpt, train, &dev);
    std::cout << "classify train accuracy " << format_double(ft.train_score, 4) << ", dev accuracy "
              << format_double(*ft.eval_score, 4) << "\n";
  } catch (const std::exception& e) {
    std::cerr << "quickstart: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
