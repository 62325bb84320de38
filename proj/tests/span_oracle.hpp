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

// Quadratic span matcher and random span-set generator used to cross-check
// the span scorer.

#pragma once

#include <string>
#include <vector>

#include "mvptok/common.hpp"
#include "mvptok/metrics.hpp"

namespace mvptok::testing {

struct SpanCase {
  std::vector<Span> pred, gold;
  std::vector<std::string> pred_tags, gold_tags;  // character BIO
};

/// Pairwise comparison of every prediction with every gold span.
inline SpanScores brute_force_span_f1(const std::vector<Span>& pred, const std::vector<Span>& gold) {
  SpanScores s;
  s.predicted = pred.size();
  s.gold = gold.size();
  for (const auto& p : pred) {
    for (const auto& g : gold) {
      if (p.start == g.start && p.end == g.end && p.label == g.label) {
        ++s.true_positives;
        break;
      }
    }
  }
  if (pred.empty() && gold.empty()) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  const double tp = static_cast<double>(s.true_positives);
  s.precision = pred.empty() ? 0.0 : tp / static_cast<double>(pred.size());
  s.recall = gold.empty() ? 0.0 : tp / static_cast<double>(gold.size());
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Random character BIO tags over `n` characters with spans of up to 4
/// characters and three labels; returns the tags and the spans they encode.
inline std::vector<std::string> random_bio(Rng& rng, int n, std::vector<Span>& spans) {
  static const char* kLabels[] = {"PER", "LOC", "ORG"};
  std::vector<std::string> tags(static_cast<std::size_t>(n), "O");
  int i = 0;
  while (i < n) {
    if (rng.uniform(3) == 0) {
      const int len = 1 + static_cast<int>(rng.uniform(4));
      const int end = std::min(n, i + len);
      const std::string label = kLabels[rng.uniform(3)];
      tags[i] = "B-" + label;
      for (int k = i + 1; k < end; ++k) tags[k] = "I-" + label;
      spans.push_back({i, end, label});
      i = end;
    } else {
      ++i;
    }
  }
  return tags;
}

/// Gold and a perturbed copy as prediction, each with at most `max_spans` spans.
inline SpanCase random_span_case(Rng& rng, int max_spans) {
  SpanCase c;
  const int n = 1 + static_cast<int>(rng.uniform(static_cast<std::uint64_t>(max_spans) * 3));
  c.gold_tags = random_bio(rng, n, c.gold);
  while (static_cast<int>(c.gold.size()) > max_spans) {
    c.gold.clear();
    c.gold_tags = random_bio(rng, n, c.gold);
  }
  // Prediction: gold with a random fraction of characters re-tagged.
  c.pred_tags = c.gold_tags;
  const int edits = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(n) / 2 + 1));
  static const char* kTags[] = {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG"};
  for (int e = 0; e < edits; ++e) c.pred_tags[rng.uniform(static_cast<std::uint64_t>(n))] = kTags[rng.uniform(6)];
  c.pred = spans_from_bio(c.pred_tags);
  return c;
}

}  // namespace mvptok::testing
