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

// Task metrics: accuracy, macro F1 and exact labeled-span F1.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mvptok/common.hpp"

namespace mvptok {

/// Half-open character span with a label.
struct Span {
  int start = 0;
  int end = 0;
  std::string label;

  auto operator<=>(const Span&) const = default;
};

struct SpanScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

inline void check_no_overlap(std::vector<Span> spans, std::string_view what) {
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].end <= spans[i].start) {
      throw ValidationError(std::string(what) + ": empty or inverted span [" + std::to_string(spans[i].start) + ", " +
                            std::to_string(spans[i].end) + ")");
    }
    if (i && spans[i].start < spans[i - 1].end) {
      throw ValidationError(std::string(what) + ": overlapping spans at character " + std::to_string(spans[i].start));
    }
  }
}

/// A prediction counts only if start, end and label all match a gold span.
/// F1 is 0 when precision + recall is 0; both sets empty scores 1.
inline SpanScores exact_span_f1(const std::vector<Span>& pred, const std::vector<Span>& gold) {
  check_no_overlap(gold, "gold spans");
  const std::set<Span> g(gold.begin(), gold.end());
  const std::set<Span> p(pred.begin(), pred.end());
  SpanScores s;
  s.predicted = p.size();
  s.gold = g.size();
  for (const auto& span : p) s.true_positives += g.count(span);
  if (s.predicted == 0 && s.gold == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = s.predicted ? static_cast<double>(s.true_positives) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold ? static_cast<double>(s.true_positives) / static_cast<double>(s.gold) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

/// Micro-averaged span scores over many sentences.
inline SpanScores corpus_span_f1(const std::vector<std::vector<Span>>& pred, const std::vector<std::vector<Span>>& gold) {
  if (pred.size() != gold.size()) throw ValidationError("corpus_span_f1: sentence counts differ");
  SpanScores total;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto s = exact_span_f1(pred[i], gold[i]);
    total.true_positives += s.true_positives;
    total.predicted += s.predicted;
    total.gold += s.gold;
  }
  if (total.predicted == 0 && total.gold == 0) {
    total.precision = total.recall = total.f1 = 1.0;
    return total;
  }
  const double tp = static_cast<double>(total.true_positives);
  total.precision = total.predicted ? tp / static_cast<double>(total.predicted) : 0.0;
  total.recall = total.gold ? tp / static_cast<double>(total.gold) : 0.0;
  const double pr = total.precision + total.recall;
  total.f1 = pr > 0.0 ? 2.0 * total.precision * total.recall / pr : 0.0;
  return total;
}

/// Spans from BIO tags ("B-X", "I-X", "O"). An I-X that does not continue
/// an X span opens a new one.
inline std::vector<Span> spans_from_bio(const std::vector<std::string>& tags) {
  std::vector<Span> out;
  int start = -1;
  std::string label;
  auto close = [&](int at) {
    if (start >= 0) out.push_back({start, at, label});
    start = -1;
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    const std::string& t = tags[i];
    if (t.size() > 2 && (t[0] == 'B' || t[0] == 'I') && t[1] == '-') {
      const std::string l = t.substr(2);
      if (t[0] == 'B' || start < 0 || l != label) {
        close(i);
        start = i;
        label = l;
      }
    } else {
      close(i);
    }
  }
  close(static_cast<int>(tags.size()));
  return out;
}

enum class ClassifyMetric : std::uint8_t { kAccuracy, kMacroF1 };

inline std::string_view to_string(ClassifyMetric m) { return m == ClassifyMetric::kAccuracy ? "accuracy" : "macro_f1"; }

inline ClassifyMetric parse_classify_metric(std::string_view s) {
  if (s == "accuracy" || s == "acc") return ClassifyMetric::kAccuracy;
  if (s == "macro_f1") return ClassifyMetric::kMacroF1;
  throw ValidationError("unknown metric '" + std::string(s) + "'");
}

/// Accuracy, or the unweighted mean F1 over the classes present in `golds`.
/// Predicted labels outside that set are simply wrong.
inline double classify_metrics(const std::vector<int>& preds, const std::vector<int>& golds, ClassifyMetric metric) {
  if (preds.size() != golds.size()) throw ValidationError("classify_metrics: prediction and gold counts differ");
  if (golds.empty()) throw ValidationError("classify_metrics: empty input");
  if (metric == ClassifyMetric::kAccuracy) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i];
    return static_cast<double>(hit) / static_cast<double>(golds.size());
  }
  std::map<int, std::tuple<std::size_t, std::size_t, std::size_t>> per;  // tp, predicted, gold
  for (int g : golds) std::get<2>(per[g])++;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto it = per.find(preds[i]);
    if (it == per.end()) continue;
    std::get<1>(it->second)++;
    if (preds[i] == golds[i]) std::get<0>(it->second)++;
  }
  double sum = 0.0;
  for (const auto& [label, c] : per) {
    const auto [tp, np, ng] = c;
    const double denom = static_cast<double>(np + ng);
    sum += denom > 0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  return sum / static_cast<double>(per.size());
}

/// Mean and population standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

}  // namespace mvptok
