#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "promptclr/corpus.hpp"
#include "promptclr/encoder.hpp"
#include "promptclr/prompting.hpp"
#include "promptclr/trainer.hpp"

namespace promptclr {

// Lowest index wins ties.
inline int argmax_class(const Vector& scores) {
  int best = 0;
  for (Eigen::Index y = 1; y < scores.size(); ++y)
    if (scores(y) > scores(best)) best = static_cast<int>(y);
  return best;
}

enum class DemoPolicy { with_demos, without_demos };

struct PredictContext {
  const TemplateBank& bank;
  const Verbalizer& verbalizer;
  const Vocabulary& vocab;
  const std::vector<Example>& demo_pool;
  DemoPolicy demo_policy = DemoPolicy::with_demos;
  std::size_t max_seq_len = 128;
};

// Prompts the example with the primary template; demonstrations, when used,
// come from demo_pool via rng.
inline PromptedText evaluation_prompt(const Example& example, const PredictContext& ctx, Rng& rng) {
  PromptOptions opts;
  opts.with_demos = ctx.demo_policy == DemoPolicy::with_demos;
  opts.max_seq_len = ctx.max_seq_len;
  std::vector<Demonstration> demos;
  if (opts.with_demos)
    demos = sample_demonstrations(eligible_demos(example, ctx.demo_pool, ctx.verbalizer.num_classes()), rng);
  return assemble_prompt(example, ctx.bank.primary, demos, ctx.verbalizer, ctx.vocab, opts);
}

inline int predict(const Parameters& params, const Example& example, const PredictContext& ctx, Rng& rng) {
  const auto prompted = evaluation_prompt(example, ctx, rng);
  const auto label_ids = ctx.verbalizer.label_ids(ctx.vocab);
  const auto hidden = forward(params, prompted.token_ids);
  return argmax_class(label_word_distribution(hidden, prompted, label_ids, params));
}

// Every test example draws its demonstrations from its own stream derived from
// (eval_seed, example id), so predictions do not depend on evaluation order.
inline std::vector<int> predict_all(const Parameters& params, const std::vector<Example>& examples,
                                    const PredictContext& ctx, std::uint64_t eval_seed) {
  std::vector<int> preds;
  preds.reserve(examples.size());
  for (const auto& e : examples) {
    Rng rng(detail::mix_seed(eval_seed, static_cast<std::uint64_t>(e.id)));
    preds.push_back(predict(params, e, ctx, rng));
  }
  return preds;
}

struct Confusion {
  long tp = 0, tn = 0, fp = 0, fn = 0;
};

// Class 1 is the positive class.
inline Confusion binary_confusion(const std::vector<int>& preds, const std::vector<int>& golds) {
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] > 1 || golds[i] < 0 || golds[i] > 1)
      throw ArgumentError("binary metric given a label outside {0, 1}");
    const bool p = preds[i] == 1;
    const bool g = golds[i] == 1;
    if (p && g) ++c.tp;
    else if (!p && !g) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

inline double matthews(const Confusion& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

inline double f1_score(const Confusion& c) {
  const double tp = static_cast<double>(c.tp);
  const double pp = tp + static_cast<double>(c.fp);
  const double ap = tp + static_cast<double>(c.fn);
  if (pp == 0.0 || ap == 0.0) return 0.0;
  const double precision = tp / pp;
  const double recall = tp / ap;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double compute_metric(Metric metric, const std::vector<int>& preds, const std::vector<int>& golds) {
  if (preds.size() != golds.size()) throw ArgumentError("compute_metric: preds/golds length mismatch");
  if (preds.empty()) throw ArgumentError("compute_metric: empty input");
  switch (metric) {
    case Metric::accuracy: {
      std::size_t hit = 0;
      for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i] ? 1 : 0;
      return static_cast<double>(hit) / static_cast<double>(preds.size());
    }
    case Metric::matthews: return matthews(binary_confusion(preds, golds));
    case Metric::f1: return f1_score(binary_confusion(preds, golds));
  }
  throw ArgumentError("unknown metric");
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population
};

inline Aggregate aggregate_runs(const std::vector<double>& values) {
  if (values.empty()) throw ArgumentError("aggregate_runs: no values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (const auto v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

struct RunResult {
  std::string task;
  std::string config_digest;
  Metric metric = Metric::accuracy;
  std::vector<std::uint64_t> seeds;
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;

  void finalize() {
    const auto a = aggregate_runs(values);
    mean = a.mean;
    std = a.std;
  }
};

struct DifficultyRow {
  std::size_t k = 0;
  double average_improvement = 0.0;
};

// Tasks ordered by ascending baseline score (ties by name); row K is the mean
// improvement over the K hardest.
inline std::vector<DifficultyRow> difficulty_report(const std::map<std::string, double>& baseline,
                                                    const std::map<std::string, double>& method) {
  if (baseline.size() != method.size()) throw ArgumentError("difficulty_report: task sets differ");
  std::vector<std::pair<std::string, double>> order;
  for (const auto& [task, base] : baseline) {
    if (!method.contains(task)) throw ArgumentError("difficulty_report: task '" + task + "' missing from method");
    order.emplace_back(task, base);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  std::vector<DifficultyRow> rows;
  double running = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    running += method.at(order[k].first) - order[k].second;
    rows.push_back({k + 1, running / static_cast<double>(k + 1)});
  }
  return rows;
}

}  // namespace promptclr
