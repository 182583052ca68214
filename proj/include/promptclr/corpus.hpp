#pragma once

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "promptclr/common.hpp"

namespace promptclr {

enum class Metric { accuracy, matthews, f1 };

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::accuracy: return "accuracy";
    case Metric::matthews: return "matthews";
    case Metric::f1: return "f1";
  }
  return "?";
}

inline Metric parse_metric(const std::string& s) {
  if (s == "accuracy" || s == "acc") return Metric::accuracy;
  if (s == "matthews" || s == "mcc") return Metric::matthews;
  if (s == "f1") return Metric::f1;
  throw ConfigError("unknown metric '" + s + "'");
}

struct Example {
  std::string text1;
  std::optional<std::string> text2;
  int label = 0;
  long id = 0;
};

struct TaskSpec {
  std::string name;
  int num_classes = 2;
  bool is_pair = false;
  Metric metric = Metric::accuracy;

  void validate() const {
    if (num_classes < 2) throw ConfigError("task '" + name + "': num_classes must be >= 2");
    if (metric != Metric::accuracy && num_classes != 2)
      throw ConfigError("task '" + name + "': " + to_string(metric) + " requires a binary task");
  }
};

struct FewShotSplit {
  std::vector<Example> train;
  std::vector<Example> test;
  std::uint64_t seed = 0;
  int K = 0;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

// Parses TSV rows `text1 [TAB text2] TAB label`. Ids follow line order (blank
// lines are skipped but still counted for error reporting).
inline std::vector<Example> parse_examples(std::istream& in, const TaskSpec& spec) {
  std::vector<Example> out;
  std::string line;
  long line_no = 0;
  const std::size_t want = spec.is_pair ? 3 : 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_tabs(line);
    const auto fail = [&](const std::string& why) {
      return ParseError("line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != want)
      throw fail("expected " + std::to_string(want) + " tab-separated fields, got " +
                 std::to_string(fields.size()));
    if (fields[0].empty()) throw fail("empty text1");
    const std::string& lab = fields.back();
    int label = 0;
    const auto [ptr, ec] = std::from_chars(lab.data(), lab.data() + lab.size(), label);
    if (ec != std::errc() || ptr != lab.data() + lab.size()) throw fail("non-integer label '" + lab + "'");
    if (label < 0 || label >= spec.num_classes)
      throw fail("label " + std::to_string(label) + " out of range for " +
                 std::to_string(spec.num_classes) + " classes");
    Example e;
    e.text1 = fields[0];
    if (spec.is_pair) e.text2 = fields[1];
    e.label = label;
    e.id = static_cast<long>(out.size());
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<Example> load_examples(const std::string& path, const TaskSpec& spec) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path + "'");
  return parse_examples(in, spec);
}

inline void write_examples(std::ostream& out, const std::vector<Example>& examples) {
  for (const auto& e : examples) {
    out << e.text1;
    if (e.text2) out << '\t' << *e.text2;
    out << '\t' << e.label << '\n';
  }
}

inline std::vector<std::vector<std::size_t>> indices_by_class(const std::vector<Example>& examples,
                                                              int num_classes) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const int y = examples[i].label;
    if (y < 0 || y >= num_classes) throw ArgumentError("example label out of range");
    by_class[static_cast<std::size_t>(y)].push_back(i);
  }
  return by_class;
}

// One split per seed: K examples of every class go to train (sampled without
// replacement), everything else to test. Both halves keep corpus order.
inline std::vector<FewShotSplit> make_fewshot_splits(const std::vector<Example>& examples,
                                                     const TaskSpec& spec, int K,
                                                     const std::vector<std::uint64_t>& seeds) {
  if (K < 1) throw ArgumentError("K must be >= 1");
  if (seeds.empty()) throw ArgumentError("seeds must be non-empty");
  const auto by_class = indices_by_class(examples, spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) {
    const auto have = by_class[static_cast<std::size_t>(c)].size();
    if (have < static_cast<std::size_t>(K) + 1)
      throw InsufficientDataError("class " + std::to_string(c) + " has " + std::to_string(have) +
                                  " examples; need at least K+1 = " + std::to_string(K + 1));
  }
  std::vector<FewShotSplit> splits;
  splits.reserve(seeds.size());
  for (const auto seed : seeds) {
    Rng rng(seed);
    std::vector<char> in_train(examples.size(), 0);
    for (const auto& members : by_class)
      for (const auto pick : rng.sample_without_replacement(members.size(), static_cast<std::size_t>(K)))
        in_train[members[pick]] = 1;
    FewShotSplit split;
    split.seed = seed;
    split.K = K;
    for (std::size_t i = 0; i < examples.size(); ++i)
      (in_train[i] ? split.train : split.test).push_back(examples[i]);
    splits.push_back(std::move(split));
  }
  return splits;
}

inline std::vector<Example> sample_batch(const FewShotSplit& split, std::size_t batch_size, Rng& rng) {
  if (batch_size > split.train.size())
    throw ArgumentError("batch_size " + std::to_string(batch_size) + " exceeds train size " +
                        std::to_string(split.train.size()));
  std::vector<Example> batch;
  batch.reserve(batch_size);
  for (const auto i : rng.sample_without_replacement(split.train.size(), batch_size))
    batch.push_back(split.train[i]);
  return batch;
}

struct SyntheticTask {
  TaskSpec spec;
  std::vector<Example> examples;
  // signal_tokens[c] lists the words owned by class c.
  std::vector<std::vector<std::string>> signal_tokens;
  std::vector<std::string> filler_tokens;
};

struct SyntheticOptions {
  int signal_tokens_per_class = 2;
  int min_length = 4;
  int max_length = 8;
};

inline std::string synthetic_word(int index) { return "w" + std::to_string(index); }

// Words w0..w{vocab-1}. The first num_classes * signal_tokens_per_class words are
// split into disjoint per-class signal sets; the rest are fillers. A sentence
// carries one signal word of its class with probability signal_strength.
inline SyntheticTask generate_synthetic_task(int num_classes, int examples_per_class, int vocab_size,
                                             double signal_strength, Rng& rng,
                                             SyntheticOptions opts = {}) {
  if (num_classes < 2) throw ConfigError("synthetic task needs >= 2 classes");
  if (examples_per_class < 1) throw ConfigError("examples_per_class must be >= 1");
  if (!(signal_strength > 0.0 && signal_strength <= 1.0))
    throw ConfigError("signal_strength must lie in (0, 1]");
  if (vocab_size <= num_classes)
    throw ConfigError("vocab_size must exceed num_classes");
  const int per_class = std::max(1, std::min(opts.signal_tokens_per_class, (vocab_size - 1) / num_classes));
  const int fillers = vocab_size - per_class * num_classes;
  if (per_class * num_classes > vocab_size || fillers < 1)
    throw ConfigError("vocab_size " + std::to_string(vocab_size) + " cannot hold disjoint signal sets for " +
                      std::to_string(num_classes) + " classes plus filler tokens");

  SyntheticTask task;
  task.spec.name = "synthetic-c" + std::to_string(num_classes) + "-v" + std::to_string(vocab_size);
  task.spec.num_classes = num_classes;
  task.signal_tokens.resize(static_cast<std::size_t>(num_classes));
  int w = 0;
  for (int c = 0; c < num_classes; ++c)
    for (int j = 0; j < per_class; ++j) task.signal_tokens[static_cast<std::size_t>(c)].push_back(synthetic_word(w++));
  for (; w < vocab_size; ++w) task.filler_tokens.push_back(synthetic_word(w));

  const int span = opts.max_length - opts.min_length + 1;
  for (int c = 0; c < num_classes; ++c) {
    for (int n = 0; n < examples_per_class; ++n) {
      const int len = opts.min_length + static_cast<int>(rng.index(static_cast<std::size_t>(span)));
      std::vector<std::string> words;
      for (int i = 0; i < len; ++i) words.push_back(task.filler_tokens[rng.index(task.filler_tokens.size())]);
      if (rng.bernoulli(signal_strength)) {
        const auto& own = task.signal_tokens[static_cast<std::size_t>(c)];
        words[rng.index(words.size())] = own[rng.index(own.size())];
      }
      std::string text;
      for (std::size_t i = 0; i < words.size(); ++i) text += (i ? " " : "") + words[i];
      Example e;
      e.text1 = std::move(text);
      e.label = c;
      task.examples.push_back(std::move(e));
    }
  }
  // Interleave classes so the file does not read as sorted blocks.
  rng.shuffle(task.examples);
  for (std::size_t i = 0; i < task.examples.size(); ++i) task.examples[i].id = static_cast<long>(i);
  return task;
}

}  // namespace promptclr
