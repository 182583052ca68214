#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "promptclr/augment.hpp"
#include "promptclr/corpus.hpp"
#include "promptclr/encoder.hpp"
#include "promptclr/evaluation.hpp"
#include "promptclr/prompting.hpp"
#include "promptclr/trainer.hpp"

namespace promptclr {

namespace fs = std::filesystem;

// Flat run configuration. Relative file paths resolve against the directory
// of the config file they came from.
struct RunConfig {
  TaskSpec task;
  std::string dataset, templates, verbalizer, lexicon;
  int K = 16;
  std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
  std::string out = "runs";
  TrainConfig train;
  ModelConfig model;  // vocab_size is filled from the data
  long log_every = 1;
  bool with_demos_at_eval = true;

  nlohmann::json to_json() const {
    return {{"task", task.name},
            {"num_classes", task.num_classes},
            {"is_pair", task.is_pair},
            {"metric", to_string(task.metric)},
            {"dataset", dataset},
            {"templates", templates},
            {"verbalizer", verbalizer},
            {"lexicon", lexicon},
            {"K", K},
            {"seeds", seeds},
            {"out", out},
            {"max_steps", train.max_steps},
            {"batch_size", train.batch_size},
            {"lr_mlm", train.lr_mlm},
            {"lr_supcon", train.lr_supcon},
            {"loss", to_string(train.loss_mode)},
            {"step_mode", to_string(train.step_mode)},
            {"strategy", to_string(train.view_strategy)},
            {"view_source", to_string(train.view_source)},
            {"eda_alpha", train.eda_alpha},
            {"repr", to_string(train.representation)},
            {"temperature", train.temperature},
            {"contrastive_weight", train.contrastive_weight},
            {"with_demos", train.with_demos},
            {"resample_demos", train.resample_demos},
            {"eval_with_demos", with_demos_at_eval},
            {"max_seq_len", train.max_seq_len},
            {"d_model", model.d_model},
            {"num_layers", model.num_layers},
            {"num_heads", model.num_heads},
            {"feedforward_width", model.feedforward_width},
            {"dropout", model.dropout},
            {"log_every", log_every}};
  }

  // Keys absent from j keep their current value; unknown keys are rejected.
  void apply(const nlohmann::json& j, const fs::path& base_dir = {}) {
    static const std::vector<std::string> known = [] {
      std::vector<std::string> k;
      const auto defaults = RunConfig{}.to_json();
      for (const auto& [key, _] : defaults.items()) k.push_back(key);
      return k;
    }();
    for (const auto& [key, _] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
    const auto path = [&](const char* key, std::string& dst) {
      if (!j.contains(key)) return;
      const auto p = fs::path(j.at(key).get<std::string>());
      dst = (p.empty() || p.is_absolute() || base_dir.empty()) ? p.string() : (base_dir / p).string();
    };
    try {
      if (j.contains("task")) task.name = j.at("task").get<std::string>();
      if (j.contains("num_classes")) task.num_classes = j.at("num_classes").get<int>();
      if (j.contains("is_pair")) task.is_pair = j.at("is_pair").get<bool>();
      if (j.contains("metric")) task.metric = parse_metric(j.at("metric").get<std::string>());
      path("dataset", dataset);
      path("templates", templates);
      path("verbalizer", verbalizer);
      path("lexicon", lexicon);
      path("out", out);
      if (j.contains("K")) K = j.at("K").get<int>();
      if (j.contains("seeds")) seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
      if (j.contains("max_steps")) train.max_steps = j.at("max_steps").get<long>();
      if (j.contains("batch_size")) train.batch_size = j.at("batch_size").get<std::size_t>();
      if (j.contains("lr_mlm")) train.lr_mlm = j.at("lr_mlm").get<double>();
      if (j.contains("lr_supcon")) train.lr_supcon = j.at("lr_supcon").get<double>();
      if (j.contains("loss")) train.loss_mode = parse_loss_mode(j.at("loss").get<std::string>());
      if (j.contains("step_mode")) train.step_mode = parse_step_mode(j.at("step_mode").get<std::string>());
      if (j.contains("strategy")) train.view_strategy = parse_view_strategy(j.at("strategy").get<std::string>());
      if (j.contains("view_source")) train.view_source = parse_view_source(j.at("view_source").get<std::string>());
      if (j.contains("eda_alpha")) train.eda_alpha = j.at("eda_alpha").get<double>();
      if (j.contains("repr")) train.representation = parse_representation(j.at("repr").get<std::string>());
      if (j.contains("temperature")) train.temperature = j.at("temperature").get<double>();
      if (j.contains("contrastive_weight")) train.contrastive_weight = j.at("contrastive_weight").get<double>();
      if (j.contains("with_demos")) train.with_demos = j.at("with_demos").get<bool>();
      if (j.contains("resample_demos")) train.resample_demos = j.at("resample_demos").get<bool>();
      if (j.contains("eval_with_demos")) with_demos_at_eval = j.at("eval_with_demos").get<bool>();
      if (j.contains("max_seq_len")) {
        train.max_seq_len = j.at("max_seq_len").get<std::size_t>();
        model.max_seq_len = static_cast<int>(train.max_seq_len);
      }
      if (j.contains("d_model")) model.d_model = j.at("d_model").get<int>();
      if (j.contains("num_layers")) model.num_layers = j.at("num_layers").get<int>();
      if (j.contains("num_heads")) model.num_heads = j.at("num_heads").get<int>();
      if (j.contains("feedforward_width")) model.feedforward_width = j.at("feedforward_width").get<int>();
      if (j.contains("dropout")) model.dropout = j.at("dropout").get<double>();
      if (j.contains("log_every")) log_every = j.at("log_every").get<long>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }

  static RunConfig load(const std::string& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config '" + file + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config '" + file + "': " + e.what());
    }
    RunConfig c;
    c.apply(j, fs::path(file).parent_path());
    return c;
  }

  void validate() const {
    task.validate();
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (K < 1) throw ConfigError("K must be >= 1");
    train.validate();
    for (const auto& [what, p] : {std::pair{"dataset", dataset}, {"templates", templates}, {"verbalizer", verbalizer}})
      if (p.empty() || !fs::exists(p)) throw ConfigError(std::string(what) + " file '" + p + "' does not exist");
    if (!lexicon.empty() && !fs::exists(lexicon)) throw ConfigError("lexicon file '" + lexicon + "' does not exist");
    if (train.view_source == ViewSource::eda && lexicon.empty()) throw ConfigError("view_source eda needs a lexicon");
  }

  // FNV-1a over the canonical JSON of every setting that affects results.
  std::string digest() const {
    auto j = to_json();
    j.erase("out");
    j.erase("log_every");
    const auto text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : text) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

// Inputs shared read-only by every seed of a run.
struct LoadedTask {
  std::vector<Example> examples;
  TemplateBank bank;
  Verbalizer verbalizer;
  Vocabulary vocab;
  std::optional<SynonymLexicon> lexicon;
};

inline LoadedTask load_task(const RunConfig& cfg) {
  cfg.validate();
  LoadedTask t;
  t.examples = load_examples(cfg.dataset, cfg.task);
  t.bank = load_templates(cfg.templates);
  t.bank.validate(cfg.task.is_pair);
  t.verbalizer = load_verbalizer(cfg.verbalizer);
  if (!cfg.lexicon.empty()) t.lexicon = load_lexicon(cfg.lexicon);
  std::vector<std::string> texts;
  for (const auto& e : t.examples) {
    texts.push_back(e.text1);
    if (e.text2) texts.push_back(*e.text2);
  }
  texts.push_back(t.bank.primary.pattern);
  for (const auto& tm : t.bank.auxiliary) texts.push_back(tm.pattern);
  for (const auto& w : t.verbalizer.words) texts.push_back(w);
  if (t.lexicon)
    for (const auto& w : t.lexicon->all_words()) texts.push_back(w);
  t.vocab = Vocabulary::from_texts(texts);
  t.verbalizer.validate(t.vocab, cfg.task.num_classes);
  return t;
}

inline std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  double value = 0.0;
  TrainResult result;
};

// Split, train, and evaluate one seed; nothing is written.
inline SeedOutcome run_seed(const RunConfig& cfg, const LoadedTask& task, const FewShotSplit& split) {
  ModelConfig mc = cfg.model;
  mc.vocab_size = static_cast<int>(task.vocab.size());
  mc.max_seq_len = static_cast<int>(cfg.train.max_seq_len);
  TrainConfig tc = cfg.train;
  tc.seed = split.seed;
  Rng init_rng(detail::mix_seed(split.seed, 0));
  auto params = init_params(mc, init_rng);
  TrainingContext ctx{task.bank, task.verbalizer, task.vocab, task.lexicon ? &*task.lexicon : nullptr};
  SeedOutcome out;
  out.seed = split.seed;
  out.result = train(std::move(params), split, ctx, tc);

  PredictContext pctx{task.bank, task.verbalizer, task.vocab, split.train,
                      cfg.with_demos_at_eval ? DemoPolicy::with_demos : DemoPolicy::without_demos,
                      cfg.train.max_seq_len};
  const auto preds = predict_all(out.result.params, split.test, pctx, detail::mix_seed(split.seed, 7));
  std::vector<int> golds;
  for (const auto& e : split.test) golds.push_back(e.label);
  out.value = compute_metric(cfg.task.metric, preds, golds);
  return out;
}

inline unsigned worker_count(std::size_t jobs) {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PROMPTCLR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<unsigned>(v);
  }
  return static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(jobs, 1)));
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// is rethrown after all workers stop.
template <class F>
void parallel_for(std::size_t n, unsigned workers, F&& fn) {
  std::mutex mu;
  std::exception_ptr first;
  std::size_t next = 0;
  const auto work = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= n || first) return;
        i = next++;
      }
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first) std::rethrow_exception(first);
}

struct ExperimentOutput {
  RunResult summary;
  std::vector<SeedOutcome> seeds;
};

// Trains and evaluates every seed in memory.
inline ExperimentOutput run_experiment(const RunConfig& cfg, const LoadedTask& task) {
  const auto splits = make_fewshot_splits(task.examples, cfg.task, cfg.K, cfg.seeds);
  ExperimentOutput out;
  out.seeds.resize(splits.size());
  parallel_for(splits.size(), worker_count(splits.size()),
               [&](std::size_t i) { out.seeds[i] = run_seed(cfg, task, splits[i]); });
  out.summary.task = cfg.task.name;
  out.summary.config_digest = cfg.digest();
  out.summary.metric = cfg.task.metric;
  for (const auto& s : out.seeds) {
    out.summary.seeds.push_back(s.seed);
    out.summary.values.push_back(s.value);
  }
  out.summary.finalize();
  return out;
}

inline nlohmann::json summary_json(const RunResult& r) {
  return {{"task", r.task},     {"config_digest", r.config_digest}, {"metric", to_string(r.metric)},
          {"seeds", r.seeds},   {"values", r.values},               {"mean", r.mean},
          {"std", r.std},       {"std_kind", "population"}};
}

inline RunResult summary_from_json(const nlohmann::json& j) {
  RunResult r;
  r.task = j.at("task").get<std::string>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.metric = parse_metric(j.at("metric").get<std::string>());
  r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.values = j.at("values").get<std::vector<double>>();
  r.finalize();
  return r;
}

inline std::string result_tsv(const RunResult& r) {
  std::ostringstream out;
  out << "task\tseed\tmetric\tvalue\n";
  for (std::size_t i = 0; i < r.values.size(); ++i)
    out << r.task << '\t' << r.seeds[i] << '\t' << to_string(r.metric) << '\t' << format_metric(r.values[i]) << '\n';
  return out.str();
}

// <out>/<task>/<seed>/{checkpoint.bin,checkpoint.json,trainlog.jsonl,result.tsv},
// <out>/results.tsv and <out>/summary.json.
inline void write_experiment(const RunConfig& cfg, const ExperimentOutput& exp) {
  const fs::path root(cfg.out);
  for (const auto& s : exp.seeds) {
    const auto dir = root / cfg.task.name / std::to_string(s.seed);
    fs::create_directories(dir);
    save_checkpoint(s.result.params, (dir / "checkpoint").string());
    std::ofstream log(dir / "trainlog.jsonl");
    s.result.log.write_jsonl(log, cfg.log_every);
    std::ofstream res(dir / "result.tsv");
    res << "task\tseed\tmetric\tvalue\n"
        << cfg.task.name << '\t' << s.seed << '\t' << to_string(cfg.task.metric) << '\t' << format_metric(s.value)
        << '\n';
  }
  std::ofstream(root / "results.tsv") << result_tsv(exp.summary);
  auto sj = summary_json(exp.summary);
  sj["config"] = cfg.to_json();
  std::ofstream(root / "summary.json") << sj.dump(2) << '\n';
}

struct CompareRow {
  std::string task;
  Metric metric = Metric::accuracy;
  RunResult a, b;
  double delta() const { return b.mean - a.mean; }
};

inline std::string compare_table(const std::vector<CompareRow>& rows) {
  std::ostringstream out;
  out << "task\tmetric\tmean_a\tstd_a\tmean_b\tstd_b\tdelta\n";
  for (const auto& r : rows)
    out << r.task << '\t' << to_string(r.metric) << '\t' << format_metric(r.a.mean) << '\t' << format_metric(r.a.std)
        << '\t' << format_metric(r.b.mean) << '\t' << format_metric(r.b.std) << '\t' << format_metric(r.delta())
        << '\n';
  return out.str();
}

inline std::string difficulty_tsv(const std::vector<DifficultyRow>& rows) {
  std::ostringstream out;
  out << "K\tavg_improvement\n";
  for (const auto& r : rows) out << r.k << '\t' << format_metric(r.average_improvement) << '\n';
  return out.str();
}

// --- synthetic task assets -------------------------------------------------------

inline std::vector<std::string> default_label_words(int num_classes) {
  switch (num_classes) {
    case 2: return {"terrible", "great"};
    case 3: return {"terrible", "okay", "great"};
    case 5: return {"terrible", "bad", "okay", "good", "great"};
    default: {
      std::vector<std::string> w;
      for (int c = 0; c < num_classes; ++c) w.push_back("label" + std::to_string(c));
      return w;
    }
  }
}

inline std::vector<std::string> default_template_lines() {
  return {"<S1> It was [MASK] .", "<S1> This is [MASK] .", "<S1> A truly [MASK] one .", "[MASK] : <S1>",
          "<S1> All in all , [MASK] .", "<S1> ? [MASK] ."};
}

// Writes dataset.tsv, templates.txt, verbalizer.txt, lexicon.txt and
// config.json for a generated task into dir.
inline RunConfig write_synthetic_task(const fs::path& dir, const SyntheticTask& task) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "dataset.tsv");
    write_examples(out, task.examples);
  }
  {
    std::ofstream out(dir / "templates.txt");
    for (const auto& line : default_template_lines()) out << line << '\n';
  }
  {
    std::ofstream out(dir / "verbalizer.txt");
    const auto words = default_label_words(task.spec.num_classes);
    for (std::size_t c = 0; c < words.size(); ++c) out << c << '\t' << words[c] << '\n';
  }
  {
    // Filler words paired up as synonyms, so EDA never touches class signal.
    std::ofstream out(dir / "lexicon.txt");
    for (std::size_t i = 0; i + 1 < task.filler_tokens.size(); i += 2) {
      out << task.filler_tokens[i] << '\t' << task.filler_tokens[i + 1] << '\n';
      out << task.filler_tokens[i + 1] << '\t' << task.filler_tokens[i] << '\n';
    }
  }
  RunConfig cfg;
  cfg.task = task.spec;
  cfg.dataset = "dataset.tsv";
  cfg.templates = "templates.txt";
  cfg.verbalizer = "verbalizer.txt";
  cfg.lexicon = "lexicon.txt";
  cfg.out = "runs";
  std::ofstream(dir / "config.json") << cfg.to_json().dump(2) << '\n';
  cfg.dataset = (dir / "dataset.tsv").string();
  cfg.templates = (dir / "templates.txt").string();
  cfg.verbalizer = (dir / "verbalizer.txt").string();
  cfg.lexicon = (dir / "lexicon.txt").string();
  cfg.out = (dir / "runs").string();
  return cfg;
}

}  // namespace promptclr
