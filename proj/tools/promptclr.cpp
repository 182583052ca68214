// promptclr: experiment driver for prompt-based few-shot fine-tuning with a
// supervised contrastive objective.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "promptclr/experiment.hpp"
#include "promptclr/oracle.hpp"

namespace fs = std::filesystem;
using namespace promptclr;

namespace {

struct Overrides {
  std::string seeds, loss, strategy, repr, step_mode, out;
  long log_every = 0;
  long max_steps = -1;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seeds, "Seed list, e.g. 13,21,42");
    app->add_option("--loss", loss, "Contrastive loss")->check(CLI::IsMember({"supcon", "simclr", "none"}));
    app->add_option("--strategy", strategy, "View strategy")
        ->check(CLI::IsMember({"demo_and_temp", "temp_only", "demo_only"}));
    app->add_option("--repr", repr, "Contrastive representation")->check(CLI::IsMember({"mask", "cls"}));
    app->add_option("--step-mode", step_mode, "Optimizer schedule")->check(CLI::IsMember({"sequential", "joint"}));
    app->add_option("--out", out, "Output directory");
    app->add_option("--log-every", log_every, "Train log granularity (steps)");
    app->add_option("--max-steps", max_steps, "Training iterations");
  }

  nlohmann::json as_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (!seeds.empty()) {
      std::vector<std::uint64_t> list;
      std::stringstream ss(seeds);
      for (std::string item; std::getline(ss, item, ',');) {
        try {
          list.push_back(std::stoull(item));
        } catch (const std::exception&) {
          throw ConfigError("bad seed '" + item + "'");
        }
      }
      j["seeds"] = list;
    }
    if (!loss.empty()) j["loss"] = loss;
    if (!strategy.empty()) j["strategy"] = strategy;
    if (!repr.empty()) j["repr"] = repr;
    if (!step_mode.empty()) j["step_mode"] = step_mode;
    if (!out.empty()) j["out"] = out;
    if (log_every > 0) j["log_every"] = log_every;
    if (max_steps >= 0) j["max_steps"] = max_steps;
    return j;
  }
};

RunConfig resolve(const std::string& file, const Overrides& o) {
  auto cfg = RunConfig::load(file);
  cfg.apply(o.as_json());
  return cfg;
}

// Reuses <out>/summary.json when its digest matches, otherwise trains.
RunResult obtain(const RunConfig& cfg) {
  const auto path = fs::path(cfg.out) / "summary.json";
  if (fs::exists(path)) {
    std::ifstream in(path);
    const auto j = nlohmann::json::parse(in);
    if (j.value("config_digest", "") == cfg.digest()) return summary_from_json(j);
  }
  const auto task = load_task(cfg);
  const auto exp = run_experiment(cfg, task);
  write_experiment(cfg, exp);
  return exp.summary;
}

int cmd_train(const std::string& config, const Overrides& o) {
  const auto cfg = resolve(config, o);
  // Every input is loaded and checked before anything is written.
  const auto task = load_task(cfg);
  const auto exp = run_experiment(cfg, task);
  write_experiment(cfg, exp);
  std::cout << result_tsv(exp.summary);
  std::cout << "# " << cfg.task.name << ' ' << to_string(cfg.task.metric) << " mean " << format_metric(exp.summary.mean)
            << " std(pop) " << format_metric(exp.summary.std) << " digest " << exp.summary.config_digest << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& configs, const Overrides& o, const std::string& report_dir) {
  if (configs.size() < 2 || configs.size() % 2 != 0)
    throw ArgumentError("compare takes config pairs: A1 B1 [A2 B2 ...]");
  std::vector<CompareRow> rows;
  for (std::size_t i = 0; i < configs.size(); i += 2) {
    const auto a = resolve(configs[i], o);
    const auto b = resolve(configs[i + 1], o);
    if (a.task.name != b.task.name) throw ArgumentError("compare: task mismatch '" + a.task.name + "' vs '" + b.task.name + "'");
    if (a.seeds != b.seeds) throw ArgumentError("compare: seed lists differ for task '" + a.task.name + "'");
    CompareRow row;
    row.task = a.task.name;
    row.metric = a.task.metric;
    row.a = obtain(a);
    row.b = obtain(b);
    rows.push_back(std::move(row));
  }
  const auto table = compare_table(rows);
  std::cout << table;
  std::string report;
  if (rows.size() > 1) {
    std::map<std::string, double> base, method;
    for (const auto& r : rows) {
      base[r.task] = r.a.mean;
      method[r.task] = r.b.mean;
    }
    report = difficulty_tsv(difficulty_report(base, method));
    std::cout << '\n' << report;
  }
  if (!report_dir.empty()) {
    fs::create_directories(report_dir);
    std::ofstream(fs::path(report_dir) / "compare.tsv") << table;
    if (!report.empty()) std::ofstream(fs::path(report_dir) / "difficulty.tsv") << report;
  }
  return 0;
}

int cmd_oracle_check(std::uint64_t seed, bool corrupt) {
  OracleOptions opts;
  opts.seed = seed;
  opts.corrupt_temperature = corrupt;
  const auto results = run_property_suite(opts);
  int failed = 0;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n';
    failed += r.passed ? 0 : 1;
  }
  std::cout << (failed ? std::to_string(failed) + " properties failed" : std::string("all properties passed")) << '\n';
  return failed ? 1 : 0;
}

int cmd_augment_preview(const std::string& config, const Overrides& o, int n, double alpha) {
  const auto cfg = resolve(config, o);
  const auto task = load_task(cfg);
  const auto split = make_fewshot_splits(task.examples, cfg.task, cfg.K, {cfg.seeds.front()}).front();
  std::cout << "# strategy=" << to_string(cfg.train.view_strategy) << " alpha=" << alpha
            << " seed=" << cfg.seeds.front() << '\n';
  if (n <= 0) return 0;
  Rng rng(detail::mix_seed(cfg.seeds.front(), 99));
  ViewOptions vo;
  vo.prompt.with_demos = cfg.train.with_demos;
  vo.prompt.max_seq_len = cfg.train.max_seq_len;
  const auto& lexicon = task.lexicon ? *task.lexicon : SynonymLexicon{};
  for (int i = 0; i < n && i < static_cast<int>(split.train.size()); ++i) {
    const auto& e = split.train[static_cast<std::size_t>(i)];
    const auto pair = build_view_pair(e, task.bank, split.train, cfg.train.view_strategy, task.verbalizer, task.vocab,
                                      rng, vo);
    std::cout << "example " << e.id << " label " << e.label << '\n';
    std::cout << "  view1: " << detokenize(pair.view1.token_ids, task.vocab) << '\n';
    std::cout << "  view2: " << detokenize(pair.view2.token_ids, task.vocab) << '\n';
    const auto words = split_words(e.text1);
    const auto show = [&](const char* tag, const AugmentResult& r) {
      std::cout << "  " << tag << ": " << join_tokens(r.tokens) << (r.no_op ? "  (no-op)" : "") << '\n';
    };
    show("SR ", synonym_replacement(words, alpha, lexicon, rng));
    show("RI ", random_insertion(words, alpha, lexicon, rng));
    show("RS ", random_swap(words, alpha, rng));
    show("RD ", random_deletion(words, alpha, rng));
    const auto full = eda(words, alpha, lexicon, rng);
    std::cout << "  EDA: " << join_tokens(full.tokens) << '\n';
  }
  return 0;
}

int cmd_gen_task(int classes, int per_class, int vocab, double signal, std::uint64_t seed, const std::string& out) {
  Rng rng(seed);
  const auto task = generate_synthetic_task(classes, per_class, vocab, signal, rng);
  write_synthetic_task(out, task);
  std::cout << "wrote " << task.examples.size() << " examples to " << (fs::path(out) / "dataset.tsv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-based few-shot fine-tuning with supervised contrastive views"};
  app.require_subcommand(1);

  std::string config;
  Overrides overrides;

  auto* train = app.add_subcommand("train", "Split, train, evaluate every seed and aggregate");
  train->add_option("--config", config, "Run config (JSON)")->required();
  overrides.add_to(train);

  std::vector<std::string> pair_configs;
  std::string report_dir;
  auto* compare = app.add_subcommand("compare", "Baseline vs method table (+ difficulty report)");
  compare->add_option("configs", pair_configs, "Config pairs: A1 B1 [A2 B2 ...]")->required();
  compare->add_option("--report-dir", report_dir, "Also write compare.tsv / difficulty.tsv here");
  overrides.add_to(compare);

  std::uint64_t oracle_seed = 2022;
  bool corrupt = false;
  auto* oracle = app.add_subcommand("oracle-check", "Run the numerical property suite");
  oracle->add_option("--seed", oracle_seed, "Property suite seed");
  oracle->add_flag("--corrupt-temperature", corrupt, "Flip the temperature sign (failure fixture)");

  int preview_n = 5;
  double preview_alpha = 0.1;
  auto* preview = app.add_subcommand("augment-preview", "Print prompt views and EDA variants");
  preview->add_option("--config", config, "Run config (JSON)")->required();
  preview->add_option("-n", preview_n, "Number of examples");
  preview->add_option("--alpha", preview_alpha, "EDA rate");
  overrides.add_to(preview);

  int classes = 2, per_class = 200, vocab = 200;
  double signal = 0.9;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-task", "Emit a synthetic task (dataset, templates, verbalizer, config)");
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--per-class", per_class, "Examples per class");
  gen->add_option("--vocab", vocab, "Vocabulary size");
  gen->add_option("--signal", signal, "Signal strength in (0, 1]");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, overrides);
    if (*compare) return cmd_compare(pair_configs, overrides, report_dir);
    if (*oracle) return cmd_oracle_check(oracle_seed, corrupt);
    if (*preview) return cmd_augment_preview(config, overrides, preview_n, preview_alpha);
    if (*gen) return cmd_gen_task(classes, per_class, vocab, signal, gen_seed, gen_out);
  } catch (const std::exception& e) {
    std::cerr << "promptclr: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
