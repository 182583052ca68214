#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "promptclr/experiment.hpp"

namespace fs = std::filesystem;
using namespace promptclr;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliResult {
  int status = 0;
  std::string out;
};

CliResult cli(const std::string& args) {
  static int counter = 0;
  const auto capture = fs::temp_directory_path() / ("promptclr_cli_" + std::to_string(counter++) + ".txt");
  const std::string cmd = std::string(PROMPTCLR_CLI) + " " + args + " > " + capture.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  CliResult r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = slurp(capture);
  fs::remove(capture);
  return r;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "promptclr_experiment_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A small generated task with a fast model; returns the config path.
fs::path small_task(const fs::path& dir, const std::string& name = "synth", std::uint64_t gen_seed = 7,
                    nlohmann::json extra = {}) {
  const auto r = cli("gen-task --classes 2 --per-class 40 --vocab 60 --seed " + std::to_string(gen_seed) + " --out " +
                     dir.string());
  EXPECT_EQ(r.status, 0) << r.out;
  auto j = nlohmann::json::parse(slurp(dir / "config.json"));
  j["task"] = name;
  j["max_steps"] = 3;
  j["batch_size"] = 4;
  j["d_model"] = 16;
  j["num_layers"] = 1;
  j["num_heads"] = 2;
  j["feedforward_width"] = 32;
  j["max_seq_len"] = 64;
  j["K"] = 4;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  const auto path = dir / "config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST(RunConfig, DigestIgnoresOutputLocation) {
  RunConfig a;
  a.task = {"t", 2, false, Metric::accuracy};
  auto b = a;
  b.out = "elsewhere";
  b.log_every = 10;
  EXPECT_EQ(a.digest(), b.digest());
  b.train.lr_mlm = 1e-3;
  EXPECT_NE(a.digest(), b.digest());
}

TEST(RunConfig, RejectsUnknownKeysAndResolvesPaths) {
  RunConfig c;
  EXPECT_THROW(c.apply(nlohmann::json{{"learning_rate", 1}}), ConfigError);
  c.apply(nlohmann::json{{"dataset", "d.tsv"}, {"templates", "/abs/t.txt"}}, "/base");
  EXPECT_EQ(c.dataset, "/base/d.tsv");
  EXPECT_EQ(c.templates, "/abs/t.txt");
  EXPECT_THROW(c.apply(nlohmann::json{{"loss", "triplet"}}), ConfigError);
  const auto round = [&] {
    RunConfig d;
    d.apply(c.to_json());
    return d;
  }();
  EXPECT_EQ(round.digest(), c.digest());
}

TEST(Cli, GenTaskWritesAssets) {
  const auto dir = scratch("gen");
  small_task(dir);
  for (const char* f : {"dataset.tsv", "templates.txt", "verbalizer.txt", "lexicon.txt", "config.json"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto cfg = RunConfig::load((dir / "config.json").string());
  EXPECT_NO_THROW(load_task(cfg));
}

TEST(Cli, TrainWritesLayout) {
  const auto dir = scratch("train");
  const auto config = small_task(dir);
  const auto r = cli("train --config " + config.string() + " --log-every 2");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto runs = dir / "runs";
  for (const char* seed : {"13", "21", "42", "87", "100"}) {
    const auto d = runs / "synth" / seed;
    EXPECT_TRUE(fs::exists(d / "checkpoint.bin")) << seed;
    EXPECT_TRUE(fs::exists(d / "checkpoint.json")) << seed;
    EXPECT_TRUE(fs::exists(d / "result.tsv")) << seed;
    std::ifstream log(d / "trainlog.jsonl");
    std::vector<long> steps;
    for (std::string line; std::getline(log, line);) steps.push_back(nlohmann::json::parse(line).at("step"));
    EXPECT_EQ(steps, (std::vector<long>{0, 2})) << seed;
  }
  const auto summary = nlohmann::json::parse(slurp(runs / "summary.json"));
  EXPECT_EQ(summary.at("values").size(), 5u);
  EXPECT_EQ(summary.at("std_kind"), "population");
  const auto rows = slurp(runs / "results.tsv");
  EXPECT_EQ(std::count(rows.begin(), rows.end(), '\n'), 6);
  EXPECT_EQ(rows.substr(0, rows.find('\n')), "task\tseed\tmetric\tvalue");
  // Checkpoints reload to a model of the configured shape.
  const auto params = load_checkpoint((runs / "synth" / "13" / "checkpoint").string());
  EXPECT_EQ(params.config.d_model, 16);
}

TEST(Cli, TrainIsDeterministic) {
  const auto dir = scratch("determinism");
  const auto config = small_task(dir);
  ASSERT_EQ(cli("train --config " + config.string() + " --seed 13,21 --out " + (dir / "a").string()).status, 0);
  ASSERT_EQ(cli("train --config " + config.string() + " --seed 13,21 --out " + (dir / "b").string()).status, 0);
  EXPECT_EQ(slurp(dir / "a" / "results.tsv"), slurp(dir / "b" / "results.tsv"));
  EXPECT_EQ(slurp(dir / "a" / "synth" / "13" / "checkpoint.bin"), slurp(dir / "b" / "synth" / "13" / "checkpoint.bin"));
}

TEST(Cli, MissingTemplateFailsBeforeWriting) {
  const auto dir = scratch("missing");
  const auto config = small_task(dir);
  fs::remove(dir / "templates.txt");
  const auto r = cli("train --config " + config.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("templates"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(dir / "runs"));
}

TEST(Cli, BadFlagValuesAreRejected) {
  const auto dir = scratch("flags");
  const auto config = small_task(dir);
  EXPECT_NE(cli("train --config " + config.string() + " --loss triplet").status, 0);
  EXPECT_NE(cli("train --config " + config.string() + " --seed 1,x").status, 0);
  EXPECT_NE(cli("frobnicate").status, 0);
}

TEST(Cli, CompareIdenticalConfigsGivesZeroDelta) {
  const auto dir = scratch("compare");
  const auto config = small_task(dir);
  const auto r = cli("compare " + config.string() + " " + config.string() + " --seed 13,21");
  ASSERT_EQ(r.status, 0) << r.out;
  std::istringstream in(r.out);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "task\tmetric\tmean_a\tstd_a\tmean_b\tstd_b\tdelta");
  EXPECT_EQ(row.substr(row.rfind('\t') + 1), "0.000000");
}

TEST(Cli, CompareRejectsDifferentSeedLists) {
  const auto dir = scratch("compare_seeds");
  const auto a = small_task(dir / "a", "synth", 7, {{"seeds", {13, 21}}});
  const auto b = small_task(dir / "b", "synth", 7, {{"seeds", {42, 87}}});
  const auto r = cli("compare " + a.string() + " " + b.string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("seed"), std::string::npos) << r.out;
}

TEST(Cli, CompareTwoTasksReportsDifficulty) {
  const auto dir = scratch("compare_two");
  const nlohmann::json seeds = {{"seeds", {13, 21}}};
  const auto a1 = small_task(dir / "a1", "alpha", 7, seeds);
  auto b1_extra = seeds;
  b1_extra["loss"] = "none";
  const auto b1 = small_task(dir / "b1", "alpha", 7, b1_extra);
  const auto a2 = small_task(dir / "a2", "beta", 8, seeds);
  const auto b2 = small_task(dir / "b2", "beta", 8, b1_extra);
  const auto report = dir / "report";
  const auto r = cli("compare " + a1.string() + " " + b1.string() + " " + a2.string() + " " + b2.string() +
                     " --report-dir " + report.string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto diff = slurp(report / "difficulty.tsv");
  std::istringstream in(diff);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u) << diff;
  EXPECT_EQ(lines[0], "K\tavg_improvement");
  EXPECT_EQ(lines[1].substr(0, 2), "1\t");
  EXPECT_EQ(lines[2].substr(0, 2), "2\t");
  // Second run reuses the stored summaries and prints the same table.
  const auto again = cli("compare " + a1.string() + " " + b1.string() + " " + a2.string() + " " + b2.string());
  EXPECT_EQ(again.out, r.out);
}

TEST(Cli, OracleCheck) {
  const auto ok = cli("oracle-check --seed 5");
  EXPECT_EQ(ok.status, 0) << ok.out;
  EXPECT_NE(ok.out.find("all properties passed"), std::string::npos);
  const auto bad = cli("oracle-check --corrupt-temperature");
  EXPECT_NE(bad.status, 0);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST(Cli, AugmentPreview) {
  const auto dir = scratch("preview");
  const auto config = small_task(dir);
  const auto none = cli("augment-preview --config " + config.string() + " -n 0");
  ASSERT_EQ(none.status, 0) << none.out;
  EXPECT_EQ(std::count(none.out.begin(), none.out.end(), '\n'), 1);
  EXPECT_EQ(none.out.rfind("# strategy=demo_and_temp", 0), 0u);

  const auto some = cli("augment-preview --config " + config.string() + " -n 2 --alpha 0.1");
  ASSERT_EQ(some.status, 0) << some.out;
  EXPECT_EQ(std::count(some.out.begin(), some.out.end(), '\n'), 1 + 2 * 8);
}
