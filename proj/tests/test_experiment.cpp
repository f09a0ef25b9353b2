#include <gtest/gtest.h>

#include <cstdlib>

#include "nnbr/experiment.hpp"
#include "test_util.hpp"

namespace nnbr {
namespace {

using testing::slurp;
using testing::TempDir;

// Small enough that a full train/evaluate cycle takes well under a second.
std::vector<std::string> tiny_overrides(const std::string& out) {
  return {"dataset.synthetic.num_users=120", "dataset.synthetic.vocab_size=30", "dataset.synthetic.num_clusters=3",
          "model.embed_dim=8",               "model.heads=2",                   "model.layers=1",
          "train.max_epochs=2",              "train.batch_size=16",             "repetitions=2",
          "output_dir=\"" + out + "\""};
}

ExperimentConfig tiny(const std::string& out, std::vector<std::string> extra = {}) {
  auto o = tiny_overrides(out);
  o.insert(o.end(), extra.begin(), extra.end());
  return load_experiment(std::nullopt, o);
}

struct Cli {
  int status;
  std::string out;
};

Cli run_cli(const std::string& args, const std::string& dir) {
  const std::string log = dir + "/cli_output.txt";
  const std::string cmd = std::string(NNBR_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return {WIFEXITED(rc) ? WEXITSTATUS(rc) : -1, slurp(log)};
}

std::string cli_sets(const std::string& out, const std::string& extra = "") {
  std::string s = " --set";
  for (const auto& o : tiny_overrides(out)) s += " '" + o + "'";
  return s + (extra.empty() ? "" : " " + extra);
}

// --- configuration -----------------------------------------------------------

TEST(ExperimentConfig, JsonRoundTrip) {
  auto c = default_experiment();
  c.finetune = TrainConfig{};
  c.finetune->mask = {MaskStrategy::basket_all, std::nullopt};
  auto back = experiment_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.ks, (std::vector<std::size_t>{10, 20}));
  EXPECT_EQ(back.repetitions, 5u);
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadTypes) {
  json j = to_json(default_experiment());
  j["train"]["mask_rate"] = 0.3;
  EXPECT_THROW(experiment_from_json(j), ConfigError);
  j = to_json(default_experiment());
  j["repetitions"] = "five";
  EXPECT_THROW(experiment_from_json(j), ConfigError);
  json k = to_json(default_experiment());
  EXPECT_THROW(apply_override(k, "train.nope=1"), ConfigError);
  EXPECT_THROW(apply_override(k, "no_equals_sign"), ConfigError);
}

TEST(ExperimentConfig, InvalidCombinationsRejectedUpFront) {
  EXPECT_THROW(load_experiment(std::nullopt, {"train.strategy=basket_all", "train.mask_ratio=null", "train.swap_ratio=0.3"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"train.strategy=item_random", "train.mask_ratio=null"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"repetitions=0"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"ks=[5,20]"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"model.max_positions=3"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"finetune.strategy=item_random", "finetune.mask_ratio=0.2"}), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, {"dataset.kind=dunnhumby"}), ConfigError);
}

TEST(ExperimentConfig, FilePrecedenceAndOverrides) {
  TempDir dir;
  const auto file = dir.write("exp.json", R"({"train": {"mask_ratio": 0.5, "learning_rate": 0.01}, "name": "from-file"})");
  auto c = load_experiment(file, {"train.mask_ratio=0.7", "name=cli"});
  EXPECT_DOUBLE_EQ(*c.train.mask.mask_ratio, 0.7);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.name, "cli");
  EXPECT_EQ(c.train.batch_size, TrainConfig{}.batch_size);
  const auto typo = dir.write("typo.json", R"({"trian": {}})");
  EXPECT_THROW(load_experiment(typo), ConfigError);
  EXPECT_THROW(load_experiment(dir.file("missing.json")), ConfigError);
}

TEST(ExperimentConfig, FinetuneBlockFilledOnFirstOverride) {
  auto c = load_experiment(std::nullopt, {"finetune.max_epochs=3"});
  ASSERT_TRUE(c.finetune);
  EXPECT_EQ(c.finetune->mask.strategy, MaskStrategy::basket_all);
  EXPECT_EQ(c.finetune->max_epochs, 3u);
}

TEST(ExperimentConfig, HashIgnoresOutputDirOnly) {
  auto a = default_experiment();
  auto b = a;
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.train.learning_rate = 0.002;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(data_hash(a), data_hash(b));
  b.preprocess.min_baskets = 4;
  EXPECT_NE(data_hash(a), data_hash(b));
}

TEST(ExperimentConfig, RepetitionSeedsAreSeedPlusIndex) {
  auto c = tiny("unused", {"seed=40"});
  Corpus corpus = build_corpus(c);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(c.repetition_seed(i), 40 + i);
    SplitSpec s = c.split;
    s.seed = 40 + i;
    EXPECT_EQ(repetition_split(corpus, c, i).test, split_users(corpus, s).test);
  }
}

TEST(ExperimentConfig, DataRootResolvesRelativePaths) {
  ::setenv(kDataRootEnv, "/data/root", 1);
  EXPECT_EQ(resolve_data_path("dunnhumby/transactions.csv"), "/data/root/dunnhumby/transactions.csv");
  EXPECT_EQ(resolve_data_path("/abs/file.csv"), "/abs/file.csv");
  ::unsetenv(kDataRootEnv);
  EXPECT_EQ(resolve_data_path("rel.csv"), "rel.csv");
}

TEST(ExperimentConfig, ShippedConfigsLoad) {
  const fs::path dir = fs::path(NNBR_SOURCE_DIR) / "configs";
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    EXPECT_NO_THROW(load_experiment(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 2u);
  EXPECT_EQ(load_experiment((dir / "desk.json").string()).model.embed_dim, 32u);
}

TEST(Grid, CrossProductShape) {
  auto a = parse_grid_axis("train.swap_ratio=0.1,0.3,0.5,0.7,0.9");
  auto b = parse_grid_axis("train.swap_hop=1,3,5,7,9");
  auto cells = grid_cells({a, b});
  ASSERT_EQ(cells.size(), 25u);
  EXPECT_EQ(cells[1][0].second, json(0.1));
  EXPECT_EQ(cells[1][1].second, json(3));
  std::set<std::string> ids;
  for (const auto& c : cells) ids.insert(cell_id(c));
  EXPECT_EQ(ids.size(), 25u);
  EXPECT_EQ(parse_grid_axis("train.strategy=item_random,basket_all").values[1], json("basket_all"));
  EXPECT_THROW(parse_grid_axis("train.swap_hop="), ConfigError);
}

// --- commands (in process) -----------------------------------------------------

TEST(Commands, PrepareWritesMatchingStats) {
  TempDir dir;
  auto c = tiny(dir.file("exp"));
  std::ostringstream sink;
  cmd_prepare(c, false, {sink, sink});
  Corpus corpus = load_prepared(c);
  const Corpus built = build_corpus(c);
  EXPECT_EQ(corpus.users, built.users);
  EXPECT_EQ(corpus.vocab_size, built.vocab_size);
  // Synthetic items have no raw names; the id map records the identity.
  ASSERT_EQ(corpus.item_names.size(), corpus.vocab_size);
  EXPECT_EQ(corpus.item_names.back(), std::to_string(corpus.vocab_size));
  json stats = read_json(Layout{c.output_dir}.stats());
  json expect = stats_to_json(corpus_stats(corpus));
  for (const auto& [k, v] : expect.items()) EXPECT_EQ(stats[k], v) << k;
  EXPECT_EQ(stats["config_hash"], config_hash(c));
  EXPECT_THROW(cmd_prepare(c, false, {sink, sink}), ConfigError);
  EXPECT_NO_THROW(cmd_prepare(c, true, {sink, sink}));
  // A config with different data refuses the prepared corpus.
  EXPECT_THROW(load_prepared(tiny(dir.file("exp"), {"preprocess.min_baskets=4"})), ConfigError);
}

TEST(Commands, SingleCellSweepEqualsTrainPlusEvaluate) {
  TempDir dir;
  auto c = tiny(dir.file("exp"));
  std::ostringstream sink;
  cmd_prepare(c, false, {sink, sink});
  cmd_train(c, std::nullopt, {sink, sink});
  json evaluated = read_json(cmd_evaluate(c, {sink, sink}));
  ASSERT_EQ(evaluated["repetitions"].size(), 2u);
  const double r0 = evaluated["repetitions"][0]["recall"]["10"], r1 = evaluated["repetitions"][1]["recall"]["10"];
  EXPECT_DOUBLE_EQ(evaluated["mean"]["recall"]["10"].get<double>(), (r0 + r1) / 2);

  auto s = cmd_sweep(c, {parse_grid_axis("train.mask_ratio=0.3")}, 0, {sink, sink});
  EXPECT_EQ(s.completed, 1u);
  json cell = read_json(Layout{c.output_dir}.sweep() / "cells" / (cell_id({{"train.mask_ratio", json(0.3)}}) + ".json"));
  EXPECT_EQ(cell["mean"], evaluated["mean"]);
  EXPECT_EQ(cell["repetitions"][1]["per_user"], evaluated["repetitions"][1]["per_user"]);
}

TEST(Commands, GTopFreqFindsSignalWithoutRepeats) {
  TempDir dir;
  auto c = tiny(dir.file("exp"), {"dataset.synthetic.repeat_prob=0"});
  std::ostringstream sink;
  cmd_prepare(c, false, {sink, sink});
  json doc = read_json(cmd_baseline(c, {sink, sink}));
  EXPECT_GT(doc["mean"]["recall"]["10"].get<double>(), 0.0);
  EXPECT_EQ(doc["run"], "g-topfreq-all");
}

TEST(Commands, FailedSweepCellIsRecordedNotFatal) {
  TempDir dir;
  auto c = tiny(dir.file("exp"));
  std::ostringstream sink;
  cmd_prepare(c, false, {sink, sink});
  // An absurd learning rate blows the weights up; that cell fails, the other runs.
  auto s = cmd_sweep(c, {parse_grid_axis("train.learning_rate=0.001,1e308")}, 0, {sink, sink});
  EXPECT_EQ(s.total, 2u);
  EXPECT_EQ(s.completed, 1u);
  EXPECT_EQ(s.failed, 1u);
  EXPECT_NE(slurp((Layout{c.output_dir}.sweep() / "table.tsv").string()).find("failed"), std::string::npos);
  EXPECT_TRUE(fs::exists(Layout{c.output_dir}.sweep() / "table.tsv"));
}

TEST(Report, MarkersAndExactNumbers) {
  TempDir dir;
  const fs::path root = dir.file("rep");
  // Hand-made result files: run "better" dominates "ref" on every user.
  auto doc = [](const std::string& run, double base) {
    json reps = json::array();
    for (int r = 0; r < 3; ++r) {
      json users = json::array();
      double sum = 0;
      for (int u = 0; u < 20; ++u) {
        const double v = base + 0.01 * ((u * 7 + r) % 5);
        sum += v;
        users.push_back({{"user", "u" + std::to_string(u)}, {"recall", {v}}, {"ndcg", {v / 2}}});
      }
      reps.push_back({{"repetition", r}, {"recall", {{"10", sum / 20}}}, {"ndcg", {{"10", sum / 40}}}, {"per_user", users}});
    }
    json d{{"run", run}, {"method", "x"}, {"label_mode", "all"}, {"config_hash", "h-" + run}, {"ks", {10}}, {"repetitions", reps}};
    d["mean"] = mean_of_repetitions(d["repetitions"], {10});
    return d;
  };
  atomic_write(root / "results" / "a.json", doc("better", 0.5).dump());
  atomic_write(root / "results" / "b.json", doc("ref", 0.2).dump());
  atomic_write(root / "results" / "c.json", doc("worse", 0.1).dump());
  std::ostringstream out, err;
  auto md = slurp(cmd_report(root, std::string("ref"), {out, err}).string());
  EXPECT_NE(md.find("| better | h-better | 0.5200 ↑ | 0.2600 ↑ |"), std::string::npos) << md;
  EXPECT_NE(md.find("| worse | h-worse | 0.1200 ↓ |"), std::string::npos) << md;
  EXPECT_NE(md.find("ref (reference)"), std::string::npos);
  EXPECT_TRUE(err.str().empty());

  // report.tsv reproduces the stored means exactly.
  std::istringstream tsv(slurp((root / "report.tsv").string()));
  std::string line;
  std::getline(tsv, line);
  std::map<std::string, double> read;
  while (std::getline(tsv, line)) {
    std::istringstream f(line);
    std::string run, hash, v;
    std::getline(f, run, '\t');
    std::getline(f, hash, '\t');
    std::getline(f, v, '\t');
    read[run] = std::stod(v);
  }
  EXPECT_EQ(read["better"], doc("better", 0.5)["mean"]["recall"]["10"].get<double>());
  EXPECT_EQ(read["worse"], doc("worse", 0.1)["mean"]["recall"]["10"].get<double>());

  std::ostringstream err2;
  md = slurp(cmd_report(root, std::string("missing"), {out, err2}).string());
  EXPECT_NE(err2.str().find("warning"), std::string::npos);
  EXPECT_EQ(md.find("↑"), std::string::npos);
}

// --- the command-line tool -----------------------------------------------------

TEST(Cli, PrepareRefusesOverwriteWithoutForce) {
  TempDir dir;
  const auto out = dir.file("exp");
  EXPECT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
  auto again = run_cli("prepare" + cli_sets(out), dir.path());
  EXPECT_NE(again.status, 0);
  EXPECT_NE(again.out.find("--force"), std::string::npos);
  EXPECT_EQ(run_cli("prepare --force" + cli_sets(out), dir.path()).status, 0);
}

TEST(Cli, InvalidStrategyRejectedBeforeTraining) {
  TempDir dir;
  const auto out = dir.file("exp");
  ASSERT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
  auto r = run_cli("train" + cli_sets(out, "train.strategy=basket_all train.mask_ratio=null train.swap_ratio=0.3"), dir.path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("swap"), std::string::npos);
  EXPECT_FALSE(fs::exists(fs::path(out) / "train"));
}

TEST(Cli, TrainingLogsAreByteIdentical) {
  TempDir dir;
  const auto a = dir.file("a"), b = dir.file("b");
  for (const auto& out : {a, b}) {
    ASSERT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
    ASSERT_EQ(run_cli("train" + cli_sets(out), dir.path()).status, 0);
  }
  for (int rep = 0; rep < 2; ++rep) {
    const auto la = slurp(Layout{a}.metrics_log(rep).string()), lb = slurp(Layout{b}.metrics_log(rep).string());
    EXPECT_FALSE(la.empty());
    EXPECT_EQ(la, lb);
  }
  ASSERT_EQ(run_cli("evaluate" + cli_sets(a), dir.path()).status, 0);
  const auto first = slurp((Layout{a}.results() / "btbr-item_select-all.json").string());
  ASSERT_EQ(run_cli("evaluate" + cli_sets(a), dir.path()).status, 0);
  EXPECT_EQ(first, slurp((Layout{a}.results() / "btbr-item_select-all.json").string()));
  EXPECT_NE(first.find(config_hash(tiny(a))), std::string::npos);
}

TEST(Cli, JointConfigLogsBothPhases) {
  TempDir dir;
  const auto out = dir.file("exp");
  ASSERT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
  ASSERT_EQ(run_cli("train --repetition 0" + cli_sets(out, "finetune.max_epochs=2"), dir.path()).status, 0);
  const auto log = slurp(Layout{out}.metrics_log(0).string());
  EXPECT_NE(log.find("\"phase\":\"pretrain\""), std::string::npos);
  EXPECT_NE(log.find("\"phase\":\"finetune\""), std::string::npos);
  EXPECT_FALSE(fs::exists(Layout{out}.metrics_log(1)));
}

TEST(Cli, EvaluateRejectsVocabularyMismatch) {
  TempDir dir;
  const auto small = dir.file("small"), other = dir.file("other");
  ASSERT_EQ(run_cli("prepare" + cli_sets(small), dir.path()).status, 0);
  ASSERT_EQ(run_cli("prepare" + cli_sets(other, "dataset.synthetic.vocab_size=40"), dir.path()).status, 0);
  ASSERT_EQ(run_cli("train" + cli_sets(other, "dataset.synthetic.vocab_size=40"), dir.path()).status, 0);
  fs::create_directories(fs::path(small) / "train");
  fs::copy(fs::path(other) / "train", fs::path(small) / "train", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  auto r = run_cli("evaluate" + cli_sets(small), dir.path());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("vocab"), std::string::npos) << r.out;
}

TEST(Cli, ResumedSweepMatchesFreshSweep) {
  TempDir dir;
  const auto fresh = dir.file("fresh"), resumed = dir.file("resumed");
  const std::string grid = " --grid train.swap_ratio=0,0.3 --grid train.swap_hop=1,2";
  for (const auto& out : {fresh, resumed}) ASSERT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
  ASSERT_EQ(run_cli("sweep" + grid + cli_sets(fresh), dir.path()).status, 0);
  auto part = run_cli("sweep --max-cells 1" + grid + cli_sets(resumed), dir.path());
  EXPECT_NE(part.status, 0);  // stopped early is not full success
  EXPECT_FALSE(fs::exists(fs::path(resumed) / "sweep" / "table.tsv"));
  auto rest = run_cli("sweep" + grid + cli_sets(resumed), dir.path());
  ASSERT_EQ(rest.status, 0);
  EXPECT_NE(rest.out.find("1 reused"), std::string::npos) << rest.out;
  const auto table = slurp((fs::path(fresh) / "sweep" / "table.tsv").string());
  EXPECT_EQ(table, slurp((fs::path(resumed) / "sweep" / "table.tsv").string()));
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 5);

  ASSERT_EQ(run_cli("report " + fresh, dir.path()).status, 0);
  const auto heat = slurp((fs::path(fresh) / "heatmap_recall@10.tsv").string());
  EXPECT_EQ(std::count(heat.begin(), heat.end(), '\n'), 3);
}

TEST(Cli, BaselineMethodsAndReport) {
  TempDir dir;
  const auto out = dir.file("exp");
  ASSERT_EQ(run_cli("prepare" + cli_sets(out), dir.path()).status, 0);
  ASSERT_EQ(run_cli("baseline" + cli_sets(out), dir.path()).status, 0);
  ASSERT_EQ(run_cli("baseline --method tifuknn" + cli_sets(out), dir.path()).status, 0);
  ASSERT_EQ(run_cli("baseline --method tifuknn" + cli_sets(out, "label_mode=explore"), dir.path()).status, 0);
  auto r = run_cli("report " + out + " --reference g-topfreq-all", dir.path());
  ASSERT_EQ(r.status, 0);
  const auto md = slurp(out + "/report.md");
  EXPECT_NE(md.find("tifuknn-explore"), std::string::npos);
  EXPECT_NE(md.find("g-topfreq-all (reference)"), std::string::npos);
  EXPECT_NE(run_cli("baseline --method popularity" + cli_sets(out), dir.path()).status, 0);
}

}  // namespace
}  // namespace nnbr
