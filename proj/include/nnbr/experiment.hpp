#pragma once

// Experiment configuration and the commands behind the `nnbr` tool: prepare,
// train, evaluate, baseline, sweep and report. Everything a command writes
// lives under the config's output directory and carries the config hash.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nnbr/baselines.hpp"
#include "nnbr/checkpoint.hpp"
#include "nnbr/core.hpp"
#include "nnbr/data.hpp"
#include "nnbr/evaluation.hpp"
#include "nnbr/training.hpp"

namespace nnbr {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kDataRootEnv = "NNBR_DATA_ROOT";

// ---------------------------------------------------------------------------
// Configuration

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | tafeng | dunnhumby | instacart
  std::string path;                // transaction file; relative paths resolve against $NNBR_DATA_ROOT
  SyntheticProfile synthetic;
  std::uint64_t seed = 0;  // generator seed
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  PreprocessConfig preprocess;
  SplitSpec split;  // split.seed is replaced per repetition
  ModelConfig model;
  TrainConfig train;
  std::optional<TrainConfig> finetune;  // present: joint training
  LabelMode label_mode = LabelMode::all;
  BaselineMethod baseline = BaselineMethod::g_topfreq;
  TifuConfig tifu;
  std::vector<std::size_t> ks{10, 20};
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/experiment";

  std::uint64_t repetition_seed(std::size_t i) const { return seed + i; }

  void validate() const {
    if (dataset.kind == "synthetic") {
      dataset.synthetic.validate();
    } else {
      if (dataset.kind != "tafeng" && dataset.kind != "dunnhumby" && dataset.kind != "instacart") {
        throw ConfigError("unknown dataset kind '" + dataset.kind + "'");
      }
      if (dataset.path.empty()) throw ConfigError("dataset.path is required for " + dataset.kind);
    }
    preprocess.validate();
    split.validate();
    ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = 1;  // filled in from the corpus
    m.validate();
    if (m.max_positions < preprocess.max_baskets + 1) throw ConfigError("model.max_positions must exceed preprocess.max_baskets");
    train.validate();
    if (finetune) {
      finetune->validate();
      if (!is_item_level(train.mask.strategy) || is_item_level(finetune->mask.strategy)) {
        throw ConfigError("joint training needs an item-level train strategy and a basket-level finetune strategy");
      }
    }
    tifu.validate();
    if (ks.empty()) throw ConfigError("ks must not be empty");
    for (auto k : ks)
      if (k == 0) throw ConfigError("every K must be >= 1");
    if (std::find(ks.begin(), ks.end(), std::size_t{10}) == ks.end()) throw ConfigError("ks must contain 10 (the early-stopping metric)");
    if (repetitions == 0) throw ConfigError("repetitions must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }
};

namespace detail {

inline json train_to_json(const TrainConfig& t) {
  return {{"strategy", to_string(t.mask.strategy)},
          {"mask_ratio", t.mask.mask_ratio ? json(*t.mask.mask_ratio) : json(nullptr)},
          {"swap_ratio", t.swap.swap_ratio},
          {"swap_hop", t.swap.swap_hop},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"clip_norm", t.clip_norm}};
}

inline void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown key '" + where + "." + k + "'");
  }
}

template <class T>
T get(const json& j, const std::string& where, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad or missing value for '" + where + "." + key + "'");
  }
}

inline TrainConfig train_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"strategy", "mask_ratio", "swap_ratio", "swap_hop", "learning_rate", "batch_size", "max_epochs", "patience", "clip_norm"});
  TrainConfig t;
  t.mask.strategy = parse_mask_strategy(get<std::string>(j, where, "strategy"));
  if (!j.at("mask_ratio").is_null()) t.mask.mask_ratio = get<double>(j, where, "mask_ratio");
  t.swap.swap_ratio = get<double>(j, where, "swap_ratio");
  t.swap.swap_hop = get<int>(j, where, "swap_hop");
  t.learning_rate = get<double>(j, where, "learning_rate");
  t.batch_size = get<std::size_t>(j, where, "batch_size");
  t.max_epochs = get<std::size_t>(j, where, "max_epochs");
  t.patience = get<std::size_t>(j, where, "patience");
  t.clip_norm = get<double>(j, where, "clip_norm");
  return t;
}

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  const auto& p = c.dataset.synthetic;
  json j;
  j["name"] = c.name;
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"path", c.dataset.path},
                  {"seed", c.dataset.seed},
                  {"synthetic",
                   {{"num_users", p.num_users},
                    {"vocab_size", p.vocab_size},
                    {"num_clusters", p.num_clusters},
                    {"clusters_per_user", p.clusters_per_user},
                    {"min_baskets", p.min_baskets},
                    {"max_baskets", p.max_baskets},
                    {"min_basket_size", p.min_basket_size},
                    {"max_basket_size", p.max_basket_size},
                    {"repeat_prob", p.repeat_prob},
                    {"cluster_purity", p.cluster_purity},
                    {"popularity_skew", p.popularity_skew}}}};
  j["preprocess"] = {{"min_baskets", c.preprocess.min_baskets},
                     {"max_baskets", c.preprocess.max_baskets},
                     {"min_item_frequency", c.preprocess.min_item_frequency}};
  j["split"] = {{"train_fraction", c.split.train_fraction},
                {"test_fraction", c.split.test_fraction},
                {"validation_fraction_of_train", c.split.validation_fraction_of_train}};
  json m = nnbr::to_json(c.model);
  m.erase("vocab_size");
  j["model"] = m;
  j["train"] = detail::train_to_json(c.train);
  j["finetune"] = c.finetune ? detail::train_to_json(*c.finetune) : json(nullptr);
  j["label_mode"] = to_string(c.label_mode);
  j["baseline"] = {{"method", to_string(c.baseline)},
                   {"group_size", c.tifu.group_size},
                   {"within_decay", c.tifu.within_decay},
                   {"group_decay", c.tifu.group_decay},
                   {"alpha", c.tifu.alpha},
                   {"neighbors", c.tifu.neighbors}};
  j["ks"] = c.ks;
  j["repetitions"] = c.repetitions;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Strict conversion: every key must be known, every value well-typed.
inline ExperimentConfig experiment_from_json(const json& j) {
  using detail::get;
  detail::require_keys(j, "config", {"name", "dataset", "preprocess", "split", "model", "train", "finetune", "label_mode", "baseline", "ks",
                                     "repetitions", "seed", "output_dir"});
  ExperimentConfig c;
  c.name = get<std::string>(j, "config", "name");

  const json& d = j.at("dataset");
  detail::require_keys(d, "dataset", {"kind", "path", "seed", "synthetic"});
  c.dataset.kind = get<std::string>(d, "dataset", "kind");
  c.dataset.path = get<std::string>(d, "dataset", "path");
  c.dataset.seed = get<std::uint64_t>(d, "dataset", "seed");
  const json& s = d.at("synthetic");
  detail::require_keys(s, "dataset.synthetic", {"num_users", "vocab_size", "num_clusters", "clusters_per_user", "min_baskets", "max_baskets",
                                                "min_basket_size", "max_basket_size", "repeat_prob", "cluster_purity", "popularity_skew"});
  auto& p = c.dataset.synthetic;
  const std::string sw = "dataset.synthetic";
  p.num_users = get<std::size_t>(s, sw, "num_users");
  p.vocab_size = get<std::size_t>(s, sw, "vocab_size");
  p.num_clusters = get<std::size_t>(s, sw, "num_clusters");
  p.clusters_per_user = get<std::size_t>(s, sw, "clusters_per_user");
  p.min_baskets = get<std::size_t>(s, sw, "min_baskets");
  p.max_baskets = get<std::size_t>(s, sw, "max_baskets");
  p.min_basket_size = get<std::size_t>(s, sw, "min_basket_size");
  p.max_basket_size = get<std::size_t>(s, sw, "max_basket_size");
  p.repeat_prob = get<double>(s, sw, "repeat_prob");
  p.cluster_purity = get<double>(s, sw, "cluster_purity");
  p.popularity_skew = get<double>(s, sw, "popularity_skew");

  const json& pp = j.at("preprocess");
  detail::require_keys(pp, "preprocess", {"min_baskets", "max_baskets", "min_item_frequency"});
  c.preprocess.min_baskets = get<std::size_t>(pp, "preprocess", "min_baskets");
  c.preprocess.max_baskets = get<std::size_t>(pp, "preprocess", "max_baskets");
  c.preprocess.min_item_frequency = get<std::size_t>(pp, "preprocess", "min_item_frequency");

  const json& sp = j.at("split");
  detail::require_keys(sp, "split", {"train_fraction", "test_fraction", "validation_fraction_of_train"});
  c.split.train_fraction = get<double>(sp, "split", "train_fraction");
  c.split.test_fraction = get<double>(sp, "split", "test_fraction");
  c.split.validation_fraction_of_train = get<double>(sp, "split", "validation_fraction_of_train");

  const json& m = j.at("model");
  detail::require_keys(m, "model", {"embed_dim", "layers", "heads", "max_positions", "max_len", "dropout"});
  c.model.embed_dim = get<std::size_t>(m, "model", "embed_dim");
  c.model.layers = get<std::size_t>(m, "model", "layers");
  c.model.heads = get<std::size_t>(m, "model", "heads");
  c.model.max_positions = get<std::size_t>(m, "model", "max_positions");
  c.model.max_len = get<std::size_t>(m, "model", "max_len");
  c.model.dropout = get<double>(m, "model", "dropout");

  c.train = detail::train_from_json(j.at("train"), "train");
  if (!j.at("finetune").is_null()) c.finetune = detail::train_from_json(j.at("finetune"), "finetune");
  c.label_mode = parse_label_mode(get<std::string>(j, "config", "label_mode"));

  const json& b = j.at("baseline");
  detail::require_keys(b, "baseline", {"method", "group_size", "within_decay", "group_decay", "alpha", "neighbors"});
  c.baseline = parse_baseline(get<std::string>(b, "baseline", "method"));
  c.tifu.group_size = get<std::size_t>(b, "baseline", "group_size");
  c.tifu.within_decay = get<double>(b, "baseline", "within_decay");
  c.tifu.group_decay = get<double>(b, "baseline", "group_decay");
  c.tifu.alpha = get<double>(b, "baseline", "alpha");
  c.tifu.neighbors = get<std::size_t>(b, "baseline", "neighbors");

  c.ks = get<std::vector<std::size_t>>(j, "config", "ks");
  c.repetitions = get<std::size_t>(j, "config", "repetitions");
  c.seed = get<std::uint64_t>(j, "config", "seed");
  c.output_dir = get<std::string>(j, "config", "output_dir");
  c.validate();
  return c;
}

/// Defaults with item-select masking (ratio 0.3) and the G-TopFreq baseline.
inline ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.train.mask = {MaskStrategy::item_select, 0.3};
  return c;
}

/// Applies `a.b.c=value` to a JSON config. The value is parsed as JSON when
/// possible (numbers, booleans, null, arrays) and taken as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &j;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    // A null finetune block is filled from the train block with basket-all
    // masking before a field of it is set.
    if (node->is_null() && i == 1 && parts[0] == "finetune") {
      *node = j.at("train");
      (*node)["strategy"] = "basket_all";
      (*node)["mask_ratio"] = nullptr;
      (*node)["swap_ratio"] = 0.0;
    }
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  *node = value;
}

/// Precedence: built-in defaults < config file < overrides (in order).
inline ExperimentConfig load_experiment(const std::optional<std::string>& path, const std::vector<std::string>& overrides = {}) {
  json j = to_json(default_experiment());
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + *path + "'");
    json file;
    try {
      file = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + *path + "': " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    // Reject typos before merging so they cannot silently vanish.
    json probe = j;
    probe.merge_patch(file);
    experiment_from_json(probe);
    j = probe;
  }
  for (const auto& o : overrides) apply_override(j, o);
  return experiment_from_json(j);
}

/// Hash of everything that influences results (the output directory does not).
inline std::string config_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

/// Hash of the dataset and preprocessing sections only; prepared data is
/// reusable across configs that share it.
inline std::string data_hash(const ExperimentConfig& c) {
  json j = to_json(c);
  return hex64(fnv1a(json{{"dataset", j["dataset"]}, {"preprocess", j["preprocess"]}}.dump()));
}

inline std::string resolve_data_path(const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return (fs::path(root) / path).string();
  return path;
}

// ---------------------------------------------------------------------------
// Files

inline void atomic_write(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

struct Layout {
  fs::path root;
  fs::path data() const { return root / "data"; }
  fs::path corpus() const { return data() / "corpus.tsv"; }
  fs::path id_map() const { return data() / "id_map.tsv"; }
  fs::path stats() const { return data() / "stats.json"; }
  fs::path train_dir(std::size_t rep) const { return root / "train" / ("rep" + std::to_string(rep)); }
  fs::path checkpoint(std::size_t rep) const { return train_dir(rep) / "model.ckpt"; }
  fs::path metrics_log(std::size_t rep) const { return train_dir(rep) / "metrics.jsonl"; }
  fs::path results() const { return root / "results"; }
  fs::path sweep() const { return root / "sweep"; }
};

inline json stats_to_json(const CorpusStats& s) {
  return {{"num_items", s.num_items},
          {"num_users", s.num_users},
          {"avg_basket_size", s.avg_basket_size},
          {"avg_baskets_per_user", s.avg_baskets_per_user},
          {"repeat_ratio", s.repeat_ratio},
          {"explore_ratio", s.explore_ratio}};
}

// ---------------------------------------------------------------------------
// Pipeline pieces

inline Corpus build_corpus(const ExperimentConfig& c) {
  Corpus raw;
  if (c.dataset.kind == "synthetic") {
    raw = generate_synthetic(c.dataset.synthetic, c.dataset.seed);
  } else {
    TransactionSchema schema = c.dataset.kind == "tafeng" ? tafeng_schema() : c.dataset.kind == "dunnhumby" ? dunnhumby_schema() : instacart_schema();
    raw = load_transactions(resolve_data_path(c.dataset.path), schema);
  }
  return preprocess(std::move(raw), c.preprocess);
}

inline Corpus load_prepared(const ExperimentConfig& c) {
  Layout L{c.output_dir};
  if (!fs::exists(L.stats())) throw ConfigError("no prepared data in '" + L.data().string() + "'; run `prepare` first");
  json stats = read_json(L.stats());
  if (stats.value("data_hash", "") != data_hash(c)) throw ConfigError("prepared data does not match the dataset/preprocess config; rerun `prepare --force`");
  std::ifstream in(L.corpus());
  Corpus corpus = read_corpus(in, stats.at("vocab_size").get<std::size_t>(), L.corpus().string());
  std::ifstream names(L.id_map());
  corpus.item_names = read_id_map(names);
  validate(corpus);
  return corpus;
}

inline CorpusSplit repetition_split(const Corpus& corpus, const ExperimentConfig& c, std::size_t rep) {
  SplitSpec s = c.split;
  s.seed = c.repetition_seed(rep);
  return split_users(corpus, s);
}

inline ModelConfig model_for(const ExperimentConfig& c, const Corpus& corpus) {
  ModelConfig m = c.model;
  m.vocab_size = corpus.vocab_size;
  return m;
}

inline TrainConfig seeded(TrainConfig t, std::uint64_t seed) {
  t.seed = seed;
  return t;
}

/// Trains one repetition (single strategy or joint) on the label-mode
/// adjusted training split.
inline TrainResult train_repetition(const ExperimentConfig& c, const Corpus& corpus, const CorpusSplit& split, std::size_t rep,
                                    const EpochCallback& on_epoch = {}) {
  const ModelConfig mc = model_for(c, corpus);
  const Corpus train_corpus = apply_label_mode(split.train, c.label_mode).corpus;
  const std::uint64_t seed = c.repetition_seed(rep);
  if (c.finetune) return joint_train(train_corpus, split.validation, mc, seeded(c.train, seed), seeded(*c.finetune, seed), on_epoch);
  return train(train_corpus, split.validation, mc, seeded(c.train, seed), on_epoch);
}

inline json eval_to_json(const EvalResult& r, bool per_user = true) {
  json recall = json::object(), ndcg = json::object();
  for (std::size_t j = 0; j < r.ks.size(); ++j) {
    recall[std::to_string(r.ks[j])] = r.recall[j];
    ndcg[std::to_string(r.ks[j])] = r.ndcg[j];
  }
  json out{{"recall", recall},
           {"ndcg", ndcg},
           {"evaluated_users", r.evaluated_users},
           {"skipped_no_novel_target", r.skipped_no_novel_target},
           {"skipped_short_history", r.skipped_short_history}};
  if (per_user) {
    json users = json::array();
    for (const auto& u : r.users) users.push_back({{"user", u.user_id}, {"recall", u.recall}, {"ndcg", u.ndcg}});
    out["per_user"] = users;
  }
  return out;
}

/// Mean over repetitions of each metric@K.
inline json mean_of_repetitions(const json& reps, const std::vector<std::size_t>& ks) {
  json mean{{"recall", json::object()}, {"ndcg", json::object()}};
  for (const char* metric : {"recall", "ndcg"}) {
    for (auto k : ks) {
      double s = 0.0;
      for (const auto& r : reps) s += r.at(metric).at(std::to_string(k)).get<double>();
      mean[metric][std::to_string(k)] = s / static_cast<double>(reps.size());
    }
  }
  return mean;
}

inline std::string run_name(const ExperimentConfig& c) {
  std::string s = "btbr-" + to_string(c.train.mask.strategy);
  if (c.finetune) s = "btbr-joint-" + to_string(c.train.mask.strategy) + "+" + to_string(c.finetune->mask.strategy);
  if (c.train.swap.enabled()) s += "-swap";
  return s + "-" + to_string(c.label_mode);
}

inline json result_document(const ExperimentConfig& c, const std::string& run, const std::string& method, json reps) {
  json doc{{"run", run},
           {"method", method},
           {"label_mode", to_string(c.label_mode)},
           {"config_hash", config_hash(c)},
           {"ks", c.ks},
           {"repetitions", reps}};
  doc["mean"] = mean_of_repetitions(doc["repetitions"], c.ks);
  return doc;
}

// ---------------------------------------------------------------------------
// Commands

struct CommandOutput {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

inline void cmd_prepare(const ExperimentConfig& c, bool force, CommandOutput io = {}) {
  Layout L{c.output_dir};
  if (fs::exists(L.stats()) && !force) throw ConfigError("'" + L.data().string() + "' already holds prepared data; pass --force to overwrite");
  Corpus corpus = build_corpus(c);
  std::ostringstream corpus_text, id_text;
  write_corpus(corpus_text, corpus);
  write_id_map(id_text, corpus);
  atomic_write(L.corpus(), corpus_text.str());
  atomic_write(L.id_map(), id_text.str());
  json stats = stats_to_json(corpus_stats(corpus));
  stats["vocab_size"] = corpus.vocab_size;
  stats["config_hash"] = config_hash(c);
  stats["data_hash"] = data_hash(c);
  atomic_write(L.stats(), stats.dump(2) + "\n");
  io.out << "prepared " << corpus.users.size() << " users, " << corpus.vocab_size << " items -> " << L.data().string() << "\n";
}

inline json metrics_line(const EpochRecord& e, const std::string& hash) {
  return {{"epoch", e.epoch}, {"phase", e.phase}, {"loss", e.loss}, {"labels", e.labels}, {"val_recall10", e.val_recall10},
          {"val_ndcg10", e.val_ndcg10}, {"config_hash", hash}};
}

/// Trains every repetition (or only `only_rep`) and writes checkpoint,
/// metrics log (deterministic, no wall-clock) and a timing file.
inline void cmd_train(const ExperimentConfig& c, std::optional<std::size_t> only_rep = std::nullopt, CommandOutput io = {}) {
  Layout L{c.output_dir};
  const Corpus corpus = load_prepared(c);
  const std::string hash = config_hash(c);
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    if (only_rep && *only_rep != rep) continue;
    const CorpusSplit split = repetition_split(corpus, c, rep);
    std::ostringstream log, timing;
    TrainResult r = train_repetition(c, corpus, split, rep, [&](const EpochRecord& e, const Parameters&, bool best) {
      log << metrics_line(e, hash).dump() << "\n";
      timing << e.epoch << "\t" << e.seconds << "\n";
      io.out << "rep " << rep << " epoch " << e.epoch << " [" << e.phase << "] loss " << e.loss << " val_recall@10 " << e.val_recall10
             << (best ? " *" : "") << "\n";
    });
    Checkpoint ck{model_for(c, corpus), std::move(r.params), c.repetition_seed(rep),
                  {{"config_hash", hash},
                   {"best_epoch", r.history.best_epoch},
                   {"phase_boundary", r.history.phase_boundary},
                   {"run", run_name(c)}}};
    fs::create_directories(L.train_dir(rep));
    save_checkpoint(L.checkpoint(rep).string(), ck);
    atomic_write(L.metrics_log(rep), log.str());
    atomic_write(L.train_dir(rep) / "timing.tsv", timing.str());
  }
}

inline json evaluate_checkpoints(const ExperimentConfig& c, const Corpus& corpus) {
  Layout L{c.output_dir};
  json reps = json::array();
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    if (!fs::exists(L.checkpoint(rep))) throw ConfigError("missing checkpoint '" + L.checkpoint(rep).string() + "'; run `train` first");
    Checkpoint ck = load_checkpoint(L.checkpoint(rep).string(), corpus.vocab_size);
    const CorpusSplit split = repetition_split(corpus, c, rep);
    json r = eval_to_json(evaluate_model(ck.params, ck.config, split.test, c.ks));
    r["repetition"] = rep;
    r["seed"] = c.repetition_seed(rep);
    r["best_epoch"] = ck.metadata.value("best_epoch", 0);
    reps.push_back(r);
  }
  return reps;
}

inline void print_summary(std::ostream& out, const json& doc) {
  out << doc["run"].get<std::string>();
  for (const auto& [k, v] : doc["mean"]["recall"].items()) out << "  recall@" << k << " " << v.get<double>();
  for (const auto& [k, v] : doc["mean"]["ndcg"].items()) out << "  ndcg@" << k << " " << v.get<double>();
  out << "\n";
}

inline fs::path cmd_evaluate(const ExperimentConfig& c, CommandOutput io = {}) {
  const Corpus corpus = load_prepared(c);
  json doc = result_document(c, run_name(c), "btbr", evaluate_checkpoints(c, corpus));
  const fs::path path = Layout{c.output_dir}.results() / (run_name(c) + ".json");
  atomic_write(path, doc.dump(1) + "\n");
  print_summary(io.out, doc);
  return path;
}

inline fs::path cmd_baseline(const ExperimentConfig& c, CommandOutput io = {}) {
  const Corpus corpus = load_prepared(c);
  json reps = json::array();
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    const CorpusSplit split = repetition_split(corpus, c, rep);
    Recommender rec = make_baseline(c.baseline, split.train, c.label_mode, c.tifu);
    json r = eval_to_json(evaluate(rec, split.test, c.ks));
    r["repetition"] = rep;
    r["seed"] = c.repetition_seed(rep);
    reps.push_back(r);
  }
  const std::string name = to_string(c.baseline) + "-" + to_string(c.label_mode);
  json doc = result_document(c, name, to_string(c.baseline), reps);
  const fs::path path = Layout{c.output_dir}.results() / (name + ".json");
  atomic_write(path, doc.dump(1) + "\n");
  print_summary(io.out, doc);
  return path;
}

// ---------------------------------------------------------------------------
// Sweep

struct GridAxis {
  std::string key;
  std::vector<json> values;
};

/// Parses `key=v1,v2,...`.
inline GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) throw ConfigError("grid axis must look like key=v1,v2: '" + spec + "'");
  GridAxis axis{spec.substr(0, eq), {}};
  std::stringstream values(spec.substr(eq + 1));
  std::string v;
  while (std::getline(values, v, ',')) {
    try {
      axis.values.push_back(json::parse(v));
    } catch (const json::parse_error&) {
      axis.values.push_back(v);
    }
  }
  return axis;
}

/// Cross product in row-major order (last axis fastest).
inline std::vector<std::vector<std::pair<std::string, json>>> grid_cells(const std::vector<GridAxis>& axes) {
  std::vector<std::vector<std::pair<std::string, json>>> cells{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) throw ConfigError("grid axis '" + axis.key + "' has no values");
    std::vector<std::vector<std::pair<std::string, json>>> next;
    for (const auto& cell : cells)
      for (const auto& v : axis.values) {
        auto c = cell;
        c.emplace_back(axis.key, v);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  return cells;
}

inline std::string cell_id(const std::vector<std::pair<std::string, json>>& cell) {
  json j = json::array();
  for (const auto& [k, v] : cell) j.push_back({k, v});
  return "cell-" + hex64(fnv1a(j.dump()));
}

/// Trains and evaluates one configuration in memory over all repetitions.
inline json run_cell(const ExperimentConfig& c, const Corpus& corpus) {
  json reps = json::array();
  for (std::size_t rep = 0; rep < c.repetitions; ++rep) {
    const CorpusSplit split = repetition_split(corpus, c, rep);
    TrainResult r = train_repetition(c, corpus, split, rep);
    json e = eval_to_json(evaluate_model(r.params, model_for(c, corpus), split.test, c.ks));
    e["repetition"] = rep;
    e["seed"] = c.repetition_seed(rep);
    e["best_epoch"] = r.history.best_epoch;
    reps.push_back(e);
  }
  return result_document(c, run_name(c), "btbr", reps);
}

struct SweepSummary {
  std::size_t total = 0;
  std::size_t completed = 0;  // by this invocation
  std::size_t skipped = 0;    // already done
  std::size_t failed = 0;
  bool interrupted = false;
};

inline std::string format_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

/// Runs the grid cross product. Completed cells (result file present with a
/// matching config hash) are skipped, so an interrupted sweep resumes where it
/// stopped. Each cell is written atomically; the manifest lists finished
/// cells. Failures are recorded in the cell file and do not stop the sweep.
/// `max_new_cells` bounds the work done by this call (0 = unbounded).
inline SweepSummary cmd_sweep(const ExperimentConfig& base, const std::vector<GridAxis>& axes, std::size_t max_new_cells = 0,
                              CommandOutput io = {}) {
  if (axes.empty()) throw ConfigError("sweep needs at least one --grid axis");
  Layout L{base.output_dir};
  const Corpus corpus = load_prepared(base);
  const json base_json = to_json(base);
  auto cells = grid_cells(axes);
  // Validate every cell before any compute.
  std::vector<ExperimentConfig> configs;
  for (const auto& cell : cells) {
    json j = base_json;
    for (const auto& [k, v] : cell) apply_override(j, k + "=" + v.dump());
    configs.push_back(experiment_from_json(j));
    if (data_hash(configs.back()) != data_hash(base)) throw ConfigError("sweep axes may not change the dataset or preprocessing");
  }

  SweepSummary summary;
  summary.total = cells.size();
  const fs::path cell_dir = L.sweep() / "cells";
  json manifest{{"config_hash", config_hash(base)}, {"axes", json::array()}, {"cells", json::array()}};
  for (const auto& a : axes) manifest["axes"].push_back({{"key", a.key}, {"values", a.values}});

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const std::string id = cell_id(cells[i]);
    const fs::path file = cell_dir / (id + ".json");
    const std::string hash = config_hash(configs[i]);
    bool done = false;
    if (fs::exists(file)) {
      json existing = read_json(file);
      done = existing.value("config_hash", "") == hash && existing.value("status", "") == "ok";
    }
    if (done) {
      ++summary.skipped;
    } else {
      if (max_new_cells && summary.completed + summary.failed >= max_new_cells) {
        summary.interrupted = true;
        break;
      }
      json params = json::object();
      for (const auto& [k, v] : cells[i]) params[k] = v;
      json doc;
      try {
        doc = run_cell(configs[i], corpus);
        doc["status"] = "ok";
        ++summary.completed;
      } catch (const std::exception& e) {
        doc = {{"status", "failed"}, {"error", e.what()}, {"config_hash", hash}};
        ++summary.failed;
        io.err << "cell " << id << " failed: " << e.what() << "\n";
      }
      doc["cell"] = id;
      doc["params"] = params;
      atomic_write(file, doc.dump(1) + "\n");
      io.out << "cell " << (i + 1) << "/" << cells.size() << " " << params.dump() << " -> " << doc["status"].get<std::string>() << "\n";
    }
    if (read_json(file).value("status", "") == "ok") manifest["cells"].push_back(id);
    atomic_write(L.sweep() / "manifest.json", manifest.dump(1) + "\n");
  }
  if (summary.interrupted) return summary;

  // The table is rebuilt from cell files alone, so fresh and resumed sweeps
  // produce the same bytes.
  std::ostringstream table;
  for (const auto& a : axes) table << a.key << "\t";
  table << "status";
  for (auto k : base.ks) table << "\trecall@" << k;
  for (auto k : base.ks) table << "\tndcg@" << k;
  table << "\n";
  for (const auto& cell : cells) {
    json doc = read_json(cell_dir / (cell_id(cell) + ".json"));
    for (const auto& [k, v] : cell) table << (v.is_string() ? v.get<std::string>() : v.dump()) << "\t";
    table << doc["status"].get<std::string>();
    for (const char* metric : {"recall", "ndcg"})
      for (auto k : base.ks) {
        table << "\t";
        if (doc["status"] == "ok") table << format_number(doc["mean"][metric][std::to_string(k)].get<double>());
      }
    table << "\n";
  }
  atomic_write(L.sweep() / "table.tsv", table.str());
  return summary;
}

// ---------------------------------------------------------------------------
// Report

struct Significance {
  char marker = ' ';  // '+' better, '-' worse, ' ' none
  std::vector<double> p_values;
};

/// Per-repetition paired t-tests on per-user values against the reference.
/// A marker is given when a majority of repetitions are significant
/// (p < 0.05) and the mean of means points the same way.
inline Significance compare_runs(const json& run, const json& reference, const std::string& metric, std::size_t k) {
  Significance s;
  const auto& a = run.at("repetitions");
  const auto& b = reference.at("repetitions");
  if (a.size() != b.size()) throw EvaluationError("runs have different repetition counts");
  const auto& ks = run.at("ks");
  const auto col = static_cast<std::size_t>(std::find(ks.begin(), ks.end(), k) - ks.begin());
  std::size_t significant = 0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    std::map<std::string, double> ref;
    for (const auto& u : b[r].at("per_user")) ref[u.at("user").get<std::string>()] = u.at(metric)[col].get<double>();
    std::vector<double> x, y;
    for (const auto& u : a[r].at("per_user")) {
      auto it = ref.find(u.at("user").get<std::string>());
      if (it == ref.end()) throw EvaluationError("runs were evaluated on different users");
      x.push_back(u.at(metric)[col].get<double>());
      y.push_back(it->second);
    }
    const double p = paired_t_test(x, y);
    s.p_values.push_back(p);
    significant += p < 0.05;
  }
  const double ma = run.at("mean").at(metric).at(std::to_string(k)).get<double>();
  const double mb = reference.at("mean").at(metric).at(std::to_string(k)).get<double>();
  if (2 * significant > a.size() && ma != mb) s.marker = ma > mb ? '+' : '-';
  return s;
}

inline std::string fixed4(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

/// Writes report.md (comparison table), report.tsv (full-precision means),
/// heatmap_<metric>@K.tsv for two-axis sweeps and curves.tsv from training
/// logs. Returns the path of report.md.
inline fs::path cmd_report(const fs::path& root, const std::optional<std::string>& reference, CommandOutput io = {}) {
  Layout L{root};
  std::vector<json> runs;
  if (fs::exists(L.results())) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(L.results()))
      if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) runs.push_back(read_json(f));
  }
  std::ostringstream md, tsv;
  md << "# Results: " << root.filename().string() << "\n\n";
  const json* ref = nullptr;
  if (reference) {
    for (const auto& r : runs)
      if (r["run"] == *reference) ref = &r;
    if (!ref) io.err << "warning: reference run '" << *reference << "' not found; significance column omitted\n";
  }
  if (!runs.empty()) {
    const auto ks = runs.front()["ks"].get<std::vector<std::size_t>>();
    md << "| run | config |";
    tsv << "run\tconfig_hash";
    for (const char* metric : {"Recall", "nDCG"})
      for (auto k : ks) {
        md << " " << metric << "@" << k << " |";
        tsv << "\t" << (metric[0] == 'R' ? "recall" : "ndcg") << "@" << k;
      }
    md << "\n|---|---|";
    for (std::size_t i = 0; i < 2 * ks.size(); ++i) md << "---|";
    md << "\n";
    tsv << "\n";
    for (const auto& r : runs) {
      if (r["ks"].get<std::vector<std::size_t>>() != ks) {
        io.err << "warning: run '" << r["run"].get<std::string>() << "' uses different K values; skipped\n";
        continue;
      }
      md << "| " << r["run"].get<std::string>() << (ref == &r ? " (reference)" : "") << " | " << r["config_hash"].get<std::string>() << " |";
      tsv << r["run"].get<std::string>() << "\t" << r["config_hash"].get<std::string>();
      for (const char* metric : {"recall", "ndcg"})
        for (auto k : ks) {
          const double v = r["mean"][metric][std::to_string(k)].get<double>();
          md << " " << fixed4(v);
          if (ref && ref != &r) {
            const char m = compare_runs(r, *ref, metric, k).marker;
            md << (m == '+' ? " ↑" : m == '-' ? " ↓" : "");
          }
          md << " |";
          tsv << "\t" << format_number(v);
        }
      md << "\n";
      tsv << "\n";
    }
    if (ref) md << "\n↑/↓: significantly better/worse than the reference (paired t-test, p < 0.05 in most repetitions).\n";
    md << "\nMeans over " << runs.front()["repetitions"].size() << " repetitions.\n";
  } else {
    md << "No result files.\n";
  }

  // Heatmaps for two-axis sweeps.
  if (fs::exists(L.sweep() / "manifest.json") && fs::exists(L.sweep() / "table.tsv")) {
    json manifest = read_json(L.sweep() / "manifest.json");
    const auto& axes = manifest["axes"];
    if (axes.size() == 2) {
      std::vector<std::size_t> ks;
      std::ifstream table(L.sweep() / "table.tsv");
      std::string header;
      std::getline(table, header);
      std::vector<std::string> cols;
      std::stringstream hs(header);
      for (std::string c; std::getline(hs, c, '\t');) cols.push_back(c);
      std::vector<std::vector<std::string>> rows;
      for (std::string line; std::getline(table, line);) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, '\t');) f.push_back(c);
        f.resize(cols.size());
        rows.push_back(f);
      }
      const auto nx = axes[0]["values"].size(), ny = axes[1]["values"].size();
      for (std::size_t c = 3; c < cols.size(); ++c) {
        std::ostringstream grid;
        grid << axes[0]["key"].get<std::string>() << "\\" << axes[1]["key"].get<std::string>();
        for (const auto& v : axes[1]["values"]) grid << "\t" << (v.is_string() ? v.get<std::string>() : v.dump());
        grid << "\n";
        for (std::size_t x = 0; x < nx; ++x) {
          const auto& v = axes[0]["values"][x];
          grid << (v.is_string() ? v.get<std::string>() : v.dump());
          for (std::size_t y = 0; y < ny; ++y) grid << "\t" << rows[x * ny + y][c];
          grid << "\n";
        }
        atomic_write(root / ("heatmap_" + cols[c] + ".tsv"), grid.str());
      }
      md << "\nSweep heatmaps: heatmap_<metric>@K.tsv (rows " << axes[0]["key"].get<std::string>() << ", columns "
         << axes[1]["key"].get<std::string>() << ").\n";
    }
  }

  // Training-dynamics curves.
  if (fs::exists(root / "train")) {
    std::ostringstream curves;
    curves << "repetition\tepoch\tphase\tloss\tval_recall10\tval_ndcg10\n";
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root / "train")) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      std::ifstream log(d / "metrics.jsonl");
      for (std::string line; std::getline(log, line);) {
        json e = json::parse(line);
        curves << d.filename().string() << "\t" << e["epoch"].get<std::size_t>() << "\t" << e["phase"].get<std::string>() << "\t"
               << format_number(e["loss"].get<double>()) << "\t" << format_number(e["val_recall10"].get<double>()) << "\t"
               << format_number(e["val_ndcg10"].get<double>()) << "\n";
      }
    }
    atomic_write(root / "curves.tsv", curves.str());
    md << "\nTraining curves: curves.tsv.\n";
  }

  atomic_write(root / "report.tsv", tsv.str());
  atomic_write(root / "report.md", md.str());
  io.out << "wrote " << (root / "report.md").string() << "\n";
  return root / "report.md";
}

}  // namespace nnbr
