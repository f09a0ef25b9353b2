#pragma once

// Loss, Adam training with early stopping, the pretrain/finetune schedule and
// the finite-difference gradient check.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "nnbr/augmentation.hpp"
#include "nnbr/core.hpp"
#include "nnbr/data.hpp"
#include "nnbr/evaluation.hpp"
#include "nnbr/model.hpp"

namespace nnbr {

/// Mean negative log-likelihood of the labels; row r of log_probs belongs to
/// labels[r] (items are 1-based).
inline double nll_loss(const std::vector<RowVector>& log_probs, const std::vector<ItemId>& labels) {
  if (labels.empty()) throw Error("nll_loss: empty label set");
  if (log_probs.size() != labels.size()) throw Error("nll_loss: one log-probability row per label is required");
  double sum = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) sum -= log_probs[r](labels[r] - 1);
  return sum / static_cast<double>(labels.size());
}

struct TrainConfig {
  MaskConfig mask;
  SwapConfig swap;
  double learning_rate = 0.001;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 5;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    mask.validate();
    swap.validate();
    if (swap.enabled() && !is_item_level(mask.strategy)) throw ConfigError("swapping is only allowed with item-level masking");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, continues across phases
  std::string phase;
  double loss = 0.0;
  std::size_t labels = 0;
  double val_recall10 = 0.0;
  double val_ndcg10 = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;      // epoch number of the returned parameters
  std::size_t phase_boundary = 0;  // pretrain best epoch for joint runs

  const EpochRecord& best() const {
    for (const auto& e : epochs)
      if (e.epoch == best_epoch) return e;
    throw Error("history has no best epoch");
  }
};

struct TrainResult {
  Parameters params;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&, const Parameters&, bool is_best)>;

class Adam {
 public:
  explicit Adam(const ModelConfig& config) : m_(zero_parameters(config)), v_(zero_parameters(config)) {}

  void step(Parameters& params, const Parameters& grad, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto p = tensor_views(params);
    auto g = tensor_views(grad);
    auto m = tensor_views(m_);
    auto v = tensor_views(v_);
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k].size; ++i) {
        const double gi = g[k].data[i];
        m[k].data[i] = kBeta1 * m[k].data[i] + (1.0 - kBeta1) * gi;
        v[k].data[i] = kBeta2 * v[k].data[i] + (1.0 - kBeta2) * gi * gi;
        p[k].data[i] -= lr * (m[k].data[i] / c1) / (std::sqrt(v[k].data[i] / c2) + kEps);
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  Parameters m_, v_;
  std::size_t t_ = 0;
};

inline double global_norm(const Parameters& grad) {
  double s = 0.0;
  for (const auto& t : tensor_views(grad))
    for (std::size_t i = 0; i < t.size; ++i) s += t.data[i] * t.data[i];
  return std::sqrt(s);
}

inline void scale(Parameters& p, double factor) {
  for (auto& t : tensor_views(p))
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] *= factor;
}

/// Throws if a training sample breaks the masking contract: labels sit exactly
/// on mask tokens, padding is never labelled, and at least one label exists.
inline void check_sample_invariants(const MaskedSample& s, ItemId mask_id) {
  if (s.labels.empty()) throw Error("sample without labels");
  if (s.basket_indices.size() != s.size() || s.pad_mask.size() != s.size()) throw Error("sample arrays differ in length");
  std::vector<char> labelled(s.size(), 0);
  for (const auto& l : s.labels) {
    if (l.position >= s.size()) throw Error("label position out of range");
    if (!s.pad_mask[l.position]) throw Error("label on a padding position");
    if (s.input_ids[l.position] != mask_id) throw Error("label on an unmasked position");
    if (l.item < 1 || l.item >= mask_id) throw Error("label is not a real item");
    labelled[l.position] = 1;
  }
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (s.input_ids[k] == mask_id && !labelled[k]) throw Error("masked position without label");
    if (!s.pad_mask[k] && (s.input_ids[k] != kPadId || s.basket_indices[k] != 0)) throw Error("malformed padding");
  }
}

namespace detail {

inline MaskedSample item_level_sample(const UserSequence& user, const TrainConfig& cfg, const ModelConfig& mc, Rng& rng) {
  FlattenedSequence flat = flatten(user);
  if (cfg.swap.enabled()) flat = swap_items(flat, cfg.swap, rng);
  flat = truncate(flat, mc.max_len);
  auto s = apply_mask(flat, cfg.mask, mask_token(mc.vocab_size), rng);
  return truncate_pad(*s, mc.max_len);
}

}  // namespace detail

/// Options for continuing from existing parameters (used by joint training).
struct TrainStart {
  const Parameters* initial = nullptr;
  std::string phase = "train";
  std::size_t first_epoch = 1;
  std::optional<double> best_recall;  // validation score to beat
};

/// Mini-batch Adam on the masked-item objective with early stopping on
/// validation Recall@10. Item-level strategies redraw masks every epoch;
/// basket-level strategies use one fixed sample per user. Returns the
/// parameters of the best validation epoch.
inline TrainResult train(const Corpus& train_corpus, const Corpus& val_corpus, const ModelConfig& model_config,
                         const TrainConfig& config, const EpochCallback& on_epoch = {}, const TrainStart& start = {}) {
  model_config.validate();
  config.validate();
  if (train_corpus.users.empty()) throw EmptyCorpusError("empty training corpus");
  if (val_corpus.users.empty()) throw ConfigError("a validation corpus is required for early stopping");
  if (train_corpus.vocab_size != model_config.vocab_size || val_corpus.vocab_size != model_config.vocab_size) {
    throw ConfigError("corpus vocabulary does not match model vocab_size");
  }
  const ItemId mask_id = mask_token(model_config.vocab_size);
  const bool item_level = is_item_level(config.mask.strategy);

  std::vector<std::size_t> eligible;
  std::vector<MaskedSample> fixed(train_corpus.users.size());
  for (std::size_t u = 0; u < train_corpus.users.size(); ++u) {
    if (item_level) {
      eligible.push_back(u);
      continue;
    }
    Rng unused(0);
    auto s = apply_mask(flatten(train_corpus.users[u]), config.mask, mask_id, unused);
    if (!s) continue;
    fixed[u] = truncate_pad(*s, model_config.max_len);
    if (fixed[u].labels.empty()) continue;
    check_sample_invariants(fixed[u], mask_id);
    eligible.push_back(u);
  }
  if (eligible.empty()) throw ConfigError("no trainable sample for strategy " + to_string(config.mask.strategy));

  TrainResult result{start.initial ? *start.initial : init_parameters(model_config, config.seed), {}};
  Parameters params = result.params;
  Adam adam(model_config);
  Parameters grad = zero_parameters(model_config);
  std::optional<double> best = start.best_recall;
  if (best) result.history.best_epoch = start.first_epoch - 1;
  std::size_t stale = 0;

  for (std::size_t e = 0; e < config.max_epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = start.first_epoch + e;
    std::vector<std::size_t> order = eligible;
    Rng shuffle_rng(derive_seed(config.seed, 0x0e90c, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t epoch_labels = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      set_zero(grad);
      double loss = 0.0;
      std::size_t labels = 0;
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k) {
        const std::size_t u = order[k];
        Rng sample_rng(derive_seed(config.seed, 0x5a3b, epoch, u));
        MaskedSample s = item_level ? detail::item_level_sample(train_corpus.users[u], config, model_config, sample_rng) : fixed[u];
        check_sample_invariants(s, mask_id);
        Rng dropout_rng(derive_seed(config.seed, 0xd509, epoch, u));
        loss += sample_nll(s, params, model_config, Mode::train, &dropout_rng, &grad);
        labels += s.labels.size();
      }
      scale(grad, 1.0 / static_cast<double>(labels));
      const double norm = global_norm(grad);
      if (!std::isfinite(norm)) throw NumericError("non-finite gradient", -1);
      if (norm > config.clip_norm) scale(grad, config.clip_norm / norm);
      adam.step(params, grad, config.learning_rate);
      epoch_loss += loss;
      epoch_labels += labels;
    }

    EvalResult val = evaluate_model(params, model_config, val_corpus, {10});
    EpochRecord rec{epoch, start.phase, epoch_loss / static_cast<double>(epoch_labels), epoch_labels, val.recall[0], val.ndcg[0],
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.history.epochs.push_back(rec);
    const bool improved = !best || rec.val_recall10 > *best;
    if (improved) {
      best = rec.val_recall10;
      result.params = params;
      result.history.best_epoch = epoch;
      stale = 0;
    } else {
      ++stale;
    }
    if (on_epoch) on_epoch(rec, params, improved);
    if (stale >= config.patience) break;
  }
  return result;
}

/// Item-level pretraining to its early-stop point, then basket-level
/// finetuning from those parameters with fresh optimizer moments. Early
/// stopping spans both phases: finetuning must beat the pretrain validation
/// score for its parameters to be returned.
inline TrainResult joint_train(const Corpus& train_corpus, const Corpus& val_corpus, const ModelConfig& model_config,
                               const TrainConfig& pretrain, const TrainConfig& finetune, const EpochCallback& on_epoch = {}) {
  if (!is_item_level(pretrain.mask.strategy)) throw ConfigError("joint training pretrains with an item-level strategy");
  if (is_item_level(finetune.mask.strategy)) throw ConfigError("joint training finetunes with a basket-level strategy");
  finetune.validate();
  TrainResult first = train(train_corpus, val_corpus, model_config, pretrain, on_epoch, {nullptr, "pretrain", 1, std::nullopt});
  first.history.phase_boundary = first.history.best_epoch;
  if (finetune.max_epochs == 0) return first;
  const std::size_t next_epoch = first.history.epochs.back().epoch + 1;
  TrainResult second = train(train_corpus, val_corpus, model_config, finetune, on_epoch,
                             {&first.params, "finetune", next_epoch, first.history.best().val_recall10});
  TrainResult out;
  out.history.epochs = first.history.epochs;
  out.history.epochs.insert(out.history.epochs.end(), second.history.epochs.begin(), second.history.epochs.end());
  out.history.phase_boundary = first.history.best_epoch;
  if (second.history.best_epoch >= next_epoch) {
    out.params = std::move(second.params);
    out.history.best_epoch = second.history.best_epoch;
  } else {
    out.params = std::move(first.params);
    out.history.best_epoch = first.history.best_epoch;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::map<std::string, double> group_errors;
};

/// Corrupts the analytic gradient before comparison (negative controls).
using GradientTamper = std::function<void(Parameters&)>;

/// Compares the analytic gradient of the mean NLL on one fixed batch with
/// central differences (step 1e-3) for every scalar parameter. Error per
/// group is ||analytic - numeric|| / max(||analytic||, ||numeric||); groups
/// whose gradients both vanish (norm < 1e-7) report the absolute difference.
inline GradientCheckReport gradient_check(ModelConfig config, std::uint64_t seed = 7, const GradientTamper& tamper = {}) {
  if (config.vocab_size > 8 || config.embed_dim > 4) throw ConfigError("gradient check is meant for tiny models (m <= 8, d <= 4)");
  config.dropout = 0.0;
  config.validate();
  Parameters params = init_parameters(config, seed);
  // Larger weights than the default init so every path carries signal.
  Rng perturb(derive_seed(seed, 0x9c));
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& t : tensor_views(params))
    for (std::size_t i = 0; i < t.size; ++i) t.data[i] += nd(perturb);

  const ItemId mask_id = mask_token(config.vocab_size);
  std::vector<MaskedSample> batch;
  Rng data_rng(derive_seed(seed, 0xba7c));
  std::uniform_int_distribution<ItemId> item(1, static_cast<ItemId>(config.vocab_size));
  for (int s = 0; s < 3; ++s) {
    std::vector<std::vector<ItemId>> baskets;
    for (int b = 0; b < 3; ++b) {
      std::set<ItemId> items;
      while (items.size() < 2) items.insert(item(data_rng));
      baskets.emplace_back(items.begin(), items.end());
    }
    auto flat = flatten(make_sequence("g", baskets));
    batch.push_back(truncate_pad(mask_item_random(flat, 0.4, mask_id, data_rng), config.max_len));
  }
  std::size_t labels = 0;
  for (const auto& s : batch) labels += s.labels.size();
  auto loss = [&](const Parameters& p, Parameters* g) {
    double sum = 0.0;
    for (const auto& s : batch) sum += sample_nll(s, p, config, Mode::eval, nullptr, g);
    return sum / static_cast<double>(labels);
  };

  Parameters analytic = zero_parameters(config);
  loss(params, &analytic);
  scale(analytic, 1.0 / static_cast<double>(labels));
  if (tamper) tamper(analytic);

  constexpr double eps = 1e-3;
  auto pv = tensor_views(params);
  auto av = tensor_views(analytic);
  std::map<std::string, std::pair<double, std::pair<double, double>>> acc;  // group -> (diff^2, (a^2, n^2))
  for (std::size_t k = 0; k < pv.size(); ++k) {
    const std::string group = pv[k].name;
    auto& [diff, norms] = acc[group];
    for (std::size_t i = 0; i < pv[k].size; ++i) {
      const double orig = pv[k].data[i];
      pv[k].data[i] = orig + eps;
      const double up = loss(params, nullptr);
      pv[k].data[i] = orig - eps;
      const double down = loss(params, nullptr);
      pv[k].data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = av[k].data[i];
      diff += (a - numeric) * (a - numeric);
      norms.first += a * a;
      norms.second += numeric * numeric;
    }
  }
  GradientCheckReport report;
  for (const auto& [group, v] : acc) {
    const double scale_norm = std::max(std::sqrt(v.second.first), std::sqrt(v.second.second));
    const double err = scale_norm < 1e-7 ? std::sqrt(v.first) : std::sqrt(v.first) / scale_norm;
    report.group_errors[group] = err;
    report.max_relative_error = std::max(report.max_relative_error, err);
  }
  return report;
}

}  // namespace nnbr
