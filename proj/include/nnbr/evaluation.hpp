#pragma once

// Novel-item metrics and the evaluation harness shared by BTBR and baselines.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nnbr/core.hpp"
#include "nnbr/data.hpp"
#include "nnbr/model.hpp"

namespace nnbr {

namespace detail {

inline void require_truth(const std::vector<ItemId>& truth) {
  if (truth.empty()) throw EvaluationError("ground truth is empty; users without novel targets must be excluded");
}

inline std::vector<ItemId> sorted_copy(std::vector<ItemId> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace detail

/// |top-K(predicted) ∩ truth| / |truth|
inline double recall_at_k(const std::vector<ItemId>& predicted, const std::vector<ItemId>& truth, std::size_t k) {
  detail::require_truth(truth);
  const auto t = detail::sorted_copy(truth);
  const std::size_t n = std::min(k, predicted.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) hits += std::binary_search(t.begin(), t.end(), predicted[r]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(t.size());
}

/// Binary-gain DCG over the first K ranks, normalised by the ideal DCG over
/// min(K, |truth|) ranks.
inline double ndcg_at_k(const std::vector<ItemId>& predicted, const std::vector<ItemId>& truth, std::size_t k) {
  detail::require_truth(truth);
  const auto t = detail::sorted_copy(truth);
  const std::size_t n = std::min(k, predicted.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    if (std::binary_search(t.begin(), t.end(), predicted[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, t.size()); ++r) ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / ideal;
}

struct MetricPair {
  double recall;
  double ndcg;
};

/// Independent re-computation by explicit rank enumeration with linear scans.
/// Rejects duplicate entries in either list.
inline MetricPair metric_oracle(const std::vector<ItemId>& predicted, const std::vector<ItemId>& truth, std::size_t k) {
  for (std::size_t a = 0; a < predicted.size(); ++a)
    for (std::size_t b = a + 1; b < predicted.size(); ++b)
      if (predicted[a] == predicted[b]) throw Error("predicted list contains a duplicate");
  for (std::size_t a = 0; a < truth.size(); ++a)
    for (std::size_t b = a + 1; b < truth.size(); ++b)
      if (truth[a] == truth[b]) throw Error("truth set contains a duplicate");
  if (truth.empty()) throw EvaluationError("empty truth");
  long double found = 0, gain = 0, best = 0;
  std::size_t rank = 1;
  for (ItemId p : predicted) {
    if (rank > k) break;
    bool hit = false;
    for (ItemId t : truth) hit = hit || (t == p);
    if (hit) {
      found += 1;
      gain += 1.0L / std::log2(static_cast<long double>(rank + 1));
    }
    ++rank;
  }
  for (std::size_t r = 1; r <= k && r <= truth.size(); ++r) best += 1.0L / std::log2(static_cast<long double>(r + 1));
  return {static_cast<double>(found / static_cast<long double>(truth.size())), static_cast<double>(gain / best)};
}

/// Two-sided paired t-test on per-user records. Returns p = 1 for identical
/// records and p = 0 when every difference is the same non-zero constant.
inline double paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("paired t-test needs equal-length samples");
  const std::size_t n = a.size();
  if (n < 2) throw Error("paired t-test needs at least two pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) return mean == 0.0 ? 1.0 : 0.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  boost::math::students_t dist(static_cast<double>(n - 1));
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

// ---------------------------------------------------------------------------
// Harness

struct GroundTruth {
  std::string user_id;
  std::vector<Basket> history;
  std::vector<ItemId> target_novel;
};

/// History = all but the final basket, target = final basket minus history.
inline GroundTruth ground_truth(const UserSequence& user, std::size_t vocab_size) {
  if (user.baskets.size() < 2) throw EvaluationError("user '" + user.user_id + "' needs at least two baskets");
  GroundTruth g{user.user_id, {user.baskets.begin(), user.baskets.end() - 1}, {}};
  auto flags = repeat_flags(g.history, vocab_size);
  for (ItemId i : user.baskets.back().items)
    if (!flags[static_cast<std::size_t>(i)]) g.target_novel.push_back(i);
  return g;
}

struct UserRecord {
  std::string user_id;
  std::vector<double> recall;  // parallel to EvalResult::ks
  std::vector<double> ndcg;
};

struct EvalResult {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<double> ndcg;
  std::vector<UserRecord> users;
  std::size_t evaluated_users = 0;
  std::size_t skipped_no_novel_target = 0;
  std::size_t skipped_short_history = 0;

  std::size_t k_index(std::size_t k) const {
    auto it = std::find(ks.begin(), ks.end(), k);
    if (it == ks.end()) throw Error("K=" + std::to_string(k) + " was not evaluated");
    return static_cast<std::size_t>(it - ks.begin());
  }
  double recall_at(std::size_t k) const { return recall[k_index(k)]; }
  double ndcg_at(std::size_t k) const { return ndcg[k_index(k)]; }

  std::vector<double> per_user_recall(std::size_t k) const {
    const auto j = k_index(k);
    std::vector<double> v;
    for (const auto& u : users) v.push_back(u.recall[j]);
    return v;
  }
  std::vector<double> per_user_ndcg(std::size_t k) const {
    const auto j = k_index(k);
    std::vector<double> v;
    for (const auto& u : users) v.push_back(u.ndcg[j]);
    return v;
  }
};

/// A recommender maps (history, K) to a ranked list of at most K items.
using Recommender = std::function<std::vector<ItemId>(const std::vector<Basket>&, std::size_t)>;

/// Evaluates over users whose final basket holds at least one novel item.
/// Every returned list is checked to be free of repeat items and duplicates.
inline EvalResult evaluate(const Recommender& recommend, const Corpus& corpus, const std::vector<std::size_t>& ks) {
  if (ks.empty()) throw Error("empty K list");
  EvalResult res;
  res.ks = ks;
  res.recall.assign(ks.size(), 0.0);
  res.ndcg.assign(ks.size(), 0.0);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  for (const auto& user : corpus.users) {
    if (user.baskets.size() < 2) {
      ++res.skipped_short_history;
      continue;
    }
    GroundTruth g = ground_truth(user, corpus.vocab_size);
    if (g.target_novel.empty()) {
      ++res.skipped_no_novel_target;
      continue;
    }
    std::vector<ItemId> ranked = recommend(g.history, kmax);
    auto flags = repeat_flags(g.history, corpus.vocab_size);
    std::set<ItemId> seen;
    for (ItemId i : ranked) {
      if (i < 1 || static_cast<std::size_t>(i) > corpus.vocab_size) throw EvaluationError("recommended item outside the vocabulary");
      if (flags[static_cast<std::size_t>(i)]) throw EvaluationError("recommendation for '" + user.user_id + "' contains repeat item " + std::to_string(i));
      if (!seen.insert(i).second) throw EvaluationError("recommendation contains a duplicate");
    }
    UserRecord rec{user.user_id, {}, {}};
    for (std::size_t j = 0; j < ks.size(); ++j) {
      rec.recall.push_back(recall_at_k(ranked, g.target_novel, ks[j]));
      rec.ndcg.push_back(ndcg_at_k(ranked, g.target_novel, ks[j]));
    }
    res.users.push_back(std::move(rec));
  }
  if (res.users.empty()) throw EvaluationError("no user with a novel target item");
  res.evaluated_users = res.users.size();
  for (std::size_t j = 0; j < ks.size(); ++j) {
    double r = 0.0, n = 0.0;
    for (const auto& u : res.users) {
      r += u.recall[j];
      n += u.ndcg[j];
    }
    res.recall[j] = r / static_cast<double>(res.users.size());
    res.ndcg[j] = n / static_cast<double>(res.users.size());
  }
  return res;
}

inline Recommender model_recommender(const Parameters& params, const ModelConfig& config) {
  return [&params, config](const std::vector<Basket>& history, std::size_t k) {
    RowVector scores = score_next_basket(history, params, config);
    return topk(restrict_to_novel(std::move(scores), repeat_novel_partition(history, config.vocab_size).repeat_items), k);
  };
}

inline EvalResult evaluate_model(const Parameters& params, const ModelConfig& config, const Corpus& corpus,
                                 const std::vector<std::size_t>& ks) {
  if (corpus.vocab_size != config.vocab_size) throw EvaluationError("corpus vocabulary does not match the model");
  return evaluate(model_recommender(params, config), corpus, ks);
}

}  // namespace nnbr
