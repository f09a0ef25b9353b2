#pragma once

// Non-neural reference recommenders: global popularity and TIFUKNN.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "nnbr/core.hpp"
#include "nnbr/data.hpp"
#include "nnbr/evaluation.hpp"
#include "nnbr/model.hpp"

namespace nnbr {

// ---------------------------------------------------------------------------
// Label modes

enum class LabelMode { all, explore };

inline std::string to_string(LabelMode m) { return m == LabelMode::all ? "all" : "explore"; }

inline LabelMode parse_label_mode(const std::string& s) {
  if (s == "all") return LabelMode::all;
  if (s == "explore") return LabelMode::explore;
  throw ConfigError("unknown label mode '" + s + "'");
}

struct LabelModeResult {
  Corpus corpus;
  // Users whose label basket became empty; their history is kept but they
  // have no supervised target.
  std::vector<std::string> unsupervised_users;
};

/// explore: repeat items are removed from every user's final (label) basket;
/// an emptied label basket is dropped. all: identity.
inline LabelModeResult apply_label_mode(const Corpus& corpus, LabelMode mode) {
  LabelModeResult out{corpus, {}};
  if (mode == LabelMode::all) return out;
  for (auto& user : out.corpus.users) {
    if (user.baskets.size() < 2) throw Error("label modes need at least two baskets for user '" + user.user_id + "'");
    std::vector<Basket> history(user.baskets.begin(), user.baskets.end() - 1);
    auto flags = repeat_flags(history, corpus.vocab_size);
    auto& label = user.baskets.back().items;
    std::erase_if(label, [&](ItemId i) { return flags[static_cast<std::size_t>(i)] != 0; });
    if (label.empty()) {
      user.baskets.pop_back();
      out.unsupervised_users.push_back(user.user_id);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// G-TopFreq

/// Occurrence counts over all baskets (index = item id).
inline std::vector<std::size_t> item_popularity(const Corpus& corpus) {
  std::vector<std::size_t> count(corpus.vocab_size + 1, 0);
  for (const auto& u : corpus.users)
    for (const auto& b : u.baskets)
      for (ItemId i : b.items) ++count[static_cast<std::size_t>(i)];
  return count;
}

/// Most frequent items the user has not bought, ties by ascending id.
inline std::vector<ItemId> g_topfreq(const std::vector<std::size_t>& popularity, const std::vector<Basket>& history, std::size_t k) {
  const std::size_t m = popularity.size() - 1;
  auto flags = repeat_flags(history, m);
  std::vector<ItemId> ids;
  for (std::size_t i = 1; i <= m; ++i)
    if (!flags[i]) ids.push_back(static_cast<ItemId>(i));
  const std::size_t take = std::min(k, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(take), ids.end(), [&](ItemId a, ItemId b) {
    const auto pa = popularity[static_cast<std::size_t>(a)], pb = popularity[static_cast<std::size_t>(b)];
    return pa != pb ? pa > pb : a < b;
  });
  ids.resize(take);
  return ids;
}

inline std::vector<ItemId> g_topfreq(const Corpus& train, const std::vector<Basket>& history, std::size_t k) {
  if (train.users.empty()) throw EmptyCorpusError("G-TopFreq needs a training corpus");
  return g_topfreq(item_popularity(train), history, k);
}

inline Recommender g_topfreq_recommender(const Corpus& train) {
  if (train.users.empty()) throw EmptyCorpusError("G-TopFreq needs a training corpus");
  return [pop = item_popularity(train)](const std::vector<Basket>& history, std::size_t k) { return g_topfreq(pop, history, k); };
}

// ---------------------------------------------------------------------------
// TIFUKNN

struct TifuConfig {
  std::size_t group_size = 7;
  double within_decay = 0.9;  // r_b
  double group_decay = 0.7;   // r_g
  double alpha = 0.7;         // weight of the user's own PIF
  std::size_t neighbors = 300;

  void validate() const {
    if (group_size == 0) throw ConfigError("group_size must be >= 1");
    if (!(within_decay > 0.0 && within_decay <= 1.0) || !(group_decay > 0.0 && group_decay <= 1.0)) {
      throw ConfigError("decay rates must lie in (0,1]");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
    if (neighbors == 0) throw ConfigError("neighbors must be >= 1");
  }
};

/// Sparse PIF vector: sorted (item, weight) pairs.
struct PIFVector {
  std::vector<std::pair<ItemId, double>> entries;
  double squared_norm = 0.0;

  double at(ItemId item) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), item, [](const auto& e, ItemId i) { return e.first < i; });
    return it != entries.end() && it->first == item ? it->second : 0.0;
  }
};

/// Baskets are grouped from the most recent backwards into groups of
/// group_size (the oldest group may be smaller). Inside a group of k baskets
/// basket i (1 = oldest) is weighted r_b^(k-i) and the group averaged; the G
/// groups are weighted r_g^(G-j) and averaged.
inline PIFVector personal_item_frequency(const std::vector<Basket>& baskets, const TifuConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<ItemId, double>> acc;
  const std::size_t n = baskets.size();
  const std::size_t groups = (n + cfg.group_size - 1) / cfg.group_size;
  for (std::size_t j = 0; j < groups; ++j) {  // j = 0 is the most recent group
    const std::size_t end = n - j * cfg.group_size;
    const std::size_t begin = end >= cfg.group_size ? end - cfg.group_size : 0;
    const std::size_t k = end - begin;
    const double gw = std::pow(cfg.group_decay, static_cast<double>(j)) / static_cast<double>(groups);
    for (std::size_t b = begin; b < end; ++b) {
      const double w = gw * std::pow(cfg.within_decay, static_cast<double>(end - 1 - b)) / static_cast<double>(k);
      for (ItemId i : baskets[b].items) acc.emplace_back(i, w);
    }
  }
  std::sort(acc.begin(), acc.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  PIFVector out;
  for (const auto& [i, w] : acc) {
    if (!out.entries.empty() && out.entries.back().first == i)
      out.entries.back().second += w;
    else
      out.entries.emplace_back(i, w);
  }
  for (const auto& e : out.entries) out.squared_norm += e.second * e.second;
  return out;
}

inline double squared_distance(const PIFVector& a, const PIFVector& b) {
  double dot = 0.0;
  auto ia = a.entries.begin(), ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first < ib->first)
      ++ia;
    else if (ib->first < ia->first)
      ++ib;
    else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return std::max(0.0, a.squared_norm + b.squared_norm - 2.0 * dot);
}

class Tifuknn {
 public:
  Tifuknn(const Corpus& train, TifuConfig config) : config_(config), vocab_size_(train.vocab_size) {
    config_.validate();
    if (train.users.empty()) throw EmptyCorpusError("TIFUKNN needs a training corpus");
    for (const auto& u : train.users) pifs_.push_back(personal_item_frequency(u.baskets, config_));
  }

  /// alpha * PIF(user) + (1 - alpha) * mean PIF of the nearest train users.
  RowVector scores(const std::vector<Basket>& history) const {
    if (history.empty()) throw Error("TIFUKNN needs a non-empty history");
    PIFVector self = personal_item_frequency(history, config_);
    RowVector s = RowVector::Zero(static_cast<Eigen::Index>(vocab_size_));
    for (const auto& [i, w] : self.entries) s(i - 1) += config_.alpha * w;
    if (config_.alpha < 1.0) {
      std::vector<std::pair<double, std::size_t>> dist;
      dist.reserve(pifs_.size());
      for (std::size_t n = 0; n < pifs_.size(); ++n) dist.emplace_back(squared_distance(self, pifs_[n]), n);
      const std::size_t k = std::min(config_.neighbors, dist.size());
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
      const double w = (1.0 - config_.alpha) / static_cast<double>(k);
      for (std::size_t n = 0; n < k; ++n)
        for (const auto& [i, v] : pifs_[dist[n].second].entries) s(i - 1) += w * v;
    }
    return s;
  }

  std::vector<ItemId> predict(const std::vector<Basket>& history, std::size_t k) const {
    return topk(restrict_to_novel(scores(history), repeat_novel_partition(history, vocab_size_).repeat_items), k);
  }

 private:
  TifuConfig config_;
  std::size_t vocab_size_;
  std::vector<PIFVector> pifs_;
};

// ---------------------------------------------------------------------------
// Dispatch

enum class BaselineMethod { g_topfreq, tifuknn };

inline std::string to_string(BaselineMethod m) { return m == BaselineMethod::g_topfreq ? "g-topfreq" : "tifuknn"; }

inline BaselineMethod parse_baseline(const std::string& s) {
  if (s == "g-topfreq" || s == "gtopfreq") return BaselineMethod::g_topfreq;
  if (s == "tifuknn") return BaselineMethod::tifuknn;
  throw ConfigError("unknown baseline '" + s + "'");
}

/// Fits a baseline on the train corpus under a label mode. Popularity has no
/// supervised target, so G-TopFreq always counts the untouched corpus.
inline Recommender make_baseline(BaselineMethod method, const Corpus& train, LabelMode mode, const TifuConfig& tifu = {}) {
  if (method == BaselineMethod::g_topfreq) return g_topfreq_recommender(train);
  auto model = std::make_shared<Tifuknn>(apply_label_mode(train, mode).corpus, tifu);
  return [model](const std::vector<Basket>& history, std::size_t k) { return model->predict(history, k); };
}

inline std::vector<ItemId> tifuknn_predict(const Corpus& train, const std::vector<Basket>& history, const TifuConfig& config,
                                           std::size_t k) {
  return Tifuknn(train, config).predict(history, k);
}

}  // namespace nnbr
