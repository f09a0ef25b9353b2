#pragma once

// Transaction ingestion, preprocessing, user splits, repeat/novel partitions,
// synthetic corpora and corpus statistics.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "nnbr/core.hpp"

namespace nnbr {

/// One transaction. Items are kept sorted and unique; ordinal is 1-based.
struct Basket {
  std::vector<ItemId> items;
  int ordinal = 1;

  bool contains(ItemId item) const { return std::binary_search(items.begin(), items.end(), item); }
  bool operator==(const Basket&) const = default;
};

struct UserSequence {
  std::string user_id;
  std::vector<Basket> baskets;

  bool operator==(const UserSequence&) const = default;
};

/// A set of users over the contiguous item space 1..vocab_size.
/// item_names[i - 1] holds the raw identifier of internal item i when the
/// corpus was ingested from a file; synthetic corpora leave it empty.
struct Corpus {
  std::vector<UserSequence> users;
  std::size_t vocab_size = 0;
  std::vector<std::string> item_names;

  bool operator==(const Corpus&) const = default;
};

inline Basket make_basket(std::vector<ItemId> items, int ordinal) {
  std::sort(items.begin(), items.end());
  if (std::adjacent_find(items.begin(), items.end()) != items.end()) {
    throw Error("basket " + std::to_string(ordinal) + " contains a duplicate item");
  }
  if (items.empty()) throw Error("basket " + std::to_string(ordinal) + " is empty");
  if (ordinal < 1) throw Error("basket ordinal must be >= 1");
  return Basket{std::move(items), ordinal};
}

/// Builds a sequence with ordinals 1..n from plain item lists.
inline UserSequence make_sequence(std::string user_id, const std::vector<std::vector<ItemId>>& baskets) {
  UserSequence seq{std::move(user_id), {}};
  int ordinal = 1;
  for (const auto& items : baskets) seq.baskets.push_back(make_basket(items, ordinal++));
  return seq;
}

inline void validate(const Corpus& corpus) {
  std::unordered_set<std::string> seen;
  for (const auto& user : corpus.users) {
    if (!seen.insert(user.user_id).second) throw Error("duplicate user id '" + user.user_id + "'");
    if (user.baskets.empty()) throw Error("user '" + user.user_id + "' has no baskets");
    for (std::size_t t = 0; t < user.baskets.size(); ++t) {
      const auto& b = user.baskets[t];
      if (b.ordinal != static_cast<int>(t) + 1) throw Error("user '" + user.user_id + "' has non-consecutive ordinals");
      if (b.items.empty()) throw Error("user '" + user.user_id + "' has an empty basket");
      for (std::size_t k = 0; k < b.items.size(); ++k) {
        ItemId i = b.items[k];
        if (i < 1 || static_cast<std::size_t>(i) > corpus.vocab_size) {
          throw Error("item id " + std::to_string(i) + " outside 1.." + std::to_string(corpus.vocab_size));
        }
        if (k > 0 && b.items[k - 1] >= i) throw Error("basket items must be sorted and unique");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// CSV ingestion

enum class OrderKeyFormat { number, string, month_day_year };

/// Column mapping for a transaction export. Column names refer to the header
/// row. The order column supplies the chronology of a user's baskets.
struct TransactionSchema {
  std::string user_column;
  std::string basket_column;
  std::string item_column;
  std::string order_column;
  char delimiter = ',';
  OrderKeyFormat order_format = OrderKeyFormat::number;
};

/// Documented schemas of the public grocery exports.
inline TransactionSchema tafeng_schema() {
  // ta_feng_all_months_merged.csv: one basket per customer per day.
  return {"CUSTOMER_ID", "TRANSACTION_DT", "PRODUCT_ID", "TRANSACTION_DT", ',', OrderKeyFormat::month_day_year};
}
inline TransactionSchema dunnhumby_schema() {
  // The Complete Journey, transaction_data.csv.
  return {"household_key", "BASKET_ID", "PRODUCT_ID", "DAY", ',', OrderKeyFormat::number};
}
inline TransactionSchema instacart_schema() {
  // orders.csv joined with order_products__prior.csv on order_id.
  return {"user_id", "order_id", "product_id", "order_number", ',', OrderKeyFormat::number};
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

struct OrderKey {
  double number = 0.0;
  std::string text;
  bool operator<(const OrderKey& o) const { return number != o.number ? number < o.number : text < o.text; }
};

inline OrderKey parse_order_key(const std::string& raw, OrderKeyFormat fmt, const std::string& context) {
  switch (fmt) {
    case OrderKeyFormat::string:
      return {0.0, raw};
    case OrderKeyFormat::number: {
      double v = 0.0;
      auto [p, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
      if (ec != std::errc() || p != raw.data() + raw.size()) throw SchemaError(context + ": order key '" + raw + "' is not a number");
      return {v, {}};
    }
    case OrderKeyFormat::month_day_year: {
      int m = 0, d = 0, y = 0;
      char s1 = 0, s2 = 0;
      std::istringstream in(raw);
      if (!(in >> m >> s1 >> d >> s2 >> y) || s1 != '/' || s2 != '/') {
        throw SchemaError(context + ": order key '" + raw + "' is not M/D/YYYY");
      }
      return {static_cast<double>(y * 10000 + m * 100 + d), {}};
    }
  }
  return {};
}

}  // namespace detail

/// Reads a delimited transaction log with a header row. Rows sharing
/// (user, basket key) form one basket; baskets are ordered by the minimum
/// order key of their rows, then by first appearance. Raw item identifiers are
/// re-indexed to 1..m in lexicographic order of the raw id.
inline Corpus load_transactions(const std::string& path, const TransactionSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw EmptyCorpusError(path + ": empty file");
  auto header = detail::split_csv_line(line, schema.delimiter);
  for (auto& h : header) h = detail::trim(h);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(path + ":1: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t ucol = column(schema.user_column);
  const std::size_t bcol = column(schema.basket_column);
  const std::size_t icol = column(schema.item_column);
  const std::size_t ocol = column(schema.order_column);
  const std::size_t need = std::max({ucol, bcol, icol, ocol}) + 1;

  struct RawBasket {
    detail::OrderKey key;
    std::size_t first_row;
    std::vector<std::string> items;
  };
  struct RawUser {
    std::string id;
    std::map<std::string, RawBasket> baskets;
  };
  std::vector<RawUser> users;
  std::unordered_map<std::string, std::size_t> user_index;
  std::map<std::string, ItemId> item_index;

  std::size_t lineno = 1, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line, schema.delimiter);
    const std::string context = path + ":" + std::to_string(lineno);
    if (fields.size() < need) throw SchemaError(context + ": expected at least " + std::to_string(need) + " fields");
    std::string uid = detail::trim(fields[ucol]);
    std::string bid = detail::trim(fields[bcol]);
    std::string iid = detail::trim(fields[icol]);
    auto key = detail::parse_order_key(detail::trim(fields[ocol]), schema.order_format, context);
    auto [uit, fresh] = user_index.try_emplace(uid, users.size());
    if (fresh) users.push_back({uid, {}});
    auto& user = users[uit->second];
    auto [bit, bfresh] = user.baskets.try_emplace(bid, RawBasket{key, rows, {}});
    if (!bfresh && key < bit->second.key) bit->second.key = key;
    bit->second.items.push_back(iid);
    item_index.emplace(iid, 0);
    ++rows;
  }
  if (rows == 0) throw EmptyCorpusError(path + ": no transactions");

  Corpus corpus;
  ItemId next = 1;
  for (auto& [raw, id] : item_index) {
    id = next++;
    corpus.item_names.push_back(raw);
  }
  corpus.vocab_size = corpus.item_names.size();
  for (auto& ru : users) {
    std::vector<const RawBasket*> order;
    for (auto& [_, b] : ru.baskets) order.push_back(&b);
    std::sort(order.begin(), order.end(), [](const RawBasket* a, const RawBasket* b) {
      if (a->key < b->key) return true;
      if (b->key < a->key) return false;
      return a->first_row < b->first_row;
    });
    UserSequence seq{ru.id, {}};
    for (const RawBasket* rb : order) {
      std::vector<ItemId> ids;
      for (const auto& raw : rb->items) ids.push_back(item_index.at(raw));
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      seq.baskets.push_back(Basket{std::move(ids), static_cast<int>(seq.baskets.size()) + 1});
    }
    corpus.users.push_back(std::move(seq));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PreprocessConfig {
  std::size_t min_baskets = 3;
  std::size_t max_baskets = 50;
  std::size_t min_item_frequency = 1;

  void validate() const {
    if (min_baskets < 1 || min_baskets > max_baskets) throw ConfigError("require 1 <= min_baskets <= max_baskets");
  }
};

namespace detail {

// One pass of: item filter, empty-basket drop, user filter. Returns true when
// anything was removed.
inline bool preprocess_pass(Corpus& corpus, const PreprocessConfig& config) {
  bool changed = false;
  std::vector<std::size_t> freq(corpus.vocab_size + 1, 0);
  for (const auto& u : corpus.users)
    for (const auto& b : u.baskets)
      for (ItemId i : b.items) ++freq[static_cast<std::size_t>(i)];
  std::vector<UserSequence> kept;
  for (auto& u : corpus.users) {
    std::vector<Basket> baskets;
    for (auto& b : u.baskets) {
      auto before = b.items.size();
      std::erase_if(b.items, [&](ItemId i) { return freq[static_cast<std::size_t>(i)] < config.min_item_frequency; });
      changed |= b.items.size() != before;
      if (b.items.empty()) {
        changed = true;
        continue;
      }
      b.ordinal = static_cast<int>(baskets.size()) + 1;
      baskets.push_back(std::move(b));
    }
    if (baskets.size() < config.min_baskets || baskets.size() > config.max_baskets) {
      changed = true;
      continue;
    }
    u.baskets = std::move(baskets);
    kept.push_back(std::move(u));
  }
  corpus.users = std::move(kept);
  return changed;
}

}  // namespace detail

/// Filters rare items, drops emptied baskets, then filters users by basket
/// count. The cycle repeats until nothing changes, so the result is a fixed
/// point. Surviving item ids are re-compacted to 1..m' keeping their order.
inline Corpus preprocess(Corpus corpus, const PreprocessConfig& config) {
  config.validate();
  while (detail::preprocess_pass(corpus, config)) {
  }
  if (corpus.users.empty()) throw EmptyCorpusError("preprocessing removed every user");
  std::vector<ItemId> remap(corpus.vocab_size + 1, 0);
  for (const auto& u : corpus.users)
    for (const auto& b : u.baskets)
      for (ItemId i : b.items) remap[static_cast<std::size_t>(i)] = 1;
  ItemId next = 1;
  std::vector<std::string> names;
  for (std::size_t i = 1; i < remap.size(); ++i) {
    if (!remap[i]) continue;
    remap[i] = next++;
    if (!corpus.item_names.empty()) names.push_back(corpus.item_names[i - 1]);
  }
  for (auto& u : corpus.users)
    for (auto& b : u.baskets)
      for (ItemId& i : b.items) i = remap[static_cast<std::size_t>(i)];
  corpus.vocab_size = static_cast<std::size_t>(next - 1);
  corpus.item_names = std::move(names);
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  double validation_fraction_of_train = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    auto open_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!open_unit(train_fraction) || !open_unit(test_fraction) || !open_unit(validation_fraction_of_train)) {
      throw ConfigError("split fractions must lie in (0,1)");
    }
    if (std::abs(train_fraction + test_fraction - 1.0) > 1e-9) throw ConfigError("train + test fractions must equal 1");
  }
};

struct CorpusSplit {
  Corpus train;
  Corpus validation;
  Corpus test;
};

/// User-level partition. Users are shuffled with the split seed; the first
/// round(test_fraction * n) become test users, the next
/// round(validation_fraction * train_count) validation users.
inline CorpusSplit split_users(const Corpus& corpus, const SplitSpec& spec) {
  spec.validate();
  if (corpus.users.empty()) throw EmptyCorpusError("cannot split an empty corpus");
  const std::size_t n = corpus.users.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(spec.seed, 0x5b11));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(spec.test_fraction * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(spec.validation_fraction_of_train * static_cast<double>(n - n_test)));
  CorpusSplit out;
  for (Corpus* c : {&out.train, &out.validation, &out.test}) {
    c->vocab_size = corpus.vocab_size;
    c->item_names = corpus.item_names;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& user = corpus.users[order[k]];
    if (k < n_test)
      out.test.users.push_back(user);
    else if (k < n_test + n_val)
      out.validation.users.push_back(user);
    else
      out.train.users.push_back(user);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Repeat / novel partition

struct RepeatNovelPartition {
  std::vector<ItemId> repeat_items;
  std::vector<ItemId> novel_items;
};

/// Membership flags indexed by item id (size vocab_size + 1).
inline std::vector<char> repeat_flags(const std::vector<Basket>& history, std::size_t vocab_size) {
  std::vector<char> flags(vocab_size + 1, 0);
  for (const auto& b : history)
    for (ItemId i : b.items)
      if (i >= 1 && static_cast<std::size_t>(i) <= vocab_size) flags[static_cast<std::size_t>(i)] = 1;
  return flags;
}

inline RepeatNovelPartition repeat_novel_partition(const std::vector<Basket>& history, std::size_t vocab_size) {
  if (history.empty()) throw Error("repeat/novel partition needs a non-empty history");
  auto flags = repeat_flags(history, vocab_size);
  RepeatNovelPartition p;
  for (std::size_t i = 1; i <= vocab_size; ++i) (flags[i] ? p.repeat_items : p.novel_items).push_back(static_cast<ItemId>(i));
  return p;
}

// ---------------------------------------------------------------------------
// Statistics

struct CorpusStats {
  std::size_t num_items = 0;  // distinct items that occur
  std::size_t num_users = 0;
  double avg_basket_size = 0.0;
  double avg_baskets_per_user = 0.0;
  double repeat_ratio = 0.0;
  double explore_ratio = 0.0;
};

/// Repeat ratio: mean over users with at least two baskets of the fraction of
/// the final basket already bought in earlier baskets.
inline CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.num_users = corpus.users.size();
  std::vector<char> seen(corpus.vocab_size + 1, 0);
  std::size_t baskets = 0, items = 0, ratio_users = 0;
  double ratio_sum = 0.0;
  for (const auto& u : corpus.users) {
    baskets += u.baskets.size();
    for (const auto& b : u.baskets) {
      items += b.items.size();
      for (ItemId i : b.items) seen[static_cast<std::size_t>(i)] = 1;
    }
    if (u.baskets.size() >= 2) {
      std::vector<Basket> history(u.baskets.begin(), u.baskets.end() - 1);
      auto flags = repeat_flags(history, corpus.vocab_size);
      const auto& last = u.baskets.back();
      std::size_t rep = 0;
      for (ItemId i : last.items) rep += flags[static_cast<std::size_t>(i)] ? 1 : 0;
      ratio_sum += static_cast<double>(rep) / static_cast<double>(last.items.size());
      ++ratio_users;
    }
  }
  s.num_items = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), 1));
  if (baskets > 0) s.avg_basket_size = static_cast<double>(items) / static_cast<double>(baskets);
  if (s.num_users > 0) s.avg_baskets_per_user = static_cast<double>(baskets) / static_cast<double>(s.num_users);
  if (ratio_users > 0) s.repeat_ratio = ratio_sum / static_cast<double>(ratio_users);
  s.explore_ratio = 1.0 - s.repeat_ratio;
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic corpora

/// Generator for desk-scale corpora. Items 1..m are split into contiguous
/// clusters; each user prefers a few clusters, and each basket is drawn mostly
/// from one of them. Every slot is a repeat with probability repeat_prob once
/// the user has history; novel draws follow a Zipf popularity within a cluster.
struct SyntheticProfile {
  std::size_t num_users = 1000;
  std::size_t vocab_size = 200;
  std::size_t num_clusters = 10;
  std::size_t clusters_per_user = 2;
  std::size_t min_baskets = 3;
  std::size_t max_baskets = 10;
  std::size_t min_basket_size = 2;
  std::size_t max_basket_size = 6;
  double repeat_prob = 0.6;
  double cluster_purity = 0.85;
  double popularity_skew = 1.0;

  void validate() const {
    if (num_users == 0 || vocab_size == 0) throw ConfigError("synthetic profile needs users and items");
    if (num_clusters == 0 || num_clusters > vocab_size) throw ConfigError("num_clusters must lie in 1..vocab_size");
    if (clusters_per_user == 0 || clusters_per_user > num_clusters) throw ConfigError("clusters_per_user must lie in 1..num_clusters");
    if (min_baskets == 0 || min_baskets > max_baskets) throw ConfigError("require 1 <= min_baskets <= max_baskets");
    if (min_basket_size == 0 || min_basket_size > max_basket_size) throw ConfigError("require 1 <= min_basket_size <= max_basket_size");
    if (max_basket_size > vocab_size) throw ConfigError("basket size exceeds the vocabulary");
    if (!(repeat_prob >= 0.0 && repeat_prob <= 1.0)) throw ConfigError("repeat_prob must lie in [0,1]");
    if (repeat_prob >= 1.0 && min_baskets < 2) throw ConfigError("repeat_prob = 1 is infeasible for single-basket users");
    if (!(cluster_purity >= 0.0 && cluster_purity <= 1.0)) throw ConfigError("cluster_purity must lie in [0,1]");
    if (popularity_skew < 0.0) throw ConfigError("popularity_skew must be >= 0");
  }

  std::size_t cluster_of(ItemId item) const {
    return (static_cast<std::size_t>(item) - 1) * num_clusters / vocab_size;
  }
};

inline Corpus generate_synthetic(const SyntheticProfile& profile, std::uint64_t seed) {
  profile.validate();
  const std::size_t m = profile.vocab_size;
  std::vector<std::vector<ItemId>> members(profile.num_clusters);
  for (std::size_t i = 1; i <= m; ++i) members[profile.cluster_of(static_cast<ItemId>(i))].push_back(static_cast<ItemId>(i));
  // Zipf weight by rank inside the cluster.
  std::vector<double> weight(m + 1, 0.0);
  for (const auto& c : members)
    for (std::size_t r = 0; r < c.size(); ++r) weight[static_cast<std::size_t>(c[r])] = 1.0 / std::pow(static_cast<double>(r + 1), profile.popularity_skew);

  Corpus corpus;
  corpus.vocab_size = m;
  for (std::size_t u = 0; u < profile.num_users; ++u) {
    Rng rng(derive_seed(seed, 0x5e7, u));
    std::vector<std::size_t> clusters(profile.num_clusters);
    std::iota(clusters.begin(), clusters.end(), 0);
    std::shuffle(clusters.begin(), clusters.end(), rng);
    clusters.resize(profile.clusters_per_user);

    std::uniform_int_distribution<std::size_t> nb(profile.min_baskets, profile.max_baskets);
    std::uniform_int_distribution<std::size_t> bs(profile.min_basket_size, profile.max_basket_size);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<char> owned(m + 1, 0);
    std::vector<ItemId> history;
    UserSequence seq{"u" + std::to_string(u + 1), {}};
    const std::size_t n_baskets = nb(rng);
    for (std::size_t t = 0; t < n_baskets; ++t) {
      const std::size_t home = clusters[std::uniform_int_distribution<std::size_t>(0, clusters.size() - 1)(rng)];
      const std::size_t size = bs(rng);
      std::vector<char> in_basket(m + 1, 0);
      std::vector<ItemId> items;

      auto draw_repeat = [&]() -> ItemId {
        std::vector<ItemId> pool;
        for (ItemId i : history)
          if (!in_basket[static_cast<std::size_t>(i)]) pool.push_back(i);
        if (pool.empty()) return kPadId;
        return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      };
      auto draw_novel_from = [&](const std::vector<ItemId>& pool_items) -> ItemId {
        double total = 0.0;
        for (ItemId i : pool_items)
          if (!owned[static_cast<std::size_t>(i)] && !in_basket[static_cast<std::size_t>(i)]) total += weight[static_cast<std::size_t>(i)];
        if (total <= 0.0) return kPadId;
        double r = unit(rng) * total;
        ItemId last = kPadId;
        for (ItemId i : pool_items) {
          if (owned[static_cast<std::size_t>(i)] || in_basket[static_cast<std::size_t>(i)]) continue;
          last = i;
          r -= weight[static_cast<std::size_t>(i)];
          if (r < 0.0) return i;
        }
        return last;
      };
      auto draw_novel = [&]() -> ItemId {
        std::size_t c = home;
        if (unit(rng) >= profile.cluster_purity) c = std::uniform_int_distribution<std::size_t>(0, profile.num_clusters - 1)(rng);
        ItemId pick = draw_novel_from(members[c]);
        for (std::size_t k = 1; pick == kPadId && k < profile.num_clusters; ++k) {
          pick = draw_novel_from(members[(c + k) % profile.num_clusters]);
        }
        return pick;
      };

      for (std::size_t slot = 0; slot < size; ++slot) {
        const bool want_repeat = !history.empty() && unit(rng) < profile.repeat_prob;
        ItemId pick = want_repeat ? draw_repeat() : draw_novel();
        if (pick == kPadId) pick = want_repeat ? draw_novel() : draw_repeat();
        if (pick == kPadId) break;
        in_basket[static_cast<std::size_t>(pick)] = 1;
        items.push_back(pick);
      }
      if (items.empty()) break;
      for (ItemId i : items)
        if (!owned[static_cast<std::size_t>(i)]) {
          owned[static_cast<std::size_t>(i)] = 1;
          history.push_back(i);
        }
      seq.baskets.push_back(make_basket(std::move(items), static_cast<int>(t) + 1));
    }
    corpus.users.push_back(std::move(seq));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Persistence: `user_id<TAB>basket_index<TAB>space-separated item ids`

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& u : corpus.users) {
    for (const auto& b : u.baskets) {
      out << u.user_id << '\t' << b.ordinal << '\t';
      for (std::size_t k = 0; k < b.items.size(); ++k) out << (k ? " " : "") << b.items[k];
      out << '\n';
    }
  }
}

/// Reads a corpus file. vocab_size is the maximum id seen unless a larger
/// value is given (the id map carries the authoritative size).
inline Corpus read_corpus(std::istream& in, std::size_t vocab_size = 0, const std::string& name = "corpus") {
  Corpus corpus;
  std::unordered_map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  std::size_t max_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string context = name + ":" + std::to_string(lineno);
    auto fields = detail::split_csv_line(line, '\t');
    if (fields.size() != 3) throw SchemaError(context + ": expected 3 tab-separated fields");
    std::vector<ItemId> items;
    std::istringstream ids(fields[2]);
    long long id = 0;
    while (ids >> id) {
      if (id < 1) throw SchemaError(context + ": item ids must be positive");
      items.push_back(static_cast<ItemId>(id));
      max_id = std::max(max_id, static_cast<std::size_t>(id));
    }
    int ordinal = 0;
    try {
      ordinal = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw SchemaError(context + ": bad basket index");
    }
    auto [it, fresh] = index.try_emplace(fields[0], corpus.users.size());
    if (fresh) corpus.users.push_back({fields[0], {}});
    auto& user = corpus.users[it->second];
    if (ordinal != static_cast<int>(user.baskets.size()) + 1) throw SchemaError(context + ": basket indices must be consecutive from 1");
    try {
      user.baskets.push_back(make_basket(std::move(items), ordinal));
    } catch (const Error& e) {
      throw SchemaError(context + ": " + e.what());
    }
  }
  if (corpus.users.empty()) throw EmptyCorpusError(name + ": no baskets");
  corpus.vocab_size = std::max(vocab_size, max_id);
  return corpus;
}

/// Id map: one `internal_id<TAB>raw_id` line per item.
inline void write_id_map(std::ostream& out, const Corpus& corpus) {
  for (std::size_t i = 1; i <= corpus.vocab_size; ++i) {
    out << i << '\t' << (corpus.item_names.empty() ? std::to_string(i) : corpus.item_names[i - 1]) << '\n';
  }
}

inline std::vector<std::string> read_id_map(std::istream& in) {
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw SchemaError("id map: missing tab");
    if (std::stoul(line.substr(0, tab)) != names.size() + 1) throw SchemaError("id map: ids must be consecutive from 1");
    names.push_back(line.substr(tab + 1));
  }
  return names;
}

}  // namespace nnbr
