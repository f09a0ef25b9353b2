#pragma once

// Flattening, masking strategies, item swapping and fixed-length model inputs.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nnbr/core.hpp"
#include "nnbr/data.hpp"

namespace nnbr {

/// Parallel item / basket-ordinal arrays. Padding slots carry item 0 and
/// basket index 0 and always precede real positions.
struct FlattenedSequence {
  std::vector<ItemId> item_ids;
  std::vector<int> basket_indices;

  std::size_t size() const { return item_ids.size(); }
  bool operator==(const FlattenedSequence&) const = default;
};

struct Label {
  std::size_t position;
  ItemId item;
  bool operator==(const Label&) const = default;
};

/// Model input. pad_mask is 1 at real positions; labels are sorted by
/// position and refer to positions whose input id is the mask token.
struct MaskedSample {
  std::vector<ItemId> input_ids;
  std::vector<int> basket_indices;
  std::vector<char> pad_mask;
  std::vector<Label> labels;

  std::size_t size() const { return input_ids.size(); }
  std::size_t real_length() const { return static_cast<std::size_t>(std::count(pad_mask.begin(), pad_mask.end(), 1)); }
  bool operator==(const MaskedSample&) const = default;
};

enum class MaskStrategy { item_random, item_select, basket_all, basket_explore };

inline bool is_item_level(MaskStrategy s) { return s == MaskStrategy::item_random || s == MaskStrategy::item_select; }

inline std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::item_random: return "item_random";
    case MaskStrategy::item_select: return "item_select";
    case MaskStrategy::basket_all: return "basket_all";
    case MaskStrategy::basket_explore: return "basket_explore";
  }
  return "?";
}

inline MaskStrategy parse_mask_strategy(const std::string& name) {
  for (auto s : {MaskStrategy::item_random, MaskStrategy::item_select, MaskStrategy::basket_all, MaskStrategy::basket_explore}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown masking strategy '" + name + "'");
}

struct MaskConfig {
  MaskStrategy strategy = MaskStrategy::item_select;
  std::optional<double> mask_ratio;  // item-level only

  void validate() const {
    if (is_item_level(strategy)) {
      if (!mask_ratio || !(*mask_ratio > 0.0 && *mask_ratio < 1.0)) throw ConfigError("item-level masking needs a mask ratio in (0,1)");
    } else if (mask_ratio) {
      throw ConfigError("basket-level masking takes no mask ratio");
    }
  }
};

struct SwapConfig {
  double swap_ratio = 0.0;
  int swap_hop = 1;

  bool enabled() const { return swap_ratio > 0.0; }
  void validate() const {
    if (!(swap_ratio >= 0.0 && swap_ratio < 1.0)) throw ConfigError("swap ratio must lie in [0,1)");
    if (swap_hop < 1) throw ConfigError("swap hop must be >= 1");
  }
};

inline FlattenedSequence flatten(const UserSequence& seq) {
  if (seq.baskets.empty()) throw Error("cannot flatten an empty sequence");
  FlattenedSequence out;
  for (const auto& b : seq.baskets) {
    for (ItemId i : b.items) {
      out.item_ids.push_back(i);
      out.basket_indices.push_back(b.ordinal);
    }
  }
  return out;
}

inline FlattenedSequence flatten(const std::vector<Basket>& baskets) {
  return flatten(UserSequence{{}, baskets});
}

namespace detail {

inline std::size_t first_real(const std::vector<ItemId>& ids) {
  std::size_t k = 0;
  while (k < ids.size() && ids[k] == kPadId) ++k;
  return k;
}

inline int max_basket(const std::vector<int>& idx) { return idx.empty() ? 0 : *std::max_element(idx.begin(), idx.end()); }

inline void rebase(std::vector<int>& idx) {
  int lo = 0;
  for (int v : idx)
    if (v > 0 && (lo == 0 || v < lo)) lo = v;
  if (lo <= 1) return;
  for (int& v : idx)
    if (v > 0) v -= lo - 1;
}

inline MaskedSample unmasked_sample(const FlattenedSequence& seq) {
  MaskedSample s{seq.item_ids, seq.basket_indices, std::vector<char>(seq.size(), 0), {}};
  for (std::size_t k = 0; k < seq.size(); ++k) s.pad_mask[k] = seq.item_ids[k] != kPadId;
  return s;
}

}  // namespace detail

/// Keeps the most recent max_len items and re-bases basket indices to start
/// at 1. Leading padding in the input is discarded.
inline FlattenedSequence truncate(const FlattenedSequence& seq, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  std::size_t start = detail::first_real(seq.item_ids);
  if (seq.size() - start > max_len) start = seq.size() - max_len;
  FlattenedSequence out{{seq.item_ids.begin() + static_cast<std::ptrdiff_t>(start), seq.item_ids.end()},
                        {seq.basket_indices.begin() + static_cast<std::ptrdiff_t>(start), seq.basket_indices.end()}};
  detail::rebase(out.basket_indices);
  return out;
}

/// Suffix truncation followed by left padding to exactly max_len.
inline FlattenedSequence truncate_pad(const FlattenedSequence& seq, std::size_t max_len) {
  FlattenedSequence out = truncate(seq, max_len);
  const std::size_t pad = max_len - out.size();
  out.item_ids.insert(out.item_ids.begin(), pad, kPadId);
  out.basket_indices.insert(out.basket_indices.begin(), pad, 0);
  return out;
}

/// Same rule for an already masked sample: labels of evicted positions are
/// dropped and the remaining label positions shifted.
inline MaskedSample truncate_pad(const MaskedSample& sample, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be >= 1");
  std::size_t start = detail::first_real(sample.input_ids);
  if (sample.size() - start > max_len) start = sample.size() - max_len;
  const std::size_t kept = sample.size() - start;
  const std::size_t pad = max_len - kept;
  MaskedSample out;
  out.input_ids.assign(pad, kPadId);
  out.basket_indices.assign(pad, 0);
  out.pad_mask.assign(pad, 0);
  out.input_ids.insert(out.input_ids.end(), sample.input_ids.begin() + static_cast<std::ptrdiff_t>(start), sample.input_ids.end());
  out.basket_indices.insert(out.basket_indices.end(), sample.basket_indices.begin() + static_cast<std::ptrdiff_t>(start), sample.basket_indices.end());
  out.pad_mask.insert(out.pad_mask.end(), sample.pad_mask.begin() + static_cast<std::ptrdiff_t>(start), sample.pad_mask.end());
  detail::rebase(out.basket_indices);
  for (const auto& l : sample.labels) {
    if (l.position >= start) out.labels.push_back({l.position - start + pad, l.item});
  }
  return out;
}

/// Masks each real position independently with probability ratio; when no
/// position was drawn, one uniformly chosen real position is masked.
inline MaskedSample mask_item_random(const FlattenedSequence& seq, double ratio, ItemId mask_id, Rng& rng) {
  MaskedSample s = detail::unmasked_sample(seq);
  std::vector<std::size_t> real;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if (s.pad_mask[k]) real.push_back(k);
  if (real.empty()) throw Error("cannot mask an empty sequence");
  std::bernoulli_distribution coin(ratio);
  std::vector<std::size_t> chosen;
  for (std::size_t k : real)
    if (coin(rng)) chosen.push_back(k);
  if (chosen.empty()) chosen.push_back(real[std::uniform_int_distribution<std::size_t>(0, real.size() - 1)(rng)]);
  for (std::size_t k : chosen) {
    s.labels.push_back({k, s.input_ids[k]});
    s.input_ids[k] = mask_id;
  }
  return s;
}

/// Selects max(1, round(ratio * |unique items|)) distinct items uniformly and
/// masks every occurrence of each.
inline MaskedSample mask_item_select(const FlattenedSequence& seq, double ratio, ItemId mask_id, Rng& rng) {
  MaskedSample s = detail::unmasked_sample(seq);
  std::vector<ItemId> unique;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if (s.pad_mask[k]) unique.push_back(seq.item_ids[k]);
  if (unique.empty()) throw Error("cannot mask an empty sequence");
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(unique.size())));
  count = std::clamp<std::size_t>(count, 1, unique.size());
  std::vector<ItemId> selected;
  std::sample(unique.begin(), unique.end(), std::back_inserter(selected), count, rng);
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (s.pad_mask[k] && std::binary_search(selected.begin(), selected.end(), seq.item_ids[k])) {
      s.labels.push_back({k, seq.item_ids[k]});
      s.input_ids[k] = mask_id;
    }
  }
  return s;
}

/// Masks the whole last basket. Returns nullopt (no trainable sample) when the
/// sequence spans a single basket.
inline std::optional<MaskedSample> mask_basket_all(const FlattenedSequence& seq, ItemId mask_id) {
  MaskedSample s = detail::unmasked_sample(seq);
  const int last = detail::max_basket(seq.basket_indices);
  bool has_history = false;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if (s.pad_mask[k] && seq.basket_indices[k] < last) has_history = true;
  if (!has_history) return std::nullopt;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (s.pad_mask[k] && seq.basket_indices[k] == last) {
      s.labels.push_back({k, seq.item_ids[k]});
      s.input_ids[k] = mask_id;
    }
  }
  return s;
}

/// Deletes the repeat items of the last basket and masks its novel items.
/// Returns nullopt for single-basket sequences or when nothing novel remains.
inline std::optional<MaskedSample> mask_basket_explore(const FlattenedSequence& seq, ItemId mask_id) {
  const int last = detail::max_basket(seq.basket_indices);
  std::set<ItemId> history;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if (seq.item_ids[k] != kPadId && seq.basket_indices[k] < last) history.insert(seq.item_ids[k]);
  if (history.empty()) return std::nullopt;
  MaskedSample s;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    const ItemId item = seq.item_ids[k];
    const bool real = item != kPadId;
    if (real && seq.basket_indices[k] == last) {
      if (history.count(item)) continue;
      s.labels.push_back({s.input_ids.size(), item});
      s.input_ids.push_back(mask_id);
    } else {
      s.input_ids.push_back(item);
    }
    s.basket_indices.push_back(seq.basket_indices[k]);
    s.pad_mask.push_back(real);
  }
  if (s.labels.empty()) return std::nullopt;
  return s;
}

/// Dispatches on strategy; item-level strategies always yield a sample.
inline std::optional<MaskedSample> apply_mask(const FlattenedSequence& seq, const MaskConfig& cfg, ItemId mask_id, Rng& rng) {
  switch (cfg.strategy) {
    case MaskStrategy::item_random: return mask_item_random(seq, cfg.mask_ratio.value(), mask_id, rng);
    case MaskStrategy::item_select: return mask_item_select(seq, cfg.mask_ratio.value(), mask_id, rng);
    case MaskStrategy::basket_all: return mask_basket_all(seq, mask_id);
    case MaskStrategy::basket_explore: return mask_basket_explore(seq, mask_id);
  }
  return std::nullopt;
}

/// Moves each occurrence with probability swap_ratio to another existing
/// basket at distance <= swap_hop, chosen uniformly; the result is re-sorted
/// by basket index (stable). Duplicates created in the target basket are kept.
inline FlattenedSequence swap_items(const FlattenedSequence& seq, const SwapConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!cfg.enabled()) return seq;
  std::vector<int> ordinals;
  for (std::size_t k = 0; k < seq.size(); ++k)
    if (seq.item_ids[k] != kPadId) ordinals.push_back(seq.basket_indices[k]);
  std::sort(ordinals.begin(), ordinals.end());
  ordinals.erase(std::unique(ordinals.begin(), ordinals.end()), ordinals.end());
  if (ordinals.size() < 2) return seq;

  std::bernoulli_distribution coin(cfg.swap_ratio);
  std::vector<std::pair<int, std::size_t>> keyed;
  keyed.reserve(seq.size());
  std::vector<int> targets;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    int b = seq.basket_indices[k];
    if (seq.item_ids[k] != kPadId && coin(rng)) {
      targets.clear();
      for (int o : ordinals)
        if (o != b && std::abs(o - b) <= cfg.swap_hop) targets.push_back(o);
      if (!targets.empty()) b = targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)];
    }
    keyed.emplace_back(b, k);
  }
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  FlattenedSequence out;
  for (const auto& [b, k] : keyed) {
    out.item_ids.push_back(seq.item_ids[k]);
    out.basket_indices.push_back(b);
  }
  return out;
}

/// Inference input: one mask token with basket index max + 1 appended, then
/// suffix-truncated and left-padded to max_len so the slot always survives.
inline MaskedSample append_prediction_slot(const FlattenedSequence& seq, std::size_t max_len, ItemId mask_id) {
  const std::size_t start = detail::first_real(seq.item_ids);
  if (start == seq.size()) throw Error("cannot predict from an empty sequence");
  MaskedSample s{{seq.item_ids.begin() + static_cast<std::ptrdiff_t>(start), seq.item_ids.end()},
                 {seq.basket_indices.begin() + static_cast<std::ptrdiff_t>(start), seq.basket_indices.end()},
                 std::vector<char>(seq.size() - start, 1),
                 {}};
  s.basket_indices.push_back(detail::max_basket(s.basket_indices) + 1);
  s.input_ids.push_back(mask_id);
  s.pad_mask.push_back(1);
  return truncate_pad(s, max_len);
}

}  // namespace nnbr
