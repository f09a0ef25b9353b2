#include <gtest/gtest.h>

#include "generators.hpp"
#include "nnbr/augmentation.hpp"
#include "properties.hpp"

namespace nnbr {
namespace {

using testing::random_sequence;

constexpr std::size_t kVocab = 12;
constexpr ItemId kMask = kVocab + 1;

FlattenedSequence flat_of(std::vector<std::vector<ItemId>> baskets) { return flatten(make_sequence("u", baskets)); }

TEST(Flatten, WorkedExample) {
  auto f = flat_of({{1, 2}, {1, 3, 4}, {4, 5}});
  EXPECT_EQ(f.item_ids, (std::vector<ItemId>{1, 2, 1, 3, 4, 4, 5}));
  EXPECT_EQ(f.basket_indices, (std::vector<int>{1, 1, 2, 2, 2, 3, 3}));
}

TEST(Flatten, SingleBasketAndLength) {
  auto f = flat_of({{9}});
  EXPECT_EQ(f.item_ids, std::vector<ItemId>{9});
  EXPECT_EQ(f.basket_indices, std::vector<int>{1});
  Rng rng(1);
  for (int r = 0; r < 100; ++r) {
    auto seq = random_sequence(rng, kVocab);
    std::size_t total = 0;
    for (const auto& b : seq.baskets) total += b.items.size();
    EXPECT_EQ(flatten(seq).size(), total);
  }
}

TEST(TruncatePad, KeepsSuffixAndRebases) {
  auto f = flat_of({{1, 2}, {1, 3, 4}, {4, 5}});
  auto t = truncate_pad(f, 4);
  EXPECT_EQ(t.item_ids, (std::vector<ItemId>{3, 4, 4, 5}));
  EXPECT_EQ(t.basket_indices, (std::vector<int>{1, 1, 2, 2}));
}

TEST(TruncatePad, LeftPads) {
  auto t = truncate_pad(flat_of({{1, 2}, {3}}), 5);
  EXPECT_EQ(t.item_ids, (std::vector<ItemId>{0, 0, 1, 2, 3}));
  EXPECT_EQ(t.basket_indices, (std::vector<int>{0, 0, 1, 1, 2}));
}

TEST(TruncatePad, OutputIsContiguousSuffix) {
  Rng rng(2);
  for (int r = 0; r < 500; ++r) {
    auto f = flatten(random_sequence(rng, kVocab));
    const std::size_t max_len = 1 + rng() % 20;
    auto t = truncate(f, max_len);
    ASSERT_LE(t.size(), max_len);
    ASSERT_TRUE(std::equal(t.item_ids.begin(), t.item_ids.end(), f.item_ids.end() - static_cast<std::ptrdiff_t>(t.size())));
    EXPECT_EQ(*std::min_element(t.basket_indices.begin(), t.basket_indices.end()), 1);
  }
}

TEST(MaskItemRandom, NearOneMasksEverything) {
  auto f = flat_of({{1, 2}, {3}, {4, 5}});
  int all = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Rng rng(s);
    all += mask_item_random(f, 0.999, kMask, rng).labels.size() == 5;
  }
  EXPECT_GE(all, 985);
}

TEST(MaskItemRandom, BinomialCountBounds) {
  std::vector<std::vector<ItemId>> baskets;
  for (int b = 0; b < 250; ++b) baskets.push_back({1, 2, 3, 4});
  auto f = flat_of(baskets);
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    auto n = mask_item_random(f, 0.5, kMask, rng).labels.size();
    EXPECT_GE(n, 440u);
    EXPECT_LE(n, 560u);
  }
}

TEST(MaskItemRandom, AlwaysAtLeastOneLabel) {
  Rng gen(3);
  for (int r = 0; r < 1000; ++r) {
    auto f = flatten(random_sequence(gen, kVocab, 3, 2));
    Rng rng(static_cast<std::uint64_t>(r));
    EXPECT_GE(mask_item_random(f, 0.01, kMask, rng).labels.size(), 1u);
  }
}

TEST(MaskItemSelect, MasksEveryOccurrence) {
  FlattenedSequence f{{1, 2, 1, 3}, {1, 1, 2, 2}};
  // With one of three unique items selected, find a seed that picks item 1.
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(s);
    auto m = mask_item_select(f, 0.3, kMask, rng);
    if (m.labels.front().item != 1) continue;
    EXPECT_EQ(m.labels, (std::vector<Label>{{0, 1}, {2, 1}}));
    EXPECT_EQ(m.input_ids, (std::vector<ItemId>{kMask, 2, kMask, 3}));
    return;
  }
  FAIL() << "item 1 never selected";
}

TEST(MaskItemSelect, NearOneMasksAllPositions) {
  Rng gen(4);
  for (int r = 0; r < 100; ++r) {
    auto f = flatten(random_sequence(gen, kVocab));
    Rng rng(static_cast<std::uint64_t>(r));
    EXPECT_EQ(mask_item_select(f, 0.999, kMask, rng).labels.size(), f.size());
  }
}

TEST(MaskBasketAll, MasksLastBasket) {
  auto m = mask_basket_all(flat_of({{1, 2}, {3}}), kMask);
  ASSERT_TRUE(m);
  EXPECT_EQ(m->labels, (std::vector<Label>{{2, 3}}));
  EXPECT_FALSE(mask_basket_all(flat_of({{1, 2}}), kMask));
}

TEST(MaskBasketExplore, DeletesRepeatsMasksNovel) {
  auto m = mask_basket_explore(flat_of({{1, 2}, {1, 3}}), kMask);
  ASSERT_TRUE(m);
  EXPECT_EQ(m->input_ids, (std::vector<ItemId>{1, 2, kMask}));
  EXPECT_EQ(m->basket_indices, (std::vector<int>{1, 1, 2}));
  EXPECT_EQ(m->labels, (std::vector<Label>{{2, 3}}));
  EXPECT_FALSE(mask_basket_explore(flat_of({{1, 2}, {2}}), kMask));
  EXPECT_FALSE(mask_basket_explore(flat_of({{1}}), kMask));
}

TEST(MaskingProperties, AllStrategiesOnRandomSequences) {
  Rng gen(5);
  for (int r = 0; r < 400; ++r) {
    auto f = flatten(random_sequence(gen, kVocab));
    Rng rng(static_cast<std::uint64_t>(r));
    for (auto strategy : {MaskStrategy::item_random, MaskStrategy::item_select, MaskStrategy::basket_all, MaskStrategy::basket_explore}) {
      MaskConfig cfg{strategy, is_item_level(strategy) ? std::optional<double>(0.3) : std::nullopt};
      auto s = apply_mask(f, cfg, kMask, rng);
      if (!s) continue;
      auto padded = truncate_pad(*s, s->size() + 3);
      EXPECT_EQ(testing::check_masked(f, padded, strategy, kMask), "") << to_string(strategy);
    }
  }
}

TEST(MaskingProperties, DeterministicGivenSeed) {
  Rng gen(6);
  auto f = flatten(random_sequence(gen, kVocab));
  Rng a(9), b(9);
  EXPECT_EQ(mask_item_select(f, 0.4, kMask, a), mask_item_select(f, 0.4, kMask, b));
  EXPECT_EQ(mask_item_random(f, 0.4, kMask, a), mask_item_random(f, 0.4, kMask, b));
}

TEST(MaskConfig, RatioRequiredOnlyForItemLevel) {
  EXPECT_THROW((MaskConfig{MaskStrategy::item_random, std::nullopt}.validate()), ConfigError);
  EXPECT_THROW((MaskConfig{MaskStrategy::basket_all, 0.5}.validate()), ConfigError);
  EXPECT_NO_THROW((MaskConfig{MaskStrategy::basket_all, std::nullopt}.validate()));
}

TEST(SwapItems, ZeroRatioIsIdentity) {
  Rng gen(7), rng(1);
  auto f = flatten(random_sequence(gen, kVocab));
  EXPECT_EQ(swap_items(f, {0.0, 3}, rng), f);
}

TEST(SwapItems, HopOneFromMiddleBasket) {
  FlattenedSequence f{{1, 2, 3}, {1, 2, 3}};
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng rng(s);
    auto out = swap_items(f, {0.9, 1}, rng);
    for (std::size_t k = 0; k < out.size(); ++k)
      if (out.item_ids[k] == 2) seen.insert(out.basket_indices[k]);
  }
  EXPECT_TRUE(seen.count(1));
  EXPECT_TRUE(seen.count(3));
  EXPECT_LE(seen.size(), 3u);
}

TEST(SwapItems, ConservationAndHopBound) {
  Rng gen(8);
  for (int r = 0; r < 1000; ++r) {
    auto f = flatten(random_sequence(gen, kVocab, 10));
    const int hop = 1 + r % 4;
    Rng rng(static_cast<std::uint64_t>(r));
    auto out = swap_items(f, {0.5, hop}, rng);
    ASSERT_EQ(testing::check_swap(f, out, hop), "");
  }
}

TEST(AppendPredictionSlot, NextBasketIndex) {
  auto s = append_prediction_slot(flat_of({{1}, {2}, {3}}), 10, kMask);
  EXPECT_EQ(s.input_ids.back(), kMask);
  EXPECT_EQ(s.basket_indices.back(), 4);
  EXPECT_EQ(std::count(s.input_ids.begin(), s.input_ids.end(), kMask), 1);
  EXPECT_TRUE(s.labels.empty());
  EXPECT_EQ(s.size(), 10u);
}

TEST(AppendPredictionSlot, EvictsOldestAtCapacity) {
  auto s = append_prediction_slot(flat_of({{1, 2}, {3}}), 3, kMask);
  EXPECT_EQ(s.input_ids, (std::vector<ItemId>{2, 3, kMask}));
  EXPECT_EQ(s.basket_indices, (std::vector<int>{1, 2, 3}));
}

}  // namespace
}  // namespace nnbr
