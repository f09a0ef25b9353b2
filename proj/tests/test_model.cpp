#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "nnbr/checkpoint.hpp"
#include "nnbr/model.hpp"
#include "test_util.hpp"

namespace nnbr {
namespace {

ModelConfig small_config(std::size_t m = 10) {
  ModelConfig c;
  c.vocab_size = m;
  c.embed_dim = 8;
  c.layers = 2;
  c.heads = 2;
  c.max_positions = 12;
  c.max_len = 20;
  c.dropout = 0.1;
  return c;
}

MaskedSample unmasked(const FlattenedSequence& f) {
  MaskedSample s{f.item_ids, f.basket_indices, std::vector<char>(f.size(), 1), {}};
  for (std::size_t k = 0; k < f.size(); ++k) s.pad_mask[k] = f.item_ids[k] != kPadId;
  return s;
}

Matrix run(const MaskedSample& s, const Parameters& p, const ModelConfig& c) {
  return encode(embed(s, p, c), s.pad_mask, p, c);
}

TEST(InitParameters, ShapesAndDeterminism) {
  ModelConfig c = small_config();
  c.embed_dim = 16;
  c.heads = 8;
  Parameters p = init_parameters(c, 3);
  EXPECT_EQ(p.item_embeddings.rows(), 12);
  EXPECT_EQ(p.position_embeddings.rows(), 13);
  Parameters q = init_parameters(c, 3);
  auto a = tensor_views(p), b = tensor_views(q);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(std::equal(a[k].data, a[k].data + a[k].size, b[k].data));
  EXPECT_FALSE(init_parameters(c, 4).item_embeddings.isApprox(p.item_embeddings));
}

TEST(InitParameters, TruncatedValuesZeroBiasesUnitGains) {
  Parameters p = init_parameters(small_config(), 1);
  EXPECT_LE(p.item_embeddings.cwiseAbs().maxCoeff(), 2 * kInitStd);
  EXPECT_LE(p.layers[0].w1.cwiseAbs().maxCoeff(), 2 * kInitStd);
  EXPECT_TRUE(p.layers[1].bq.isZero());
  EXPECT_TRUE(p.output_bias.isZero());
  EXPECT_TRUE((p.layers[0].ln1_gain.array() == 1.0).all());
}

TEST(ParameterCount, MatchesClosedForm) {
  for (std::size_t m : {6, 10, 200})
    for (std::size_t d : {4, 8, 32})
      for (std::size_t layers : {1, 2}) {
        ModelConfig c = small_config(m);
        c.embed_dim = d;
        c.heads = 2;
        c.layers = layers;
        std::size_t total = 0;
        for (const auto& t : tensor_views(zero_parameters(c))) total += t.size;
        EXPECT_EQ(total, parameter_count(c));
        EXPECT_EQ(total, (m + 2) * d + (c.max_positions + 1) * d + layers * (12 * d * d + 13 * d) + m);
      }
}

TEST(ModelConfig, RejectsInvalid) {
  ModelConfig c = small_config();
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.embed_dim = 10;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Embed, SharedBasketPositions) {
  ModelConfig c = small_config(5);
  Parameters p = init_parameters(c, 2);
  auto s = unmasked(flatten(make_sequence("u", {{1, 2}, {1, 3, 4}, {4, 5}})));
  Matrix x = embed(s, p, c);
  const std::vector<std::pair<int, int>> expected{{1, 1}, {2, 1}, {1, 2}, {3, 2}, {4, 2}, {4, 3}, {5, 3}};
  for (std::size_t r = 0; r < expected.size(); ++r) {
    RowVector want = p.item_embeddings.row(expected[r].first) + p.position_embeddings.row(expected[r].second);
    EXPECT_EQ(x.row(static_cast<Eigen::Index>(r)), want);
  }
  // Items in one basket differ only by their item rows.
  EXPECT_EQ(x.row(0) - x.row(1), p.item_embeddings.row(1) - p.item_embeddings.row(2));
}

TEST(Embed, PadRowsAndOverflow) {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c, 2);
  MaskedSample pads{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {}};
  Matrix x = embed(pads, p, c);
  for (Eigen::Index r = 0; r < 3; ++r) EXPECT_EQ(x.row(r), p.item_embeddings.row(0) + p.position_embeddings.row(0));
  MaskedSample over{{1}, {13}, {1}, {}};
  EXPECT_THROW(embed(over, p, c), ConfigError);
}

TEST(Encode, AllPadSampleGivesConstantRows) {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c, 2);
  MaskedSample pads{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {}};
  Matrix h = run(pads, p, c);
  EXPECT_TRUE(h.allFinite());
  EXPECT_LT((h.row(0) - h.row(2)).norm(), 1e-12);
}

TEST(Encode, WithinBasketPermutationPermutesRows) {
  ModelConfig c = small_config();
  Rng gen(4);
  for (int rep = 0; rep < 50; ++rep) {
    Parameters p = init_parameters(c, static_cast<std::uint64_t>(rep));
    for (auto& t : tensor_views(p))
      for (std::size_t i = 0; i < t.size; ++i) t.data[i] *= 20.0;
    auto f = flatten(testing::random_sequence(gen, c.vocab_size, 4, 4, 2));
    // find two positions in one basket
    std::size_t a = f.size(), b = f.size();
    for (std::size_t k = 0; k + 1 < f.size(); ++k)
      if (f.basket_indices[k] == f.basket_indices[k + 1]) {
        a = k;
        b = k + 1;
        break;
      }
    if (a == f.size()) continue;
    auto g = f;
    std::swap(g.item_ids[a], g.item_ids[b]);
    Matrix h1 = run(unmasked(f), p, c), h2 = run(unmasked(g), p, c);
    for (Eigen::Index r = 0; r < h1.rows(); ++r) {
      Eigen::Index q = r == static_cast<Eigen::Index>(a) ? static_cast<Eigen::Index>(b) : r == static_cast<Eigen::Index>(b) ? static_cast<Eigen::Index>(a) : r;
      EXPECT_LT((h1.row(r) - h2.row(q)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Encode, FutureItemsInfluencePastPositions) {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c, 5);
  auto f = flatten(make_sequence("u", {{1, 2}, {3}, {4, 5}}));
  auto g = f;
  g.item_ids.back() = 7;
  Matrix h1 = run(unmasked(f), p, c), h2 = run(unmasked(g), p, c);
  for (Eigen::Index r = 0; r + 1 < h1.rows(); ++r) EXPECT_GT((h1.row(r) - h2.row(r)).norm(), 1e-9);
}

TEST(Encode, PaddingDoesNotChangeRealRows) {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c, 6);
  auto f = flatten(make_sequence("u", {{1, 2}, {3}, {4, 5}}));
  Matrix h = run(unmasked(f), p, c);
  Matrix hp = run(unmasked(truncate_pad(f, 9)), p, c);
  EXPECT_LT((h - hp.bottomRows(h.rows())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, NonFiniteActivationsReportLayer) {
  ModelConfig c = small_config();
  Parameters p = init_parameters(c, 6);
  p.layers[1].w1(0, 0) = std::numeric_limits<double>::quiet_NaN();
  auto s = unmasked(flatten(make_sequence("u", {{1, 2}, {3}})));
  try {
    run(s, p, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), 1);
  }
}

TEST(PredictScores, NormalisedLogProbabilities) {
  ModelConfig c = small_config(30);
  Parameters p = init_parameters(c, 8);
  Rng rng(1);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    RowVector h(c.embed_dim);
    for (Eigen::Index k = 0; k < h.size(); ++k) h(k) = nd(rng);
    RowVector s = predict_scores(h, p);
    ASSERT_EQ(s.size(), 30);
    EXPECT_NEAR(s.array().exp().sum(), 1.0, 1e-6);
  }
}

TEST(PredictScores, OrthonormalEmbeddingsPickSelf) {
  ModelConfig c = small_config(8);
  Parameters p = zero_parameters(c);
  for (int k = 1; k <= 8; ++k) p.item_embeddings(k, k - 1) = 1.0;
  for (int k = 1; k <= 8; ++k) {
    RowVector s = predict_scores(p.item_embeddings.row(k), p);
    Eigen::Index arg;
    s.maxCoeff(&arg);
    EXPECT_EQ(arg, k - 1);
  }
}

TEST(PredictScores, TiedEmbeddingPerturbation) {
  ModelConfig c = small_config(6);
  Parameters p = init_parameters(c, 9);
  auto s = unmasked(flatten(make_sequence("u", {{3, 4}, {5}})));
  RowVector h = RowVector::Constant(c.embed_dim, 0.3);
  Matrix x0 = embed(s, p, c);
  RowVector l0 = item_logits(h, p);
  Parameters q = p;
  q.item_embeddings.row(3).array() += 0.1;
  Matrix x1 = embed(s, q, c);
  RowVector l1 = item_logits(h, q);
  EXPECT_GT((x1.row(0) - x0.row(0)).norm(), 0.0);
  EXPECT_NE(l1(2), l0(2));
  for (int k = 0; k < 6; ++k) {
    if (k != 2) {
      EXPECT_EQ(l1(k), l0(k));
    }
  }
}

TEST(RestrictToNovel, IdentityAndFull) {
  RowVector s(4);
  s << 0.1, 0.2, 0.3, 0.4;
  EXPECT_EQ(restrict_to_novel(s, {}), s);
  RowVector all = restrict_to_novel(s, {1, 2, 3, 4});
  EXPECT_TRUE((all.array() == kExcluded).all());
  EXPECT_TRUE(topk(all, 3).empty());
}

TEST(RestrictToNovel, TopKNeverContainsRepeats) {
  Rng rng(10);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 500; ++rep) {
    RowVector s(40);
    for (Eigen::Index k = 0; k < 40; ++k) s(k) = nd(rng);
    auto repeat = testing::random_ranking(rng, 40, 39);
    auto top = topk(restrict_to_novel(s, repeat), 10);
    for (ItemId i : top) EXPECT_EQ(std::count(repeat.begin(), repeat.end(), i), 0);
    EXPECT_EQ(top.size(), std::min<std::size_t>(10, 40 - repeat.size()));
  }
}

TEST(TopK, OrderingAndTies) {
  RowVector s(3);
  s << 0.1, 0.9, 0.5;
  EXPECT_EQ(topk(s, 2), (std::vector<ItemId>{2, 3}));
  RowVector t(4);
  t << 0.5, 0.7, 0.5, 0.7;
  EXPECT_EQ(topk(t, 4), (std::vector<ItemId>{2, 4, 1, 3}));
  EXPECT_THROW(topk(t, 0), Error);
}

TEST(TopK, MatchesFullSortPrefix) {
  Rng rng(11);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int rep = 0; rep < 500; ++rep) {
    RowVector s(25);
    for (Eigen::Index k = 0; k < 25; ++k) s(k) = coarse(rng);
    std::vector<ItemId> all(25);
    std::iota(all.begin(), all.end(), 1);
    std::stable_sort(all.begin(), all.end(), [&](ItemId a, ItemId b) { return s(a - 1) > s(b - 1); });
    const std::size_t k = 1 + static_cast<std::size_t>(rep % 25);
    all.resize(k);
    EXPECT_EQ(topk(s, k), all);
  }
}

TEST(Checkpoint, RoundTripAndVocabCheck) {
  testing::TempDir dir;
  ModelConfig c = small_config();
  Checkpoint ck{c, init_parameters(c, 12), 12, {{"epoch", 3}}};
  const auto path = dir.file("model.ckpt");
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path, c.vocab_size);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.seed, 12u);
  EXPECT_EQ(back.metadata["epoch"], 3);
  EXPECT_EQ(back.params.layers[1].w2, ck.params.layers[1].w2);
  EXPECT_EQ(back.params.output_bias, ck.params.output_bias);
  EXPECT_THROW(load_checkpoint(path, c.vocab_size + 1), ConfigError);
  EXPECT_THROW(load_checkpoint(dir.write("junk", "nothing here")), SchemaError);
}

}  // namespace
}  // namespace nnbr
