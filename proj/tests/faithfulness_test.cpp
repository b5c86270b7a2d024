#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

#include "tasc/faithfulness.hpp"
#include "test_util.hpp"

namespace tasc {
namespace {

using testing::instance;
using testing::random_instance;
using testing::random_table;
using testing::tiny_config;

std::size_t label_of(const ModelBundle& m, const std::vector<std::size_t>& ids) {
  const auto probs = m.forward(text::make_batch(instance(ids)), GradMode::frozen).probs;
  const auto p = probs.values();
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

// Naive erasure loop written against forward() only.
FlipRecord naive_flip(const ModelBundle& m, const std::vector<std::size_t>& ids,
                      const std::vector<std::size_t>& ranking) {
  const std::size_t t = ids.size(), original = label_of(m, ids);
  std::vector<bool> gone(t, false);
  FlipRecord r;
  for (std::size_t k = 0; k < t; ++k) {
    gone[ranking[k]] = true;
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < t; ++i) {
      if (!gone[i]) kept.push_back(ids[i]);
    }
    if (kept.empty()) kept.push_back(text::kPadId);
    const bool flipped = label_of(m, kept) != original;
    if (k == 0) r.mit_flipped = flipped;
    if (flipped) {
      r.tokens_removed = k + 1;
      r.fraction = static_cast<double>(k + 1) / static_cast<double>(t);
      return r;
    }
  }
  r.tokens_removed = t;
  r.fraction = 1.0;
  r.never_flipped = true;
  return r;
}

// Predicts class 1 iff token 3 is present: MLP encoder with a single active
// unit keyed to token 3's embedding, uniform attention, and a biased head.
ModelBundle keyword_model() {
  auto table = std::make_shared<text::EmbeddingTable>();
  table->rows = 6;
  table->dim = 2;
  table->data = {0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 1};  // token 3 = [1, 0]
  auto m = ModelBundle::create(tiny_config(EncoderKind::mlp, AttentionKind::dot, TascVariant::none, 4),
                               table, 1);
  auto w = m.encoder().weight.mutable_values();  // [2, 4]
  std::fill(w.begin(), w.end(), 0.0);
  w[0] = 10.0;
  for (auto& x : m.encoder().bias.mutable_values()) x = 0.0;
  for (auto& x : m.attention_params().query.mutable_values()) x = 0.0;
  auto ow = m.output_weight().mutable_values();  // [4, 2]
  std::fill(ow.begin(), ow.end(), 0.0);
  ow[1] = 1.0;
  auto ob = m.output_bias().mutable_values();
  ob[0] = 0.1;
  ob[1] = 0.0;
  return m;
}

TEST(Flip, KeywordModelFlipsWhenKeywordRemoved) {
  const auto m = keyword_model();
  const auto inst = instance({4, 3, 5, 4, 5});
  EXPECT_EQ(label_of(m, inst.token_ids), 1u);
  const auto top = make_scores(Metric::alpha, {0.1, 0.9, 0.0, 0.0, 0.0});
  EXPECT_TRUE(flip_most_informative(m, inst, top));
  const auto r = flip_fraction(m, inst, top);
  EXPECT_TRUE(r.mit_flipped);
  EXPECT_EQ(r.tokens_removed, 1u);
  EXPECT_DOUBLE_EQ(r.fraction, 0.2);
  EXPECT_FALSE(r.never_flipped);

  const auto late = make_scores(Metric::alpha, {0.5, 0.1, 0.4, 0.3, 0.2});
  EXPECT_FALSE(flip_most_informative(m, inst, late));
  const auto r2 = flip_fraction(m, inst, late);
  EXPECT_EQ(r2.tokens_removed, 5u);
  EXPECT_DOUBLE_EQ(r2.fraction, 1.0);
  EXPECT_FALSE(r2.never_flipped);
}

TEST(Flip, ConstantModelNeverFlips) {
  const auto table = random_table(20, 8, 1);
  auto m = ModelBundle::create(tiny_config(EncoderKind::lstm, AttentionKind::tanh, TascVariant::lin),
                               table, 2);
  for (auto& x : m.output_weight().mutable_values()) x = 0.0;
  m.output_bias().mutable_values()[0] = 1.0;
  const auto inst = instance({3, 4, 5, 6});
  const auto s = make_scores(Metric::alpha, {0.4, 0.3, 0.2, 0.1});
  EXPECT_FALSE(flip_most_informative(m, inst, s));
  const auto r = flip_fraction(m, inst, s);
  EXPECT_EQ(r.fraction, 1.0);
  EXPECT_TRUE(r.never_flipped);
  EXPECT_EQ(r.tokens_removed, 4u);
}

TEST(Flip, MatchesNaiveOracle) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> len(1, 8);
  for (auto e : kAllEncoders) {
    const auto m = ModelBundle::create(tiny_config(e, AttentionKind::dot, TascVariant::feat), table,
                                       3);
    for (auto metric : kAllMetrics) {
      for (int n = 0; n < 6; ++n) {
        const auto inst = random_instance(rng, len(rng), 20);
        const auto scores = compute(metric, m, inst);
        const auto expect = naive_flip(m, inst.token_ids, scores.ranking);
        const auto got = flip_fraction(m, inst, scores);
        EXPECT_EQ(got.mit_flipped, expect.mit_flipped);
        EXPECT_EQ(got.fraction, expect.fraction);
        EXPECT_EQ(got.tokens_removed, expect.tokens_removed);
        EXPECT_EQ(got.never_flipped, expect.never_flipped);
        EXPECT_EQ(flip_most_informative(m, inst, scores), expect.mit_flipped);
        EXPECT_GT(got.fraction, 0.0);
        EXPECT_LE(got.fraction, 1.0);
        EXPECT_GE(got.tokens_removed, 1u);
        EXPECT_LE(got.tokens_removed, inst.token_ids.size());
      }
    }
  }
}

TEST(Flip, ParallelEqualsSerial) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(4);
  const auto m = ModelBundle::create(tiny_config(EncoderKind::gru, AttentionKind::tanh, TascVariant::conv),
                                     table, 5);
  std::vector<text::TokenizedInstance> items;
  for (int i = 0; i < 23; ++i) items.push_back(random_instance(rng, 1 + i % 7, 20, i % 2));
  for (auto metric : {Metric::alpha_grad_alpha, Metric::ig}) {
    const auto serial = evaluate_faithfulness(m, items, metric, {}, 1);
    const auto parallel = evaluate_faithfulness(m, items, metric, {}, 4);
    ASSERT_EQ(serial.size(), items.size());
    ASSERT_EQ(parallel.size(), items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      EXPECT_EQ(serial[i].instance_id, i);
      EXPECT_EQ(to_json(serial[i]), to_json(parallel[i]));
    }
    FlipSet a{"d", EncoderKind::gru, AttentionKind::tanh, TascVariant::none, 1, metric, serial};
    FlipSet b = a;
    b.records = parallel;
    for (auto measure : {Measure::mit, Measure::fraction}) {
      EXPECT_EQ(to_json(aggregate(std::span<const FlipSet>(&a, 1), Grouping::attention, measure)),
                to_json(aggregate(std::span<const FlipSet>(&b, 1), Grouping::attention, measure)));
    }
  }
}

FlipRecord rec(bool mit, double fraction, bool never = false) {
  FlipRecord r;
  r.mit_flipped = mit;
  r.fraction = fraction;
  r.never_flipped = never;
  return r;
}

TEST(Aggregate, MitPercentageAndFractionMean) {
  const std::vector<FlipRecord> four{rec(true, 0.25), rec(false, 0.5), rec(false, 1.0, true),
                                     rec(false, 0.25)};
  EXPECT_DOUBLE_EQ(measure_mean(four, Measure::mit), 25.0);
  EXPECT_DOUBLE_EQ(measure_mean(four, Measure::fraction), 0.5);
}

TEST(Aggregate, RelativeImprovement) {
  EXPECT_EQ(relative_improvement(14.0, 11.7), 1.2);
  EXPECT_EQ(relative_improvement(0.17, 0.32), 0.5);
  EXPECT_FALSE(relative_improvement(3.0, 0.0).has_value());
}

TEST(Aggregate, GroupsAndBaseline) {
  auto set = [](AttentionKind a, TascVariant t, EncoderKind e, std::vector<FlipRecord> r) {
    for (auto& x : r) x.metric = Metric::alpha_grad_alpha;
    return FlipSet{"sst", e, a, t, 1, Metric::alpha_grad_alpha, std::move(r)};
  };
  const std::vector<FlipSet> sets{
      set(AttentionKind::tanh, TascVariant::none, EncoderKind::lstm, {rec(true, .2), rec(false, .4)}),
      set(AttentionKind::tanh, TascVariant::none, EncoderKind::gru, {rec(false, .4), rec(false, .6)}),
      set(AttentionKind::tanh, TascVariant::lin, EncoderKind::lstm, {rec(true, .1), rec(true, .1)}),
      set(AttentionKind::dot, TascVariant::lin, EncoderKind::lstm, {rec(true, .3)}),
  };
  // Dot has a Lin cell but no baseline.
  EXPECT_THROW(aggregate(sets, Grouping::attention, Measure::mit), std::invalid_argument);
  const auto table = aggregate(sets, Grouping::attention, Measure::mit, false);
  ASSERT_EQ(table.rows.size(), 2u);
  const auto& tanh_row = table.rows[0].group == "tanh" ? table.rows[0] : table.rows[1];
  // Mean of per-set means: (50 + 0) / 2 = 25; Lin = 100.
  EXPECT_DOUBLE_EQ(tanh_row.cells.at(TascVariant::none).mean, 25.0);
  EXPECT_EQ(tanh_row.cells.at(TascVariant::none).sets, 2u);
  EXPECT_DOUBLE_EQ(tanh_row.cells.at(TascVariant::lin).mean, 100.0);
  EXPECT_EQ(tanh_row.cells.at(TascVariant::lin).relative, 4.0);

  const auto frac = aggregate(std::span<const FlipSet>(sets.data(), 3), Grouping::encoder,
                              Measure::fraction);
  ASSERT_EQ(frac.rows.size(), 2u);
  const auto md = to_markdown(frac);
  EXPECT_NE(md.find("lstm"), std::string::npos);
  EXPECT_NE(md.find(".30"), std::string::npos);
}

TEST(Aggregate, NeverFlippedOnlyRaisesMean) {
  std::vector<FlipRecord> r{rec(false, 0.2), rec(true, 0.5), rec(false, 0.8)};
  double prev = measure_mean(r, Measure::fraction);
  for (int i = 0; i < 5; ++i) {
    r.push_back(rec(false, 1.0, true));
    const double now = measure_mean(r, Measure::fraction);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(Distribution, Quantiles) {
  EXPECT_DOUBLE_EQ(quantile({0.1, 0.2, 0.3, 0.4}, 0.5), 0.25);
  const std::vector<FlipRecord> same{rec(false, .2), rec(false, .2), rec(false, .2)};
  const auto s = distribution_summary(same);
  EXPECT_DOUBLE_EQ(s.median, 0.2);
  EXPECT_DOUBLE_EQ(s.q75 - s.q25, 0.0);
  const std::vector<FlipRecord> one{rec(true, .6)};
  const auto o = distribution_summary(one);
  EXPECT_EQ(o.q25, 0.6);
  EXPECT_EQ(o.median, 0.6);
  EXPECT_EQ(o.q75, 0.6);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2, 5}, 0.25), 2.0);
}

TEST(Records, JsonLinesRoundTrip) {
  std::vector<FlipRecord> r{rec(true, 0.25), rec(false, 1.0, true)};
  r[0].instance_id = 3;
  r[0].tokens_removed = 1;
  r[1].instance_id = 4;
  r[1].tokens_removed = 7;
  r[1].metric = Metric::wo;
  const auto path = (std::filesystem::temp_directory_path() / "tasc_flips.jsonl").string();
  write_jsonl(path, r);
  const auto back = read_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(to_json(back[i]), to_json(r[i]));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace tasc
