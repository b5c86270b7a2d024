#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "tasc/importance.hpp"
#include "test_util.hpp"

namespace tasc {
namespace {

using ad::Tensor;
using testing::instance;
using testing::random_instance;
using testing::random_table;
using testing::tiny_config;

std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> probs_of(const ModelBundle& m, const std::vector<std::size_t>& ids) {
  return vals(m.forward(text::make_batch(instance(ids)), GradMode::frozen).probs);
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// p(cls) as a function of free attention weights, in plain arithmetic:
// c = sum_i h_i a_i s_i, logits = c W + b, softmax.
double pooled_prob(const std::vector<double>& h, const std::vector<double>& a,
                   const std::vector<double>& s, const std::vector<double>& w,
                   const std::vector<double>& b, std::size_t n, std::size_t cls) {
  const std::size_t t = a.size(), classes = b.size();
  std::vector<double> c(n, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t k = 0; k < n; ++k) c[k] += h[i * n + k] * a[i] * (s.empty() ? 1.0 : s[i]);
  }
  std::vector<double> z(b);
  for (std::size_t j = 0; j < classes; ++j) {
    for (std::size_t k = 0; k < n; ++k) z[j] += c[k] * w[k * classes + j];
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double den = 0.0;
  for (double x : z) den += std::exp(x - mx);
  return std::exp(z[cls] - mx) / den;
}

// Makes the model's logits an affine function of the embeddings: MLP held in
// its linear regime by a large bias, uniform attention (q = 0), no TaSc.
ModelBundle linear_model(std::shared_ptr<text::EmbeddingTable> table) {
  auto m = ModelBundle::create(tiny_config(EncoderKind::mlp, AttentionKind::dot, TascVariant::none),
                               table, 3);
  for (auto& x : m.encoder().bias.mutable_values()) x = 100.0;
  for (auto& x : m.attention_params().query.mutable_values()) x = 0.0;
  return m;
}

TEST(Ranking, DescendingWithPositionTieBreak) {
  EXPECT_EQ(rank_scores(std::vector<double>{1, 3, 3, 0}), (std::vector<std::size_t>{1, 2, 0, 3}));
  EXPECT_EQ(rank_scores(std::vector<double>{0.5, -0.75}), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(rank_scores(std::vector<double>{2, 2, 2}), (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_THROW(make_scores(Metric::ig, {1.0, std::nan("")}), std::runtime_error);
}

TEST(Ranking, InvariantToPositiveScaling) {
  const auto s = testing::uniform(12, -1, 1, 3);
  std::vector<double> scaled(s);
  for (auto& x : scaled) x *= 7.5;
  EXPECT_EQ(rank_scores(s), rank_scores(scaled));
}

TEST(Metrics, ParseAndPrint) {
  for (auto m : kAllMetrics) EXPECT_EQ(parse_metric(to_string(m)), m);
  EXPECT_EQ(parse_metric_list("alpha,ig"), (std::vector<Metric>{Metric::alpha, Metric::ig}));
  EXPECT_THROW(parse_metric("lime"), ValidationError);
  EXPECT_THROW(parse_target("log-odds"), ValidationError);
}

TEST(Alpha, SymmetryAndNormalisation) {
  const auto table = random_table(20, 8, 1);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::mlp, AttentionKind::tanh, TascVariant::lin), table, 2);
  const auto twin = alpha_scores(m, instance({5, 5}));
  EXPECT_EQ(twin.scores[0], twin.scores[1]);
  EXPECT_EQ(twin.ranking, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(alpha_scores(m, instance({9})).scores, (std::vector<double>{1.0}));
  const auto s = alpha_scores(m, instance({3, 7, 11, 4, 19})).scores;
  EXPECT_NEAR(std::accumulate(s.begin(), s.end(), 0.0), 1.0, 1e-12);
}

TEST(GradAlpha, MatchesFiniteDifferencesOnPooling) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(5);
  for (auto e : kAllEncoders) {
    for (auto v : kAllTasc) {
      const auto m = ModelBundle::create(tiny_config(e, AttentionKind::tanh, v), table, 6);
      const auto inst = random_instance(rng, 5, 20);
      const auto out = m.forward(text::make_batch(inst), GradMode::frozen);
      const auto h = vals(out.hidden), a = vals(out.alpha);
      const auto s = v == TascVariant::none ? std::vector<double>{} : vals(out.scores);
      const auto w = vals(m.output_weight()), b = vals(m.output_bias());
      const std::size_t cls = argmax(vals(out.probs));
      const auto g = grad_alpha_scores(m, inst).scores;
      const double eps = 1e-6;
      for (std::size_t i = 0; i < a.size(); ++i) {
        auto up = a, dn = a;
        up[i] += eps;
        dn[i] -= eps;
        const double fd = (pooled_prob(h, up, s, w, b, 8, cls) - pooled_prob(h, dn, s, w, b, 8, cls)) /
                          (2 * eps);
        EXPECT_LT(std::abs(fd - g[i]) / std::max(1e-8, std::abs(fd)), 1e-5)
            << to_string(e) << "/" << to_string(v) << " i=" << i;
      }
      const auto agg = alpha_grad_alpha_scores(m, inst).scores;
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(agg[i], a[i] * g[i]);
    }
  }
}

TEST(GradAlpha, ZeroHeadGivesZeroGradients) {
  const auto table = random_table(20, 8, 1);
  auto m = ModelBundle::create(tiny_config(EncoderKind::gru, AttentionKind::dot, TascVariant::feat),
                               table, 6);
  for (auto& x : m.output_weight().mutable_values()) x = 0.0;
  for (auto metric : {Metric::grad_alpha, Metric::alpha_grad_alpha, Metric::wo, Metric::inputxgrad,
                      Metric::ig}) {
    for (double x : compute(metric, m, instance({3, 4, 5})).scores) EXPECT_EQ(x, 0.0) << to_string(metric);
  }
}

TEST(GradAlpha, SymmetricInputsGetEqualGradients) {
  const auto table = random_table(20, 8, 1);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::mlp, AttentionKind::dot, TascVariant::none), table, 6);
  const auto g = grad_alpha_scores(m, instance({4, 4})).scores;
  EXPECT_EQ(g[0], g[1]);
}

TEST(WordOmission, MatchesBruteForce) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(9);
  for (auto e : kAllEncoders) {
    const auto m = ModelBundle::create(tiny_config(e, AttentionKind::tanh, TascVariant::conv),
                                       table, 1);
    for (std::size_t len : {1, 3, 5}) {
      const auto inst = random_instance(rng, len, 20);
      const auto full = probs_of(m, inst.token_ids);
      const std::size_t cls = argmax(full);
      const auto wo = word_omission(m, inst).scores;
      for (std::size_t i = 0; i < len; ++i) {
        std::vector<std::size_t> ids;
        for (std::size_t j = 0; j < len; ++j) {
          if (j != i) ids.push_back(inst.token_ids[j]);
        }
        if (ids.empty()) ids.push_back(text::kPadId);
        EXPECT_EQ(wo[i], full[cls] - probs_of(m, ids)[cls]) << to_string(e);
      }
    }
  }
}

TEST(WordOmission, DuplicatesUnderMlpScoreEqually) {
  const auto table = random_table(20, 8, 1);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::mlp, AttentionKind::tanh, TascVariant::lin), table, 2);
  const auto wo = word_omission(m, instance({6, 3, 6, 8})).scores;
  EXPECT_EQ(wo[0], wo[2]);
}

TEST(InputXGrad, EmbeddingGradientMatchesFiniteDifferences) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(2);
  for (auto e : kAllEncoders) {
    for (auto a : kAllAttentions) {
      const auto m = ModelBundle::create(tiny_config(e, a, TascVariant::feat), table, 4);
      const auto inst = random_instance(rng, 4, 20);
      const auto batch = text::make_batch(inst);
      const auto emb = vals(m.embed(batch));
      const std::size_t cls = predicted_class(m, inst);
      const auto grad = embedding_gradient(m, inst, emb, cls, Target::probability);
      auto prob_at = [&](const std::vector<double>& x) {
        const auto t = Tensor::constant({1, 4, 8}, x);
        return m.forward_embedded(batch, t, GradMode::frozen).probs.values()[cls];
      };
      const double eps = 1e-6;
      for (std::size_t k = 0; k < emb.size(); ++k) {
        auto up = emb, dn = emb;
        up[k] += eps;
        dn[k] -= eps;
        const double fd = (prob_at(up) - prob_at(dn)) / (2 * eps);
        EXPECT_LT(std::abs(fd - grad[k]) / std::max(1e-8, std::abs(fd)), 1e-5)
            << to_string(e) << "/" << to_string(a) << " k=" << k;
      }
      // Score is the per-token dot product.
      const auto ixg = inputxgrad(m, inst).scores;
      for (std::size_t i = 0; i < 4; ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < 8; ++k) dot += emb[i * 8 + k] * grad[i * 8 + k];
        EXPECT_NEAR(ixg[i], dot, 1e-15);
      }
    }
  }
}

TEST(InputXGrad, PadTokenScoresZero) {
  const auto table = random_table(20, 8, 1);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::lstm, AttentionKind::tanh, TascVariant::lin), table, 4);
  const auto s = inputxgrad(m, instance({5, text::kPadId, 7})).scores;
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NE(s[0], 0.0);
}

TEST(IntegratedGradients, ZeroInputGivesZero) {
  const auto table = random_table(20, 8, 1);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::gru, AttentionKind::tanh, TascVariant::none), table, 4);
  for (double x : integrated_gradients(m, instance({0, 0, 0})).scores) EXPECT_EQ(x, 0.0);
}

TEST(IntegratedGradients, Completeness) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(3);
  for (auto e : kAllEncoders) {
    const auto m = ModelBundle::create(tiny_config(e, AttentionKind::tanh, TascVariant::none),
                                       table, 8);
    const auto inst = random_instance(rng, 5, 20);
    const auto full = probs_of(m, inst.token_ids);
    const std::size_t cls = argmax(full);
    const auto baseline = vals(m.forward_embedded(text::make_batch(inst),
                                                  Tensor::zeros({1, 5, 8}), GradMode::frozen)
                                   .probs);
    ImportanceOptions opts;
    opts.ig_steps = 128;
    const auto ig = integrated_gradients(m, inst, opts).scores;
    const double total = std::accumulate(ig.begin(), ig.end(), 0.0);
    EXPECT_LT(std::abs(total - (full[cls] - baseline[cls])), 1e-3) << to_string(e);

    opts.ig_steps = 2;
    const auto coarse = integrated_gradients(m, inst, opts).scores;
    double diff = 0.0;
    for (std::size_t i = 0; i < 5; ++i) diff = std::max(diff, std::abs(coarse[i] - ig[i]));
    EXPECT_GT(diff, 1e-6) << to_string(e);
  }
}

TEST(IntegratedGradients, EqualsInputXGradOnLinearModel) {
  const auto table = random_table(20, 8, 1);
  const auto m = linear_model(table);
  ImportanceOptions opts;
  opts.target = Target::logit;
  for (std::size_t steps : {2, 5, 64}) {
    opts.ig_steps = steps;
    const auto inst = instance({3, 9, 14, 2});
    const auto ig = integrated_gradients(m, inst, opts).scores;
    const auto ixg = inputxgrad(m, inst, opts).scores;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(ig[i], ixg[i], 1e-12) << steps;
  }
  opts.ig_steps = 1;
  EXPECT_THROW(integrated_gradients(m, instance({3}), opts), ValidationError);
}

TEST(Metrics, DeterministicAndWellFormed) {
  const auto table = random_table(20, 8, 1);
  std::mt19937_64 rng(13);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::cnn, AttentionKind::dot, TascVariant::conv), table, 4);
  const auto inst = random_instance(rng, 6, 20);
  for (auto metric : kAllMetrics) {
    const auto a = compute(metric, m, inst);
    const auto b = compute(metric, m, inst);
    EXPECT_EQ(a.scores, b.scores);
    EXPECT_EQ(a.metric, metric);
    auto sorted = a.ranking;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
    EXPECT_EQ(a.ranking, rank_scores(a.scores));
    const auto j = to_json(a, 17);
    EXPECT_EQ(j.at("instance_id"), 17);
    EXPECT_EQ(j.at("metric"), std::string(to_string(metric)));
    EXPECT_EQ(j.at("scores").size(), 6u);
  }
}

TEST(Deletion, RemovingEverythingLeavesPad) {
  const auto inst = instance({4, 5, 6});
  const std::vector<std::size_t> all{0, 1, 2}, mid{1};
  const auto none = without_positions(inst, all);
  EXPECT_EQ(none.token_ids, (std::vector<std::size_t>{text::kPadId}));
  EXPECT_EQ(without_positions(inst, mid).token_ids, (std::vector<std::size_t>{4, 6}));
}

}  // namespace
}  // namespace tasc
