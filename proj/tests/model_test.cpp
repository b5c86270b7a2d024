#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "tasc/model.hpp"
#include "test_util.hpp"

namespace tasc {
namespace {

using ad::Tensor;
using testing::instance;
using testing::random_table;
using testing::tiny_config;

Tensor ones_mask(std::size_t b, std::size_t t) { return Tensor::full({b, t}, 1.0); }

// Owning copy; a span from values() dies with its tensor.
std::vector<double> vals(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Copy every parameter of `from` whose name also exists in `to`.
void copy_shared(const ModelBundle& from, ModelBundle& to) {
  std::map<std::string, std::vector<double>> by_name;
  for (const auto& p : from.parameters()) by_name[p.name()] = {p.values().begin(), p.values().end()};
  for (auto& p : to.parameters()) {
    auto it = by_name.find(p.name());
    if (it == by_name.end()) continue;
    std::copy(it->second.begin(), it->second.end(), p.mutable_values().begin());
  }
}

TEST(Encoder, LstmWithZeroWeightsStaysAtZero) {
  const auto table = random_table(10, 4, 1);
  auto m = ModelBundle::create(tiny_config(EncoderKind::lstm, AttentionKind::dot, TascVariant::none),
                               table, 5);
  for (auto* rp : {&m.encoder().forward, &m.encoder().backward}) {
    for (auto* t : {&rp->w_ih, &rp->w_hh, &rp->b_ih}) {
      for (auto& x : t->mutable_values()) x = 0.0;
    }
  }
  const auto batch = text::make_batch(instance({3, 4, 5, 6}));
  const auto h = encode(m.encoder(), m.embed(batch), ones_mask(1, 4));
  ASSERT_EQ(h.shape(), (ad::Shape{1, 4, 8}));
  for (double x : h.values()) EXPECT_EQ(x, 0.0);
}

TEST(Encoder, MlpIsPositionwise) {
  const auto table = random_table(10, 4, 2);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::mlp, AttentionKind::dot, TascVariant::none), table, 1);
  const auto batch = text::make_batch(instance({7, 3, 7, 5, 7}));
  const auto h = encode(m.encoder(), m.embed(batch), ones_mask(1, 5));
  const auto v = h.values();
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(v[0 * 8 + k], v[2 * 8 + k]);
    EXPECT_EQ(v[0 * 8 + k], v[4 * 8 + k]);
    EXPECT_GE(v[k], 0.0);
  }
}

TEST(Encoder, RecurrentEncodersAreContextual) {
  const auto table = random_table(10, 4, 2);
  for (auto kind : {EncoderKind::lstm, EncoderKind::gru, EncoderKind::cnn}) {
    const auto m = ModelBundle::create(tiny_config(kind, AttentionKind::dot, TascVariant::none),
                                       table, 1);
    const auto batch = text::make_batch(instance({7, 3, 7, 5}));
    const auto h = encode(m.encoder(), m.embed(batch), ones_mask(1, 4));
    const auto v = h.values();
    bool differs = false;
    for (std::size_t k = 0; k < 8; ++k) differs = differs || v[k] != v[2 * 8 + k];
    EXPECT_TRUE(differs) << to_string(kind);
  }
}

TEST(Encoder, CnnPreservesLength) {
  const auto table = random_table(10, 4, 2);
  const auto m = ModelBundle::create(
      tiny_config(EncoderKind::cnn, AttentionKind::dot, TascVariant::none), table, 1);
  const auto batch = text::make_batch(instance({3, 4}));
  EXPECT_EQ(encode(m.encoder(), m.embed(batch), ones_mask(1, 2)).shape(), (ad::Shape{1, 2, 8}));
}

TEST(Encoder, EmptySequenceRejected) {
  EncoderParams p;
  EXPECT_THROW(encode(p, Tensor::zeros({1, 0, 4}), Tensor::zeros({1, 0})), ad::ShapeError);
}

TEST(Attention, DotExample) {
  AttentionParams p;
  p.kind = AttentionKind::dot;
  p.query = Tensor::constant({4, 1}, {1, 0, 0, 0});
  const auto h = Tensor::constant({1, 2, 4}, {2, 0, 0, 0, 0, 0, 0, 0});
  const auto a = vals(attention(p, h, ones_mask(1, 2)));
  const double e = std::exp(1.0);
  EXPECT_NEAR(a[0], e / (e + 1), 1e-12);
  EXPECT_NEAR(a[1], 1 / (e + 1), 1e-12);
  EXPECT_NEAR(a[0], 0.7311, 1e-4);
}

TEST(Attention, SymmetryAndSingleToken) {
  for (auto kind : kAllAttentions) {
    AttentionParams p;
    p.kind = kind;
    p.query = Tensor::constant({3, 1}, {0.3, -1.2, 0.5});
    p.weight = Tensor::constant({3, 3}, testing::uniform(9, -1, 1, 4));
    const auto h = Tensor::constant({1, 2, 3}, {1, 2, 3, 1, 2, 3});
    const auto a = vals(attention(p, h, ones_mask(1, 2)));
    EXPECT_DOUBLE_EQ(a[0], 0.5);
    EXPECT_DOUBLE_EQ(a[1], 0.5);
    const auto one = attention(p, Tensor::constant({1, 1, 3}, {4, 5, 6}), ones_mask(1, 1));
    EXPECT_EQ(one.values()[0], 1.0);
  }
}

TEST(Attention, MaskedPositionsGetNoWeight) {
  AttentionParams p;
  p.kind = AttentionKind::dot;
  p.query = Tensor::constant({2, 1}, {1, -1});
  const auto h = Tensor::constant({1, 3, 2}, testing::uniform(6, -2, 2, 9));
  const auto a = vals(attention(p, h, Tensor::constant({1, 3}, {1, 1, 0})));
  EXPECT_EQ(a[2], 0.0);
  EXPECT_NEAR(a[0] + a[1], 1.0, 1e-12);
  EXPECT_ANY_THROW(attention(p, h, Tensor::zeros({1, 3})));
}

TEST(Tasc, LinFeatConvExamples) {
  const std::vector<std::size_t> ids{0};
  TascParams lin;
  lin.variant = TascVariant::lin;
  lin.u = Tensor::constant({1, 1}, {2.0});
  const auto e = Tensor::constant({1, 1, 3}, {0.5, -0.5, 1.0});
  EXPECT_DOUBLE_EQ(tasc_score(lin, ids, e).values()[0], 2.0);

  TascParams feat;
  feat.variant = TascVariant::feat;
  feat.u_matrix = Tensor::constant({1, 3}, {1, 0, -1});
  EXPECT_DOUBLE_EQ(tasc_score(feat, ids, Tensor::constant({1, 1, 3}, {0.5, 9, 0.25})).values()[0],
                   0.25);

  TascParams conv = lin;
  conv.variant = TascVariant::conv;
  conv.conv_weight = Tensor::constant({1, 1, 1}, {1.0});
  conv.conv_bias = Tensor::constant({1}, {0.0});
  // A single identity channel is only well-defined per embedding dimension;
  // broadcast it by using a one-dimensional embedding.
  const auto e1 = Tensor::constant({1, 1, 1}, {0.75});
  EXPECT_EQ(tasc_score(conv, ids, e1).values()[0], tasc_score(lin, ids, e1).values()[0]);

  TascParams none;
  EXPECT_THROW(tasc_score(none, ids, e), std::invalid_argument);
}

TEST(Tasc, ConvIdentityFilterEqualsLin) {
  // d identity-like channels: channel c reads dimension c with weight 1.
  const std::size_t d = 3;
  const std::vector<std::size_t> ids{1, 0};
  TascParams lin;
  lin.variant = TascVariant::lin;
  lin.u = Tensor::constant({2, 1}, {1.5, -0.5});
  TascParams conv = lin;
  conv.variant = TascVariant::conv;
  std::vector<double> w(d * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) w[c * d + c] = 1.0;  // [1, d, n] row-major, n = d
  conv.conv_weight = Tensor::constant({1, d, d}, w);
  conv.conv_bias = Tensor::constant({d}, {0, 0, 0});
  const auto e = Tensor::constant({1, 2, d}, {0.5, -1, 2, 3, 0.25, -0.75});
  const auto a = vals(tasc_score(lin, ids, e));
  const auto b = vals(tasc_score(conv, ids, e));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(Pool, Examples) {
  const auto h = Tensor::constant({1, 2, 2}, {1, 0, 0, 1});
  const auto c = pool(h, Tensor::constant({1, 2}, {0.5, 0.5}), Tensor::constant({1, 2}, {2, 0}));
  EXPECT_EQ(c.values()[0], 1.0);
  EXPECT_EQ(c.values()[1], 0.0);

  const auto a = Tensor::constant({1, 2}, {0.3, 0.7});
  const auto plain = vals(pool(h, a));
  const auto ones = vals(pool(h, a, Tensor::full({1, 2}, 1.0)));
  EXPECT_EQ(plain[0], ones[0]);
  EXPECT_EQ(plain[1], ones[1]);
  EXPECT_THROW(pool(h, Tensor::constant({1, 3}, {1, 1, 1})), ad::ShapeError);
}

TEST(ParameterCount, Formulas) {
  EXPECT_EQ(parameter_count(TascVariant::lin, 1000, 300, 15), 1000u);
  EXPECT_EQ(parameter_count(TascVariant::feat, 1000, 300, 15), 300000u);
  EXPECT_EQ(parameter_count(TascVariant::conv, 1000, 300, 15), 5515u);
  EXPECT_EQ(parameter_count(TascVariant::none, 1000, 300, 15), 0u);
}

TEST(ParameterCount, MatchesAllocatedTensors) {
  const auto table = random_table(20, 8, 3);
  const auto base = ModelBundle::create(
      tiny_config(EncoderKind::gru, AttentionKind::tanh, TascVariant::none), table, 1);
  auto count = [](const ModelBundle& m) {
    std::size_t n = 0;
    for (const auto& p : m.parameters()) n += p.size();
    return n;
  };
  for (auto v : {TascVariant::lin, TascVariant::feat, TascVariant::conv}) {
    const auto m = ModelBundle::create(tiny_config(EncoderKind::gru, AttentionKind::tanh, v),
                                       table, 1);
    EXPECT_EQ(count(m) - count(base), parameter_count(v, 20, 8, 3)) << to_string(v);
  }
}

TEST(Forward, ProbabilitiesSumToOne) {
  const auto table = random_table(20, 8, 3);
  std::mt19937_64 rng(4);
  for (auto e : kAllEncoders) {
    for (auto t : kAllTasc) {
      auto cfg = tiny_config(e, AttentionKind::tanh, t);
      cfg.num_classes = 3;
      const auto m = ModelBundle::create(cfg, table, 2);
      std::vector<text::TokenizedInstance> items;
      for (std::size_t len : {1, 4, 6}) items.push_back(testing::random_instance(rng, len, 20));
      const auto out = m.forward(text::make_batch(std::span<const text::TokenizedInstance>(items)));
      const auto p = out.probs.values();
      for (std::size_t b = 0; b < 3; ++b) {
        EXPECT_NEAR(p[b * 3] + p[b * 3 + 1] + p[b * 3 + 2], 1.0, 1e-9);
      }
      const auto a = out.alpha.values();
      for (std::size_t b = 0; b < 3; ++b) {
        double s = 0;
        for (std::size_t i = 0; i < 6; ++i) {
          EXPECT_GE(a[b * 6 + i], 0.0);
          s += a[b * 6 + i];
        }
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Forward, ZeroOutputWeightsGiveUniform) {
  const auto table = random_table(20, 8, 3);
  auto cfg = tiny_config(EncoderKind::cnn, AttentionKind::dot, TascVariant::feat);
  cfg.num_classes = 4;
  auto m = ModelBundle::create(cfg, table, 2);
  for (auto& x : m.output_weight().mutable_values()) x = 0.0;
  for (auto& x : m.output_bias().mutable_values()) x = 0.0;
  const auto p = m.forward(text::make_batch(instance({3, 9, 4}))).probs;
  for (double x : p.values()) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(Forward, UnitScaleReducesToPlainPooling) {
  const auto table = random_table(20, 8, 3);
  std::mt19937_64 rng(8);
  for (auto e : kAllEncoders) {
    for (auto a : kAllAttentions) {
      const auto plain = ModelBundle::create(tiny_config(e, a, TascVariant::none), table, 2);
      for (auto v : {TascVariant::lin, TascVariant::feat, TascVariant::conv}) {
        auto scaled = ModelBundle::create(tiny_config(e, a, v), table, 9);
        copy_shared(plain, scaled);
        scaled.set_scale_override(1.0);
        const auto inst = testing::random_instance(rng, 5, 20);
        const auto batch = text::make_batch(inst);
        const auto p = plain.forward(batch).probs;
        const auto q = scaled.forward(batch).probs;
        for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(p.values()[c], q.values()[c]);
      }
    }
  }
}

TEST(Forward, TascScoresIgnoreContext) {
  const auto table = random_table(20, 8, 3);
  std::mt19937_64 rng(12);
  for (auto v : {TascVariant::lin, TascVariant::feat, TascVariant::conv}) {
    const auto m = ModelBundle::create(tiny_config(EncoderKind::lstm, AttentionKind::tanh, v),
                                       table, 4);
    auto inst = testing::random_instance(rng, 6, 20);
    const auto s0 = m.forward(text::make_batch(inst)).scores.values()[2];
    for (int trial = 0; trial < 20; ++trial) {
      auto other = testing::random_instance(rng, 6, 20);
      other.token_ids[2] = inst.token_ids[2];
      EXPECT_EQ(m.forward(text::make_batch(other)).scores.values()[2], s0);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto table = random_table(20, 8, 3);
  std::vector<std::string> tokens{"<pad>", "<unk>", "q"};
  for (int i = 3; i < 20; ++i) tokens.push_back("w" + std::to_string(i));
  const auto vocab = text::Vocab::from_tokens(tokens);
  const auto path = (std::filesystem::temp_directory_path() / "tasc_model_test.ckpt").string();
  for (auto v : kAllTasc) {
    const auto m = ModelBundle::create(tiny_config(EncoderKind::gru, AttentionKind::tanh, v),
                                       table, 6);
    save_checkpoint(path, m, vocab, {{"seed", 6}});
    const auto loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.vocab.hash(), vocab.hash());
    EXPECT_EQ(loaded.header.at("extra").at("seed"), 6);
    const auto batch = text::make_batch(instance({3, 8, 12, 19}));
    const auto p = vals(m.forward(batch).probs);
    const auto probs = loaded.model.forward(batch).probs;
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(p[c], probs.values()[c]);
    EXPECT_EQ(loaded.model.embeddings().data, table->data);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "tasc_garbage.ckpt").string();
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_ANY_THROW(load_checkpoint(path));
  std::filesystem::remove(path);
}

TEST(Config, ValidationAndJson) {
  auto c = tiny_config(EncoderKind::cnn, AttentionKind::tanh, TascVariant::conv);
  c.hidden = 6;  // not divisible by 4 kernels
  EXPECT_THROW(c.validate(), ValidationError);
  c.hidden = 8;
  c.scale_override = 2.0;
  const auto back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(parse_encoder("transformer"), ValidationError);
}

}  // namespace
}  // namespace tasc
