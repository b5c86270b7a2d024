#pragma once

// Small fixtures shared by the unit tests.

#include <memory>
#include <random>
#include <vector>

#include "tasc/model.hpp"

namespace tasc::testing {

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

/// |V| x d table, zero PAD row, N(0, 1) elsewhere.
inline std::shared_ptr<text::EmbeddingTable> random_table(std::size_t vocab, std::size_t dim,
                                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto t = std::make_shared<text::EmbeddingTable>();
  t->rows = vocab;
  t->dim = dim;
  t->data.assign(vocab * dim, 0.0);
  for (std::size_t i = dim; i < t->data.size(); ++i) t->data[i] = normal(rng);
  return t;
}

inline text::TokenizedInstance instance(std::vector<std::size_t> ids, std::size_t label = 0) {
  text::TokenizedInstance inst;
  inst.label = label;
  for (auto id : ids) inst.surface_tokens.push_back("t" + std::to_string(id));
  inst.token_ids = std::move(ids);
  return inst;
}

inline text::TokenizedInstance random_instance(std::mt19937_64& rng, std::size_t len,
                                               std::size_t vocab, std::size_t label = 0) {
  std::uniform_int_distribution<std::size_t> tok(3, vocab - 1);
  std::vector<std::size_t> ids(len);
  for (auto& id : ids) id = tok(rng);
  return instance(std::move(ids), label);
}

inline ModelConfig tiny_config(EncoderKind e, AttentionKind a, TascVariant t,
                               std::size_t hidden = 8) {
  ModelConfig c;
  c.encoder = e;
  c.attention = a;
  c.tasc = t;
  c.hidden = hidden;
  c.conv_channels = 3;
  c.num_classes = 2;
  return c;
}

}  // namespace tasc::testing
