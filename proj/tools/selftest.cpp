#include "selftest.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include "tasc/experiment.hpp"
#include "tasc/faithfulness.hpp"
#include "tasc/format.hpp"
#include "tasc/gradcheck.hpp"
#include "tasc/importance.hpp"

namespace tasc::cli {

namespace {

constexpr std::size_t kVocab = 20, kDim = 8, kHidden = 8;

std::shared_ptr<const text::EmbeddingTable> tiny_table(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto t = std::make_shared<text::EmbeddingTable>();
  t->rows = kVocab;
  t->dim = kDim;
  t->data.resize(kVocab * kDim);
  for (std::size_t i = kDim; i < t->data.size(); ++i) t->data[i] = normal(rng);
  return t;
}

text::TokenizedInstance random_instance(std::mt19937_64& rng, std::size_t len, std::size_t label) {
  std::uniform_int_distribution<std::size_t> tok(3, kVocab - 1);
  text::TokenizedInstance inst;
  inst.label = label;
  for (std::size_t i = 0; i < len; ++i) {
    inst.token_ids.push_back(tok(rng));
    inst.surface_tokens.push_back("w" + std::to_string(inst.token_ids.back()));
  }
  return inst;
}

ModelConfig tiny_config(EncoderKind e, AttentionKind a, TascVariant t) {
  ModelConfig c;
  c.encoder = e;
  c.attention = a;
  c.tasc = t;
  c.hidden = kHidden;
  c.conv_channels = 3;
  c.num_classes = 2;
  return c;
}

struct Reporter {
  std::ostream& out;
  bool ok = true;
  void line(bool pass, const std::string& what) {
    out << (pass ? "PASS " : "FAIL ") << what << '\n';
    ok = ok && pass;
  }
};

}  // namespace

bool run_selftest(std::ostream& out) {
  Reporter rep{out};
  const auto table = tiny_table(7);
  std::mt19937_64 rng(11);
  const std::vector<text::TokenizedInstance> batch_items{
      random_instance(rng, 6, 0), random_instance(rng, 4, 1), random_instance(rng, 2, 1)};
  const auto batch = text::make_batch(std::span<const text::TokenizedInstance>(batch_items));

  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (EncoderKind e : kAllEncoders) {
    for (AttentionKind a : kAllAttentions) {
      for (TascVariant t : kAllTasc) {
        auto model = ModelBundle::create(tiny_config(e, a, t), table, 3);
        auto loss = [&] {
          const auto logp = ad::log_softmax_axis(model.forward(batch).logits, 1);
          std::vector<double> pick(batch.batch_size * 2, 0.0);
          for (std::size_t b = 0; b < batch.batch_size; ++b) pick[b * 2 + batch.labels[b]] = -1.0;
          return ad::sum_all(ad::mul(logp, ad::Tensor::constant({batch.batch_size, 2}, pick)));
        };
        // 1e-4 balances truncation against round-off in a loss of magnitude ~2
        const double err = finite_diff_check(loss, model.parameters(), 1e-4);
        worst = std::max(worst, err);
        rep.line(err < 1e-4, "gradcheck " + ModelSpec{e, a, t}.slug() + " max rel err " +
                                 std::to_string(err));
      }
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rep.line(secs < 60.0, "gradcheck suite: worst " + std::to_string(worst) + ", " + std::to_string(secs) + " s");

  // attribution + erasure oracles on one non-trivial model
  auto model = ModelBundle::create(
      tiny_config(EncoderKind::gru, AttentionKind::tanh, TascVariant::lin), table, 5);
  bool wo_ok = true, flip_ok = true, agg_ok = true;
  for (int n = 0; n < 20; ++n) {
    const auto inst = random_instance(rng, 1 + n % 6, 0);
    // word omission against plain re-prediction
    const auto wo = word_omission(model, inst);
    const auto full = predict_proba(model, inst);
    const std::size_t y = full[1] > full[0] ? 1 : 0;
    for (std::size_t i = 0; i < inst.length(); ++i) {
      auto reduced = inst;
      reduced.token_ids.erase(reduced.token_ids.begin() + static_cast<long>(i));
      if (reduced.token_ids.empty()) reduced.token_ids.push_back(text::kPadId);
      wo_ok = wo_ok && wo.scores[i] == full[y] - predict_proba(model, reduced)[y];
    }
    // greedy deletion against a direct loop
    const auto s = alpha_grad_alpha_scores(model, inst);
    const auto rec = flip_fraction(model, inst, s);
    std::size_t removed = 0;
    bool flipped = false;
    std::vector<std::size_t> gone;
    while (!flipped && removed < inst.length()) {
      gone.push_back(s.ranking[removed++]);
      flipped = predicted_class(model, without_positions(inst, gone)) != y;
    }
    flip_ok = flip_ok && rec.never_flipped == !flipped && rec.tokens_removed == removed;
    agg_ok = agg_ok && rec.fraction > 0.0 && rec.fraction <= 1.0;
  }
  rep.line(wo_ok, "word omission matches re-prediction");
  rep.line(flip_ok && agg_ok, "flip_fraction matches direct deletion loop");

  const auto inst = random_instance(rng, 5, 0);
  ImportanceOptions opt;
  opt.ig_steps = 128;
  const auto ig = integrated_gradients(model, inst, opt);
  double total = 0.0;
  for (double v : ig.scores) total += v;
  const std::size_t y = predicted_class(model, inst);
  const auto batch1 = text::make_batch(inst);
  ad::NoGradGuard guard;
  const double at_zero =
      model.forward_embedded(batch1, ad::Tensor::zeros({1, inst.length(), kDim}), GradMode::frozen)
          .probs.values()[y];
  const double gap = std::abs(total - (predict_proba(model, inst)[y] - at_zero));
  rep.line(gap < 1e-3, "integrated gradients completeness gap " + std::to_string(gap));

  const auto rel_mit = relative_improvement(14.0, 11.7);
  const auto rel_frac = relative_improvement(0.17, 0.32);
  rep.line(rel_mit && fmt::relative(*rel_mit) == "1.2" && rel_frac &&
               fmt::relative(*rel_frac) == "0.5" && fmt::f1(0.758) == ".76" &&
               fmt::percent(8.37) == "8.4" && fmt::fraction(0.171) == ".17",
           "table number formats");
  return rep.ok;
}

}  // namespace tasc::cli
