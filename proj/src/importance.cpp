#include "tasc/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tasc {

using ad::Tensor;

std::string_view to_string(Metric metric) {
  switch (metric) {
    case Metric::alpha: return "alpha";
    case Metric::grad_alpha: return "grad_alpha";
    case Metric::alpha_grad_alpha: return "alpha_grad_alpha";
    case Metric::wo: return "wo";
    case Metric::inputxgrad: return "inputxgrad";
    case Metric::ig: return "ig";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  for (Metric m : kAllMetrics) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("metrics: unknown metric '" + std::string(name) +
                        "' (expected alpha, grad_alpha, alpha_grad_alpha, wo, inputxgrad, ig)");
}

std::vector<Metric> parse_metric_list(std::string_view csv) {
  std::vector<Metric> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t comma = std::min(csv.find(',', start), csv.size());
    std::string_view item = csv.substr(start, comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      const Metric m = parse_metric(item);
      if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    start = comma + 1;
  }
  if (out.empty()) throw ValidationError("metrics: empty metric list");
  return out;
}

std::string_view to_string(Target target) {
  return target == Target::probability ? "probability" : "logit";
}

Target parse_target(std::string_view name) {
  if (name == "probability") return Target::probability;
  if (name == "logit") return Target::logit;
  throw ValidationError("target: unknown value '" + std::string(name) +
                        "' (expected probability or logit)");
}

std::vector<std::size_t> rank_scores(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

ImportanceScores make_scores(Metric metric, std::vector<double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) {
      throw std::runtime_error(std::string("importance: non-finite ") +
                               std::string(to_string(metric)) + " score");
    }
  }
  ImportanceScores out;
  out.metric = metric;
  out.ranking = rank_scores(scores);
  out.scores = std::move(scores);
  return out;
}

namespace {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

double target_value(const ForwardResult& r, std::size_t cls, Target target) {
  const auto& t = target == Target::probability ? r.probs : r.logits;
  return t.values()[cls];
}

// Sum over batch rows of the chosen output column, as a differentiable scalar.
Tensor target_tensor(const ForwardResult& r, std::size_t cls, Target target) {
  const Tensor& out = target == Target::probability ? r.probs : r.logits;
  const std::size_t rows = out.dim(0), classes = out.dim(1);
  std::vector<double> pick(rows * classes, 0.0);
  for (std::size_t b = 0; b < rows; ++b) pick[b * classes + cls] = 1.0;
  return ad::sum_all(ad::mul(out, Tensor::constant({rows, classes}, std::move(pick))));
}

ForwardResult run_frozen(const ModelBundle& model, const text::TokenizedInstance& instance) {
  ad::NoGradGuard no_grad;
  return model.forward(text::make_batch(instance), GradMode::frozen);
}

}  // namespace

std::vector<double> predict_proba(const ModelBundle& model,
                                  const text::TokenizedInstance& instance) {
  const ad::Tensor probs = run_frozen(model, instance).probs;
  const auto v = probs.values();
  return {v.begin(), v.end()};
}

std::size_t predicted_class(const ModelBundle& model, const text::TokenizedInstance& instance) {
  return argmax(predict_proba(model, instance));
}

text::TokenizedInstance without_positions(const text::TokenizedInstance& instance,
                                          std::span<const std::size_t> positions) {
  std::vector<bool> drop(instance.length(), false);
  for (auto p : positions) {
    if (p >= instance.length()) throw std::out_of_range("without_positions: position out of range");
    drop[p] = true;
  }
  text::TokenizedInstance out;
  out.label = instance.label;
  for (std::size_t i = 0; i < instance.length(); ++i) {
    if (drop[i]) continue;
    out.token_ids.push_back(instance.token_ids[i]);
    if (i < instance.surface_tokens.size()) out.surface_tokens.push_back(instance.surface_tokens[i]);
  }
  if (out.token_ids.empty()) {
    out.token_ids.push_back(text::kPadId);
    out.surface_tokens.assign(1, std::string(text::kPadToken));
  }
  return out;
}

ImportanceScores alpha_scores(const ModelBundle& model, const text::TokenizedInstance& instance,
                              const ImportanceOptions& options) {
  const auto r = run_frozen(model, instance);
  const auto a = r.alpha.values();
  std::vector<double> scores(a.begin(), a.end());
  if (options.scale_by_tasc && model.config().tasc != TascVariant::none) {
    const auto s = r.scores.values();
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= s[i];
  }
  return make_scores(Metric::alpha, std::move(scores));
}

namespace {

// alpha and d target / d alpha with alpha treated as free pooling weights.
std::pair<std::vector<double>, std::vector<double>> alpha_and_grad(
    const ModelBundle& model, const text::TokenizedInstance& instance, Target target) {
  const auto r = run_frozen(model, instance);
  const std::size_t cls = argmax(r.probs.values());
  const auto a = r.alpha.values();
  Tensor alpha = Tensor::parameter(r.alpha.shape(), {a.begin(), a.end()}, "alpha");
  std::optional<Tensor> scores;
  if (model.config().tasc != TascVariant::none) scores = r.scores.detach();
  const Tensor c = pool(r.hidden.detach(), alpha, scores);
  ForwardResult head;
  head.logits = ad::add(ad::matmul(c, model.output_weight().detach()),
                        model.output_bias().detach());
  head.probs = ad::softmax_axis(head.logits, 1);
  ad::backward(target_tensor(head, cls, target));
  const auto g = alpha.grad();
  return {{a.begin(), a.end()}, {g.begin(), g.end()}};
}

}  // namespace

ImportanceScores grad_alpha_scores(const ModelBundle& model,
                                   const text::TokenizedInstance& instance,
                                   const ImportanceOptions& options) {
  return make_scores(Metric::grad_alpha, alpha_and_grad(model, instance, options.target).second);
}

ImportanceScores alpha_grad_alpha_scores(const ModelBundle& model,
                                         const text::TokenizedInstance& instance,
                                         const ImportanceOptions& options) {
  auto [a, g] = alpha_and_grad(model, instance, options.target);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= g[i];
  return make_scores(Metric::alpha_grad_alpha, std::move(a));
}

ImportanceScores word_omission(const ModelBundle& model, const text::TokenizedInstance& instance,
                               const ImportanceOptions& options) {
  const auto full = run_frozen(model, instance);
  const std::size_t cls = argmax(full.probs.values());
  const double base = target_value(full, cls, options.target);
  std::vector<double> scores(instance.length());
  for (std::size_t i = 0; i < instance.length(); ++i) {
    const std::size_t pos[] = {i};
    const auto reduced = run_frozen(model, without_positions(instance, pos));
    scores[i] = base - target_value(reduced, cls, options.target);
  }
  return make_scores(Metric::wo, std::move(scores));
}

std::vector<double> embedding_gradient(const ModelBundle& model,
                                       const text::TokenizedInstance& instance,
                                       std::span<const double> embedded, std::size_t target_class,
                                       Target target) {
  const auto batch = text::make_batch(instance);
  const std::size_t dim = model.embeddings().dim;
  if (embedded.size() != instance.length() * dim) {
    throw ad::ShapeError("embedding_gradient: expected " + std::to_string(instance.length() * dim) +
                         " values, got " + std::to_string(embedded.size()));
  }
  Tensor e = Tensor::parameter({1, instance.length(), dim}, {embedded.begin(), embedded.end()}, "e");
  const auto r = model.forward_embedded(batch, e, GradMode::frozen);
  ad::backward(target_tensor(r, target_class, target));
  const auto g = e.grad();
  return {g.begin(), g.end()};
}

namespace {

std::vector<double> lookup(const ModelBundle& model, const text::TokenizedInstance& instance) {
  const auto& table = model.embeddings();
  std::vector<double> out;
  out.reserve(instance.length() * table.dim);
  for (auto id : instance.token_ids) {
    const auto row = table.row(id);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

std::vector<double> per_token_dot(std::span<const double> e, std::span<const double> g,
                                  std::size_t t, std::size_t d) {
  std::vector<double> out(t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += e[i * d + k] * g[i * d + k];
    out[i] = s;
  }
  return out;
}

}  // namespace

ImportanceScores inputxgrad(const ModelBundle& model, const text::TokenizedInstance& instance,
                            const ImportanceOptions& options) {
  const std::size_t cls = predicted_class(model, instance);
  const auto e = lookup(model, instance);
  const auto g = embedding_gradient(model, instance, e, cls, options.target);
  return make_scores(Metric::inputxgrad,
                     per_token_dot(e, g, instance.length(), model.embeddings().dim));
}

ImportanceScores integrated_gradients(const ModelBundle& model,
                                      const text::TokenizedInstance& instance,
                                      const ImportanceOptions& options) {
  const std::size_t steps = options.ig_steps;
  if (steps < 2) throw ValidationError("ig_steps: must be >= 2");
  const std::size_t cls = predicted_class(model, instance);
  const std::size_t t = instance.length(), d = model.embeddings().dim;
  const auto e = lookup(model, instance);

  // All path points go through one batched forward; rows never interact.
  std::vector<text::TokenizedInstance> copies(steps, instance);
  const auto batch = text::make_batch(std::span<const text::TokenizedInstance>(copies));
  std::vector<double> path(steps * t * d);
  for (std::size_t k = 0; k < steps; ++k) {
    const double a = static_cast<double>(k) / static_cast<double>(steps - 1);
    for (std::size_t j = 0; j < t * d; ++j) path[k * t * d + j] = a * e[j];
  }
  Tensor points = Tensor::parameter({steps, t, d}, std::move(path), "ig_path");
  const auto r = model.forward_embedded(batch, points, GradMode::frozen);
  ad::backward(target_tensor(r, cls, options.target));
  const auto g = points.grad();

  // trapezoid rule: half weight on both end points
  std::vector<double> avg(t * d, 0.0);
  for (std::size_t k = 0; k < steps; ++k) {
    const double w = (k == 0 || k + 1 == steps) ? 0.5 : 1.0;
    for (std::size_t j = 0; j < t * d; ++j) avg[j] += w * g[k * t * d + j];
  }
  for (auto& v : avg) v /= static_cast<double>(steps - 1);
  return make_scores(Metric::ig, per_token_dot(e, avg, t, d));
}

ImportanceScores compute(Metric metric, const ModelBundle& model,
                         const text::TokenizedInstance& instance,
                         const ImportanceOptions& options) {
  switch (metric) {
    case Metric::alpha: return alpha_scores(model, instance, options);
    case Metric::grad_alpha: return grad_alpha_scores(model, instance, options);
    case Metric::alpha_grad_alpha: return alpha_grad_alpha_scores(model, instance, options);
    case Metric::wo: return word_omission(model, instance, options);
    case Metric::inputxgrad: return inputxgrad(model, instance, options);
    case Metric::ig: return integrated_gradients(model, instance, options);
  }
  throw std::logic_error("compute: unknown metric");
}

nlohmann::json to_json(const ImportanceScores& s, std::size_t instance_id) {
  return {{"instance_id", instance_id},
          {"metric", std::string(to_string(s.metric))},
          {"scores", s.scores},
          {"ranking", s.ranking}};
}

}  // namespace tasc
