#pragma once

// Token-importance metrics: attention-based (alpha, grad_alpha,
// alpha_grad_alpha) and the non-attention baselines (word omission,
// input x gradient, integrated gradients).

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tasc/model.hpp"

namespace tasc {

enum class Metric { alpha, grad_alpha, alpha_grad_alpha, wo, inputxgrad, ig };

inline constexpr Metric kAllMetrics[] = {Metric::alpha,      Metric::grad_alpha,
                                         Metric::alpha_grad_alpha, Metric::wo,
                                         Metric::inputxgrad, Metric::ig};
inline constexpr Metric kAttentionMetrics[] = {Metric::alpha, Metric::grad_alpha,
                                               Metric::alpha_grad_alpha};

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view name);  // throws ValidationError
/// Comma-separated list, e.g. "alpha,ig".
std::vector<Metric> parse_metric_list(std::string_view csv);

enum class Target { probability, logit };
std::string_view to_string(Target target);
Target parse_target(std::string_view name);

struct ImportanceOptions {
  Target target = Target::probability;
  std::size_t ig_steps = 64;
  /// Rank by alpha * s instead of alpha on TaSc models (exploration only).
  bool scale_by_tasc = false;
};

struct ImportanceScores {
  Metric metric = Metric::alpha;
  std::vector<double> scores;
  std::vector<std::size_t> ranking;
};

/// Positions by descending score; ties go to the lower position.
std::vector<std::size_t> rank_scores(std::span<const double> scores);
ImportanceScores make_scores(Metric metric, std::vector<double> scores);

/// Predicted class on the full input (ties -> lower class).
std::size_t predicted_class(const ModelBundle& model, const text::TokenizedInstance& instance);
/// Probability row for one instance.
std::vector<double> predict_proba(const ModelBundle& model, const text::TokenizedInstance& instance);

/// The instance with `positions` deleted. Deleting everything leaves a single
/// PAD token that counts as a real position.
text::TokenizedInstance without_positions(const text::TokenizedInstance& instance,
                                          std::span<const std::size_t> positions);

ImportanceScores alpha_scores(const ModelBundle& model, const text::TokenizedInstance& instance,
                              const ImportanceOptions& options = {});
ImportanceScores grad_alpha_scores(const ModelBundle& model,
                                   const text::TokenizedInstance& instance,
                                   const ImportanceOptions& options = {});
ImportanceScores alpha_grad_alpha_scores(const ModelBundle& model,
                                         const text::TokenizedInstance& instance,
                                         const ImportanceOptions& options = {});
ImportanceScores word_omission(const ModelBundle& model, const text::TokenizedInstance& instance,
                               const ImportanceOptions& options = {});
ImportanceScores inputxgrad(const ModelBundle& model, const text::TokenizedInstance& instance,
                            const ImportanceOptions& options = {});
ImportanceScores integrated_gradients(const ModelBundle& model,
                                      const text::TokenizedInstance& instance,
                                      const ImportanceOptions& options = {});

ImportanceScores compute(Metric metric, const ModelBundle& model,
                         const text::TokenizedInstance& instance,
                         const ImportanceOptions& options = {});

/// d target / d e_i for every position, [t * d] row-major.
std::vector<double> embedding_gradient(const ModelBundle& model,
                                       const text::TokenizedInstance& instance,
                                       std::span<const double> embedded, std::size_t target_class,
                                       Target target);

nlohmann::json to_json(const ImportanceScores& scores, std::size_t instance_id);

}  // namespace tasc
