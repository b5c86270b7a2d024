#pragma once

// Erasure-based faithfulness: delete tokens in importance order and watch
// for a change in the predicted label.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tasc/importance.hpp"

namespace tasc {

struct FlipRecord {
  std::size_t instance_id = 0;
  Metric metric = Metric::alpha;
  bool mit_flipped = false;
  double fraction = 1.0;           // tokens_removed / t, or 1.0 when never flipped
  std::size_t tokens_removed = 0;  // t when never flipped
  bool never_flipped = false;
};

nlohmann::json to_json(const FlipRecord& record);
FlipRecord flip_record_from_json(const nlohmann::json& j);

/// Delete the top-ranked token, re-run the model, compare labels.
bool flip_most_informative(const ModelBundle& model, const text::TokenizedInstance& instance,
                           const ImportanceScores& scores);

/// Remove tokens one by one in the (static) ranking order until the label
/// changes. mit_flipped is filled in from the first removal.
FlipRecord flip_fraction(const ModelBundle& model, const text::TokenizedInstance& instance,
                         const ImportanceScores& scores);

/// Scores + both tests for every instance. Instances are split across
/// `threads` workers (0 = hardware concurrency); output is in instance order
/// and identical to a serial run.
std::vector<FlipRecord> evaluate_faithfulness(const ModelBundle& model,
                                              std::span<const text::TokenizedInstance> instances,
                                              Metric metric, const ImportanceOptions& options = {},
                                              std::size_t threads = 0);

// ---- aggregation ------------------------------------------------------------

enum class Grouping { attention, encoder, dataset };
enum class Measure { mit, fraction };
std::string_view to_string(Grouping grouping);
std::string_view to_string(Measure measure);

/// FlipRecords of one trained model under one metric.
struct FlipSet {
  std::string dataset;
  EncoderKind encoder = EncoderKind::lstm;
  AttentionKind attention = AttentionKind::tanh;
  TascVariant tasc = TascVariant::none;
  std::uint64_t seed = 0;
  Metric metric = Metric::alpha;
  std::vector<FlipRecord> records;
};

/// 100 * share of MIT flips, or mean fraction.
double measure_mean(std::span<const FlipRecord> records, Measure measure);

/// tasc / baseline rounded to one decimal; nullopt when the baseline is 0.
std::optional<double> relative_improvement(double tasc_value, double baseline_value);

struct AggregateCell {
  double mean = 0.0;
  std::optional<double> relative;  // vs the No-TaSc cell of the same row
  std::size_t sets = 0;
};

struct AggregateRow {
  Metric metric = Metric::alpha;
  std::string group;
  std::map<TascVariant, AggregateCell> cells;
};

struct AggregateTable {
  Grouping grouping = Grouping::attention;
  Measure measure = Measure::mit;
  std::vector<AggregateRow> rows;  // ordered by metric, then group
};

/// Each cell is the mean of its FlipSets' means. With require_baseline, a
/// TaSc cell without a No-TaSc cell in its row is an error.
AggregateTable aggregate(std::span<const FlipSet> sets, Grouping grouping, Measure measure,
                         bool require_baseline = true);

nlohmann::json to_json(const AggregateTable& table);
std::string to_markdown(const AggregateTable& table);

struct DistributionSummary {
  double q25 = 0.0, median = 0.0, q75 = 0.0;
};

/// Linear-interpolation quantile (position p * (n - 1) in sorted order).
double quantile(std::vector<double> values, double p);
DistributionSummary distribution_summary(std::span<const FlipRecord> records);

/// One FlipRecord JSON object per line.
void write_jsonl(const std::string& path, std::span<const FlipRecord> records);
std::vector<FlipRecord> read_jsonl(const std::string& path);

}  // namespace tasc
