#pragma once

// Results manifest, markdown tables and HTML heat-maps.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tasc/experiment.hpp"
#include "tasc/faithfulness.hpp"

namespace tasc {

inline constexpr const char* kToolVersion = "0.1.0";

struct RunEntry {
  std::string dataset;
  ModelSpec spec{};
  std::uint64_t seed = 0;
  double test_f1 = 0.0;
  std::string record_file;      // relative to the manifest directory
  std::string checkpoint_file;
};

struct FlipEntry {
  FlipSet set;  // records are loaded from `file`
  std::string file;
};

struct ExplanationEntry {
  std::string dataset;
  ModelSpec spec{};
  std::uint64_t seed = 0;
  Metric metric = Metric::alpha;
  std::string file;  // JSON lines of ImportanceScores plus tokens
};

struct ResultsManifest {
  std::string tool_version = kToolVersion;
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();
  std::vector<RunEntry> runs;
  std::vector<FlipEntry> flips;
  std::vector<ExplanationEntry> explanations;
  std::vector<AggregateTable> aggregates;
  std::map<std::string, std::string> files;  // relative path -> FNV-1a hex

  /// Replace entries with the same key (dataset, spec, seed[, metric]).
  void upsert(RunEntry entry);
  void upsert(FlipEntry entry);
  void upsert(ExplanationEntry entry);
  /// Recompute the per-attention/encoder/dataset aggregates from `flips`.
  void refresh_aggregates();
};

/// Writes manifest.json under `dir`, hashing every referenced file.
void save_manifest(const std::string& dir, ResultsManifest& manifest);
/// Reads dir/manifest.json, checks that every referenced file exists with
/// the recorded hash, and loads the FlipRecords. Throws std::runtime_error.
ResultsManifest load_manifest(const std::string& dir);

/// Markdown: F1 table (dataset x encoder by TaSc x attention), MIT and
/// fraction tables per grouping, and the baseline comparison table.
std::string render_tables(const ResultsManifest& manifest);

std::string render_f1_table(std::span<const RunEntry> runs);
std::string render_baseline_table(std::span<const FlipSet> sets);

/// Min-max normalised intensity per token; all-equal scores map to 0.5.
std::vector<double> heatmap_intensity(std::span<const double> scores);
/// One token span per token, in order.
std::string heatmap_fragment(std::span<const std::string> tokens, std::span<const double> scores);
/// Self-contained HTML page for one instance.
std::string emit_heatmap(std::span<const std::string> tokens, std::span<const double> scores,
                         const std::string& title = "");

struct HeatmapItem {
  std::string title;
  std::vector<std::string> tokens;
  std::vector<double> scores;
};
std::string heatmap_page(std::span<const HeatmapItem> items, const std::string& title);

std::string html_escape(std::string_view s);

}  // namespace tasc
