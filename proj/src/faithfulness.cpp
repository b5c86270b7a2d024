#include "tasc/faithfulness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tasc/format.hpp"

namespace tasc {

nlohmann::json to_json(const FlipRecord& r) {
  return {{"instance_id", r.instance_id},
          {"metric", std::string(to_string(r.metric))},
          {"mit_flipped", r.mit_flipped},
          {"fraction", r.fraction},
          {"tokens_removed", r.tokens_removed},
          {"never_flipped", r.never_flipped}};
}

FlipRecord flip_record_from_json(const nlohmann::json& j) {
  FlipRecord r;
  r.instance_id = j.at("instance_id").get<std::size_t>();
  r.metric = parse_metric(j.at("metric").get<std::string>());
  r.mit_flipped = j.at("mit_flipped").get<bool>();
  r.fraction = j.at("fraction").get<double>();
  r.tokens_removed = j.at("tokens_removed").get<std::size_t>();
  r.never_flipped = j.at("never_flipped").get<bool>();
  return r;
}

namespace {

void check_scores(const text::TokenizedInstance& instance, const ImportanceScores& scores) {
  if (instance.length() == 0) throw std::invalid_argument("faithfulness: empty instance");
  if (scores.ranking.size() != instance.length()) {
    throw std::invalid_argument("faithfulness: ranking length " +
                                std::to_string(scores.ranking.size()) + " != instance length " +
                                std::to_string(instance.length()));
  }
}

}  // namespace

bool flip_most_informative(const ModelBundle& model, const text::TokenizedInstance& instance,
                           const ImportanceScores& scores) {
  check_scores(instance, scores);
  const std::size_t original = predicted_class(model, instance);
  const std::size_t top[] = {scores.ranking.front()};
  return predicted_class(model, without_positions(instance, top)) != original;
}

FlipRecord flip_fraction(const ModelBundle& model, const text::TokenizedInstance& instance,
                         const ImportanceScores& scores) {
  check_scores(instance, scores);
  const std::size_t t = instance.length();
  const std::size_t original = predicted_class(model, instance);
  FlipRecord rec;
  rec.metric = scores.metric;
  for (std::size_t k = 1; k <= t; ++k) {
    const auto removed = std::span<const std::size_t>(scores.ranking).first(k);
    const bool flipped = predicted_class(model, without_positions(instance, removed)) != original;
    if (k == 1) rec.mit_flipped = flipped;
    if (flipped) {
      rec.tokens_removed = k;
      rec.fraction = static_cast<double>(k) / static_cast<double>(t);
      return rec;
    }
  }
  rec.tokens_removed = t;
  rec.fraction = 1.0;
  rec.never_flipped = true;
  return rec;
}

std::vector<FlipRecord> evaluate_faithfulness(const ModelBundle& model,
                                              std::span<const text::TokenizedInstance> instances,
                                              Metric metric, const ImportanceOptions& options,
                                              std::size_t threads) {
  std::vector<FlipRecord> out(instances.size());
  auto work = [&](std::size_t i) {
    const auto scores = compute(metric, model, instances[i], options);
    out[i] = flip_fraction(model, instances[i], scores);
    out[i].instance_id = i;
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(instances.size(), 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < instances.size(); ++i) work(i);
    return out;
  }
  // strided split; every slot is written by exactly one worker
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < instances.size(); i += threads) work(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

// ---- aggregation ------------------------------------------------------------

std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::attention: return "attention";
    case Grouping::encoder: return "encoder";
    case Grouping::dataset: return "dataset";
  }
  return "?";
}

std::string_view to_string(Measure m) { return m == Measure::mit ? "mit" : "fraction"; }

double measure_mean(std::span<const FlipRecord> records, Measure measure) {
  if (records.empty()) throw std::invalid_argument("measure_mean: no records");
  double sum = 0.0;
  for (const auto& r : records) sum += measure == Measure::mit ? (r.mit_flipped ? 1.0 : 0.0) : r.fraction;
  const double mean = sum / static_cast<double>(records.size());
  return measure == Measure::mit ? 100.0 * mean : mean;
}

std::optional<double> relative_improvement(double tasc_value, double baseline_value) {
  if (baseline_value == 0.0) return std::nullopt;
  return std::round(tasc_value / baseline_value * 10.0) / 10.0;
}

namespace {

std::string group_of(const FlipSet& s, Grouping g) {
  switch (g) {
    case Grouping::attention: return std::string(to_string(s.attention));
    case Grouping::encoder: return std::string(to_string(s.encoder));
    case Grouping::dataset: return s.dataset;
  }
  return {};
}

std::size_t metric_index(Metric m) {
  for (std::size_t i = 0; i < std::size(kAllMetrics); ++i) {
    if (kAllMetrics[i] == m) return i;
  }
  return std::size(kAllMetrics);
}

}  // namespace

AggregateTable aggregate(std::span<const FlipSet> sets, Grouping grouping, Measure measure,
                         bool require_baseline) {
  if (sets.empty()) throw std::invalid_argument("aggregate: no records");
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::pair<std::size_t, std::string>, std::map<TascVariant, Acc>> acc;
  for (const auto& s : sets) {
    if (s.records.empty()) throw std::invalid_argument("aggregate: empty FlipSet");
    for (const auto& r : s.records) {
      if (r.metric != s.metric) throw std::invalid_argument("aggregate: record metric differs from its set");
    }
    auto& a = acc[{metric_index(s.metric), group_of(s, grouping)}][s.tasc];
    a.sum += measure_mean(s.records, measure);
    ++a.n;
  }
  AggregateTable table;
  table.grouping = grouping;
  table.measure = measure;
  for (const auto& [key, cells] : acc) {
    AggregateRow row;
    row.metric = kAllMetrics[key.first];
    row.group = key.second;
    for (const auto& [variant, a] : cells) {
      row.cells[variant] = AggregateCell{a.sum / static_cast<double>(a.n), std::nullopt, a.n};
    }
    const auto base = row.cells.find(TascVariant::none);
    for (auto& [variant, cell] : row.cells) {
      if (variant == TascVariant::none) continue;
      if (base == row.cells.end()) {
        if (require_baseline) {
          throw std::invalid_argument("aggregate: no No-TaSc baseline for " +
                                      std::string(to_string(row.metric)) + " / " + row.group);
        }
        continue;
      }
      cell.relative = relative_improvement(cell.mean, base->second.mean);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

nlohmann::json to_json(const AggregateTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json cells = nlohmann::json::object();
    for (const auto& [variant, c] : r.cells) {
      cells[std::string(to_string(variant))] = {
          {"mean", c.mean},
          {"relative", c.relative ? nlohmann::json(*c.relative) : nlohmann::json()},
          {"sets", c.sets}};
    }
    rows.push_back({{"metric", std::string(to_string(r.metric))}, {"group", r.group}, {"cells", cells}});
  }
  return {{"grouping", std::string(to_string(t.grouping))},
          {"measure", std::string(to_string(t.measure))},
          {"rows", rows}};
}

std::string to_markdown(const AggregateTable& t) {
  static const char* kHeads[] = {"No-TaSc", "Lin-TaSc", "Feat-TaSc", "Conv-TaSc"};
  std::ostringstream os;
  std::string group = std::string(to_string(t.grouping));
  group[0] = static_cast<char>(std::toupper(group[0]));
  os << "| Metric | " << group;
  for (auto h : kHeads) os << " | " << h;
  os << " |\n|---|---|---:|---:|---:|---:|\n";
  for (const auto& r : t.rows) {
    os << "| " << to_string(r.metric) << " | " << r.group;
    for (TascVariant v : kAllTasc) {
      const auto it = r.cells.find(v);
      if (it == r.cells.end()) {
        os << " | " << fmt::kMissing;
        continue;
      }
      const std::string value = t.measure == Measure::mit ? fmt::percent(it->second.mean)
                                                          : fmt::fraction(it->second.mean);
      os << " | " << fmt::with_relative(value, it->second.relative);
    }
    os << " |\n";
  }
  return os.str();
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("quantile: no values");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

DistributionSummary distribution_summary(std::span<const FlipRecord> records) {
  if (records.empty()) throw std::invalid_argument("distribution_summary: no records");
  std::vector<double> f;
  f.reserve(records.size());
  for (const auto& r : records) f.push_back(r.fraction);
  return {quantile(f, 0.25), quantile(f, 0.5), quantile(f, 0.75)};
}

void write_jsonl(const std::string& path, std::span<const FlipRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_jsonl: cannot write " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw std::runtime_error("write_jsonl: write failed for " + path);
}

std::vector<FlipRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_jsonl: cannot open " + path);
  std::vector<FlipRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(flip_record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace tasc
