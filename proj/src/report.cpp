#include "tasc/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "tasc/format.hpp"

namespace fs = std::filesystem;

namespace tasc {

namespace {

nlohmann::json spec_json(const std::string& dataset, const ModelSpec& s, std::uint64_t seed) {
  return {{"dataset", dataset},
          {"encoder", std::string(to_string(s.encoder))},
          {"attention", std::string(to_string(s.attention))},
          {"tasc", std::string(to_string(s.tasc))},
          {"seed", seed}};
}

ModelSpec spec_from(const nlohmann::json& j) {
  return {parse_encoder(j.at("encoder").get<std::string>()),
          parse_attention(j.at("attention").get<std::string>()),
          parse_tasc(j.at("tasc").get<std::string>())};
}

auto key_of(const std::string& dataset, const ModelSpec& s, std::uint64_t seed) {
  return std::make_tuple(dataset, s.encoder, s.attention, s.tasc, seed);
}

template <typename Entry, typename Key>
void upsert_into(std::vector<Entry>& list, Entry entry, Key key) {
  for (auto& e : list) {
    if (key(e) == key(entry)) {
      e = std::move(entry);
      return;
    }
  }
  list.push_back(std::move(entry));
}

}  // namespace

void ResultsManifest::upsert(RunEntry entry) {
  upsert_into(runs, std::move(entry),
              [](const RunEntry& e) { return key_of(e.dataset, e.spec, e.seed); });
}

void ResultsManifest::upsert(FlipEntry entry) {
  upsert_into(flips, std::move(entry), [](const FlipEntry& e) {
    return std::make_tuple(key_of(e.set.dataset, {e.set.encoder, e.set.attention, e.set.tasc},
                                  e.set.seed),
                           e.set.metric);
  });
}

void ResultsManifest::upsert(ExplanationEntry entry) {
  upsert_into(explanations, std::move(entry), [](const ExplanationEntry& e) {
    return std::make_tuple(key_of(e.dataset, e.spec, e.seed), e.metric);
  });
}

void ResultsManifest::refresh_aggregates() {
  aggregates.clear();
  std::vector<FlipSet> sets;
  for (const auto& f : flips) sets.push_back(f.set);
  if (sets.empty()) return;
  for (Measure m : {Measure::mit, Measure::fraction}) {
    for (Grouping g : {Grouping::attention, Grouping::encoder, Grouping::dataset}) {
      aggregates.push_back(aggregate(sets, g, m, /*require_baseline=*/false));
    }
  }
}

void save_manifest(const std::string& dir, ResultsManifest& m) {
  fs::create_directories(dir);
  m.files.clear();
  auto track = [&](const std::string& rel) {
    if (!rel.empty()) m.files[rel] = hash_file((fs::path(dir) / rel).string());
  };
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : m.runs) {
    auto j = spec_json(r.dataset, r.spec, r.seed);
    j["test_f1"] = r.test_f1;
    j["record"] = r.record_file;
    j["checkpoint"] = r.checkpoint_file;
    runs.push_back(j);
    track(r.record_file);
    track(r.checkpoint_file);
  }
  nlohmann::json flips = nlohmann::json::array();
  for (const auto& f : m.flips) {
    auto j = spec_json(f.set.dataset, {f.set.encoder, f.set.attention, f.set.tasc}, f.set.seed);
    j["metric"] = std::string(to_string(f.set.metric));
    j["file"] = f.file;
    j["instances"] = f.set.records.size();
    flips.push_back(j);
    track(f.file);
  }
  nlohmann::json expl = nlohmann::json::array();
  for (const auto& e : m.explanations) {
    auto j = spec_json(e.dataset, e.spec, e.seed);
    j["metric"] = std::string(to_string(e.metric));
    j["file"] = e.file;
    expl.push_back(j);
    track(e.file);
  }
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : m.aggregates) aggs.push_back(to_json(a));
  const nlohmann::json out = {{"tool_version", m.tool_version}, {"config_hash", m.config_hash},
                              {"config", m.config},             {"runs", runs},
                              {"flips", flips},                 {"explanations", expl},
                              {"aggregates", aggs},             {"files", m.files}};
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("save_manifest: cannot write " + path);
  f << out.dump(2) << '\n';
}

ResultsManifest load_manifest(const std::string& dir) {
  const auto path = (fs::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("load_manifest: " + path + ": " + e.what());
  }
  ResultsManifest m;
  m.tool_version = j.value("tool_version", "");
  m.config_hash = j.value("config_hash", "");
  m.config = j.value("config", nlohmann::json::object());
  m.files = j.value("files", std::map<std::string, std::string>{});
  auto verify = [&](const std::string& rel) {
    if (rel.empty()) return;
    const auto full = (fs::path(dir) / rel).string();
    if (!fs::exists(full)) throw std::runtime_error("load_manifest: missing file " + rel);
    const auto it = m.files.find(rel);
    if (it == m.files.end()) throw std::runtime_error("load_manifest: no hash recorded for " + rel);
    if (hash_file(full) != it->second) throw std::runtime_error("load_manifest: hash mismatch for " + rel);
  };
  for (const auto& r : j.value("runs", nlohmann::json::array())) {
    RunEntry e;
    e.dataset = r.at("dataset").get<std::string>();
    e.spec = spec_from(r);
    e.seed = r.at("seed").get<std::uint64_t>();
    e.test_f1 = r.at("test_f1").get<double>();
    e.record_file = r.value("record", "");
    e.checkpoint_file = r.value("checkpoint", "");
    verify(e.record_file);
    verify(e.checkpoint_file);
    m.runs.push_back(std::move(e));
  }
  for (const auto& r : j.value("flips", nlohmann::json::array())) {
    FlipEntry e;
    e.set.dataset = r.at("dataset").get<std::string>();
    const auto s = spec_from(r);
    e.set.encoder = s.encoder;
    e.set.attention = s.attention;
    e.set.tasc = s.tasc;
    e.set.seed = r.at("seed").get<std::uint64_t>();
    e.set.metric = parse_metric(r.at("metric").get<std::string>());
    e.file = r.at("file").get<std::string>();
    verify(e.file);
    e.set.records = read_jsonl((fs::path(dir) / e.file).string());
    m.flips.push_back(std::move(e));
  }
  for (const auto& r : j.value("explanations", nlohmann::json::array())) {
    ExplanationEntry e;
    e.dataset = r.at("dataset").get<std::string>();
    e.spec = spec_from(r);
    e.seed = r.at("seed").get<std::uint64_t>();
    e.metric = parse_metric(r.at("metric").get<std::string>());
    e.file = r.at("file").get<std::string>();
    verify(e.file);
    m.explanations.push_back(std::move(e));
  }
  m.refresh_aggregates();
  return m;
}

// ---- tables -------------------------------------------------------------------

namespace {

const char* tasc_heading(TascVariant v) {
  switch (v) {
    case TascVariant::none: return "No-TaSc";
    case TascVariant::lin: return "Lin-TaSc";
    case TascVariant::feat: return "Feat-TaSc";
    case TascVariant::conv: return "Conv-TaSc";
  }
  return "?";
}

std::string attention_heading(AttentionKind a) { return a == AttentionKind::dot ? "Dot" : "Tanh"; }

std::string encoder_heading(EncoderKind e) {
  switch (e) {
    case EncoderKind::lstm: return "LSTM";
    case EncoderKind::gru: return "GRU";
    case EncoderKind::cnn: return "CNN";
    case EncoderKind::mlp: return "MLP";
  }
  return "?";
}

std::string metric_heading(Metric m) {
  switch (m) {
    case Metric::alpha: return "α";
    case Metric::grad_alpha: return "∇α";
    case Metric::alpha_grad_alpha: return "α∇α";
    case Metric::wo: return "WO";
    case Metric::inputxgrad: return "x∇x";
    case Metric::ig: return "IG";
  }
  return "?";
}

std::string group_heading(Grouping g, const std::string& value) {
  if (g == Grouping::attention) return attention_heading(parse_attention(value));
  if (g == Grouping::encoder) return encoder_heading(parse_encoder(value));
  return value;
}

std::vector<std::string> datasets_in_order(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
  }
  return out;
}

constexpr AttentionKind kTableAttentions[] = {AttentionKind::dot, AttentionKind::tanh};

}  // namespace

std::string render_f1_table(std::span<const RunEntry> runs) {
  std::ostringstream os;
  os << "| Data | Enc. |";
  for (TascVariant t : kAllTasc) {
    for (AttentionKind a : kTableAttentions) os << ' ' << tasc_heading(t) << ' ' << attention_heading(a) << " |";
  }
  os << "\n|---|---|";
  for (std::size_t i = 0; i < std::size(kAllTasc) * 2; ++i) os << "---:|";
  os << '\n';
  std::vector<std::string> names;
  for (const auto& r : runs) names.push_back(r.dataset);
  for (const auto& ds : datasets_in_order(names)) {
    for (EncoderKind e : kAllEncoders) {
      bool any = false;
      std::ostringstream row;
      row << "| " << ds << " | " << encoder_heading(e) << " |";
      for (TascVariant t : kAllTasc) {
        for (AttentionKind a : kTableAttentions) {
          double sum = 0.0;
          std::size_t n = 0;
          for (const auto& r : runs) {
            if (r.dataset == ds && r.spec.encoder == e && r.spec.attention == a && r.spec.tasc == t) {
              sum += r.test_f1;
              ++n;
            }
          }
          any = any || n > 0;
          row << ' ' << (n ? fmt::f1(sum / static_cast<double>(n)) : fmt::kMissing) << " |";
        }
      }
      if (any) os << row.str() << '\n';
    }
  }
  return os.str();
}

namespace {

std::string render_aggregate(const AggregateTable& t) {
  std::ostringstream os;
  std::string group = std::string(to_string(t.grouping));
  group[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(group[0])));
  os << "| Metric | " << group << " |";
  for (TascVariant v : kAllTasc) os << ' ' << tasc_heading(v) << " |";
  os << "\n|---|---|---:|---:|---:|---:|\n";
  for (const auto& r : t.rows) {
    if (std::find(std::begin(kAttentionMetrics), std::end(kAttentionMetrics), r.metric) ==
        std::end(kAttentionMetrics)) {
      continue;
    }
    os << "| " << metric_heading(r.metric) << " | " << group_heading(t.grouping, r.group) << " |";
    for (TascVariant v : kAllTasc) {
      const auto it = r.cells.find(v);
      if (it == r.cells.end()) {
        os << ' ' << fmt::kMissing << " |";
        continue;
      }
      const auto& c = it->second;
      const std::string value = t.measure == Measure::mit ? fmt::percent(c.mean) : fmt::fraction(c.mean);
      os << ' ' << fmt::with_relative(value, c.relative) << " |";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace

std::string render_baseline_table(std::span<const FlipSet> sets) {
  // fraction-of-tokens: No-TaSc WO / x∇x / IG against Lin-TaSc α∇α
  struct Col {
    AttentionKind att;
    TascVariant tasc;
    Metric metric;
  };
  std::vector<Col> cols;
  for (AttentionKind a : {AttentionKind::tanh, AttentionKind::dot}) {
    cols.push_back({a, TascVariant::none, Metric::wo});
    cols.push_back({a, TascVariant::none, Metric::inputxgrad});
    cols.push_back({a, TascVariant::none, Metric::ig});
    cols.push_back({a, TascVariant::lin, Metric::alpha_grad_alpha});
  }
  std::ostringstream os;
  os << "| Data | Enc. |";
  for (const auto& c : cols) {
    os << ' ' << attention_heading(c.att) << ' ' << metric_heading(c.metric)
       << (c.tasc == TascVariant::none ? " (No-TaSc)" : " (Lin-TaSc)") << " |";
  }
  os << "\n|---|---|";
  for (std::size_t i = 0; i < cols.size(); ++i) os << "---:|";
  os << '\n';
  std::vector<std::string> names;
  for (const auto& s : sets) names.push_back(s.dataset);
  for (const auto& ds : datasets_in_order(names)) {
    for (EncoderKind e : kAllEncoders) {
      bool any = false;
      std::ostringstream row;
      row << "| " << ds << " | " << encoder_heading(e) << " |";
      for (const auto& c : cols) {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& s : sets) {
          if (s.dataset == ds && s.encoder == e && s.attention == c.att && s.tasc == c.tasc &&
              s.metric == c.metric && !s.records.empty()) {
            sum += measure_mean(s.records, Measure::fraction);
            ++n;
          }
        }
        any = any || n > 0;
        row << ' ' << (n ? fmt::fraction(sum / static_cast<double>(n)) : fmt::kMissing) << " |";
      }
      if (any) os << row.str() << '\n';
    }
  }
  return os.str();
}

std::string render_tables(const ResultsManifest& m) {
  std::ostringstream os;
  os << "# Results\n\n";
  os << "tool " << m.tool_version << ", config " << (m.config_hash.empty() ? "-" : m.config_hash)
     << "\n\n";
  os << "## Macro-F1 (mean over seeds)\n\n";
  if (m.runs.empty()) {
    os << "_no training runs recorded_\n\n";
  } else {
    os << render_f1_table(m.runs) << '\n';
  }
  std::vector<FlipSet> sets;
  for (const auto& f : m.flips) sets.push_back(f.set);
  if (sets.empty()) {
    os << "## Decision flips\n\n_no faithfulness runs recorded_\n";
    return os.str();
  }
  for (Measure measure : {Measure::mit, Measure::fraction}) {
    for (Grouping g : {Grouping::attention, Grouping::encoder, Grouping::dataset}) {
      const auto table = aggregate(sets, g, measure, /*require_baseline=*/false);
      os << "## "
         << (measure == Measure::mit ? "Decision flips, most informative token (%)"
                                     : "Fraction of tokens removed for a decision flip")
         << " by " << to_string(g) << "\n\n"
         << render_aggregate(table) << '\n';
    }
  }
  os << "## Fraction of tokens: baselines without TaSc vs α∇α with Lin-TaSc\n\n"
     << render_baseline_table(sets) << '\n';
  os << "## Fraction-of-tokens distribution\n\n| Data | Model | Seed | Metric | q25 | median | q75 |\n"
        "|---|---|---:|---|---:|---:|---:|\n";
  for (const auto& s : sets) {
    if (s.records.empty()) continue;
    const auto d = distribution_summary(s.records);
    os << "| " << s.dataset << " | " << ModelSpec{s.encoder, s.attention, s.tasc}.slug() << " | "
       << s.seed << " | " << metric_heading(s.metric) << " | " << fmt::fraction(d.q25) << " | "
       << fmt::fraction(d.median) << " | " << fmt::fraction(d.q75) << " |\n";
  }
  return os.str();
}

// ---- heat-maps ----------------------------------------------------------------

std::string html_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> heatmap_intensity(std::span<const double> scores) {
  if (scores.empty()) return {};
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size(), 0.5);
  if (*hi == *lo) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = (scores[i] - *lo) / (*hi - *lo);
  return out;
}

std::string heatmap_fragment(std::span<const std::string> tokens, std::span<const double> scores) {
  if (tokens.size() != scores.size()) {
    throw std::invalid_argument("heatmap: " + std::to_string(tokens.size()) + " tokens but " +
                                std::to_string(scores.size()) + " scores");
  }
  const auto alpha = heatmap_intensity(scores);
  std::ostringstream os;
  os << "<p class=\"instance\">";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    // positive scores red, negative blue
    const char* rgb = scores[i] < 0 ? "37,99,235" : "220,38,38";
    char style[96];
    std::snprintf(style, sizeof style, "background-color:rgba(%s,%.3f)", rgb, alpha[i]);
    char title[64];
    std::snprintf(title, sizeof title, "%.6g", scores[i]);
    if (i) os << ' ';
    os << "<span class=\"tok\" style=\"" << style << "\" title=\"" << title << "\">"
       << html_escape(tokens[i]) << "</span>";
  }
  os << "</p>\n";
  return os.str();
}

namespace {

constexpr const char* kHead =
    "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>";
constexpr const char* kStyle =
    "</title>\n<style>body{font-family:sans-serif;max-width:60em;margin:2em auto}"
    ".tok{padding:0 2px;border-radius:2px}h2{font-size:1em;margin-bottom:0.2em}</style>\n"
    "</head><body>\n";

}  // namespace

std::string emit_heatmap(std::span<const std::string> tokens, std::span<const double> scores,
                         const std::string& title) {
  std::ostringstream os;
  os << kHead << html_escape(title) << kStyle;
  if (!title.empty()) os << "<h2>" << html_escape(title) << "</h2>\n";
  os << heatmap_fragment(tokens, scores) << "</body></html>\n";
  return os.str();
}

std::string heatmap_page(std::span<const HeatmapItem> items, const std::string& title) {
  std::ostringstream os;
  os << kHead << html_escape(title) << kStyle << "<h1>" << html_escape(title) << "</h1>\n";
  for (const auto& item : items) {
    os << "<h2>" << html_escape(item.title) << "</h2>\n" << heatmap_fragment(item.tokens, item.scores);
  }
  os << "</body></html>\n";
  return os.str();
}

}  // namespace tasc
