// tasc: train attention classifiers with/without TaSc, explain them and test
// how faithful the explanations are.
//
// exit status: 0 ok, 1 invalid input/configuration, 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "selftest.hpp"
#include "tasc/experiment.hpp"
#include "tasc/faithfulness.hpp"
#include "tasc/report.hpp"

namespace fs = std::filesystem;
using namespace tasc;

namespace {

struct Options {
  std::string config_path;
  std::string seeds;
  std::string metrics;
  std::size_t ig_steps = 0;
  std::string format = "json";
  std::string dir;
};

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.front() == '-') {
      throw ValidationError("seed: '" + item + "' is not a non-negative integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("seed: empty seed list");
  return out;
}

ExperimentConfig load_config(const Options& o) {
  if (o.config_path.empty()) throw ValidationError("config: --config is required");
  ExperimentConfig c = load_experiment_config(o.config_path);
  // data paths are relative to the config file
  const fs::path base = fs::path(o.config_path).parent_path();
  for (auto* p : {&c.train_path, &c.dev_path, &c.test_path, &c.embeddings_path}) {
    if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  if (!o.seeds.empty()) c.train.seeds = parse_seeds(o.seeds);
  if (!o.metrics.empty()) c.metrics = parse_metric_list(o.metrics);
  if (o.ig_steps != 0) c.importance.ig_steps = o.ig_steps;
  c.validate();
  return c;
}

ResultsManifest open_manifest(const std::string& out_dir, const ExperimentConfig& c) {
  ResultsManifest m;
  if (fs::exists(fs::path(out_dir) / "manifest.json")) m = load_manifest(out_dir);
  m.tool_version = kToolVersion;
  m.config_hash = config_hash(c);
  m.config = to_json(c);
  return m;
}

std::string model_dir(const ExperimentConfig& c, const ModelSpec& s) {
  return (fs::path("models") / c.dataset / s.slug()).string();
}

std::string seed_stem(std::uint64_t seed) { return "seed" + std::to_string(seed); }

Checkpoint load_trained(const std::string& out, const ExperimentConfig& c, const ModelSpec& s,
                        std::uint64_t seed) {
  const auto path = fs::path(out) / model_dir(c, s) / (seed_stem(seed) + ".ckpt");
  if (!fs::exists(path)) {
    throw std::runtime_error("no checkpoint at " + path.string() + " (run `tasc train` first)");
  }
  return load_checkpoint(path.string());
}

std::vector<text::TokenizedInstance> test_split(const ExperimentConfig& c, const text::Vocab& v) {
  return text::make_instances(text::load_corpus(c.test_path), v);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_train(const Options& o) {
  const auto c = load_config(o);
  const auto out = c.resolved_output_dir();
  auto prepared = prepare_data(c);
  auto manifest = open_manifest(out, c);
  for (const auto& spec : model_grid(c)) {
    const auto mc = model_config(c, spec, prepared.data.num_classes);
    fs::create_directories(fs::path(out) / model_dir(c, spec));
    for (auto seed : c.train.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      auto result = train(mc, prepared.embeddings, prepared.data, c.train, seed);
      const auto rel = fs::path(model_dir(c, spec)) / seed_stem(seed);
      save_checkpoint((fs::path(out) / rel).string() + ".ckpt", result.model, prepared.vocab,
                      {{"run", to_json(result.record)}});
      std::ofstream rec((fs::path(out) / rel).string() + ".json", std::ios::trunc);
      rec << to_json(result.record).dump(2) << '\n';
      rec.close();
      manifest.upsert(RunEntry{c.dataset, spec, seed, result.record.test_f1,
                               rel.string() + ".json", rel.string() + ".ckpt"});
      std::cout << spec.slug() << " seed " << seed << ": test macro-F1 "
                << result.record.test_f1 << " (epoch " << result.record.selected_epoch << ", "
                << seconds_since(t0) << " s)\n";
    }
  }
  save_manifest(out, manifest);
  return 0;
}

int cmd_evaluate(const Options& o) {
  const auto c = load_config(o);
  const auto out = c.resolved_output_dir();
  std::vector<RunEntry> runs;
  for (const auto& spec : model_grid(c)) {
    for (auto seed : c.train.seeds) {
      auto ckpt = load_trained(out, c, spec, seed);
      const auto test = test_split(c, ckpt.vocab);
      std::vector<std::size_t> gold;
      for (const auto& i : test) gold.push_back(i.label);
      const double f1 = macro_f1(predict(ckpt.model, test, 64, c.train.max_len), gold,
                                 ckpt.model.config().num_classes);
      runs.push_back(RunEntry{c.dataset, spec, seed, f1, "", ""});
    }
  }
  const std::string md = render_f1_table(runs);
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "evaluation.md", std::ios::trunc) << md;
  std::cout << md;
  return 0;
}

int cmd_explain(const Options& o) {
  if (o.format != "json" && o.format != "html") {
    throw ValidationError("format: expected json or html, got '" + o.format + "'");
  }
  const auto c = load_config(o);
  const auto out = c.resolved_output_dir();
  auto manifest = open_manifest(out, c);
  const std::uint64_t seed = c.train.seeds.front();
  for (const auto& spec : model_grid(c)) {
    auto ckpt = load_trained(out, c, spec, seed);
    auto test = test_split(c, ckpt.vocab);
    if (c.explain_limit && test.size() > c.explain_limit) test.resize(c.explain_limit);
    const auto dir = fs::path("explanations") / c.dataset / spec.slug();
    fs::create_directories(fs::path(out) / dir);
    for (Metric metric : c.metrics) {
      const auto stem = dir / (seed_stem(seed) + "-" + std::string(to_string(metric)));
      std::ofstream lines((fs::path(out) / stem).string() + ".jsonl", std::ios::trunc);
      std::vector<HeatmapItem> items;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto s = compute(metric, ckpt.model, test[i], c.importance);
        auto j = to_json(s, i);
        j["tokens"] = test[i].surface_tokens;
        lines << j.dump() << '\n';
        items.push_back({"#" + std::to_string(i) + " (label " + std::to_string(test[i].label) + ")",
                         test[i].surface_tokens, s.scores});
      }
      lines.close();
      manifest.upsert(ExplanationEntry{c.dataset, spec, seed, metric, stem.string() + ".jsonl"});
      if (o.format == "html") {
        std::ofstream((fs::path(out) / stem).string() + ".html", std::ios::trunc)
            << heatmap_page(items, spec.slug() + " " + std::string(to_string(metric)));
      }
      std::cout << (fs::path(out) / stem).string() << (o.format == "html" ? ".html" : ".jsonl")
                << '\n';
    }
  }
  save_manifest(out, manifest);
  return 0;
}

int cmd_faithfulness(const Options& o) {
  const auto c = load_config(o);
  const auto out = c.resolved_output_dir();
  auto manifest = open_manifest(out, c);
  for (const auto& spec : model_grid(c)) {
    for (auto seed : c.train.seeds) {
      auto ckpt = load_trained(out, c, spec, seed);
      const auto test = test_split(c, ckpt.vocab);
      const auto dir = fs::path("flips") / c.dataset / spec.slug();
      fs::create_directories(fs::path(out) / dir);
      for (Metric metric : c.metrics) {
        const auto t0 = std::chrono::steady_clock::now();
        FlipEntry entry;
        entry.set = FlipSet{c.dataset, spec.encoder, spec.attention, spec.tasc, seed, metric,
                            evaluate_faithfulness(ckpt.model, test, metric, c.importance, c.threads)};
        entry.file = (dir / (seed_stem(seed) + "-" + std::string(to_string(metric)) + ".jsonl")).string();
        write_jsonl((fs::path(out) / entry.file).string(), entry.set.records);
        std::cout << spec.slug() << " seed " << seed << " " << to_string(metric) << ": MIT "
                  << measure_mean(entry.set.records, Measure::mit) << "%, fraction "
                  << measure_mean(entry.set.records, Measure::fraction) << " ("
                  << seconds_since(t0) << " s)\n";
        manifest.upsert(std::move(entry));
      }
    }
  }
  manifest.refresh_aggregates();
  nlohmann::json aggs = nlohmann::json::array();
  std::string md;
  for (const auto& a : manifest.aggregates) {
    aggs.push_back(to_json(a));
    md += "## " + std::string(to_string(a.measure)) + " by " + std::string(to_string(a.grouping)) +
          "\n\n" + to_markdown(a) + "\n";
  }
  std::ofstream(fs::path(out) / "aggregates.json", std::ios::trunc) << aggs.dump(2) << '\n';
  std::ofstream(fs::path(out) / "aggregates.md", std::ios::trunc) << md;
  save_manifest(out, manifest);
  std::cout << md;
  return 0;
}

int cmd_report(const Options& o) {
  std::string dir = o.dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("TASC_OUT"); env && *env) {
      dir = env;
    } else if (!o.config_path.empty()) {
      dir = load_config(o).resolved_output_dir();
    } else {
      throw ValidationError("dir: pass --dir or --config to locate the results");
    }
  }
  const auto manifest = load_manifest(dir);
  const std::string md = render_tables(manifest);
  std::ofstream(fs::path(dir) / "report.md", std::ios::trunc) << md;
  std::vector<HeatmapItem> items;
  for (const auto& e : manifest.explanations) {
    std::ifstream in(fs::path(dir) / e.file);
    std::string line;
    for (std::size_t n = 0; n < 20 && std::getline(in, line); ++n) {
      const auto j = nlohmann::json::parse(line);
      items.push_back({e.spec.slug() + " " + std::string(to_string(e.metric)) + " #" +
                           std::to_string(j.at("instance_id").get<std::size_t>()),
                       j.at("tokens").get<std::vector<std::string>>(),
                       j.at("scores").get<std::vector<double>>()});
    }
  }
  std::ofstream(fs::path(dir) / "report.html", std::ios::trunc)
      << heatmap_page(items, "Token importance");
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention classifiers with task-scaling: training, explanation, faithfulness"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "experiment JSON");
    sub->add_option("--seed", o.seeds, "comma-separated seeds, overrides the config");
  };
  auto* train_cmd = app.add_subcommand("train", "train every configured model and seed");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("evaluate", "test macro-F1 of trained models");
  add_common(eval_cmd);
  auto* explain_cmd = app.add_subcommand("explain", "per-instance importance scores");
  add_common(explain_cmd);
  explain_cmd->add_option("--metrics", o.metrics, "alpha,grad_alpha,alpha_grad_alpha,wo,inputxgrad,ig");
  explain_cmd->add_option("--ig-steps", o.ig_steps, "integrated-gradient steps");
  explain_cmd->add_option("--format", o.format, "json or html");
  auto* faith_cmd = app.add_subcommand("faithfulness", "decision-flip tests");
  add_common(faith_cmd);
  faith_cmd->add_option("--metrics", o.metrics, "importance metrics to test");
  faith_cmd->add_option("--ig-steps", o.ig_steps, "integrated-gradient steps");
  auto* report_cmd = app.add_subcommand("report", "tables and heat-maps from a manifest");
  report_cmd->add_option("--config", o.config_path, "experiment JSON");
  report_cmd->add_option("--dir", o.dir, "results directory");
  auto* self_cmd = app.add_subcommand("selftest", "gradient checks and oracle tests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_evaluate(o);
    if (*explain_cmd) return cmd_explain(o);
    if (*faith_cmd) return cmd_faithfulness(o);
    if (*report_cmd) return cmd_report(o);
    if (*self_cmd) return cli::run_selftest(std::cout) ? 0 : 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
