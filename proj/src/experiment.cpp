#include "tasc/experiment.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace tasc {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "dataset",     "train",         "dev",          "test",          "embeddings",
      "embedding_dim", "min_freq",    "embedding_seed", "num_classes", "encoder",
      "attention",   "tasc",          "hidden",       "conv_channels", "batch_size",
      "max_epochs",  "patience",      "max_len",      "learning_rate", "weight_decay",
      "seeds",       "metrics",       "target",       "ig_steps",      "scale_by_tasc",
      "threads",     "explain_limit", "output_dir"};
  return keys;
}

template <typename T>
T field(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(key + ": wrong type (" + std::string(j.at(key).type_name()) + ")");
  }
}

// A single name or an array of names.
template <typename E, typename Parse>
std::vector<E> enum_list(const nlohmann::json& j, const std::string& key, std::vector<E> fallback,
                         Parse parse) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  std::vector<E> out;
  auto one = [&](const nlohmann::json& item) {
    if (!item.is_string()) throw ValidationError(key + ": expected a string or list of strings");
    try {
      const E e = parse(item.template get<std::string>());
      if (std::find(out.begin(), out.end(), e) == out.end()) out.push_back(e);
    } catch (const ValidationError& err) {
      throw ValidationError(key + ": " + err.what());
    }
  };
  if (v.is_array()) {
    for (const auto& item : v) one(item);
  } else {
    one(v);
  }
  if (out.empty()) throw ValidationError(key + ": empty list");
  return out;
}

template <typename E>
nlohmann::json enum_json(const std::vector<E>& values) {
  if (values.size() == 1) return std::string(to_string(values.front()));
  nlohmann::json arr = nlohmann::json::array();
  for (auto v : values) arr.push_back(std::string(to_string(v)));
  return arr;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (embedding_dim < 1) throw ValidationError("embedding_dim: must be >= 1");
  if (min_freq < 1) throw ValidationError("min_freq: must be >= 1");
  if (num_classes == 1) throw ValidationError("num_classes: need at least 2 classes");
  if (encoders.empty()) throw ValidationError("encoder: empty list");
  if (attentions.empty()) throw ValidationError("attention: empty list");
  if (tasc.empty()) throw ValidationError("tasc: empty list");
  if (metrics.empty()) throw ValidationError("metrics: empty list");
  if (importance.ig_steps < 2) throw ValidationError("ig_steps: must be >= 2");
  train.validate();
  for (const auto& spec : model_grid(*this)) {
    model_config(*this, spec, num_classes == 0 ? 2 : num_classes).validate();
  }
}

std::string ExperimentConfig::resolved_output_dir() const {
  if (const char* env = std::getenv("TASC_OUT"); env != nullptr && *env != '\0') return env;
  return output_dir;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().count(key)) throw ValidationError(key + ": unknown configuration field");
  }
  ExperimentConfig c;
  c.dataset = field(j, "dataset", c.dataset);
  c.train_path = field(j, "train", c.train_path);
  c.dev_path = field(j, "dev", c.dev_path);
  c.test_path = field(j, "test", c.test_path);
  c.embeddings_path = field(j, "embeddings", c.embeddings_path);
  c.embedding_dim = field(j, "embedding_dim", c.embedding_dim);
  c.min_freq = field(j, "min_freq", c.min_freq);
  c.embedding_seed = field(j, "embedding_seed", c.embedding_seed);
  c.num_classes = field(j, "num_classes", c.num_classes);
  c.encoders = enum_list(j, "encoder", c.encoders, parse_encoder);
  c.attentions = enum_list(j, "attention", c.attentions, parse_attention);
  c.tasc = enum_list(j, "tasc", c.tasc, parse_tasc);
  c.hidden = field(j, "hidden", c.hidden);
  c.conv_channels = field(j, "conv_channels", c.conv_channels);
  c.train.batch_size = field(j, "batch_size", c.train.batch_size);
  c.train.max_epochs = field(j, "max_epochs", c.train.max_epochs);
  c.train.patience = field(j, "patience", c.train.patience);
  c.train.max_len = field(j, "max_len", c.train.max_len);
  c.train.optimizer.learning_rate = field(j, "learning_rate", c.train.optimizer.learning_rate);
  c.train.optimizer.weight_decay = field(j, "weight_decay", c.train.optimizer.weight_decay);
  c.train.seeds = field(j, "seeds", c.train.seeds);
  c.metrics = enum_list(j, "metrics", c.metrics, parse_metric);
  if (j.contains("target")) c.importance.target = parse_target(field<std::string>(j, "target", ""));
  c.importance.ig_steps = field(j, "ig_steps", c.importance.ig_steps);
  c.importance.scale_by_tasc = field(j, "scale_by_tasc", c.importance.scale_by_tasc);
  c.threads = field(j, "threads", c.threads);
  c.explain_limit = field(j, "explain_limit", c.explain_limit);
  c.output_dir = field(j, "output_dir", c.output_dir);
  c.validate();
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json metrics = nlohmann::json::array();
  for (auto m : c.metrics) metrics.push_back(std::string(to_string(m)));
  return {{"dataset", c.dataset},
          {"train", c.train_path},
          {"dev", c.dev_path},
          {"test", c.test_path},
          {"embeddings", c.embeddings_path},
          {"embedding_dim", c.embedding_dim},
          {"min_freq", c.min_freq},
          {"embedding_seed", c.embedding_seed},
          {"num_classes", c.num_classes},
          {"encoder", enum_json(c.encoders)},
          {"attention", enum_json(c.attentions)},
          {"tasc", enum_json(c.tasc)},
          {"hidden", c.hidden},
          {"conv_channels", c.conv_channels},
          {"batch_size", c.train.batch_size},
          {"max_epochs", c.train.max_epochs},
          {"patience", c.train.patience},
          {"max_len", c.train.max_len},
          {"learning_rate", c.train.optimizer.learning_rate},
          {"weight_decay", c.train.optimizer.weight_decay},
          {"seeds", c.train.seeds},
          {"metrics", metrics},
          {"target", std::string(to_string(c.importance.target))},
          {"ig_steps", c.importance.ig_steps},
          {"scale_by_tasc", c.importance.scale_by_tasc},
          {"threads", c.threads},
          {"explain_limit", c.explain_limit},
          {"output_dir", c.output_dir}};
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config: " + path + " is not valid JSON (" + e.what() + ")");
  }
  return experiment_config_from_json(j);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, value >>= 4) s[static_cast<std::size_t>(i)] = digits[value & 0xf];
  return s;
}

std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("hash_file: cannot open " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

std::string config_hash(const ExperimentConfig& config) {
  return hex64(fnv1a(to_json(config).dump()));
}

PreparedData prepare_data(const ExperimentConfig& config) {
  if (config.train_path.empty()) throw ValidationError("train: path is required");
  if (config.dev_path.empty()) throw ValidationError("dev: path is required");
  if (config.test_path.empty()) throw ValidationError("test: path is required");
  const auto train_raw = text::load_corpus(config.train_path);
  const auto dev_raw = text::load_corpus(config.dev_path);
  const auto test_raw = text::load_corpus(config.test_path);

  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(train_raw.size());
  for (const auto& ex : train_raw) corpus.push_back(text::tokenize(ex.text));

  PreparedData out;
  out.vocab = text::Vocab::build(corpus, config.min_freq);
  out.data.train = text::make_instances(train_raw, out.vocab);
  out.data.dev = text::make_instances(dev_raw, out.vocab);
  out.data.test = text::make_instances(test_raw, out.vocab);

  std::size_t max_label = 0;
  for (const auto* split : {&out.data.train, &out.data.dev, &out.data.test}) {
    for (const auto& inst : *split) max_label = std::max(max_label, inst.label);
  }
  out.data.num_classes = config.num_classes ? config.num_classes : std::max<std::size_t>(2, max_label + 1);
  if (max_label >= out.data.num_classes) {
    throw ValidationError("num_classes: label " + std::to_string(max_label) + " found but only " +
                          std::to_string(out.data.num_classes) + " classes configured");
  }

  auto table = std::make_shared<text::EmbeddingTable>(
      config.embeddings_path.empty()
          ? text::random_embeddings(out.vocab, config.embedding_dim, config.embedding_seed)
          : text::load_embeddings(config.embeddings_path, out.vocab, config.embedding_dim,
                                  config.embedding_seed));
  out.embeddings = std::move(table);
  return out;
}

std::string ModelSpec::slug() const {
  return std::string(to_string(encoder)) + "-" + std::string(to_string(attention)) + "-" +
         std::string(to_string(tasc));
}

std::vector<ModelSpec> model_grid(const ExperimentConfig& config) {
  std::vector<ModelSpec> grid;
  for (auto e : config.encoders)
    for (auto a : config.attentions)
      for (auto t : config.tasc) grid.push_back({e, a, t});
  return grid;
}

ModelConfig model_config(const ExperimentConfig& config, const ModelSpec& spec,
                         std::size_t num_classes) {
  ModelConfig m;
  m.encoder = spec.encoder;
  m.attention = spec.attention;
  m.tasc = spec.tasc;
  m.hidden = config.hidden;
  m.conv_channels = config.conv_channels;
  m.num_classes = num_classes;
  return m;
}

}  // namespace tasc
