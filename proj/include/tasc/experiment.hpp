#pragma once

// Experiment configuration (a flat JSON document) and dataset assembly.

#include <string>
#include <vector>

#include <json.hpp>

#include "tasc/importance.hpp"
#include "tasc/trainer.hpp"

namespace tasc {

struct ExperimentConfig {
  std::string dataset = "data";  // label used in tables
  std::string train_path, dev_path, test_path;
  std::string embeddings_path;  // word2vec text; empty -> random N(0, 1) vectors
  std::size_t embedding_dim = 300;
  std::size_t min_freq = 1;
  std::uint64_t embedding_seed = 0;
  std::size_t num_classes = 0;  // 0 -> 1 + largest label seen

  // Each entry of the grid is trained separately.
  std::vector<EncoderKind> encoders{EncoderKind::lstm};
  std::vector<AttentionKind> attentions{AttentionKind::tanh};
  std::vector<TascVariant> tasc{TascVariant::none};
  std::size_t hidden = 128;
  std::size_t conv_channels = 15;

  TrainConfig train;  // seeds live here
  std::vector<Metric> metrics{Metric::alpha, Metric::grad_alpha, Metric::alpha_grad_alpha};
  ImportanceOptions importance;
  std::size_t threads = 0;  // faithfulness workers, 0 = all cores
  std::size_t explain_limit = 0;  // instances per explanation file, 0 = all
  std::string output_dir = "tasc_out";

  void validate() const;
  /// output_dir, or $TASC_OUT when set.
  std::string resolved_output_dir() const;
};

/// Unknown keys and bad values throw ValidationError naming the field.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::string& path);
/// FNV-1a of the canonical JSON form, hex.
std::string config_hash(const ExperimentConfig& config);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);
std::string hash_file(const std::string& path);

struct PreparedData {
  text::Vocab vocab;
  std::shared_ptr<const text::EmbeddingTable> embeddings;
  Dataset data;
};

/// Vocabulary from the training split only; dev/test map unseen words to UNK.
PreparedData prepare_data(const ExperimentConfig& config);

/// One cell of the experiment grid.
struct ModelSpec {
  EncoderKind encoder;
  AttentionKind attention;
  TascVariant tasc;

  std::string slug() const;  // "lstm-tanh-lin"
};

std::vector<ModelSpec> model_grid(const ExperimentConfig& config);
ModelConfig model_config(const ExperimentConfig& config, const ModelSpec& spec,
                         std::size_t num_classes);

}  // namespace tasc
