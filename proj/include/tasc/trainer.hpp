#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tasc/model.hpp"
#include "tasc/optim.hpp"
#include "tasc/text.hpp"

namespace tasc {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t max_epochs = 20;
  std::size_t patience = 5;  // epochs without dev macro-F1 improvement
  std::size_t max_len = 0;   // 0 keeps full sequences
  std::vector<std::uint64_t> seeds{1, 2, 3};
  AdamOptions optimizer;

  void validate() const;
};

struct Dataset {
  std::vector<text::TokenizedInstance> train, dev, test;
  std::size_t num_classes = 2;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> dev_f1;
  std::size_t selected_epoch = 0;  // 1-based dev-F1 argmax, earliest on ties
  double test_f1 = 0.0;
};

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

struct TrainResult {
  ModelBundle model;
  RunRecord record;
};

/// Unweighted mean of per-class F1. A class missing from both gold and
/// predictions contributes 0.
double macro_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                std::size_t num_classes);

/// Argmax of the model's probabilities for each instance (ties -> lower class).
std::vector<std::size_t> predict(const ModelBundle& model,
                                 std::span<const text::TokenizedInstance> instances,
                                 std::size_t batch_size = 64, std::size_t max_len = 0);

/// Mini-batch cross-entropy training with Adam and early stopping on dev
/// macro-F1. Deterministic given the seed; returns the best-dev parameters.
/// Throws std::runtime_error naming the batch when the loss is not finite.
TrainResult train(const ModelConfig& model_config,
                  std::shared_ptr<const text::EmbeddingTable> embeddings, const Dataset& data,
                  const TrainConfig& train_config, std::uint64_t seed);

struct MultiSeedResult {
  double mean_f1 = 0.0;
  double std_f1 = 0.0;  // population standard deviation
  std::vector<TrainResult> runs;  // in seed order
};

/// Mean and population standard deviation.
std::pair<double, double> mean_and_std(std::span<const double> values);

MultiSeedResult multi_seed(const ModelConfig& model_config,
                           std::shared_ptr<const text::EmbeddingTable> embeddings,
                           const Dataset& data, const TrainConfig& train_config);

}  // namespace tasc
