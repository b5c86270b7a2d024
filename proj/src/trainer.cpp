#include "tasc/trainer.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <tuple>

namespace tasc {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size: must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs: must be >= 1");
  if (patience > max_epochs) throw ValidationError("patience: must not exceed max_epochs");
  if (seeds.empty()) throw ValidationError("seeds: need at least one seed");
  if (!(optimizer.learning_rate >= 0.0)) throw ValidationError("learning_rate: must be >= 0");
  if (!(optimizer.weight_decay >= 0.0)) throw ValidationError("weight_decay: must be >= 0");
}

nlohmann::json to_json(const RunRecord& r) {
  return {{"seed", r.seed},
          {"train_loss", r.train_loss},
          {"dev_f1", r.dev_f1},
          {"selected_epoch", r.selected_epoch},
          {"test_f1", r.test_f1}};
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.train_loss = j.at("train_loss").get<std::vector<double>>();
  r.dev_f1 = j.at("dev_f1").get<std::vector<double>>();
  r.selected_epoch = j.at("selected_epoch").get<std::size_t>();
  r.test_f1 = j.at("test_f1").get<double>();
  return r;
}

double macro_f1(std::span<const std::size_t> predictions, std::span<const std::size_t> gold,
                std::size_t num_classes) {
  if (predictions.empty()) throw std::invalid_argument("macro_f1: empty input");
  if (predictions.size() != gold.size()) {
    throw std::invalid_argument("macro_f1: predictions and gold differ in length");
  }
  if (num_classes == 0) throw std::invalid_argument("macro_f1: no classes");
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] >= num_classes || predictions[i] >= num_classes) {
      throw std::invalid_argument("macro_f1: label outside [0, C)");
    }
    if (predictions[i] == gold[i]) {
      tp[gold[i]] += 1;
    } else {
      fp[predictions[i]] += 1;
      fn[gold[i]] += 1;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    total += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return total / static_cast<double>(num_classes);
}

std::vector<std::size_t> predict(const ModelBundle& model,
                                 std::span<const text::TokenizedInstance> instances,
                                 std::size_t batch_size, std::size_t max_len) {
  ad::NoGradGuard no_grad;
  std::vector<std::size_t> out;
  out.reserve(instances.size());
  const std::size_t classes = model.config().num_classes;
  for (std::size_t start = 0; start < instances.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, instances.size() - start);
    const auto batch = text::make_batch(instances.subspan(start, n), max_len);
    const ad::Tensor prob_tensor = model.forward(batch, GradMode::frozen).probs;
    const auto probs = prob_tensor.values();
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (probs[r * classes + c] > probs[r * classes + best]) best = c;
      }
      out.push_back(best);
    }
  }
  return out;
}

namespace {

double evaluate_f1(const ModelBundle& model, std::span<const text::TokenizedInstance> split,
                   const TrainConfig& cfg) {
  std::vector<std::size_t> gold;
  gold.reserve(split.size());
  for (const auto& i : split) gold.push_back(i.label);
  return macro_f1(predict(model, split, 64, cfg.max_len), gold, model.config().num_classes);
}

void check_split(const std::vector<text::TokenizedInstance>& split, const char* name,
                 std::size_t classes) {
  if (split.empty()) throw ValidationError(std::string("dataset: ") + name + " split is empty");
  for (const auto& inst : split) {
    if (inst.label >= classes) {
      throw ValidationError(std::string("dataset: ") + name + " label " +
                            std::to_string(inst.label) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
}

// Mean cross-entropy over the batch.
ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<double> onehot(batch * classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b) onehot[b * classes + labels[b]] = 1.0;
  const ad::Tensor picked =
      ad::mul(ad::log_softmax_axis(logits, 1), ad::Tensor::constant({batch, classes}, onehot));
  return ad::scale(ad::sum_all(picked), -1.0 / static_cast<double>(batch));
}

}  // namespace

TrainResult train(const ModelConfig& model_config,
                  std::shared_ptr<const text::EmbeddingTable> embeddings, const Dataset& data,
                  const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check_split(data.train, "train", model_config.num_classes);
  check_split(data.dev, "dev", model_config.num_classes);
  check_split(data.test, "test", model_config.num_classes);

  ModelBundle model = ModelBundle::create(model_config, std::move(embeddings), seed);
  auto& params = model.parameters();
  AdamState adam = AdamState::init(params, cfg.optimizer);
  // shuffling draws from its own stream so init and order are decoupled
  std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  RunRecord record;
  record.seed = seed;
  std::vector<std::vector<double>> best = model.snapshot();
  double best_f1 = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_batch = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // Fisher-Yates
    for (std::size_t i = order.size(); i-- > 1;) {
      std::uniform_int_distribution<std::size_t> pick(0, i);
      std::swap(order[i], order[pick(shuffle_rng)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      std::vector<const text::TokenizedInstance*> members;
      members.reserve(n);
      for (std::size_t k = 0; k < n; ++k) members.push_back(&data.train[order[start + k]]);
      const auto batch = text::make_batch(std::span<const text::TokenizedInstance* const>(members),
                                          cfg.max_len);
      for (auto& p : params) p.zero_grad();
      const auto fwd = model.forward(batch, GradMode::train);
      const ad::Tensor loss = cross_entropy(fwd.logits, batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw std::runtime_error("train: non-finite loss at batch " + std::to_string(global_batch) +
                                 " (epoch " + std::to_string(epoch) + ")");
      }
      ad::backward(loss);
      try {
        adam_step(params, adam);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: diverged at batch " + std::to_string(global_batch) +
                                 " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      loss_sum += value;
      ++batches;
      ++global_batch;
    }
    for (auto& p : params) p.zero_grad();
    record.train_loss.push_back(loss_sum / static_cast<double>(batches));
    const double dev = evaluate_f1(model, data.dev, cfg);
    record.dev_f1.push_back(dev);
    if (dev > best_f1) {
      best_f1 = dev;
      best = model.snapshot();
      record.selected_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      break;
    }
  }
  model.restore(best);
  record.test_f1 = evaluate_f1(model, data.test, cfg);
  return TrainResult{std::move(model), std::move(record)};
}

std::pair<double, double> mean_and_std(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("mean_and_std: empty input");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(values.size()))};
}

MultiSeedResult multi_seed(const ModelConfig& model_config,
                           std::shared_ptr<const text::EmbeddingTable> embeddings,
                           const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  MultiSeedResult out;
  for (auto seed : cfg.seeds) out.runs.push_back(train(model_config, embeddings, data, cfg, seed));
  std::vector<double> f1;
  for (const auto& r : out.runs) f1.push_back(r.record.test_f1);
  std::tie(out.mean_f1, out.std_f1) = mean_and_std(f1);
  return out;
}

}  // namespace tasc
