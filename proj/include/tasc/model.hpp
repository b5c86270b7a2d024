#pragma once

// Attention-based text classifiers: encoder -> attention -> (TaSc-scaled)
// pooling -> linear layer + softmax.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "tasc/autodiff.hpp"
#include "tasc/text.hpp"

namespace tasc {

enum class EncoderKind { lstm, gru, cnn, mlp };
enum class AttentionKind { tanh, dot };
enum class TascVariant { none, lin, feat, conv };

std::string_view to_string(EncoderKind kind);
std::string_view to_string(AttentionKind kind);
std::string_view to_string(TascVariant variant);
/// Throw ValidationError naming the accepted values.
EncoderKind parse_encoder(std::string_view name);
AttentionKind parse_attention(std::string_view name);
TascVariant parse_tasc(std::string_view name);

inline constexpr EncoderKind kAllEncoders[] = {EncoderKind::lstm, EncoderKind::gru,
                                               EncoderKind::cnn, EncoderKind::mlp};
inline constexpr AttentionKind kAllAttentions[] = {AttentionKind::tanh, AttentionKind::dot};
inline constexpr TascVariant kAllTasc[] = {TascVariant::none, TascVariant::lin,
                                           TascVariant::feat, TascVariant::conv};

struct ModelConfig {
  EncoderKind encoder = EncoderKind::lstm;
  AttentionKind attention = AttentionKind::tanh;
  TascVariant tasc = TascVariant::none;
  std::size_t hidden = 128;  // N; bi-RNNs use hidden / 2 per direction
  std::vector<std::size_t> cnn_kernels{1, 3, 5, 7};
  std::size_t conv_channels = 15;  // Conv-TaSc n
  std::size_t num_classes = 2;
  /// Forces s == value for every token (testing the reduction to plain pooling).
  std::optional<double> scale_override;

  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// ---- parameter groups ---------------------------------------------------------

struct RecurrentParams {
  ad::Tensor w_ih;  // [d, G*H]
  ad::Tensor w_hh;  // [H, G*H]
  ad::Tensor b_ih;  // [G*H]
  ad::Tensor b_hh;  // [G*H], GRU only
};

struct ConvBank {
  ad::Tensor weight;  // [k, d, N / kernels]
  ad::Tensor bias;
};

struct EncoderParams {
  EncoderKind kind = EncoderKind::mlp;
  RecurrentParams forward, backward;  // lstm, gru
  std::vector<ConvBank> convs;        // cnn
  ad::Tensor weight, bias;            // mlp: [d, N], [N]
};

struct AttentionParams {
  AttentionKind kind = AttentionKind::dot;
  ad::Tensor query;   // q, [N, 1]
  ad::Tensor weight;  // W, [N, N], tanh only
};

struct TascParams {
  TascVariant variant = TascVariant::none;
  ad::Tensor u;            // [|V|, 1]    lin, conv
  ad::Tensor u_matrix;     // [|V|, d]    feat
  ad::Tensor conv_weight;  // [1, d, n]   conv
  ad::Tensor conv_bias;    // [n]         conv
  std::optional<double> scale_override;
};

// ---- building blocks ------------------------------------------------------------

/// h_1..h_t from e_1..e_t: embedded [B, T, d], mask [B, T] -> [B, T, N].
ad::Tensor encode(const EncoderParams& params, const ad::Tensor& embedded,
                  const ad::Tensor& mask);

/// Masked softmax of phi(h_i, q) over real positions: [B, T]. The returned
/// node has retain_grad set.
ad::Tensor attention(const AttentionParams& params, const ad::Tensor& hidden,
                     const ad::Tensor& mask);

/// Non-contextual word-type score s_i for every position: [B, T].
/// ids are row-major [B, T]; s_i depends only on ids[i] and embedded[i].
ad::Tensor tasc_score(const TascParams& params, std::span<const std::size_t> ids,
                      const ad::Tensor& embedded);

/// c = sum_i h_i * alpha_i (* s_i): [B, N].
ad::Tensor pool(const ad::Tensor& hidden, const ad::Tensor& alpha,
                const std::optional<ad::Tensor>& scores = std::nullopt);

/// Extra parameters introduced by a TaSc variant.
std::size_t parameter_count(TascVariant variant, std::size_t vocab_size, std::size_t dim,
                            std::size_t channels);

// ---- the bundle -----------------------------------------------------------------

struct ForwardResult {
  ad::Tensor probs;     // [B, C]
  ad::Tensor logits;    // [B, C]
  ad::Tensor alpha;     // [B, T], retained gradient
  ad::Tensor scores;    // [B, T], undefined without TaSc
  ad::Tensor hidden;    // [B, T, N]
  ad::Tensor embedded;  // [B, T, d]
};

enum class GradMode {
  train,   // gradients flow into the model's own parameters
  frozen,  // parameters enter as detached constants; safe to share across threads
};

class ModelBundle {
 public:
  static ModelBundle create(const ModelConfig& config,
                            std::shared_ptr<const text::EmbeddingTable> embeddings,
                            std::uint64_t seed);

  ForwardResult forward(const text::Batch& batch, GradMode mode = GradMode::train) const;
  /// Same as forward but with caller-supplied embeddings [B, T, d] (for
  /// attribution methods that differentiate or interpolate them).
  ForwardResult forward_embedded(const text::Batch& batch, const ad::Tensor& embedded,
                                 GradMode mode = GradMode::train) const;
  /// Constant [B, T, d] lookup of the frozen table.
  ad::Tensor embed(const text::Batch& batch) const;

  const ModelConfig& config() const { return config_; }
  const text::EmbeddingTable& embeddings() const { return *embeddings_; }
  std::shared_ptr<const text::EmbeddingTable> shared_embeddings() const { return embeddings_; }

  /// Trainable parameters in their declared (checkpoint) order.
  std::vector<ad::Tensor>& parameters() { return params_; }
  const std::vector<ad::Tensor>& parameters() const { return params_; }

  EncoderParams& encoder() { return encoder_; }
  AttentionParams& attention_params() { return attention_; }
  TascParams& tasc() { return tasc_; }
  ad::Tensor& output_weight() { return out_weight_; }
  ad::Tensor& output_bias() { return out_bias_; }
  const EncoderParams& encoder() const { return encoder_; }
  const AttentionParams& attention_params() const { return attention_; }
  const TascParams& tasc() const { return tasc_; }
  const ad::Tensor& output_weight() const { return out_weight_; }
  const ad::Tensor& output_bias() const { return out_bias_; }

  /// Deep copy with independent parameter storage.
  ModelBundle clone() const;
  /// Same trainable values as `other` (matching config).
  void copy_parameters_from(const ModelBundle& other);
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);
  void set_scale_override(std::optional<double> value);

 private:
  ModelBundle() = default;
  void collect();

  ModelConfig config_;
  std::shared_ptr<const text::EmbeddingTable> embeddings_;
  ad::Tensor table_;  // constant view of embeddings_
  EncoderParams encoder_;
  AttentionParams attention_;
  TascParams tasc_;
  ad::Tensor out_weight_;  // [N, C]
  ad::Tensor out_bias_;    // [C]
  std::vector<ad::Tensor> params_;
};

// ---- checkpoint file ------------------------------------------------------------
//
// "TASCCKPT" | u64 LE header length | JSON header | float64 LE blocks.
// The header lists blocks (name, shape) in file order: the embedding table,
// then every trainable parameter in declared order.

struct Checkpoint {
  ModelBundle model;
  text::Vocab vocab;
  nlohmann::json header;
};

void save_checkpoint(const std::string& path, const ModelBundle& model, const text::Vocab& vocab,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tasc
