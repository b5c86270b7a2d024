#include "tasc/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace tasc {

using ad::Tensor;

// ---- enums ----------------------------------------------------------------------

std::string_view to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::lstm: return "lstm";
    case EncoderKind::gru: return "gru";
    case EncoderKind::cnn: return "cnn";
    case EncoderKind::mlp: return "mlp";
  }
  return "?";
}

std::string_view to_string(AttentionKind kind) {
  return kind == AttentionKind::tanh ? "tanh" : "dot";
}

std::string_view to_string(TascVariant variant) {
  switch (variant) {
    case TascVariant::none: return "none";
    case TascVariant::lin: return "lin";
    case TascVariant::feat: return "feat";
    case TascVariant::conv: return "conv";
  }
  return "?";
}

EncoderKind parse_encoder(std::string_view name) {
  for (auto k : kAllEncoders) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("encoder: '" + std::string(name) + "' is not one of lstm, gru, cnn, mlp");
}

AttentionKind parse_attention(std::string_view name) {
  for (auto k : kAllAttentions) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("attention: '" + std::string(name) + "' is not one of tanh, dot");
}

TascVariant parse_tasc(std::string_view name) {
  for (auto k : kAllTasc) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("tasc: '" + std::string(name) + "' is not one of none, lin, feat, conv");
}

void ModelConfig::validate() const {
  if (hidden == 0) throw ValidationError("hidden: must be positive");
  if (num_classes < 2) throw ValidationError("num_classes: need at least 2 classes");
  if ((encoder == EncoderKind::lstm || encoder == EncoderKind::gru) && hidden % 2 != 0) {
    throw ValidationError("hidden: bidirectional encoders need an even width");
  }
  if (encoder == EncoderKind::cnn) {
    if (cnn_kernels.empty() || hidden % cnn_kernels.size() != 0) {
      throw ValidationError("cnn_kernels: hidden must split evenly across kernels");
    }
    for (auto k : cnn_kernels) {
      if (k == 0 || k % 2 == 0) throw ValidationError("cnn_kernels: widths must be odd");
    }
  }
  if (tasc == TascVariant::conv && conv_channels == 0) {
    throw ValidationError("conv_channels: must be positive");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j{{"encoder", to_string(c.encoder)},
                   {"attention", to_string(c.attention)},
                   {"tasc", to_string(c.tasc)},
                   {"hidden", c.hidden},
                   {"cnn_kernels", c.cnn_kernels},
                   {"conv_channels", c.conv_channels},
                   {"num_classes", c.num_classes}};
  j["scale_override"] = c.scale_override ? nlohmann::json(*c.scale_override) : nlohmann::json();
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.encoder = parse_encoder(j.at("encoder").get<std::string>());
  c.attention = parse_attention(j.at("attention").get<std::string>());
  c.tasc = parse_tasc(j.at("tasc").get<std::string>());
  c.hidden = j.at("hidden").get<std::size_t>();
  c.cnn_kernels = j.at("cnn_kernels").get<std::vector<std::size_t>>();
  c.conv_channels = j.at("conv_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  if (j.contains("scale_override") && !j["scale_override"].is_null()) {
    c.scale_override = j["scale_override"].get<double>();
  }
  c.validate();
  return c;
}

// ---- encoders -------------------------------------------------------------------

namespace {

// Column t of a [B, T] mask as a [B, 1] constant; nullopt when every row is real.
std::optional<Tensor> mask_column(const Tensor& mask, std::size_t t) {
  const std::size_t batch = mask.dim(0), width = mask.dim(1);
  const auto mv = mask.values();
  std::vector<double> col(batch);
  bool all = true;
  for (std::size_t b = 0; b < batch; ++b) {
    col[b] = mv[b * width + t];
    all = all && col[b] == 1.0;
  }
  if (all) return std::nullopt;
  return Tensor::constant({batch, 1}, std::move(col));
}

// m * fresh + (1 - m) * held; positions with m = 0 keep the previous state.
Tensor masked_update(const Tensor& fresh, const Tensor& held, const std::optional<Tensor>& m) {
  if (!m) return fresh;
  const auto mv = m->values();
  std::vector<double> inv(mv.size());
  for (std::size_t i = 0; i < mv.size(); ++i) inv[i] = 1.0 - mv[i];
  return ad::add(ad::mul(*m, fresh), ad::mul(Tensor::constant(m->shape(), std::move(inv)), held));
}

Tensor run_recurrent(EncoderKind kind, const RecurrentParams& p, const Tensor& x,
                     const Tensor& mask, bool reverse) {
  const std::size_t batch = x.dim(0), steps = x.dim(1);
  const std::size_t gates = kind == EncoderKind::lstm ? 4 : 3;
  const std::size_t h_dim = p.w_hh.dim(0);
  const Tensor xw = ad::add(ad::matmul(x, p.w_ih), p.b_ih);  // [B, T, G*H]
  Tensor h = Tensor::zeros({batch, h_dim});
  Tensor c = Tensor::zeros({batch, h_dim});
  std::vector<Tensor> outs(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Tensor xt = ad::reshape(ad::slice_axis(xw, 1, t, 1), {batch, gates * h_dim});
    const auto m = mask_column(mask, t);
    if (kind == EncoderKind::lstm) {
      const Tensor g = ad::add(xt, ad::matmul(h, p.w_hh));
      const Tensor in = ad::sigmoid(ad::slice_axis(g, 1, 0, h_dim));
      const Tensor forget = ad::sigmoid(ad::slice_axis(g, 1, h_dim, h_dim));
      const Tensor cand = ad::tanh(ad::slice_axis(g, 1, 2 * h_dim, h_dim));
      const Tensor out = ad::sigmoid(ad::slice_axis(g, 1, 3 * h_dim, h_dim));
      const Tensor c_new = ad::add(ad::mul(forget, c), ad::mul(in, cand));
      const Tensor h_new = ad::mul(out, ad::tanh(c_new));
      c = masked_update(c_new, c, m);
      h = masked_update(h_new, h, m);
    } else {
      const Tensor hw = ad::add(ad::matmul(h, p.w_hh), p.b_hh);
      const Tensor r = ad::sigmoid(
          ad::add(ad::slice_axis(xt, 1, 0, h_dim), ad::slice_axis(hw, 1, 0, h_dim)));
      const Tensor z = ad::sigmoid(
          ad::add(ad::slice_axis(xt, 1, h_dim, h_dim), ad::slice_axis(hw, 1, h_dim, h_dim)));
      const Tensor n = ad::tanh(ad::add(ad::slice_axis(xt, 1, 2 * h_dim, h_dim),
                                        ad::mul(r, ad::slice_axis(hw, 1, 2 * h_dim, h_dim))));
      const Tensor h_new = ad::add(n, ad::mul(z, ad::sub(h, n)));
      h = masked_update(h_new, h, m);
    }
    outs[t] = ad::reshape(h, {batch, 1, h_dim});
  }
  return ad::concat_axis(outs, 1);
}

}  // namespace

Tensor encode(const EncoderParams& params, const Tensor& embedded, const Tensor& mask) {
  if (embedded.rank() != 3 || mask.rank() != 2 || mask.dim(0) != embedded.dim(0) ||
      mask.dim(1) != embedded.dim(1)) {
    throw ad::ShapeError("encode: embedded " + ad::to_string(embedded.shape()) + " vs mask " +
                         ad::to_string(mask.shape()));
  }
  if (embedded.dim(1) == 0) throw ad::ShapeError("encode: empty sequence");
  switch (params.kind) {
    case EncoderKind::lstm:
    case EncoderKind::gru: {
      const Tensor fwd = run_recurrent(params.kind, params.forward, embedded, mask, false);
      const Tensor bwd = run_recurrent(params.kind, params.backward, embedded, mask, true);
      return ad::concat_axis({fwd, bwd}, 2);
    }
    case EncoderKind::cnn: {
      const Tensor m3 = ad::reshape(mask, {mask.dim(0), mask.dim(1), 1});
      const Tensor x = ad::mul(embedded, m3);
      std::vector<Tensor> maps;
      for (const auto& bank : params.convs) maps.push_back(ad::relu(ad::conv1d(x, bank.weight, bank.bias)));
      return ad::concat_axis(maps, 2);
    }
    case EncoderKind::mlp:
      return ad::relu(ad::add(ad::matmul(embedded, params.weight), params.bias));
  }
  throw std::logic_error("encode: unknown encoder");
}

Tensor attention(const AttentionParams& params, const Tensor& hidden, const Tensor& mask) {
  const std::size_t batch = hidden.dim(0), steps = hidden.dim(1), width = hidden.dim(2);
  Tensor phi;
  if (params.kind == AttentionKind::tanh) {
    phi = ad::matmul(ad::tanh(ad::matmul(hidden, params.weight)), params.query);
  } else {
    phi = ad::scale(ad::matmul(hidden, params.query), 1.0 / std::sqrt(static_cast<double>(width)));
  }
  Tensor alpha = ad::softmax_axis(ad::reshape(phi, {batch, steps}), 1, mask);
  alpha.retain_grad();
  return alpha;
}

Tensor tasc_score(const TascParams& params, std::span<const std::size_t> ids,
                  const Tensor& embedded) {
  if (params.variant == TascVariant::none) {
    throw std::invalid_argument("tasc_score: variant 'none' has no scores; use plain pooling");
  }
  const std::size_t batch = embedded.dim(0), steps = embedded.dim(1), dim = embedded.dim(2);
  if (ids.size() != batch * steps) {
    throw ad::ShapeError("tasc_score: " + std::to_string(ids.size()) + " ids for embedded " +
                         ad::to_string(embedded.shape()));
  }
  if (params.scale_override) return Tensor::full({batch, steps}, *params.scale_override);
  switch (params.variant) {
    case TascVariant::lin: {
      const Tensor u = ad::gather_rows(params.u, ids, {batch, steps});  // [B, T, 1]
      return ad::sum_axis(ad::mul(embedded, u), 2);
    }
    case TascVariant::feat: {
      const Tensor rows = ad::gather_rows(params.u_matrix, ids, {batch, steps});
      return ad::sum_axis(ad::mul(rows, embedded), 2);
    }
    case TascVariant::conv: {
      const Tensor u = ad::gather_rows(params.u, ids, {batch, steps});
      const Tensor scaled = ad::mul(embedded, u);
      // Channel c emits w[c, k] * e_hat[k] + b[c] for each of the d entries;
      // summing those n*d outputs equals a width-1 conv over the d inputs with
      // bias d * b[c], summed over channels.
      const Tensor bias = ad::scale(params.conv_bias, static_cast<double>(dim));
      return ad::sum_axis(ad::conv1d(scaled, params.conv_weight, bias), 2);
    }
    case TascVariant::none:
      break;
  }
  throw std::logic_error("tasc_score: unknown variant");
}

Tensor pool(const Tensor& hidden, const Tensor& alpha, const std::optional<Tensor>& scores) {
  if (hidden.rank() != 3 || alpha.shape() != ad::Shape{hidden.dim(0), hidden.dim(1)} ||
      (scores && scores->shape() != alpha.shape())) {
    throw ad::ShapeError("pool: hidden " + ad::to_string(hidden.shape()) + ", alpha " +
                         ad::to_string(alpha.shape()) +
                         (scores ? ", scores " + ad::to_string(scores->shape()) : ""));
  }
  const Tensor weight = scores ? ad::mul(alpha, *scores) : alpha;
  const Tensor w3 = ad::reshape(weight, {hidden.dim(0), hidden.dim(1), 1});
  return ad::sum_axis(ad::mul(hidden, w3), 1);
}

std::size_t parameter_count(TascVariant variant, std::size_t vocab_size, std::size_t dim,
                            std::size_t channels) {
  if (vocab_size == 0 || dim == 0 || channels == 0) {
    throw std::invalid_argument("parameter_count: arguments must be positive");
  }
  switch (variant) {
    case TascVariant::lin: return vocab_size;
    case TascVariant::feat: return vocab_size * dim;
    case TascVariant::conv: return vocab_size + dim * channels + channels;
    case TascVariant::none: return 0;
  }
  throw std::invalid_argument("parameter_count: unknown variant");
}

// ---- bundle ---------------------------------------------------------------------

namespace {

class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(ad::Shape shape, std::size_t fan_in, std::string name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = dist(rng_);
    return Tensor::parameter(std::move(shape), std::move(v), std::move(name));
  }

  Tensor normal(ad::Shape shape, double stddev, std::string name) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(ad::numel(shape));
    for (auto& x : v) x = dist(rng_);
    return Tensor::parameter(std::move(shape), std::move(v), std::move(name));
  }

 private:
  std::mt19937_64 rng_;
};

RecurrentParams make_recurrent(Init& init, EncoderKind kind, std::size_t d, std::size_t h,
                               const std::string& prefix) {
  const std::size_t g = (kind == EncoderKind::lstm ? 4 : 3) * h;
  RecurrentParams p;
  p.w_ih = init.uniform({d, g}, h, prefix + ".w_ih");
  p.w_hh = init.uniform({h, g}, h, prefix + ".w_hh");
  p.b_ih = init.uniform({g}, h, prefix + ".b_ih");
  if (kind == EncoderKind::gru) p.b_hh = init.uniform({g}, h, prefix + ".b_hh");
  return p;
}

template <typename F>
void each_recurrent(RecurrentParams& p, F&& f) {
  for (Tensor* t : {&p.w_ih, &p.w_hh, &p.b_ih, &p.b_hh}) {
    if (t->defined()) f(*t);
  }
}

// Visits every trainable tensor in declared order.
template <typename Enc, typename Att, typename Ta, typename F>
void each_param(Enc& enc, Att& att, Ta& tasc, Tensor& w, Tensor& b, F&& f) {
  switch (enc.kind) {
    case EncoderKind::lstm:
    case EncoderKind::gru:
      each_recurrent(enc.forward, f);
      each_recurrent(enc.backward, f);
      break;
    case EncoderKind::cnn:
      for (auto& bank : enc.convs) {
        f(bank.weight);
        f(bank.bias);
      }
      break;
    case EncoderKind::mlp:
      f(enc.weight);
      f(enc.bias);
      break;
  }
  if (att.weight.defined()) f(att.weight);
  f(att.query);
  for (Tensor* t : {&tasc.u, &tasc.u_matrix, &tasc.conv_weight, &tasc.conv_bias}) {
    if (t->defined()) f(*t);
  }
  f(w);
  f(b);
}

}  // namespace

ModelBundle ModelBundle::create(const ModelConfig& config,
                                std::shared_ptr<const text::EmbeddingTable> embeddings,
                                std::uint64_t seed) {
  config.validate();
  if (!embeddings || embeddings->rows == 0 || embeddings->dim == 0) {
    throw std::invalid_argument("ModelBundle: empty embedding table");
  }
  ModelBundle m;
  m.config_ = config;
  m.embeddings_ = std::move(embeddings);
  m.table_ = Tensor::constant({m.embeddings_->rows, m.embeddings_->dim}, m.embeddings_->data);
  const std::size_t d = m.embeddings_->dim, n = config.hidden, v = m.embeddings_->rows;
  Init init(seed);

  m.encoder_.kind = config.encoder;
  switch (config.encoder) {
    case EncoderKind::lstm:
    case EncoderKind::gru:
      m.encoder_.forward = make_recurrent(init, config.encoder, d, n / 2, "encoder.fwd");
      m.encoder_.backward = make_recurrent(init, config.encoder, d, n / 2, "encoder.bwd");
      break;
    case EncoderKind::cnn: {
      const std::size_t filters = n / config.cnn_kernels.size();
      for (auto k : config.cnn_kernels) {
        const std::string name = "encoder.conv" + std::to_string(k);
        ConvBank bank;
        bank.weight = init.uniform({k, d, filters}, k * d, name + ".weight");
        bank.bias = init.uniform({filters}, k * d, name + ".bias");
        m.encoder_.convs.push_back(std::move(bank));
      }
      break;
    }
    case EncoderKind::mlp:
      m.encoder_.weight = init.uniform({d, n}, d, "encoder.weight");
      m.encoder_.bias = init.uniform({n}, d, "encoder.bias");
      break;
  }

  m.attention_.kind = config.attention;
  if (config.attention == AttentionKind::tanh) {
    m.attention_.weight = init.uniform({n, n}, n, "attention.weight");
  }
  m.attention_.query = init.uniform({n, 1}, n, "attention.query");

  m.tasc_.variant = config.tasc;
  m.tasc_.scale_override = config.scale_override;
  switch (config.tasc) {
    case TascVariant::lin:
      m.tasc_.u = init.normal({v, 1}, 0.1, "tasc.u");
      break;
    case TascVariant::feat:
      m.tasc_.u_matrix = init.normal({v, d}, 0.1, "tasc.u_matrix");
      break;
    case TascVariant::conv:
      m.tasc_.u = init.normal({v, 1}, 0.1, "tasc.u");
      m.tasc_.conv_weight = init.normal({1, d, config.conv_channels}, 0.1, "tasc.conv_weight");
      m.tasc_.conv_bias = init.normal({config.conv_channels}, 0.1, "tasc.conv_bias");
      break;
    case TascVariant::none:
      break;
  }

  m.out_weight_ = init.uniform({n, config.num_classes}, n, "output.weight");
  m.out_bias_ = init.uniform({config.num_classes}, n, "output.bias");
  m.collect();
  return m;
}

void ModelBundle::collect() {
  params_.clear();
  each_param(encoder_, attention_, tasc_, out_weight_, out_bias_,
             [this](Tensor& t) { params_.push_back(t); });
}

ModelBundle ModelBundle::clone() const {
  ModelBundle m = *this;
  each_param(m.encoder_, m.attention_, m.tasc_, m.out_weight_, m.out_bias_, [](Tensor& t) {
    auto v = t.values();
    Tensor fresh = Tensor::parameter(t.shape(), std::vector<double>(v.begin(), v.end()), t.name());
    t = fresh;
  });
  m.collect();
  return m;
}

void ModelBundle::copy_parameters_from(const ModelBundle& other) { restore(other.snapshot()); }

std::vector<std::vector<double>> ModelBundle::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& p : params_) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

void ModelBundle::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) {
    throw std::invalid_argument("restore: parameter count mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].mutable_values();
    if (dst.size() != values[i].size()) {
      throw std::invalid_argument("restore: size mismatch for '" + params_[i].name() + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

void ModelBundle::set_scale_override(std::optional<double> value) {
  config_.scale_override = value;
  tasc_.scale_override = value;
}

Tensor ModelBundle::embed(const text::Batch& batch) const {
  return ad::gather_rows(table_, batch.ids, {batch.batch_size, batch.width});
}

ForwardResult ModelBundle::forward(const text::Batch& batch, GradMode mode) const {
  return forward_embedded(batch, embed(batch), mode);
}

ForwardResult ModelBundle::forward_embedded(const text::Batch& batch, const Tensor& embedded,
                                            GradMode mode) const {
  if (embedded.shape() != ad::Shape{batch.batch_size, batch.width, embeddings_->dim}) {
    throw ad::ShapeError("forward: embedded " + ad::to_string(embedded.shape()) +
                         " does not match batch [" + std::to_string(batch.batch_size) + ", " +
                         std::to_string(batch.width) + ", " + std::to_string(embeddings_->dim) +
                         "]");
  }
  EncoderParams enc = encoder_;
  AttentionParams att = attention_;
  TascParams tasc = tasc_;
  Tensor w = out_weight_, b = out_bias_;
  if (mode == GradMode::frozen) {
    each_param(enc, att, tasc, w, b, [](Tensor& t) { t = t.detach(); });
  }
  const Tensor mask = Tensor::constant({batch.batch_size, batch.width}, batch.mask);

  ForwardResult r;
  r.embedded = embedded;
  r.hidden = encode(enc, embedded, mask);
  r.alpha = attention(att, r.hidden, mask);
  std::optional<Tensor> scores;
  if (tasc.variant != TascVariant::none) {
    r.scores = tasc_score(tasc, batch.ids, embedded);
    scores = r.scores;
  }
  const Tensor c = pool(r.hidden, r.alpha, scores);
  r.logits = ad::add(ad::matmul(c, w), b);
  r.probs = ad::softmax_axis(r.logits, 1);
  return r;
}

}  // namespace tasc
