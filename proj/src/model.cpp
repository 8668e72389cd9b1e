#include "alibi_lm/model.hpp"

#include <cmath>

namespace alibi_lm {

bool operator==(const NoPosition&, const NoPosition&) { return true; }
bool operator==(const Sinusoidal&, const Sinusoidal&) { return true; }
bool operator==(const Rotary& a, const Rotary& b) { return a.base == b.base; }
bool operator==(const T5Bias& a, const T5Bias& b) {
  return a.num_buckets == b.num_buckets && a.max_distance == b.max_distance && a.shared == b.shared;
}
bool operator==(const Alibi&, const Alibi&) { return true; }

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_heads == b.n_heads &&
         a.n_layers == b.n_layers && a.d_ffn == b.d_ffn && a.position == b.position && a.dropout == b.dropout;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ArgumentError(std::string(name) + " must be >= 1, got " + std::to_string(v));
  };
  positive(vocab_size, "vocab_size");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers, "n_layers");
  positive(d_ffn, "d_ffn");
  if (d_model % n_heads != 0) {
    throw ArgumentError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                        std::to_string(n_heads) + ")");
  }
  if (std::holds_alternative<Rotary>(position) && d_head() % 2 != 0) {
    throw ArgumentError("rotary needs an even d_head, got " + std::to_string(d_head()));
  }
  if (std::holds_alternative<Sinusoidal>(position) && d_model % 2 != 0) {
    throw ArgumentError("sinusoidal embeddings need an even d_model, got " + std::to_string(d_model));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must be in [0, 1)");
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, Tensor* probs) {
  if (q.rank() != 3 || k.shape() != q.shape() || v.rank() != 3 || v.dim(0) != q.dim(0) || v.dim(1) != k.dim(1)) {
    throw DimensionError("attend: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(2)));
  Tensor scores = add_head_bias(scale(matmul_nt(q, k), inv_scale), bias);
  Tensor p = softmax_rows(scores);
  if (probs) *probs = p;
  return matmul(p, v);
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add_bias(matmul(x, w), b); }

}  // namespace

Model::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  constexpr double kInitStd = 0.02;
  std::mt19937_64 rng(config_.seed);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto f = static_cast<std::size_t>(config_.d_ffn);
  embedding_ = normal_tensor({static_cast<std::size_t>(config_.vocab_size), d}, kInitStd, rng);

  const auto* t5 = std::get_if<T5Bias>(&config_.position);
  auto init_t5 = [&]() {
    T5BiasTable table = make_t5_table(*t5, config_.n_heads);
    table.table = normal_tensor(table.table.shape(), kInitStd, rng);
    return table;
  };
  if (t5 && t5->shared) shared_t5_ = init_t5();

  for (int l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_gain = Tensor::filled({d}, 1.0, true);
    layer.ln1_offset = Tensor::zeros({d}, true);
    layer.wq = normal_tensor({d, d}, kInitStd, rng);
    layer.bq = Tensor::zeros({d}, true);
    layer.wk = normal_tensor({d, d}, kInitStd, rng);
    layer.bk = Tensor::zeros({d}, true);
    layer.wv = normal_tensor({d, d}, kInitStd, rng);
    layer.bv = Tensor::zeros({d}, true);
    layer.wo = normal_tensor({d, d}, kInitStd, rng);
    layer.bo = Tensor::zeros({d}, true);
    layer.ln2_gain = Tensor::filled({d}, 1.0, true);
    layer.ln2_offset = Tensor::zeros({d}, true);
    layer.w1 = normal_tensor({d, f}, kInitStd, rng);
    layer.b1 = Tensor::zeros({f}, true);
    layer.w2 = normal_tensor({f, d}, kInitStd, rng);
    layer.b2 = Tensor::zeros({d}, true);
    if (t5 && !t5->shared) layer.t5 = init_t5();
    layers_.push_back(std::move(layer));
  }
  final_gain_ = Tensor::filled({d}, 1.0, true);
  final_offset_ = Tensor::zeros({d}, true);
  register_parameters();
}

void Model::register_parameters() {
  params_.clear();
  params_.push_back({"embedding", embedding_});
  if (shared_t5_.table.defined()) params_.push_back({"t5_table", shared_t5_.table});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    for (const auto& [name, t] : std::initializer_list<std::pair<const char*, const Tensor*>>{
             {"ln1_gain", &L.ln1_gain}, {"ln1_offset", &L.ln1_offset}, {"wq", &L.wq}, {"bq", &L.bq},
             {"wk", &L.wk},             {"bk", &L.bk},                 {"wv", &L.wv}, {"bv", &L.bv},
             {"wo", &L.wo},             {"bo", &L.bo},                 {"ln2_gain", &L.ln2_gain},
             {"ln2_offset", &L.ln2_offset}, {"w1", &L.w1}, {"b1", &L.b1}, {"w2", &L.w2}, {"b2", &L.b2}}) {
      params_.push_back({p + name, *t});
    }
    if (L.t5.table.defined()) params_.push_back({p + "t5_table", L.t5.table});
  }
  params_.push_back({"final_gain", final_gain_});
  params_.push_back({"final_offset", final_offset_});
}

Model Model::clone() const {
  Model copy(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].tensor.data();
    auto dst = copy.params_[i].tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

std::size_t Model::param_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

std::size_t param_count(const Model& model) { return model.param_count(); }

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::position_bias(const Layer& layer, int length) const {
  if (std::holds_alternative<Alibi>(config_.position)) return alibi_mask(config_.n_heads, length).tensor();
  if (std::holds_alternative<T5Bias>(config_.position)) {
    return t5_bias_matrix(layer.t5.table.defined() ? layer.t5 : shared_t5_, length);
  }
  const auto L = static_cast<std::size_t>(length);
  return reshape(causal_mask(length), {1, L, L});
}

Tensor Model::forward(std::span<const Token> tokens, std::size_t batch, const ForwardOptions& options) const {
  if (tokens.empty() || batch == 0 || tokens.size() % batch != 0) {
    throw DimensionError("forward: " + std::to_string(tokens.size()) + " tokens cannot form " +
                         std::to_string(batch) + " equal sequences");
  }
  const std::size_t steps = tokens.size() / batch;
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto heads = static_cast<std::size_t>(config_.n_heads);
  const bool drop = options.training && config_.dropout > 0.0;
  if (drop && options.rng == nullptr) throw ArgumentError("forward: dropout in training mode needs an rng");
  auto maybe_dropout = [&](const Tensor& t) { return drop ? dropout(t, config_.dropout, *options.rng) : t; };

  Tensor x = embedding(embedding_, tokens);
  if (std::holds_alternative<Sinusoidal>(config_.position)) {
    const Tensor table = sinusoidal_table(static_cast<int>(steps), config_.d_model);
    std::vector<double> tiled(batch * steps * d);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy(table.data().begin(), table.data().end(), tiled.begin() + static_cast<std::ptrdiff_t>(b * steps * d));
    }
    x = add(x, Tensor({batch * steps, d}, std::move(tiled)));
  }
  x = maybe_dropout(x);

  const auto* rotary_method = std::get_if<Rotary>(&config_.position);
  // ALiBi and the causal mask are identical for every layer.
  Tensor fixed_bias;
  if (!std::holds_alternative<T5Bias>(config_.position)) fixed_bias = position_bias(layers_.front(), int(steps));

  for (const Layer& layer : layers_) {
    const Tensor h = layer_norm(x, layer.ln1_gain, layer.ln1_offset);
    Tensor q = split_heads(linear(h, layer.wq, layer.bq), batch, heads);
    Tensor k = split_heads(linear(h, layer.wk, layer.bk), batch, heads);
    const Tensor v = split_heads(linear(h, layer.wv, layer.bv), batch, heads);
    if (rotary_method) {
      q = rotary(q, rotary_method->base);
      k = rotary(k, rotary_method->base);
    }
    const Tensor bias = fixed_bias.defined() ? fixed_bias : position_bias(layer, int(steps));
    Tensor probs;
    const Tensor attn = attend(q, k, v, bias, options.attention_probs ? &probs : nullptr);
    if (options.attention_probs) options.attention_probs->push_back(probs);
    x = add(x, maybe_dropout(linear(merge_heads(attn, batch, heads), layer.wo, layer.bo)));

    const Tensor h2 = layer_norm(x, layer.ln2_gain, layer.ln2_offset);
    const Tensor ffn = linear(gelu(linear(h2, layer.w1, layer.b1)), layer.w2, layer.b2);
    x = add(x, maybe_dropout(ffn));
  }
  x = layer_norm(x, final_gain_, final_offset_);
  return matmul_nt(x, embedding_);
}

}  // namespace alibi_lm
