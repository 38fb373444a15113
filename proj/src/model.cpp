#include "offramp/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace offramp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[8] = {'O', 'F', 'R', 'M', 'P', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr double kInitStd = 0.02;

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace

void ModelConfig::validate() const {
  require(n_layers >= 1, "model config: n_layers must be >= 1");
  require(hidden_size >= 1, "model config: hidden_size must be >= 1");
  require(n_heads >= 1, "model config: n_heads must be >= 1");
  require(hidden_size % n_heads == 0, "model config: hidden_size must be divisible by n_heads");
  require(ffn_size >= 1, "model config: ffn_size must be >= 1");
  require(vocab_size >= Vocab::kReservedCount, "model config: vocab_size must cover the reserved tokens");
  require(max_seq_len >= 2, "model config: max_seq_len must be >= 2");
  require(n_classes >= 2, "model config: n_classes must be >= 2");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "model config: dropout_rate must be in [0, 1)");
}

std::vector<Tensor> EncoderLayer::parameters() const {
  return {w_query, b_query, w_key,   b_key,   w_value,   b_value,   w_attn_out, b_attn_out,
          ln_attn_gain, ln_attn_bias, w_ffn_in, b_ffn_in, w_ffn_out, b_ffn_out, ln_ffn_gain, ln_ffn_bias};
}

std::vector<Tensor> OffRamp::parameters() const { return {weight, bias}; }

EarlyExitModel::EarlyExitModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  allocate();
}

EarlyExitModel::EarlyExitModel(EarlyExitModel&& other) noexcept
    : config_(std::move(other.config_)),
      token_embedding_(std::move(other.token_embedding_)),
      position_embedding_(std::move(other.position_embedding_)),
      segment_embedding_(std::move(other.segment_embedding_)),
      ln_embed_gain_(std::move(other.ln_embed_gain_)),
      ln_embed_bias_(std::move(other.ln_embed_bias_)),
      layers_(std::move(other.layers_)),
      ramps_(std::move(other.ramps_)),
      layer_executions_(other.layer_executions_.load()),
      training_(other.training_),
      dropout_rng_(other.dropout_rng_) {}

EarlyExitModel& EarlyExitModel::operator=(EarlyExitModel&& other) noexcept {
  if (this != &other) {
    config_ = std::move(other.config_);
    token_embedding_ = std::move(other.token_embedding_);
    position_embedding_ = std::move(other.position_embedding_);
    segment_embedding_ = std::move(other.segment_embedding_);
    ln_embed_gain_ = std::move(other.ln_embed_gain_);
    ln_embed_bias_ = std::move(other.ln_embed_bias_);
    layers_ = std::move(other.layers_);
    ramps_ = std::move(other.ramps_);
    layer_executions_.store(other.layer_executions_.load());
    training_ = other.training_;
    dropout_rng_ = other.dropout_rng_;
  }
  return *this;
}

EarlyExitModel::EarlyExitModel(ModelConfig config, std::uint64_t seed) : EarlyExitModel(std::move(config)) {
  Rng rng(derive_seed(seed, "model.init"));
  for (Tensor& p : parameters()) {
    // Weight matrices and embeddings get the scaled normal init; norm gains
    // stay at 1 and all biases at 0, which allocate() already produced.
    if (p.rank() == 2) {
      for (double& v : p.data()) v = rng.normal(0.0, kInitStd);
    }
  }
}

void EarlyExitModel::allocate() {
  const std::size_t hidden = static_cast<std::size_t>(config_.hidden_size);
  const std::size_t ffn = static_cast<std::size_t>(config_.ffn_size);
  const std::size_t classes = static_cast<std::size_t>(config_.n_classes);

  token_embedding_ = Tensor({static_cast<std::size_t>(config_.vocab_size), hidden});
  position_embedding_ = Tensor({static_cast<std::size_t>(config_.max_seq_len), hidden});
  segment_embedding_ = Tensor({2, hidden});
  ln_embed_gain_ = Tensor({hidden}, 1.0);
  ln_embed_bias_ = Tensor({hidden}, 0.0);

  layers_.clear();
  for (int i = 0; i < config_.n_layers; ++i) {
    EncoderLayer layer;
    layer.w_query = Tensor({hidden, hidden});
    layer.b_query = Tensor({hidden});
    layer.w_key = Tensor({hidden, hidden});
    layer.b_key = Tensor({hidden});
    layer.w_value = Tensor({hidden, hidden});
    layer.b_value = Tensor({hidden});
    layer.w_attn_out = Tensor({hidden, hidden});
    layer.b_attn_out = Tensor({hidden});
    layer.ln_attn_gain = Tensor({hidden}, 1.0);
    layer.ln_attn_bias = Tensor({hidden});
    layer.w_ffn_in = Tensor({hidden, ffn});
    layer.b_ffn_in = Tensor({ffn});
    layer.w_ffn_out = Tensor({ffn, hidden});
    layer.b_ffn_out = Tensor({hidden});
    layer.ln_ffn_gain = Tensor({hidden}, 1.0);
    layer.ln_ffn_bias = Tensor({hidden});
    layers_.push_back(std::move(layer));
  }

  ramps_.clear();
  for (int i = 0; i < config_.n_layers; ++i) {
    OffRamp ramp;
    ramp.weight = Tensor({hidden, classes});
    ramp.bias = Tensor({classes});
    ramps_.push_back(std::move(ramp));
  }
}

std::vector<Tensor> EarlyExitModel::parameters() const {
  std::vector<Tensor> out = {token_embedding_, position_embedding_, segment_embedding_,
                             ln_embed_gain_, ln_embed_bias_};
  for (const EncoderLayer& layer : layers_) {
    auto lp = layer.parameters();
    out.insert(out.end(), lp.begin(), lp.end());
  }
  for (const OffRamp& ramp : ramps_) {
    auto rp = ramp.parameters();
    out.insert(out.end(), rp.begin(), rp.end());
  }
  return out;
}

std::vector<Tensor> EarlyExitModel::backbone_parameters() const {
  std::vector<Tensor> out = {token_embedding_, position_embedding_, segment_embedding_,
                             ln_embed_gain_, ln_embed_bias_};
  for (const EncoderLayer& layer : layers_) {
    auto lp = layer.parameters();
    out.insert(out.end(), lp.begin(), lp.end());
  }
  auto final_ramp = ramps_.back().parameters();
  out.insert(out.end(), final_ramp.begin(), final_ramp.end());
  return out;
}

std::vector<Tensor> EarlyExitModel::intermediate_ramp_parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i + 1 < ramps_.size(); ++i) {
    auto rp = ramps_[i].parameters();
    out.insert(out.end(), rp.begin(), rp.end());
  }
  return out;
}

const OffRamp& EarlyExitModel::ramp(int index) const {
  if (index < 1 || index > config_.n_layers) {
    throw std::out_of_range("ramp index " + std::to_string(index) + " out of range [1, " +
                            std::to_string(config_.n_layers) + "]");
  }
  return ramps_[static_cast<std::size_t>(index - 1)];
}

void EarlyExitModel::set_training_mode(bool training, std::uint64_t dropout_seed) {
  training_ = training;
  dropout_rng_ = Rng(derive_seed(dropout_seed, "model.dropout"));
}

Tensor EarlyExitModel::apply_dropout(const Tensor& x) const {
  if (!training_ || config_.dropout_rate == 0.0) return x;
  return dropout(x, config_.dropout_rate, dropout_rng_);
}

Tensor EarlyExitModel::embed(const TokenBatch& batch) const {
  if (batch.batch == 0) throw std::invalid_argument("forward: empty batch");
  if (batch.seq_len < 1 || batch.seq_len > config_.max_seq_len) {
    throw std::invalid_argument("forward: sequence length " + std::to_string(batch.seq_len) +
                                " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  const std::size_t expected = batch.batch * static_cast<std::size_t>(batch.seq_len);
  if (batch.ids.size() != expected || batch.mask.size() != expected || batch.segments.size() != expected) {
    throw std::invalid_argument("forward: id/mask/segment arrays do not match batch " +
                                std::to_string(batch.batch) + " x " + std::to_string(batch.seq_len));
  }

  std::vector<int> positions(expected);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (int t = 0; t < batch.seq_len; ++t) positions[b * batch.seq_len + t] = t;
  }
  Tensor tok = embedding_gather(token_embedding_, batch.ids);
  Tensor pos = embedding_gather(position_embedding_, positions);
  Tensor seg = embedding_gather(segment_embedding_, batch.segments);
  Tensor summed = add(add(tok, pos), seg);
  Tensor normed = layer_norm(summed, ln_embed_gain_, ln_embed_bias_);
  normed = apply_dropout(normed);
  return reshape(normed, {batch.batch, static_cast<std::size_t>(batch.seq_len),
                          static_cast<std::size_t>(config_.hidden_size)});
}

namespace {

// x [B,T,H] times w [H,O] plus bias, back to [B,T,O].
Tensor linear3(const Tensor& x, const Tensor& w, const Tensor& b) {
  const Shape& s = x.shape();
  Tensor flat = reshape(x, {s[0] * s[1], s[2]});
  Tensor out = add_bias(matmul(flat, w), b);
  return reshape(out, {s[0], s[1], w.shape()[1]});
}

}  // namespace

Tensor EarlyExitModel::run_layer(const Tensor& hidden, const TokenBatch& batch, int layer_index) const {
  const EncoderLayer& layer = layers_[static_cast<std::size_t>(layer_index)];
  const std::size_t head_dim = static_cast<std::size_t>(config_.hidden_size / config_.n_heads);

  Tensor q = linear3(hidden, layer.w_query, layer.b_query);
  Tensor k = linear3(hidden, layer.w_key, layer.b_key);
  Tensor v = linear3(hidden, layer.w_value, layer.b_value);

  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(config_.n_heads));
  for (int h = 0; h < config_.n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * head_dim;
    Tensor qh = slice_last(q, off, head_dim);
    Tensor kh = slice_last(k, off, head_dim);
    Tensor vh = slice_last(v, off, head_dim);
    Tensor scores = scale(bmm(qh, transpose_last2(kh)), attn_scale);
    scores = attention_mask_add(scores, batch.mask);
    Tensor weights = apply_dropout(softmax(scores, 2));
    heads.push_back(bmm(weights, vh));
  }
  Tensor context = concat_last(heads);
  Tensor attn_out = apply_dropout(linear3(context, layer.w_attn_out, layer.b_attn_out));
  Tensor after_attn = layer_norm(add(hidden, attn_out), layer.ln_attn_gain, layer.ln_attn_bias);

  Tensor ffn = linear3(gelu(linear3(after_attn, layer.w_ffn_in, layer.b_ffn_in)),
                       layer.w_ffn_out, layer.b_ffn_out);
  ffn = apply_dropout(ffn);
  return layer_norm(add(after_attn, ffn), layer.ln_ffn_gain, layer.ln_ffn_bias);
}

Tensor EarlyExitModel::pool(const Tensor& hidden) { return select_token(hidden, 0); }

// ---- PrefixRun ----

EarlyExitModel::PrefixRun::PrefixRun(const EarlyExitModel* model, const TokenBatch& batch)
    : model_(model), batch_(&batch), hidden_(model->embed(batch)) {}

void EarlyExitModel::PrefixRun::step_layer() {
  if (depth_ >= model_->config_.n_layers) {
    throw std::logic_error("prefix run: all " + std::to_string(model_->config_.n_layers) +
                           " layers already executed");
  }
  hidden_ = model_->run_layer(hidden_, *batch_, depth_);
  ++depth_;
  model_->layer_executions_.fetch_add(1, std::memory_order_relaxed);
}

Tensor EarlyExitModel::PrefixRun::ramp_logits() const {
  if (depth_ < 1) throw std::logic_error("prefix run: no layer executed yet");
  const OffRamp& ramp = model_->ramps_[static_cast<std::size_t>(depth_ - 1)];
  return add_bias(matmul(EarlyExitModel::pool(hidden_), ramp.weight), ramp.bias);
}

EarlyExitModel::PrefixRun EarlyExitModel::begin(const TokenBatch& batch) const {
  return PrefixRun(this, batch);
}

std::vector<Tensor> EarlyExitModel::forward_all(const TokenBatch& batch) const {
  PrefixRun run = begin(batch);
  std::vector<Tensor> logits;
  logits.reserve(static_cast<std::size_t>(config_.n_layers));
  for (int i = 0; i < config_.n_layers; ++i) {
    run.step_layer();
    logits.push_back(run.ramp_logits());
  }
  return logits;
}

Tensor EarlyExitModel::forward_prefix(const TokenBatch& batch, int depth) const {
  if (depth < 1 || depth > config_.n_layers) {
    throw std::invalid_argument("forward_prefix: depth " + std::to_string(depth) + " out of range [1, " +
                                std::to_string(config_.n_layers) + "]");
  }
  PrefixRun run = begin(batch);
  for (int i = 0; i < depth; ++i) run.step_layer();
  return run.ramp_logits();
}

// ---- checkpoint io ----

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& value, const std::string& path) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
}

}  // namespace

void EarlyExitModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  write_raw(out, static_cast<std::int32_t>(config_.n_layers));
  write_raw(out, static_cast<std::int32_t>(config_.hidden_size));
  write_raw(out, static_cast<std::int32_t>(config_.n_heads));
  write_raw(out, static_cast<std::int32_t>(config_.ffn_size));
  write_raw(out, static_cast<std::int32_t>(config_.vocab_size));
  write_raw(out, static_cast<std::int32_t>(config_.max_seq_len));
  write_raw(out, static_cast<std::int32_t>(config_.n_classes));
  write_raw(out, config_.dropout_rate);

  const std::vector<Tensor> params = parameters();
  std::uint64_t total = 0;
  for (const Tensor& p : params) total += p.size();
  write_raw(out, total);
  for (const Tensor& p : params) {
    out.write(reinterpret_cast<const char*>(p.data().data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

EarlyExitModel EarlyExitModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  std::uint32_t version = 0;
  read_raw(in, version, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + " in " + path);
  }
  ModelConfig config;
  std::int32_t v = 0;
  read_raw(in, v, path); config.n_layers = v;
  read_raw(in, v, path); config.hidden_size = v;
  read_raw(in, v, path); config.n_heads = v;
  read_raw(in, v, path); config.ffn_size = v;
  read_raw(in, v, path); config.vocab_size = v;
  read_raw(in, v, path); config.max_seq_len = v;
  read_raw(in, v, path); config.n_classes = v;
  read_raw(in, config.dropout_rate, path);

  EarlyExitModel model(config);
  std::uint64_t total = 0;
  read_raw(in, total, path);
  std::vector<Tensor> params = model.parameters();
  std::uint64_t expected = 0;
  for (const Tensor& p : params) expected += p.size();
  if (total != expected) {
    throw std::runtime_error("checkpoint: " + path + " holds " + std::to_string(total) +
                             " parameters, expected " + std::to_string(expected));
  }
  for (Tensor& p : params) {
    in.read(reinterpret_cast<char*>(p.data().data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
  }
  in.peek();
  if (!in.eof()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
  return model;
}

}  // namespace offramp
