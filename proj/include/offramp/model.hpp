#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "offramp/data.hpp"
#include "offramp/rng.hpp"
#include "offramp/tensor.hpp"

namespace offramp {

struct ModelConfig {
  int n_layers = 4;
  int hidden_size = 32;
  int n_heads = 4;
  int ffn_size = 64;
  int vocab_size = 0;
  int max_seq_len = 16;
  int n_classes = 2;
  double dropout_rate = 0.0;

  void validate() const;  // throws std::invalid_argument naming the offending field
};

// One post-layer-norm transformer encoder layer:
// x -> LN(x + SelfAttention(x)) -> LN(. + FFN(.)).
struct EncoderLayer {
  Tensor w_query, b_query;
  Tensor w_key, b_key;
  Tensor w_value, b_value;
  Tensor w_attn_out, b_attn_out;
  Tensor ln_attn_gain, ln_attn_bias;
  Tensor w_ffn_in, b_ffn_in;
  Tensor w_ffn_out, b_ffn_out;
  Tensor ln_ffn_gain, ln_ffn_bias;

  std::vector<Tensor> parameters() const;
};

// Affine classifier reading the pooled (first-token) representation.
struct OffRamp {
  Tensor weight;  // [hidden, n_classes]
  Tensor bias;    // [n_classes]

  std::vector<Tensor> parameters() const;
};

// Encoder with one off-ramp per layer. Ramp n doubles as the model's final
// classifier; the parameter partition below drives the two training stages:
//   backbone          = embeddings + all encoder layers + ramp n
//   intermediate ramps = ramps 1 .. n-1
class EarlyExitModel {
 public:
  EarlyExitModel(ModelConfig config, std::uint64_t seed);

  // Copying is disabled: Tensor handles share storage, so a copied model
  // would alias the original's parameters.
  EarlyExitModel(const EarlyExitModel&) = delete;
  EarlyExitModel& operator=(const EarlyExitModel&) = delete;
  EarlyExitModel(EarlyExitModel&& other) noexcept;
  EarlyExitModel& operator=(EarlyExitModel&& other) noexcept;

  const ModelConfig& config() const { return config_; }

  // Incremental execution of one input batch: embedding happens at
  // construction, step_layer() advances one encoder layer, ramp_logits()
  // evaluates this depth's off-ramp on the pooled hidden state.
  // forward_all, forward_prefix and early-exit inference all run through
  // this class, which is what makes their outputs bit-identical.
  // The batch passed to begin() must outlive the run.
  class PrefixRun {
   public:
    void step_layer();
    Tensor ramp_logits() const;
    int depth() const { return depth_; }
    const ModelConfig& config() const { return model_->config_; }

   private:
    friend class EarlyExitModel;
    PrefixRun(const EarlyExitModel* model, const TokenBatch& batch);
    const EarlyExitModel* model_;
    const TokenBatch* batch_;
    Tensor hidden_;  // [batch, seq, hidden]
    int depth_ = 0;
  };

  PrefixRun begin(const TokenBatch& batch) const;

  // Logits of every ramp, f_1 .. f_n, each [batch, n_classes].
  std::vector<Tensor> forward_all(const TokenBatch& batch) const;
  // Logits of ramp `depth`, executing only layers 1..depth.
  Tensor forward_prefix(const TokenBatch& batch, int depth) const;

  // First-token (classification position) vector of a [batch, seq, hidden] state.
  static Tensor pool(const Tensor& hidden);

  std::vector<Tensor> parameters() const;
  std::vector<Tensor> backbone_parameters() const;
  std::vector<Tensor> intermediate_ramp_parameters() const;
  const OffRamp& ramp(int index) const;  // 1-based

  void save(const std::string& path) const;
  static EarlyExitModel load(const std::string& path);

  // Instrumentation: total encoder-layer executions since the last reset.
  std::uint64_t layer_executions() const { return layer_executions_.load(); }
  void reset_layer_executions() const { layer_executions_.store(0); }

  // Enables dropout (when config.dropout_rate > 0) with a deterministic stream.
  void set_training_mode(bool training, std::uint64_t dropout_seed = 0);
  bool training_mode() const { return training_; }

 private:
  explicit EarlyExitModel(ModelConfig config);  // zero-initialized, used by load()
  void allocate();
  Tensor embed(const TokenBatch& batch) const;
  Tensor run_layer(const Tensor& hidden, const TokenBatch& batch, int layer_index) const;
  Tensor apply_dropout(const Tensor& x) const;

  ModelConfig config_;
  Tensor token_embedding_;     // [vocab, hidden]
  Tensor position_embedding_;  // [max_seq_len, hidden]
  Tensor segment_embedding_;   // [2, hidden]
  Tensor ln_embed_gain_, ln_embed_bias_;
  std::vector<EncoderLayer> layers_;
  std::vector<OffRamp> ramps_;

  mutable std::atomic<std::uint64_t> layer_executions_{0};
  bool training_ = false;
  mutable Rng dropout_rng_{0};
};

}  // namespace offramp
