#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "offramp/data.hpp"
#include "offramp/model.hpp"
#include "offramp/tensor.hpp"

namespace offramp {

struct TrainConfig {
  int epochs_stage1 = 5;
  int epochs_stage2 = 5;  // mirrors stage 1 by default
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  // 0 disables clipping
  std::uint64_t seed = 42;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
};

struct StageReport {
  int stage = 0;
  std::vector<EpochStats> epochs;
  double wall_clock_s = 0.0;
};

struct TrainReport {
  StageReport stage1;
  StageReport stage2;
  std::vector<double> final_ramp_dev_quality;  // filled by the caller when a dev set exists

  std::string to_json() const;
};

// Batch-mean cross-entropy of ramp `ramp_index`'s logits (1-based), the
// batch estimator of the per-ramp dataset loss.
Tensor ramp_loss(const EarlyExitModel& model, const TokenBatch& batch, int ramp_index);

// Stage 1: trains the backbone partition (embeddings, all encoder layers,
// final ramp) on the last ramp's loss. Intermediate ramps are untouched.
StageReport stage_one(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config);

// Stage 2: freezes the backbone and trains ramps 1..n-1 on the unweighted
// sum of their losses. Freezing is structural: frozen parameters are
// excluded from the optimizer and carry no gradients at all.
StageReport stage_two(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config);

TrainReport train_two_stage(EarlyExitModel& model, const EncodedSplit& train_set, const TrainConfig& config);

}  // namespace offramp
