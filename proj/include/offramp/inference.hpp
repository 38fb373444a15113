#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "offramp/data.hpp"
#include "offramp/model.hpp"

namespace offramp {

// Entropy threshold in nats. S = 0 disables early exit entirely: the exit
// test is a strict entropy < S, and entropy is never below zero.
struct ExitPolicy {
  double entropy_threshold = 0.0;

  void validate() const;
};

struct ExitRecord {
  std::size_t sample_id = 0;
  int exit_layer = 0;  // 1..n
  double entropy = 0.0;
  int predicted_class = 0;
  std::vector<double> probabilities;
  int layers_executed = 0;  // equals exit_layer
  int label = -1;           // carried along for exports; -1 when unknown
};

// Shannon entropy in nats with the 0*ln(0) := 0 convention. The input must
// be a distribution: nonnegative entries summing to 1 within 1e-9.
double entropy(const std::vector<double>& probabilities);

// Runs layers incrementally and returns at the first ramp whose output
// entropy is strictly below the threshold; falls through to ramp n.
ExitRecord infer_early_exit(const EarlyExitModel& model, const TokenBatch& sample, const ExitPolicy& policy);

// Classifies every sample through ramp `layer` alone.
std::vector<int> infer_forced_exit(const EarlyExitModel& model, const EncodedSplit& samples, int layer);

struct BatchInferenceResult {
  std::vector<ExitRecord> records;
  double wall_clock_s = 0.0;
  std::uint64_t total_layers_executed = 0;
};

// Per-sample early-exit inference in dataset order. Samples run one by one;
// this keeps the layer accounting exact and mirrors how latency-sensitive
// deployments consume single requests.
BatchInferenceResult infer_batch(const EarlyExitModel& model, const EncodedSplit& dataset,
                                 const ExitPolicy& policy);

// One record per line: {"sample_id":..., "exit_layer":..., ...}. When
// `threshold` is non-negative it is included as "S" on every line.
void write_records_jsonl(const std::string& path, const std::vector<ExitRecord>& records,
                         double threshold = -1.0);
void append_records_jsonl(std::ostream& out, const std::vector<ExitRecord>& records, double threshold);

// Columns: sample_id, exit_layer, entropy, prediction, label.
void write_records_csv(const std::string& path, const std::vector<ExitRecord>& records);

}  // namespace offramp
