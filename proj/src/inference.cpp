#include "offramp/inference.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace offramp {

void ExitPolicy::validate() const {
  if (!(entropy_threshold >= 0.0)) {
    throw std::invalid_argument("exit policy: entropy threshold must be >= 0, got " +
                                std::to_string(entropy_threshold));
  }
}

double entropy(const std::vector<double>& probabilities) {
  if (probabilities.empty()) throw std::invalid_argument("entropy: empty distribution");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("entropy: probabilities must be nonnegative and finite");
    }
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("entropy: probabilities sum to " + std::to_string(total) + ", expected 1");
  }
  double h = 0.0;
  for (double p : probabilities) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h < 0.0 ? 0.0 : h;  // clamp the -0.0 of a one-hot input
}

namespace {

ExitRecord make_record(std::size_t sample_id, int layer, const Tensor& logits, int label) {
  Tensor probs = softmax(logits, 1);  // [1, n_classes]
  ExitRecord record;
  record.sample_id = sample_id;
  record.exit_layer = layer;
  record.layers_executed = layer;
  record.probabilities = probs.data();
  record.entropy = entropy(record.probabilities);
  record.predicted_class = argmax_rows(probs)[0];
  record.label = label;
  return record;
}

}  // namespace

ExitRecord infer_early_exit(const EarlyExitModel& model, const TokenBatch& sample, const ExitPolicy& policy) {
  policy.validate();
  if (sample.batch != 1) {
    throw std::invalid_argument("infer_early_exit: expected a single sample, got batch of " +
                                std::to_string(sample.batch));
  }
  const int n = model.config().n_layers;
  const int label = sample.labels.empty() ? -1 : sample.labels[0];
  EarlyExitModel::PrefixRun run = model.begin(sample);
  for (int layer = 1; layer <= n; ++layer) {
    run.step_layer();
    ExitRecord record = make_record(0, layer, run.ramp_logits(), label);
    if (record.entropy < policy.entropy_threshold) return record;
    if (layer == n) return record;  // fall-through return of the final ramp
  }
  throw std::logic_error("infer_early_exit: unreachable");
}

std::vector<int> infer_forced_exit(const EarlyExitModel& model, const EncodedSplit& samples, int layer) {
  if (layer < 1 || layer > model.config().n_layers) {
    throw std::invalid_argument("infer_forced_exit: layer " + std::to_string(layer) + " out of range [1, " +
                                std::to_string(model.config().n_layers) + "]");
  }
  std::vector<int> predictions;
  predictions.reserve(samples.count);
  for (std::size_t i = 0; i < samples.count; ++i) {
    const TokenBatch sample = samples.single(i);
    Tensor logits = model.forward_prefix(sample, layer);
    predictions.push_back(argmax_rows(logits)[0]);
  }
  return predictions;
}

BatchInferenceResult infer_batch(const EarlyExitModel& model, const EncodedSplit& dataset,
                                 const ExitPolicy& policy) {
  policy.validate();
  BatchInferenceResult result;
  result.records.reserve(dataset.count);
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < dataset.count; ++i) {
    const TokenBatch sample = dataset.single(i);
    ExitRecord record = infer_early_exit(model, sample, policy);
    record.sample_id = i;
    result.total_layers_executed += static_cast<std::uint64_t>(record.layers_executed);
    result.records.push_back(std::move(record));
  }
  result.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void append_records_jsonl(std::ostream& out, const std::vector<ExitRecord>& records, double threshold) {
  for (const ExitRecord& r : records) {
    nlohmann::json j;
    if (threshold >= 0.0) j["S"] = threshold;
    j["sample_id"] = r.sample_id;
    j["exit_layer"] = r.exit_layer;
    j["entropy"] = r.entropy;
    j["prediction"] = r.predicted_class;
    j["label"] = r.label;
    j["layers_executed"] = r.layers_executed;
    j["probabilities"] = r.probabilities;
    out << j.dump() << '\n';
  }
}

void write_records_jsonl(const std::string& path, const std::vector<ExitRecord>& records, double threshold) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  append_records_jsonl(out, records, threshold);
}

void write_records_csv(const std::string& path, const std::vector<ExitRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "sample_id,exit_layer,entropy,prediction,label\n";
  char buf[64];
  for (const ExitRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%.12g", r.entropy);
    out << r.sample_id << ',' << r.exit_layer << ',' << buf << ',' << r.predicted_class << ',' << r.label
        << '\n';
  }
}

}  // namespace offramp
