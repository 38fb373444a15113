#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offramp/data.hpp"
#include "offramp/model.hpp"
#include "offramp/training.hpp"

namespace offramp {

struct TsvTask {
  std::string train_path;
  std::string dev_path;
  std::string test_path;  // optional
  TsvSchema schema;
  int n_classes = 2;
  TaskMetric metric = TaskMetric::accuracy;
  std::size_t max_vocab = 30000;
};

// One declarative file describes a full run; a handful of CLI flags
// (--seed, --out, --stage, --threshold-grid) override it.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir;  // falls back to $OFFRAMP_OUT_DIR, then "runs/out"

  bool synthetic = true;
  SynthSpec synth;
  TsvTask tsv;

  ModelConfig model;  // vocab_size and n_classes are filled when the task is built
  TrainConfig train;
  std::vector<double> thresholds;  // empty selects the default grid

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text, const std::string& origin);
};

// A run-ready task: raw examples, the vocabulary, and encoded splits.
struct BuiltTask {
  Dataset dataset;
  Vocab vocab;
  EncodedSplit train;
  EncodedSplit dev;
  EncodedSplit test;
};

BuiltTask build_task(const RunConfig& config);

// Resolved sweep grid: explicit thresholds when given, else the default
// 21-point grid for the task's class count.
std::vector<double> resolve_grid(const RunConfig& config, int n_classes);

std::string metric_name(TaskMetric metric);
TaskMetric metric_from_name(const std::string& name);

}  // namespace offramp
