// Command-line entry points: train / sweep / analyze / eval.
// All analysis outputs are CSV or JSONL; plotting is external by design.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "offramp/config.hpp"
#include "offramp/inference.hpp"
#include "offramp/metrics.hpp"
#include "offramp/model.hpp"
#include "offramp/training.hpp"

namespace fs = std::filesystem;
using namespace offramp;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::string> out_override;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "Run configuration file (JSON)")->required();
  auto* seed = cmd->add_option("--seed", "Override the config seed");
  seed->each([&args](const std::string& v) { args.seed_override = std::stoull(v); });
  auto* out = cmd->add_option("--out", "Override the output directory");
  out->each([&args](const std::string& v) { args.out_override = v; });
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::from_file(args.config_path);
  if (args.seed_override) {
    cfg.seed = *args.seed_override;
    cfg.train.seed = *args.seed_override;
  }
  if (args.out_override) cfg.out_dir = *args.out_override;
  return cfg;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) grid.push_back(std::stod(item));
  }
  return grid;
}

void write_task_json(const fs::path& path, const Dataset& dataset) {
  nlohmann::json j;
  j["n_classes"] = dataset.meta.n_classes;
  j["is_pair"] = dataset.meta.is_pair;
  j["metric"] = metric_name(dataset.meta.metric);
  j["train_count"] = dataset.train.size();
  j["dev_count"] = dataset.dev.size();
  j["test_count"] = dataset.test.size();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

EarlyExitModel load_checkpoint(const std::string& explicit_path, const RunConfig& cfg,
                               const char* default_name) {
  fs::path path = explicit_path.empty() ? fs::path(cfg.out_dir) / default_name : fs::path(explicit_path);
  if (!fs::exists(path)) {
    throw std::runtime_error("checkpoint not found: " + path.string() + " (run `offramp train` first)");
  }
  return EarlyExitModel::load(path.string());
}

const EncodedSplit& pick_split(const BuiltTask& task, const std::string& name) {
  if (name == "train") return task.train;
  if (name == "dev") return task.dev;
  if (name == "test") {
    if (task.test.count == 0) throw std::runtime_error("this task has no test split");
    return task.test;
  }
  throw std::runtime_error("unknown split '" + name + "' (expected train, dev or test)");
}

int cmd_train(const CommonArgs& args, int stage) {
  RunConfig cfg = load_config(args);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  BuiltTask task = build_task(cfg);
  task.vocab.save((out / "vocab.txt").string());
  write_task_json(out / "task.json", task.dataset);

  cfg.model.vocab_size = static_cast<int>(task.vocab.size());
  cfg.model.n_classes = task.dataset.meta.n_classes;

  TrainReport report;
  if (stage == 2) {
    EarlyExitModel model = load_checkpoint("", cfg, "stage1.ckpt");
    report.stage2 = stage_two(model, task.train, cfg.train);
    model.save((out / "stage2.ckpt").string());
    report.final_ramp_dev_quality = layerwise_quality(model, task.dev, task.dataset.meta.metric);
  } else {
    EarlyExitModel model(cfg.model, cfg.seed);
    model.save((out / "init.ckpt").string());
    report.stage1 = stage_one(model, task.train, cfg.train);
    model.save((out / "stage1.ckpt").string());
    if (stage != 1) {
      report.stage2 = stage_two(model, task.train, cfg.train);
      model.save((out / "stage2.ckpt").string());
    }
    report.final_ramp_dev_quality = layerwise_quality(model, task.dev, task.dataset.meta.metric);
  }

  std::ofstream report_out(out / "train_report.json", std::ios::binary);
  report_out << report.to_json() << '\n';
  std::cerr << "train: wrote checkpoints and train_report.json under " << cfg.out_dir << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& checkpoint, const std::string& grid_text) {
  RunConfig cfg = load_config(args);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  BuiltTask task = build_task(cfg);
  EarlyExitModel model = load_checkpoint(checkpoint, cfg, "stage2.ckpt");

  std::vector<double> grid = grid_text.empty() ? resolve_grid(cfg, model.config().n_classes)
                                               : parse_grid(grid_text);
  std::vector<std::vector<ExitRecord>> all_records;
  SweepReport report = sweep(model, task.dev, grid, task.dataset.meta.metric, &all_records);

  write_sweep_csv((out / "sweep.csv").string(), report);
  std::ofstream jsonl(out / "exits.jsonl", std::ios::binary);
  if (!jsonl) throw std::runtime_error("cannot write " + (out / "exits.jsonl").string());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    append_records_jsonl(jsonl, all_records[i], grid[i]);
  }
  std::cerr << "sweep: " << report.points.size() << " thresholds -> sweep.csv, exits.jsonl under "
            << cfg.out_dir << "\n";
  return 0;
}

int cmd_analyze(const CommonArgs& args, const std::string& checkpoint, const std::string& mode,
                const std::string& grid_text) {
  RunConfig cfg = load_config(args);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  BuiltTask task = build_task(cfg);
  EarlyExitModel model = load_checkpoint(checkpoint, cfg, "stage2.ckpt");
  std::vector<double> grid = grid_text.empty() ? resolve_grid(cfg, model.config().n_classes)
                                               : parse_grid(grid_text);

  if (mode == "layers") {
    const std::vector<double> per_layer = layerwise_quality(model, task.dev, task.dataset.meta.metric);
    write_layerwise_csv((out / "layers.csv").string(), per_layer);
    std::cerr << "analyze: wrote layers.csv (" << per_layer.size() << " ramps)\n";
  } else if (mode == "exits") {
    std::vector<std::pair<double, ExitHistogram>> per_threshold;
    for (double threshold : grid) {
      BatchInferenceResult result = infer_batch(model, task.dev, ExitPolicy{threshold});
      per_threshold.emplace_back(threshold,
                                 exit_distribution(result.records, model.config().n_layers));
    }
    write_exit_distribution_csv((out / "exits.csv").string(), per_threshold);
    std::cerr << "analyze: wrote exits.csv for " << grid.size() << " thresholds\n";
  } else if (mode == "expected-vs-measured") {
    const auto pairs = measured_vs_expected(model, task.dev, grid);
    write_expected_vs_measured_csv((out / "expected_vs_measured.csv").string(), pairs);
    std::cerr << "analyze: wrote expected_vs_measured.csv (" << pairs.size() << " points)\n";
  } else {
    throw CLI::ValidationError("--mode must be one of: layers, exits, expected-vs-measured");
  }
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, double threshold,
             const std::string& split_name) {
  RunConfig cfg = load_config(args);
  fs::create_directories(cfg.out_dir);
  const fs::path out(cfg.out_dir);

  BuiltTask task = build_task(cfg);
  EarlyExitModel model = load_checkpoint(checkpoint, cfg, "stage2.ckpt");
  const EncodedSplit& split = pick_split(task, split_name);

  BatchInferenceResult result = infer_batch(model, split, ExitPolicy{threshold});
  std::vector<int> predictions;
  predictions.reserve(result.records.size());
  for (const ExitRecord& r : result.records) predictions.push_back(r.predicted_class);

  const ExitHistogram hist = exit_distribution(result.records, model.config().n_layers);
  const double saving = expected_saving(hist);
  const double acc = quality(predictions, split.labels, TaskMetric::accuracy);

  nlohmann::json j;
  j["split"] = split_name;
  j["S"] = threshold;
  j["samples"] = split.count;
  j["accuracy"] = acc;
  if (model.config().n_classes == 2) j["f1"] = quality(predictions, split.labels, TaskMetric::binary_f1);
  j["expected_saving"] = saving;
  j["wall_clock_s"] = result.wall_clock_s;
  j["exit_counts"] = hist.counts;
  std::ofstream eval_out(out / "eval.json", std::ios::binary);
  eval_out << j.dump(2) << '\n';
  write_records_csv((out / "eval_records.csv").string(), result.records);

  std::cout << "split=" << split_name << " S=" << threshold << " accuracy=" << acc
            << " expected_saving=" << saving << " samples=" << split.count << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early-exit transformer encoder toolkit"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, analyze_args, eval_args;
  int stage = 0;
  std::string sweep_checkpoint, sweep_grid;
  std::string analyze_checkpoint, analyze_mode, analyze_grid;
  std::string eval_checkpoint, eval_split = "dev";
  double eval_threshold = 0.0;

  CLI::App* train = app.add_subcommand("train", "Two-stage fine-tuning; writes stage1/stage2 checkpoints");
  add_common(train, train_args);
  train->add_option("--stage", stage, "Run only one stage (1 or 2); default runs both")
      ->check(CLI::IsMember({0, 1, 2}));

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Threshold sweep; writes sweep.csv and exits.jsonl");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--checkpoint", sweep_checkpoint, "Model checkpoint (default <out>/stage2.ckpt)");
  sweep_cmd->add_option("--threshold-grid", sweep_grid, "Comma-separated thresholds, e.g. 0,0.01,0.1");

  CLI::App* analyze = app.add_subcommand("analyze", "Layerwise / exit-distribution / saving analyses");
  add_common(analyze, analyze_args);
  analyze->add_option("--checkpoint", analyze_checkpoint, "Model checkpoint (default <out>/stage2.ckpt)");
  analyze->add_option("--mode", analyze_mode, "layers | exits | expected-vs-measured")->required();
  analyze->add_option("--threshold-grid", analyze_grid, "Comma-separated thresholds");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint at one threshold");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "Model checkpoint (default <out>/stage2.ckpt)");
  eval_cmd->add_option("--threshold", eval_threshold, "Entropy threshold S (default 0 = no early exit)");
  eval_cmd->add_option("--split", eval_split, "train | dev | test (default dev)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_args, stage);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, sweep_checkpoint, sweep_grid);
    if (analyze->parsed()) return cmd_analyze(analyze_args, analyze_checkpoint, analyze_mode, analyze_grid);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_checkpoint, eval_threshold, eval_split);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
