#include "offramp/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "offramp/metrics.hpp"

namespace offramp {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& origin, const std::string& message) {
  throw std::runtime_error("config " + origin + ": " + message);
}

template <typename T>
T get_field(const json& j, const std::string& scope, const std::string& key, T fallback,
            const std::string& origin) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(origin, "field '" + scope + key + "' has the wrong type");
  }
}

template <typename T>
T require_field(const json& j, const std::string& scope, const std::string& key, const std::string& origin) {
  if (!j.contains(key)) fail(origin, "missing field '" + scope + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(origin, "field '" + scope + key + "' has the wrong type");
  }
}

}  // namespace

std::string metric_name(TaskMetric metric) {
  return metric == TaskMetric::accuracy ? "accuracy" : "f1";
}

TaskMetric metric_from_name(const std::string& name) {
  if (name == "accuracy") return TaskMetric::accuracy;
  if (name == "f1") return TaskMetric::binary_f1;
  throw std::runtime_error("unknown metric '" + name + "' (expected 'accuracy' or 'f1')");
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str(), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config " + origin + ": " + e.what());
  }

  RunConfig cfg;
  cfg.seed = get_field<std::uint64_t>(j, "", "seed", cfg.seed, origin);
  cfg.out_dir = get_field<std::string>(j, "", "out_dir", "", origin);
  if (cfg.out_dir.empty()) {
    const char* env = std::getenv("OFFRAMP_OUT_DIR");
    cfg.out_dir = env != nullptr && *env != '\0' ? env : "runs/out";
  }

  const json task = require_field<json>(j, "", "task", origin);
  if (task.contains("synthetic") == task.contains("tsv")) {
    fail(origin, "field 'task' must hold exactly one of 'synthetic' or 'tsv'");
  }
  if (task.contains("synthetic")) {
    cfg.synthetic = true;
    const json s = task.at("synthetic");
    cfg.synth.n_classes = get_field<int>(s, "task.synthetic.", "n_classes", cfg.synth.n_classes, origin);
    cfg.synth.vocab_size = get_field<int>(s, "task.synthetic.", "vocab_size", cfg.synth.vocab_size, origin);
    cfg.synth.train_count = get_field<int>(s, "task.synthetic.", "train_count", cfg.synth.train_count, origin);
    cfg.synth.dev_count = get_field<int>(s, "task.synthetic.", "dev_count", cfg.synth.dev_count, origin);
    cfg.synth.test_count = get_field<int>(s, "task.synthetic.", "test_count", cfg.synth.test_count, origin);
    cfg.synth.seq_len = get_field<int>(s, "task.synthetic.", "seq_len", cfg.synth.seq_len, origin);
    cfg.synth.easy_fraction =
        get_field<double>(s, "task.synthetic.", "easy_fraction", cfg.synth.easy_fraction, origin);
  } else {
    cfg.synthetic = false;
    const json t = task.at("tsv");
    const std::string scope = "task.tsv.";
    cfg.tsv.train_path = require_field<std::string>(t, scope, "train", origin);
    cfg.tsv.dev_path = require_field<std::string>(t, scope, "dev", origin);
    cfg.tsv.test_path = get_field<std::string>(t, scope, "test", "", origin);
    cfg.tsv.schema.text_a_column = require_field<std::string>(t, scope, "text_a_column", origin);
    if (t.contains("text_b_column") && !t.at("text_b_column").is_null()) {
      cfg.tsv.schema.text_b_column = require_field<std::string>(t, scope, "text_b_column", origin);
    }
    cfg.tsv.schema.label_column = require_field<std::string>(t, scope, "label_column", origin);
    cfg.tsv.schema.label_names = require_field<std::vector<std::string>>(t, scope, "labels", origin);
    if (cfg.tsv.schema.label_names.size() < 2) fail(origin, "field 'task.tsv.labels' needs at least 2 entries");
    cfg.tsv.n_classes = static_cast<int>(cfg.tsv.schema.label_names.size());
    cfg.tsv.metric = metric_from_name(get_field<std::string>(t, scope, "metric", "accuracy", origin));
    cfg.tsv.max_vocab = get_field<std::size_t>(t, scope, "max_vocab", cfg.tsv.max_vocab, origin);
    for (const auto& [key, path] : {std::pair<const char*, std::string>{"train", cfg.tsv.train_path},
                                    {"dev", cfg.tsv.dev_path},
                                    {"test", cfg.tsv.test_path}}) {
      if (!path.empty() && !std::filesystem::exists(path)) {
        fail(origin, "field 'task.tsv." + std::string(key) + "' points at a missing file: " + path);
      }
    }
  }

  if (j.contains("model")) {
    const json m = j.at("model");
    const std::string scope = "model.";
    cfg.model.n_layers = get_field<int>(m, scope, "n_layers", cfg.model.n_layers, origin);
    cfg.model.hidden_size = get_field<int>(m, scope, "hidden_size", cfg.model.hidden_size, origin);
    cfg.model.n_heads = get_field<int>(m, scope, "n_heads", cfg.model.n_heads, origin);
    cfg.model.ffn_size = get_field<int>(m, scope, "ffn_size", cfg.model.ffn_size, origin);
    cfg.model.max_seq_len = get_field<int>(m, scope, "max_seq_len", cfg.model.max_seq_len, origin);
    cfg.model.dropout_rate = get_field<double>(m, scope, "dropout_rate", cfg.model.dropout_rate, origin);
  }

  if (j.contains("train")) {
    const json t = j.at("train");
    const std::string scope = "train.";
    cfg.train.epochs_stage1 = get_field<int>(t, scope, "epochs_stage1", cfg.train.epochs_stage1, origin);
    cfg.train.epochs_stage2 = get_field<int>(t, scope, "epochs_stage2", cfg.train.epochs_stage2, origin);
    cfg.train.batch_size = get_field<int>(t, scope, "batch_size", cfg.train.batch_size, origin);
    cfg.train.learning_rate = get_field<double>(t, scope, "learning_rate", cfg.train.learning_rate, origin);
    cfg.train.beta1 = get_field<double>(t, scope, "beta1", cfg.train.beta1, origin);
    cfg.train.beta2 = get_field<double>(t, scope, "beta2", cfg.train.beta2, origin);
    cfg.train.epsilon = get_field<double>(t, scope, "epsilon", cfg.train.epsilon, origin);
    cfg.train.clip_norm = get_field<double>(t, scope, "clip_norm", cfg.train.clip_norm, origin);
    cfg.train.validate();
  }
  cfg.train.seed = cfg.seed;

  if (j.contains("sweep")) {
    cfg.thresholds = get_field<std::vector<double>>(j.at("sweep"), "sweep.", "thresholds",
                                                    std::vector<double>{}, origin);
  }

  if (cfg.synthetic && cfg.synth.seq_len > cfg.model.max_seq_len) {
    fail(origin, "task.synthetic.seq_len exceeds model.max_seq_len");
  }
  return cfg;
}

BuiltTask build_task(const RunConfig& config) {
  BuiltTask built;
  if (config.synthetic) {
    built.dataset = make_synthetic_task(config.synth, derive_seed(config.seed, "data"));
    built.vocab = Vocab::build(built.dataset.train,
                               static_cast<std::size_t>(config.synth.vocab_size) + Vocab::kReservedCount);
  } else {
    built.dataset.train = load_tsv(config.tsv.train_path, config.tsv.schema);
    built.dataset.dev = load_tsv(config.tsv.dev_path, config.tsv.schema);
    if (!config.tsv.test_path.empty()) {
      built.dataset.test = load_tsv(config.tsv.test_path, config.tsv.schema);
    }
    built.dataset.meta.n_classes = config.tsv.n_classes;
    built.dataset.meta.is_pair = config.tsv.schema.text_b_column.has_value();
    built.dataset.meta.metric = config.tsv.metric;
    built.vocab = Vocab::build(built.dataset.train, config.tsv.max_vocab);
  }
  const int max_len = config.model.max_seq_len;
  built.train = encode_split(built.dataset.train, built.vocab, max_len);
  built.dev = encode_split(built.dataset.dev, built.vocab, max_len);
  if (!built.dataset.test.empty()) built.test = encode_split(built.dataset.test, built.vocab, max_len);
  return built;
}

std::vector<double> resolve_grid(const RunConfig& config, int n_classes) {
  if (config.thresholds.empty()) return default_threshold_grid(n_classes);
  return config.thresholds;
}

}  // namespace offramp
