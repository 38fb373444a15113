#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <doctest.h>

#include "offramp/data.hpp"
#include "offramp/inference.hpp"
#include "offramp/metrics.hpp"
#include "offramp/model.hpp"

using namespace offramp;

namespace {

struct Fixture {
  Vocab vocab;
  EncodedSplit dev;
  ModelConfig config;
};

Fixture make_fixture(int n_classes = 3, int dev_count = 60) {
  SynthSpec spec;
  spec.n_classes = n_classes;
  spec.vocab_size = 40;
  spec.train_count = 40;
  spec.dev_count = dev_count;
  spec.seq_len = 10;
  Dataset ds = make_synthetic_task(spec, 31);

  Fixture f;
  f.vocab = Vocab::build(ds.train, 64);
  f.dev = encode_split(ds.dev, f.vocab, spec.seq_len);
  f.config.n_layers = 4;
  f.config.hidden_size = 16;
  f.config.n_heads = 2;
  f.config.ffn_size = 32;
  f.config.vocab_size = static_cast<int>(f.vocab.size());
  f.config.max_seq_len = spec.seq_len;
  f.config.n_classes = n_classes;
  return f;
}

// Brute-force oracle for Algorithm-1 semantics: compute every ramp via
// forward_all, then scan for the first sub-threshold entropy.
int oracle_exit_layer(const EarlyExitModel& model, const TokenBatch& sample, double threshold) {
  auto logits = model.forward_all(sample);
  const int n = model.config().n_layers;
  for (int layer = 1; layer <= n; ++layer) {
    const auto& row = logits[static_cast<std::size_t>(layer - 1)].data();
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    std::vector<double> probs(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
      probs[i] = std::exp(row[i] - mx);
      denom += probs[i];
    }
    double h = 0.0;
    for (double& p : probs) {
      p /= denom;
      if (p > 0.0) h -= p * std::log(p);
    }
    if (h < threshold) return layer;
  }
  return n;
}

}  // namespace

TEST_CASE("entropy of canonical distributions") {
  CHECK(entropy({1.0, 0.0, 0.0}) == 0.0);
  CHECK(entropy({0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // Direct summation oracle for a skewed distribution.
  const std::vector<double> p = {0.7, 0.2, 0.1};
  const double direct = -(0.7 * std::log(0.7) + 0.2 * std::log(0.2) + 0.1 * std::log(0.1));
  CHECK(std::abs(entropy(p) - direct) < 1e-12);
  CHECK(entropy(p) == doctest::Approx(0.801819).epsilon(1e-6));
}

TEST_CASE("entropy rejects malformed distributions") {
  CHECK_THROWS_AS(entropy({}), std::invalid_argument);
  CHECK_THROWS_AS(entropy({0.5, 0.6}), std::invalid_argument);
  CHECK_THROWS_AS(entropy({1.5, -0.5}), std::invalid_argument);
}

TEST_CASE("exit policy rejects negative thresholds") {
  CHECK_THROWS_AS(ExitPolicy{-0.1}.validate(), std::invalid_argument);
  CHECK_THROWS_AS(infer_early_exit(EarlyExitModel(make_fixture().config, 1),
                                   make_fixture().dev.single(0), ExitPolicy{-1.0}),
                  std::invalid_argument);
}

TEST_CASE("S = 0 sends every sample to the last layer") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 2);
  for (std::size_t i = 0; i < 20; ++i) {
    ExitRecord r = infer_early_exit(model, f.dev.single(i), ExitPolicy{0.0});
    CHECK(r.exit_layer == 4);
    CHECK(r.layers_executed == 4);
  }
}

TEST_CASE("S above ln(n_classes) exits every sample at layer one") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 3);
  const double above_max = std::log(3.0) + 0.1;
  for (std::size_t i = 0; i < 20; ++i) {
    ExitRecord r = infer_early_exit(model, f.dev.single(i), ExitPolicy{above_max});
    CHECK(r.exit_layer == 1);
  }
}

TEST_CASE("early exit matches the forward_all + scan oracle on a threshold grid") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 4);
  const auto grid = default_threshold_grid(3);
  for (std::size_t i = 0; i < 25; ++i) {
    const TokenBatch sample = f.dev.single(i);
    for (double threshold : grid) {
      ExitRecord r = infer_early_exit(model, sample, ExitPolicy{threshold});
      CHECK(r.exit_layer == oracle_exit_layer(model, sample, threshold));
    }
  }
}

TEST_CASE("exit layer is non-increasing in S and entropy is bounded") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 5);
  const auto grid = default_threshold_grid(3);
  const double bound = std::log(3.0) + 1e-12;
  for (std::size_t i = 0; i < 30; ++i) {
    const TokenBatch sample = f.dev.single(i);
    int previous = model.config().n_layers;
    for (double threshold : grid) {
      ExitRecord r = infer_early_exit(model, sample, ExitPolicy{threshold});
      CHECK(r.exit_layer <= previous);
      previous = r.exit_layer;
      CHECK(r.entropy >= 0.0);
      CHECK(r.entropy <= bound);
      // Prediction stability: argmax of the stored distribution.
      const auto best =
          std::max_element(r.probabilities.begin(), r.probabilities.end()) - r.probabilities.begin();
      CHECK(r.predicted_class == static_cast<int>(best));
    }
  }
}

TEST_CASE("strict inequality: entropy exactly at S does not trigger an exit") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 6);
  const TokenBatch sample = f.dev.single(0);
  // Use the layer-1 entropy itself as the threshold: the comparison is
  // strict, so the sample must not exit at layer 1.
  ExitRecord probe = infer_early_exit(model, sample, ExitPolicy{std::log(3.0) + 0.1});
  REQUIRE(probe.exit_layer == 1);
  ExitRecord at_threshold = infer_early_exit(model, sample, ExitPolicy{probe.entropy});
  CHECK(at_threshold.exit_layer > 1);
}

TEST_CASE("forced exit at n reproduces the full model and rejects bad layers") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 7);
  const auto forced = infer_forced_exit(model, f.dev, 4);
  REQUIRE(forced.size() == f.dev.count);
  for (std::size_t i = 0; i < f.dev.count; ++i) {
    const TokenBatch sample = f.dev.single(i);
    Tensor logits = model.forward_all(sample)[3];
    CHECK(forced[i] == argmax_rows(logits)[0]);
  }
  CHECK_THROWS_AS(infer_forced_exit(model, f.dev, 0), std::invalid_argument);
  CHECK_THROWS_AS(infer_forced_exit(model, f.dev, 5), std::invalid_argument);
}

TEST_CASE("forced exit at layer one equals an always-exit policy") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 8);
  const auto forced = infer_forced_exit(model, f.dev, 1);
  const ExitPolicy always{std::log(3.0) + 1.0};
  for (std::size_t i = 0; i < f.dev.count; ++i) {
    ExitRecord r = infer_early_exit(model, f.dev.single(i), always);
    CHECK(r.exit_layer == 1);
    CHECK(r.predicted_class == forced[i]);
  }
}

TEST_CASE("infer_batch matches per-sample calls and counts layers exactly") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 9);
  const ExitPolicy policy{0.35};
  BatchInferenceResult result = infer_batch(model, f.dev, policy);
  REQUIRE(result.records.size() == f.dev.count);

  std::uint64_t layers = 0;
  for (std::size_t i = 0; i < f.dev.count; ++i) {
    ExitRecord solo = infer_early_exit(model, f.dev.single(i), policy);
    const ExitRecord& batched = result.records[i];
    CHECK(batched.sample_id == i);
    CHECK(batched.exit_layer == solo.exit_layer);
    CHECK(batched.entropy == solo.entropy);
    CHECK(batched.predicted_class == solo.predicted_class);
    CHECK(batched.probabilities == solo.probabilities);
    layers += static_cast<std::uint64_t>(solo.layers_executed);
  }
  CHECK(result.total_layers_executed == layers);

  BatchInferenceResult baseline = infer_batch(model, f.dev, ExitPolicy{0.0});
  CHECK(baseline.total_layers_executed == 4 * f.dev.count);
}

TEST_CASE("exit records export to jsonl and csv") {
  Fixture f = make_fixture();
  EarlyExitModel model(f.config, 10);
  BatchInferenceResult result = infer_batch(model, f.dev, ExitPolicy{0.2});

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "offramp-inference-tests";
  fs::create_directories(dir);

  const fs::path jsonl = dir / "records.jsonl";
  write_records_jsonl(jsonl.string(), result.records, 0.2);
  std::ifstream in(jsonl);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    CHECK(line.find("\"exit_layer\"") != std::string::npos);
    CHECK(line.find("\"S\":0.2") != std::string::npos);
    ++lines;
  }
  CHECK(lines == f.dev.count);

  const fs::path csv = dir / "records.csv";
  write_records_csv(csv.string(), result.records);
  std::ifstream csv_in(csv);
  std::getline(csv_in, line);
  CHECK(line == "sample_id,exit_layer,entropy,prediction,label");
}
