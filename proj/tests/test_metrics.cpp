#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <doctest.h>

#include "offramp/data.hpp"
#include "offramp/metrics.hpp"
#include "offramp/model.hpp"
#include "offramp/rng.hpp"

using namespace offramp;

namespace {

struct SweepFixture {
  Vocab vocab;
  EncodedSplit dev;
  ModelConfig config;
};

SweepFixture make_fixture() {
  SynthSpec spec;
  spec.n_classes = 2;
  spec.vocab_size = 32;
  spec.train_count = 40;
  spec.dev_count = 50;
  spec.seq_len = 10;
  Dataset ds = make_synthetic_task(spec, 77);

  SweepFixture f;
  f.vocab = Vocab::build(ds.train, 64);
  f.dev = encode_split(ds.dev, f.vocab, spec.seq_len);
  f.config.n_layers = 3;
  f.config.hidden_size = 16;
  f.config.n_heads = 2;
  f.config.ffn_size = 32;
  f.config.vocab_size = static_cast<int>(f.vocab.size());
  f.config.max_seq_len = spec.seq_len;
  f.config.n_classes = 2;
  return f;
}

}  // namespace

TEST_CASE("expected saving closed forms") {
  ExitHistogram all_last{12, std::vector<std::uint64_t>(12, 0)};
  all_last.counts[11] = 100;
  CHECK(expected_saving(all_last) == 0.0);

  ExitHistogram all_first{12, std::vector<std::uint64_t>(12, 0)};
  all_first.counts[0] = 100;
  CHECK(expected_saving(all_first) == 1.0 - 1.0 / 12.0);
  CHECK(expected_saving(all_first) == doctest::Approx(0.91667).epsilon(1e-4));

  ExitHistogram split{12, std::vector<std::uint64_t>(12, 0)};
  split.counts[5] = 50;   // layer 6
  split.counts[11] = 50;  // layer 12
  CHECK(expected_saving(split) == 0.25);
}

TEST_CASE("expected saving rejects empty histograms") {
  ExitHistogram empty{12, std::vector<std::uint64_t>(12, 0)};
  CHECK_THROWS_AS(expected_saving(empty), std::invalid_argument);
  ExitHistogram misshapen{3, {1, 2}};
  CHECK_THROWS_AS(expected_saving(misshapen), std::invalid_argument);
}

TEST_CASE("expected saving agrees with a per-record summation oracle on random histograms") {
  Rng rng(404);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(14));
    ExitHistogram hist{n, std::vector<std::uint64_t>(static_cast<std::size_t>(n), 0)};
    const int records = 1 + static_cast<int>(rng.uniform_index(200));
    double executed = 0.0, possible = 0.0;  // the oracle walks raw records
    for (int r = 0; r < records; ++r) {
      const int layer = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n)));
      ++hist.counts[static_cast<std::size_t>(layer - 1)];
      executed += layer;
      possible += n;
    }
    const double oracle = 1.0 - executed / possible;
    CHECK(std::abs(expected_saving(hist) - oracle) <= 1e-12);
  }
}

TEST_CASE("quality: accuracy and binary F1") {
  CHECK(quality({1, 0, 1}, {1, 0, 1}, TaskMetric::accuracy) == 1.0);
  CHECK(quality({1, 0, 1}, {1, 0, 1}, TaskMetric::binary_f1) == 1.0);

  // All-negative predictions with positives present: 0/0 precision -> 0.
  CHECK(quality({0, 0, 0}, {1, 0, 1}, TaskMetric::binary_f1) == 0.0);

  // Hand-counted confusion matrix: precision 2/3, recall 1, F1 0.8.
  CHECK(quality({1, 1, 0, 1}, {1, 0, 0, 1}, TaskMetric::binary_f1) == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(quality({}, {}, TaskMetric::accuracy), std::invalid_argument);
  CHECK_THROWS_AS(quality({2, 0}, {1, 0}, TaskMetric::binary_f1), std::invalid_argument);
}

TEST_CASE("default threshold grid starts at zero and rises to ln K") {
  const auto grid = default_threshold_grid(2);
  REQUIRE(grid.size() == 21);
  CHECK(grid[0] == 0.0);
  CHECK(grid[1] == doctest::Approx(0.005));
  CHECK(grid.back() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
}

TEST_CASE("exit distribution counts and conserves records") {
  std::vector<ExitRecord> records(1);
  records[0].exit_layer = 3;
  ExitHistogram hist = exit_distribution(records, 4);
  CHECK(hist.counts == std::vector<std::uint64_t>{0, 0, 1, 0});

  Rng rng(5);
  std::vector<ExitRecord> many(137);
  for (auto& r : many) r.exit_layer = 1 + static_cast<int>(rng.uniform_index(4));
  ExitHistogram big = exit_distribution(many, 4);
  CHECK(big.total() == 137);
  const auto fractions = exit_fractions(big);
  double sum = 0.0;
  for (double f : fractions) sum += f;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(exit_distribution({}, 4), std::invalid_argument);
}

TEST_CASE("sweep baseline identity and monotone savings") {
  SweepFixture f = make_fixture();
  EarlyExitModel model(f.config, 6);
  const auto grid = default_threshold_grid(2, 9);
  SweepReport report = sweep(model, f.dev, grid, TaskMetric::accuracy);
  REQUIRE(report.points.size() == grid.size());

  const TradeoffPoint& baseline = report.points[0];
  CHECK(baseline.threshold == 0.0);
  CHECK(baseline.expected_saving == 0.0);
  CHECK(baseline.measured_time_saving == 0.0);
  CHECK(baseline.quality == report.baseline_quality);

  const auto per_layer = layerwise_quality(model, f.dev, TaskMetric::accuracy);
  REQUIRE(per_layer.size() == 3);
  CHECK(baseline.quality == per_layer.back());  // S=0 equals forced exit at n

  for (std::size_t i = 1; i < report.points.size(); ++i) {
    CHECK(report.points[i].expected_saving >= report.points[i - 1].expected_saving);
  }
  for (const TradeoffPoint& p : report.points) {
    CHECK(p.layer_execution_saving == p.expected_saving);  // same counts, two routes
    CHECK(p.histogram.total() == f.dev.count);
  }
}

TEST_CASE("sweep validates its grid") {
  SweepFixture f = make_fixture();
  EarlyExitModel model(f.config, 6);
  CHECK_THROWS_AS(sweep(model, f.dev, {}, TaskMetric::accuracy), std::invalid_argument);
  CHECK_THROWS_AS(sweep(model, f.dev, {0.1, 0.2}, TaskMetric::accuracy), std::invalid_argument);
  CHECK_THROWS_AS(sweep(model, f.dev, {0.0, 0.2, 0.2}, TaskMetric::accuracy), std::invalid_argument);
}

TEST_CASE("operating point selection maximizes saving within the drop budget") {
  SweepReport report;
  report.baseline_quality = 0.95;
  report.metric = TaskMetric::accuracy;
  auto add_point = [&](double s, double q, double saving) {
    TradeoffPoint p;
    p.threshold = s;
    p.quality = q;
    p.accuracy = q;
    p.expected_saving = saving;
    report.points.push_back(p);
  };
  add_point(0.0, 0.95, 0.0);          // drop 0
  add_point(0.1, 0.947, 0.2);         // drop 0.3
  add_point(0.3, 0.925, 0.4);         // drop 2.5

  auto tight = select_operating_point(report, 0.5);
  REQUIRE(tight.has_value());
  CHECK(tight->expected_saving == 0.2);

  auto loose = select_operating_point(report, 4.0);
  REQUIRE(loose.has_value());
  CHECK(loose->expected_saving == 0.4);

  auto unlimited = select_operating_point(report, 1e9);
  CHECK(unlimited->expected_saving == 0.4);

  auto zero_budget = select_operating_point(report, 0.0);
  REQUIRE(zero_budget.has_value());
  CHECK(zero_budget->threshold == 0.0);

  // Ties break toward the larger threshold.
  add_point(0.5, 0.947, 0.2);
  auto tied = select_operating_point(report, 0.5);
  CHECK(tied->threshold == 0.5);

  // Nothing qualifies under a negative budget: empty selection.
  report.points[0].quality = 0.80;
  report.points[0].accuracy = 0.80;
  report.points[1].quality = 0.80;
  report.points[2].quality = 0.80;
  report.points[3].quality = 0.80;
  CHECK_FALSE(select_operating_point(report, -1.0).has_value());

  const auto lists = select_operating_points(report, {0.5, 4.0});
  CHECK(lists.size() <= 2);
}

TEST_CASE("layerwise quality endpoints") {
  SweepFixture f = make_fixture();
  EarlyExitModel model(f.config, 11);
  const auto per_layer = layerwise_quality(model, f.dev, TaskMetric::accuracy);
  REQUIRE(per_layer.size() == 3);
  const auto forced_last = infer_forced_exit(model, f.dev, 3);
  CHECK(per_layer[2] == quality(forced_last, f.dev.labels, TaskMetric::accuracy));
}

TEST_CASE("measured_vs_expected includes the origin and mirrors layer savings") {
  SweepFixture f = make_fixture();
  EarlyExitModel model(f.config, 12);
  const std::vector<double> grid = {0.0, 0.2, 0.5};
  const auto pairs = measured_vs_expected(model, f.dev, grid, /*repeats=*/1);
  REQUIRE(pairs.size() == 3);
  CHECK(pairs[0].expected == 0.0);
  CHECK(pairs[0].measured == 0.0);
}

TEST_CASE("fit_line recovers an exact linear relationship") {
  std::vector<SavingPair> pairs;
  for (int i = 0; i < 6; ++i) {
    SavingPair p;
    p.expected = 0.1 * i;
    p.measured = 0.8 * p.expected + 0.01;
    pairs.push_back(p);
  }
  const LinearFit fit = fit_line(pairs);
  CHECK(fit.slope == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(fit.intercept == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sweep csv uses the documented header, one row per threshold") {
  SweepFixture f = make_fixture();
  EarlyExitModel model(f.config, 13);
  const std::vector<double> grid = {0.0, 0.1, 0.3};
  SweepReport report = sweep(model, f.dev, grid, TaskMetric::accuracy);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "offramp-metrics-tests";
  fs::create_directories(dir);
  const fs::path csv = dir / "sweep.csv";
  write_sweep_csv(csv.string(), report);

  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "S,accuracy,f1,expected_saving,layer_saving,time_saving_pct,wall_clock_s");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == grid.size());
}
