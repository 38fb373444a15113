#include "offramp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace offramp {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

std::uint64_t ExitHistogram::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts) t += c;
  return t;
}

double expected_saving(const ExitHistogram& histogram) {
  if (histogram.n_layers < 1 || histogram.counts.size() != static_cast<std::size_t>(histogram.n_layers)) {
    throw std::invalid_argument("expected_saving: histogram has " + std::to_string(histogram.counts.size()) +
                                " buckets for " + std::to_string(histogram.n_layers) + " layers");
  }
  const std::uint64_t total = histogram.total();
  if (total == 0) throw std::invalid_argument("expected_saving: empty histogram");
  // Both sums are exact in 64-bit integers, so the result is one division.
  std::uint64_t executed = 0;
  for (int i = 0; i < histogram.n_layers; ++i) {
    executed += static_cast<std::uint64_t>(i + 1) * histogram.counts[static_cast<std::size_t>(i)];
  }
  const std::uint64_t full = static_cast<std::uint64_t>(histogram.n_layers) * total;
  return 1.0 - static_cast<double>(executed) / static_cast<double>(full);
}

double quality(const std::vector<int>& predictions, const std::vector<int>& labels, TaskMetric metric) {
  if (predictions.empty() || predictions.size() != labels.size()) {
    throw std::invalid_argument("quality: need equal-length non-empty predictions and labels, got " +
                                std::to_string(predictions.size()) + " and " + std::to_string(labels.size()));
  }
  if (metric == TaskMetric::accuracy) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      if (predictions[i] == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
  }
  // Binary F1 on the positive class (1), with the 0/0 := 0 convention.
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] < 0 || predictions[i] > 1 || labels[i] < 0 || labels[i] > 1) {
      throw std::invalid_argument("quality: binary F1 requires labels in {0, 1}");
    }
    if (predictions[i] == 1 && labels[i] == 1) ++tp;
    if (predictions[i] == 1 && labels[i] == 0) ++fp;
    if (predictions[i] == 0 && labels[i] == 1) ++fn;
  }
  const double precision = (tp + fp) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = (tp + fn) == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<double> default_threshold_grid(int n_classes, int points, double low) {
  if (n_classes < 2) throw std::invalid_argument("threshold grid: need at least 2 classes");
  if (points < 2) throw std::invalid_argument("threshold grid: need at least 2 points");
  if (low <= 0.0) throw std::invalid_argument("threshold grid: low must be positive");
  const double high = std::log(static_cast<double>(n_classes));
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(points));
  grid.push_back(0.0);
  const int steps = points - 1;
  const double ratio = std::pow(high / low, 1.0 / static_cast<double>(steps - 1));
  double s = low;
  for (int i = 0; i < steps - 1; ++i) {
    grid.push_back(s);
    s *= ratio;
  }
  grid.push_back(high);
  return grid;
}

ExitHistogram exit_distribution(const std::vector<ExitRecord>& records, int n_layers) {
  if (records.empty()) throw std::invalid_argument("exit_distribution: no records");
  ExitHistogram hist;
  hist.n_layers = n_layers;
  hist.counts.assign(static_cast<std::size_t>(n_layers), 0);
  for (const ExitRecord& r : records) {
    if (r.exit_layer < 1 || r.exit_layer > n_layers) {
      throw std::invalid_argument("exit_distribution: record exits at layer " + std::to_string(r.exit_layer) +
                                  " outside [1, " + std::to_string(n_layers) + "]");
    }
    ++hist.counts[static_cast<std::size_t>(r.exit_layer - 1)];
  }
  return hist;
}

std::vector<double> exit_fractions(const ExitHistogram& histogram) {
  const double total = static_cast<double>(histogram.total());
  std::vector<double> out;
  out.reserve(histogram.counts.size());
  for (std::uint64_t c : histogram.counts) out.push_back(static_cast<double>(c) / total);
  return out;
}

namespace {

void validate_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty threshold grid");
  if (grid[0] != 0.0) throw std::invalid_argument("sweep: grid must start at S = 0 (the baseline)");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("sweep: grid must be strictly increasing");
  }
}

}  // namespace

SweepReport sweep(const EarlyExitModel& model, const EncodedSplit& dev_set, const std::vector<double>& grid,
                  TaskMetric metric, std::vector<std::vector<ExitRecord>>* collect_records) {
  validate_grid(grid);
  const int n = model.config().n_layers;
  const bool binary = model.config().n_classes == 2;

  // Untimed warm-up pass; the first pass over a cold heap is systematically
  // slower and would distort the baseline wall clock.
  infer_batch(model, dev_set, ExitPolicy{grid[0]});

  SweepReport report;
  report.n_layers = n;
  report.metric = metric;
  for (double threshold : grid) {
    BatchInferenceResult result = infer_batch(model, dev_set, ExitPolicy{threshold});
    std::vector<int> predictions;
    predictions.reserve(result.records.size());
    for (const ExitRecord& r : result.records) predictions.push_back(r.predicted_class);

    TradeoffPoint point;
    point.threshold = threshold;
    point.accuracy = quality(predictions, dev_set.labels, TaskMetric::accuracy);
    point.f1 = binary ? quality(predictions, dev_set.labels, TaskMetric::binary_f1)
                      : std::numeric_limits<double>::quiet_NaN();
    point.quality = metric == TaskMetric::accuracy ? point.accuracy : point.f1;
    point.histogram = exit_distribution(result.records, n);
    point.expected_saving = expected_saving(point.histogram);
    // Second route to the same quantity, from the per-sample layer counter.
    point.layer_execution_saving =
        1.0 - static_cast<double>(result.total_layers_executed) /
                  static_cast<double>(static_cast<std::uint64_t>(n) * dev_set.count);
    point.wall_clock_s = result.wall_clock_s;
    if (report.points.empty()) {
      report.baseline_quality = point.quality;
      report.baseline_wall_clock_s = point.wall_clock_s;
      point.measured_time_saving = 0.0;
    } else {
      point.measured_time_saving = 1.0 - point.wall_clock_s / report.baseline_wall_clock_s;
    }
    if (collect_records != nullptr) collect_records->push_back(std::move(result.records));
    report.points.push_back(std::move(point));
  }
  return report;
}

std::optional<TradeoffPoint> select_operating_point(const SweepReport& report, double max_drop_points) {
  if (report.points.empty()) throw std::invalid_argument("select_operating_point: empty report");
  std::optional<TradeoffPoint> best;
  for (const TradeoffPoint& point : report.points) {
    const double drop = (report.baseline_quality - point.quality) * 100.0;
    if (drop > max_drop_points) continue;
    // >= prefers the later (larger S) point on equal saving.
    if (!best || point.expected_saving >= best->expected_saving) best = point;
  }
  return best;
}

std::vector<TradeoffPoint> select_operating_points(const SweepReport& report,
                                                   const std::vector<double>& drop_budgets) {
  std::vector<TradeoffPoint> out;
  for (double budget : drop_budgets) {
    if (auto point = select_operating_point(report, budget)) out.push_back(*point);
  }
  return out;
}

std::vector<double> layerwise_quality(const EarlyExitModel& model, const EncodedSplit& dev_set,
                                      TaskMetric metric) {
  std::vector<double> out;
  const int n = model.config().n_layers;
  out.reserve(static_cast<std::size_t>(n));
  for (int layer = 1; layer <= n; ++layer) {
    out.push_back(quality(infer_forced_exit(model, dev_set, layer), dev_set.labels, metric));
  }
  return out;
}

std::vector<SavingPair> measured_vs_expected(const EarlyExitModel& model, const EncodedSplit& dev_set,
                                             const std::vector<double>& grid, int repeats) {
  validate_grid(grid);
  if (repeats < 1) throw std::invalid_argument("measured_vs_expected: repeats must be >= 1");
  const int n = model.config().n_layers;

  infer_batch(model, dev_set, ExitPolicy{grid[0]});  // warm-up, untimed

  struct Timed {
    double threshold;
    double expected;
    double wall_clock;
  };
  std::vector<Timed> timed;
  for (double threshold : grid) {
    std::vector<double> clocks;
    double expected = 0.0;
    for (int r = 0; r < repeats; ++r) {
      BatchInferenceResult result = infer_batch(model, dev_set, ExitPolicy{threshold});
      clocks.push_back(result.wall_clock_s);
      expected = expected_saving(exit_distribution(result.records, n));
    }
    std::sort(clocks.begin(), clocks.end());
    timed.push_back({threshold, expected, clocks[clocks.size() / 2]});
  }
  std::vector<SavingPair> pairs;
  pairs.reserve(timed.size());
  const double baseline = timed[0].wall_clock;
  for (std::size_t i = 0; i < timed.size(); ++i) {
    SavingPair p;
    p.threshold = timed[i].threshold;
    p.expected = timed[i].expected;
    p.measured = i == 0 ? 0.0 : 1.0 - timed[i].wall_clock / baseline;
    pairs.push_back(p);
  }
  return pairs;
}

LinearFit fit_line(const std::vector<SavingPair>& pairs) {
  if (pairs.size() < 2) throw std::invalid_argument("fit_line: need at least 2 points");
  const double n = static_cast<double>(pairs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const SavingPair& p : pairs) {
    sx += p.expected;
    sy += p.measured;
    sxx += p.expected * p.expected;
    sxy += p.expected * p.measured;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fit_line: degenerate x values");
  LinearFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  const double mean_y = sy / n;
  for (const SavingPair& p : pairs) {
    const double e = p.measured - (fit.slope * p.expected + fit.intercept);
    ss_res += e * e;
    ss_tot += (p.measured - mean_y) * (p.measured - mean_y);
  }
  fit.r_squared = ss_tot == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
  return fit;
}

// ---- CSV ----

void write_sweep_csv(const std::string& path, const SweepReport& report) {
  std::ofstream out = open_csv(path);
  out << "S,accuracy,f1,expected_saving,layer_saving,time_saving_pct,wall_clock_s\n";
  for (const TradeoffPoint& p : report.points) {
    out << fmt(p.threshold) << ',' << fmt(p.accuracy) << ',';
    if (std::isnan(p.f1)) {
      out << "";
    } else {
      out << fmt(p.f1);
    }
    out << ',' << fmt(p.expected_saving) << ',' << fmt(p.layer_execution_saving) << ','
        << fmt(p.measured_time_saving * 100.0) << ',' << fmt(p.wall_clock_s) << '\n';
  }
}

void write_layerwise_csv(const std::string& path, const std::vector<double>& per_layer_quality) {
  std::ofstream out = open_csv(path);
  out << "layer,quality\n";
  for (std::size_t i = 0; i < per_layer_quality.size(); ++i) {
    out << (i + 1) << ',' << fmt(per_layer_quality[i]) << '\n';
  }
}

void write_exit_distribution_csv(const std::string& path,
                                 const std::vector<std::pair<double, ExitHistogram>>& per_threshold) {
  std::ofstream out = open_csv(path);
  out << "S,layer,count,fraction\n";
  for (const auto& [threshold, hist] : per_threshold) {
    const std::vector<double> fractions = exit_fractions(hist);
    for (int layer = 1; layer <= hist.n_layers; ++layer) {
      out << fmt(threshold) << ',' << layer << ',' << hist.counts[static_cast<std::size_t>(layer - 1)] << ','
          << fmt(fractions[static_cast<std::size_t>(layer - 1)]) << '\n';
    }
  }
}

void write_expected_vs_measured_csv(const std::string& path, const std::vector<SavingPair>& pairs) {
  std::ofstream out = open_csv(path);
  out << "S,expected_saving,measured_saving\n";
  for (const SavingPair& p : pairs) {
    out << fmt(p.threshold) << ',' << fmt(p.expected) << ',' << fmt(p.measured) << '\n';
  }
}

}  // namespace offramp
