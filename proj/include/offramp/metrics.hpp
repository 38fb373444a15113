#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "offramp/data.hpp"
#include "offramp/inference.hpp"
#include "offramp/model.hpp"

namespace offramp {

struct ExitHistogram {
  int n_layers = 0;
  std::vector<std::uint64_t> counts;  // counts[i] = samples exiting at layer i+1

  std::uint64_t total() const;
};

// Fraction of layer executions avoided by early exiting:
// 1 - sum(i * N_i) / sum(n * N_i). Zero when everything exits at layer n;
// approaches 1 - 1/n when everything exits at layer 1.
double expected_saving(const ExitHistogram& histogram);

double quality(const std::vector<int>& predictions, const std::vector<int>& labels, TaskMetric metric);

struct TradeoffPoint {
  double threshold = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;  // NaN when the task is not binary
  double quality = 0.0;  // the task metric (accuracy or F1)
  double expected_saving = 0.0;
  double layer_execution_saving = 0.0;  // computed from the execution counter; equals expected_saving
  double measured_time_saving = 0.0;    // relative to the S=0 baseline wall clock
  double wall_clock_s = 0.0;
  ExitHistogram histogram;
};

struct SweepReport {
  std::vector<TradeoffPoint> points;  // one per threshold, first is the S=0 baseline
  double baseline_quality = 0.0;
  double baseline_wall_clock_s = 0.0;
  int n_layers = 0;
  TaskMetric metric = TaskMetric::accuracy;
};

// 21 thresholds by default: 0, then geometric spacing from `low` up to
// ln(n_classes), the largest entropy a K-class distribution can reach.
std::vector<double> default_threshold_grid(int n_classes, int points = 21, double low = 0.005);

// Runs early-exit inference once per threshold. The grid must be strictly
// increasing and start at 0 so the first point is the full-model baseline.
// `collect_records` additionally returns all per-sample exit records.
SweepReport sweep(const EarlyExitModel& model, const EncodedSplit& dev_set, const std::vector<double>& grid,
                  TaskMetric metric,
                  std::vector<std::vector<ExitRecord>>* collect_records = nullptr);

// Highest-saving point whose quality drop from the baseline stays within
// `max_drop_points` (absolute points, i.e. 1.0 = one percentage point).
// Ties break toward the larger threshold. Empty when nothing qualifies.
std::optional<TradeoffPoint> select_operating_point(const SweepReport& report, double max_drop_points);
std::vector<TradeoffPoint> select_operating_points(const SweepReport& report,
                                                   const std::vector<double>& drop_budgets);

// Quality of forcing every sample through ramp i, for i = 1..n.
std::vector<double> layerwise_quality(const EarlyExitModel& model, const EncodedSplit& dev_set,
                                      TaskMetric metric);

ExitHistogram exit_distribution(const std::vector<ExitRecord>& records, int n_layers);
std::vector<double> exit_fractions(const ExitHistogram& histogram);

struct SavingPair {
  double threshold = 0.0;
  double expected = 0.0;
  double measured = 0.0;
};

// (expected saving, wall-clock saving) per grid point. `repeats` > 1 uses
// the median wall clock of several runs to damp scheduler noise.
std::vector<SavingPair> measured_vs_expected(const EarlyExitModel& model, const EncodedSplit& dev_set,
                                             const std::vector<double>& grid, int repeats = 1);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

LinearFit fit_line(const std::vector<SavingPair>& pairs);

// ---- CSV exports (plotting happens elsewhere) ----

void write_sweep_csv(const std::string& path, const SweepReport& report);
void write_layerwise_csv(const std::string& path, const std::vector<double>& per_layer_quality);
void write_exit_distribution_csv(const std::string& path,
                                 const std::vector<std::pair<double, ExitHistogram>>& per_threshold);
void write_expected_vs_measured_csv(const std::string& path, const std::vector<SavingPair>& pairs);

}  // namespace offramp
