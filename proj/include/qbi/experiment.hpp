#pragma once

#include "qbi/config.hpp"
#include "qbi/design.hpp"
#include "qbi/ensemble.hpp"
#include "qbi/kernels.hpp"
#include "qbi/models.hpp"
#include "qbi/smc.hpp"
#include "qbi/stats.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qbi {

enum class InferenceMethod { sir, tle, grf };
enum class ExperimentMode { offline, adaptive };

struct ExperimentConfig {
  ModelSpec model;
  std::optional<Vector> truth;
  std::optional<std::string> dataset_path;
  std::size_t calibration_shots = 0;  // echo A/B re-estimated from this many shots per point

  InferenceMethod method = InferenceMethod::sir;
  SmcConfig smc;
  int tle_stages = 10;
  GrfConfig grf;
  HeuristicConfig design;
  ExperimentMode mode = ExperimentMode::offline;
  std::size_t shots = 100;    // distinct controls (experiments) per run
  std::size_t repeats = 1;    // single shots per control, stored as repeated rows
  std::size_t datasets = 0;   // distinct simulated datasets shared round-robin; 0 = one per run
  ModeThresholds thresholds;

  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::size_t workers = 1;

  void validate() const;
};

/// Builds and validates an experiment from a flat config. Unknown keys and
/// type errors throw ConfigError naming the key.
ExperimentConfig experiment_from_config(const ConfigMap& cfg);

struct RunResult {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Vector final_mean;
  Vector final_std;
  double log_evidence = 0.0;
  RunTrace trace;
  WeightedEnsemble ensemble;
  std::vector<double> cumulative_time;  // sum of evolution times through each iteration
  std::optional<ModeMetrics> metrics;   // multi-cosine runs with known truth
  std::optional<ScalingFit> scaling;    // adaptive runs with enough informative points
};

/// Per-iteration median and quartiles across runs.
struct AggregateColumn {
  std::string name;
  std::vector<double> q25, median, q75;
};

struct Aggregate {
  std::size_t iterations = 0;
  std::vector<AggregateColumn> columns;
};

struct RunReport {
  std::vector<std::string> parameter_names;
  std::vector<RunResult> runs;
  Aggregate aggregate;
  Vector summary_mean;  // median over successful runs of the final mean
  Vector summary_std;   // median over successful runs of the final std
  std::size_t failed_runs = 0;
  std::optional<double> median_scaling_exponent;
  std::optional<double> success_rate;  // fraction of runs passing mode_metrics

  bool all_failed() const { return !runs.empty() && failed_runs == runs.size(); }
};

/// Data shared by every run when the experiment replays a dataset file.
Dataset simulate_dataset(const ExperimentConfig& cfg, std::uint64_t seed);

/// One seeded run; degeneracy errors are captured in the result.
RunResult run_once(const ExperimentConfig& cfg, std::size_t run_index, const Dataset* fixed_data);

RunReport run_experiment(const ExperimentConfig& cfg);

/// Median/quartile aggregation over run traces and the final summaries.
void summarize(RunReport& report);

/// (time, sigma) pairs used for the scaling fit of one run: cumulative time
/// against the largest marginal std, skipping non-positive entries.
std::optional<ScalingFit> run_scaling_fit(const RunTrace& trace, const std::vector<double>& cumulative_time);

}  // namespace qbi
