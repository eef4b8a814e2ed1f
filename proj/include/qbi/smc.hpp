#pragma once

#include "qbi/common.hpp"
#include "qbi/ensemble.hpp"
#include "qbi/kernels.hpp"
#include "qbi/models.hpp"
#include "qbi/subsampling.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace qbi {

enum class KernelKind { liu_west, rwm, hmc, hybrid, sghmc, ecs };
enum class Ordering { as_given, ascending, descending, random };

std::string_view to_string(KernelKind kind);
std::optional<KernelKind> parse_kernel_kind(std::string_view name);
std::string_view to_string(Ordering ordering);
std::optional<Ordering> parse_ordering(std::string_view name);

struct EcsConfig {
  std::size_t subsample = 50;
  std::size_t blocks = 3;
  // Fraction of the shortest-time data used to place the first reference
  // point; 0 uses the prior ensemble mean.
  double warmup_fraction = 0.4;

  void validate() const;
};

struct KernelConfig {
  KernelKind kind = KernelKind::rwm;
  LiuWestConfig liu_west;
  RwmConfig rwm;
  HmcConfig hmc;
  HybridConfig hybrid;
  SghmcConfig sghmc;
  EcsConfig ecs;

  void validate() const;
};

struct SmcConfig {
  std::size_t particles = 100;
  double threshold = 0.5;  // resample when ESS < threshold * M
  int moves = 1;           // kernel applications per particle per move sweep
  bool move_every_step = false;
  KernelConfig kernel;
  Ordering ordering = Ordering::as_given;
  std::size_t workers = 1;

  void validate() const;
};

/// Kernel bookkeeping for one sweep or a whole run.
struct MoveStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  std::size_t divergent = 0;
  // Hybrid kernel: steps left to HMC alone (screen not triggered), their
  // summed HMC acceptance probability, and the steps that chained an RWM move.
  std::size_t hmc_only_steps = 0;
  double hmc_only_accept_sum = 0.0;
  std::size_t rwm_fallbacks = 0;
  std::size_t index_proposals = 0;
  std::size_t index_accepted = 0;

  double acceptance() const;
  double hmc_fraction() const;
  double hmc_acceptance() const;
  void merge(const MoveStats& other);
};

struct TraceRecord {
  std::size_t iter = 0;
  double ess = 0.0;
  bool resampled = false;
  double log_evidence = 0.0;  // cumulative log of the normalizer product
  Vector mean;
  Vector std;
  double accept_rate = 0.0;  // NaN when no kernel ran this iteration
  double control_t = 0.0;    // NaN for tempering stages
};

struct RunTrace {
  std::vector<TraceRecord> records;
  MoveStats moves;
  double log_evidence = 0.0;
  std::size_t resample_count = 0;
};

struct SmcResult {
  WeightedEnsemble ensemble;
  RunTrace trace;
};

/// Product of the recorded normalizers, exp(trace.log_evidence).
double evidence(const RunTrace& trace);

/// Stable reordering; `random` is a seeded shuffle.
Dataset order_dataset(const Dataset& data, Ordering ordering, std::uint64_t seed = 0);

/// Mutable per-run kernel tuning carried across sweeps.
struct KernelTuning {
  double rwm_scale = 1.0;
};

/// What the move kernels target: power * sum of log-likelihoods over `data`.
struct MoveTarget {
  const ModelSpec* spec = nullptr;
  std::span<const Datum> data;
  double power = 1.0;
  // ECS only: shared control variates and one index state per particle.
  const ControlVariates* cv = nullptr;
  std::vector<SubsampleState>* subsamples = nullptr;
};

/// Applies `moves` kernel steps to every particle (weights unchanged). Each
/// particle draws from its own stream keyed by (seed, iteration, particle).
MoveStats move_particles(WeightedEnsemble& e, const MoveTarget& target, const KernelConfig& kernel,
                         KernelTuning& tuning, int moves, std::uint64_t seed, std::uint64_t iteration,
                         std::size_t workers);

/// Sequential importance resampling, one datum at a time. The filter only
/// sees data passed to update(), so adaptive loops cannot peek ahead.
class SirFilter {
 public:
  SirFilter(const ModelSpec& spec, const SmcConfig& cfg, std::uint64_t seed);
  SirFilter(const ModelSpec& spec, const SmcConfig& cfg, WeightedEnsemble initial, std::uint64_t seed);

  void update(const Datum& d);

  const WeightedEnsemble& ensemble() const { return ensemble_; }
  const RunTrace& trace() const { return trace_; }
  Moments current_moments() const { return moments(ensemble_); }
  std::span<const Datum> data() const { return data_; }
  std::size_t iteration() const { return data_.size(); }
  const ModelSpec& spec() const { return spec_; }

 private:
  void resample_and_move(std::uint64_t iter, MoveStats& stats);

  ModelSpec spec_;
  SmcConfig cfg_;
  std::uint64_t seed_;
  WeightedEnsemble ensemble_;
  Dataset data_;
  RunTrace trace_;
  KernelTuning tuning_;
};

SmcResult sir_run(const ModelSpec& spec, const Dataset& data, const SmcConfig& cfg, std::uint64_t seed);
SmcResult sir_run(const ModelSpec& spec, const Dataset& data, const SmcConfig& cfg,
                  WeightedEnsemble initial, std::uint64_t seed);

/// gamma_s = s / S for s = 1..S.
std::vector<double> even_schedule(int stages);
/// Throws ContractError unless strictly increasing in (0, 1] and ending at 1.
void validate_schedule(std::span<const double> schedule);

/// Tempered likelihood estimation: stage s reweights by
/// L(theta | all data)^(gamma_s - gamma_{s-1}), then resamples and moves with
/// kernels targeting the gamma_s posterior. With the ECS kernel, both the
/// reweighting and the moves use the subsampled estimator.
SmcResult tle_run(const ModelSpec& spec, const Dataset& data, std::span<const double> schedule,
                  const SmcConfig& cfg, std::uint64_t seed);
SmcResult tle_run(const ModelSpec& spec, const Dataset& data, std::span<const double> schedule,
                  const SmcConfig& cfg, WeightedEnsemble initial, std::uint64_t seed);

/// Reference point for control variates: SIR posterior mean over the
/// shortest-time `fraction` of the data.
Vector warm_up_reference(const ModelSpec& spec, const Dataset& data, double fraction,
                         const SmcConfig& cfg, std::uint64_t seed);

}  // namespace qbi
