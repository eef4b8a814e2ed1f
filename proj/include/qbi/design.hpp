#pragma once

#include "qbi/common.hpp"
#include "qbi/ensemble.hpp"
#include "qbi/models.hpp"
#include "qbi/random.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace qbi {

enum class HeuristicKind {
  fixed_grid,
  random,
  incremental_random,
  exponential,
  sigma_inverse,
  pgh,
  occupation,
  greedy_variance,
};

std::string_view to_string(HeuristicKind kind);
std::optional<HeuristicKind> parse_heuristic_kind(std::string_view name);

struct HeuristicConfig {
  HeuristicKind kind = HeuristicKind::sigma_inverse;
  double increment = 0.08;  // fixed-grid spacing
  double growth = 9.0 / 8.0; // exponential base C
  double c1 = 10.0;         // incremental-random window step
  double c2 = 5.0;          // incremental-random window period
  double base = 0.0;        // occupation numerator; 0 = 1 / (prior std)
  int bins = 20;            // occupation grid resolution per dimension
  std::size_t candidates = 20;
  double candidate_spread = 0.3;  // log-normal sigma of the greedy candidates
  double t_max = std::numeric_limits<double>::infinity();

  void validate() const;
  bool adaptive() const;
};

/// t = 1 / (largest marginal std). Throws DegenerateUncertaintyError at zero.
double sigma_inverse_time(const Moments& m);

struct PghResult {
  double t = 0.0;
  bool fallback = false;
};

/// t = 1 / |theta_a - theta_b| for two weighted draws; identical draws are
/// redrawn up to 100 times before falling back to sigma_inverse_time.
PghResult pgh_time(const WeightedEnsemble& e, Rng& rng);

/// t = base / (occupation_rate * ess / M).
double occupation_time(const WeightedEnsemble& e, double ess_value, const DomainBox& box,
                       double base, int bins);

/// Expected posterior variance (trace of the covariance) after observing one
/// datum with controls `c`, averaged over both outcomes under the ensemble.
double expected_posterior_variance(const WeightedEnsemble& e, const ModelSpec& spec, const Controls& c);

struct GreedyChoice {
  double t = 0.0;
  std::vector<double> candidates;
  std::vector<double> expected_variance;  // one per candidate
};

/// Argmin of expected_posterior_variance over the candidate times; ties go
/// to the smallest t.
GreedyChoice greedy_variance_time(const WeightedEnsemble& e, const ModelSpec& spec,
                                  std::span<const double> candidates);

/// `count` log-normal perturbations of `center` with multiplicative sigma `spread`.
std::vector<double> greedy_candidates(double center, std::size_t count, double spread, Rng& rng);

/// Offline schedules; k >= 1.
double schedule_time(const HeuristicConfig& cfg, std::size_t k, Rng& rng);

/// Dispatches on cfg.kind for adaptive or offline selection of the next time,
/// applying the t_max cap. `prior_std` feeds the occupation base default.
double next_time(const HeuristicConfig& cfg, std::size_t k, const WeightedEnsemble& e,
                 const ModelSpec& spec, double prior_std, Rng& rng);

/// Wiebe-style controls for phase estimation: m = ceil(1.25 / sigma) and
/// theta_ctl = -m theta_w mod 2 pi with theta_w ~ N(mu, sigma^2).
Controls ipe_controls(const Moments& m, Rng& rng, int max_repetitions = 1 << 20);

}  // namespace qbi
