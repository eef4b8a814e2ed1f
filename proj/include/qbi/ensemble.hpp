#pragma once

#include "qbi/common.hpp"
#include "qbi/models.hpp"
#include "qbi/random.hpp"

#include <span>
#include <vector>

namespace qbi {

/// Discretized posterior: particle positions (one column per particle) and
/// normalized weights.
struct WeightedEnsemble {
  Matrix particles;  // dimension x M
  Vector weights;    // M

  std::size_t size() const { return static_cast<std::size_t>(particles.cols()); }
  std::size_t dimension() const { return static_cast<std::size_t>(particles.rows()); }
  Vector particle(std::size_t i) const { return particles.col(static_cast<Eigen::Index>(i)); }

  static WeightedEnsemble uniform(Matrix particles);
  static WeightedEnsemble from_prior(const DomainBox& box, std::size_t count, Rng& rng);
};

struct Moments {
  Vector mean;
  Matrix covariance;
  Vector std;
};

inline constexpr double kNormalizationTolerance = 1e-9;
inline constexpr double kCovarianceJitter = 1e-12;

bool is_normalized(const WeightedEnsemble& e, double tolerance = kNormalizationTolerance);

/// Multiplies each weight by exp(log_factors[i]) and renormalizes.
/// Returns log C where C = sum_i w_i exp(log_factors[i]).
/// Throws DegenerateEnsembleError when every factor is zero.
double reweight_log(WeightedEnsemble& e, std::span<const double> log_factors);

/// Bayes update by one datum raised to `power` (1 = plain SIR, < 1 = tempered).
/// Returns the log of the normalizer C = sum_i w_i L(theta_i | d)^power.
double reweight(WeightedEnsemble& e, const ModelSpec& spec, const Datum& d, double power = 1.0);

/// 1 / sum w^2. Throws ContractError for unnormalized input.
double ess(const WeightedEnsemble& e);

std::vector<std::size_t> multinomial_indices(const Vector& weights, std::size_t count, Rng& rng);
WeightedEnsemble multinomial_resample(const WeightedEnsemble& e, Rng& rng);

Moments moments(const WeightedEnsemble& e);

/// Covariance plus kCovarianceJitter * I, ready for factorization.
Matrix regularized_covariance(const Moments& m);

/// Fraction of occupied cells in a regular bins^dim partition of the box.
double occupation_rate(const WeightedEnsemble& e, const DomainBox& box, int bins_per_dim);

/// Pass/fail thresholds for multimodal estimates, relative to the domain diameter.
struct ModeThresholds {
  double max_mean_distance = 0.05;  // weighted mean distance to the assigned mode
  double max_mode_std = 0.05;       // per-mode weighted spread
  double max_error_mismatch = 0.5;  // |estimated error - true error| / true error
  double balance_factor = 3.0;      // assigned weight within [1/(f K), f/K]
};

struct ModeStats {
  double weight = 0.0;             // total weight of particles nearest this mode
  double centroid_distance = 0.0;  // |weighted centroid - mode|
  double std = 0.0;                // sqrt(trace of weighted covariance around the centroid)
  bool covered = false;            // weight balanced and centroid close to the mode
};

struct ModeMetrics {
  std::vector<ModeStats> modes;
  double std_metric = 0.0;     // weight-averaged per-mode std ("standard deviation")
  double mean_distance = 0.0;  // weighted mean distance particle -> assigned mode
  double rms_error = 0.0;      // weighted RMS distance particle -> assigned mode
  double covered_fraction = 0.0;
  bool accurate = false;
  bool precise = false;
  bool correct = false;
  bool balanced = false;
  bool success = false;
};

ModeMetrics mode_metrics(const WeightedEnsemble& e, std::span<const Vector> modes,
                         const DomainBox& box, const ModeThresholds& thresholds = {});

}  // namespace qbi
