#pragma once

#include "qbi/common.hpp"
#include "qbi/ensemble.hpp"
#include "qbi/models.hpp"
#include "qbi/random.hpp"
#include "qbi/target.hpp"

#include <optional>
#include <span>

namespace qbi {

/// A Markov chain position together with its cached target value.
struct ChainState {
  Vector theta;
  LogLikelihood log;
};

ChainState make_state(const LogTarget& target, Vector theta);

struct StepOutcome {
  bool accepted = false;
  double accept_prob = 0.0;
  bool divergent = false;
};

/// min(1, exp(proposal - current)). A clamped proposal gives 0; a clamped
/// current state (and unclamped proposal) gives 1.
double metropolis_accept_prob(const LogLikelihood& current, const LogLikelihood& proposal);

// ---------------------------------------------------------------------------
// Liu-West

struct LiuWestConfig {
  double a = 0.98;
  int max_redraws = 100;

  void validate() const;
};

/// Multinomial draw followed by kernel shrinkage toward the mean:
/// theta' ~ N(a theta_s + (1 - a) mu, (1 - a^2) Sigma).
WeightedEnsemble liu_west_resample(const WeightedEnsemble& e, const DomainBox& box,
                                   const LiuWestConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Random walk Metropolis

struct RwmConfig {
  double scale = 1.0;         // proposal std relative to the ensemble std
  double target_rate = 0.65;  // acceptance the adaptation aims for
  double adapt_factor = 1.1;
  bool adapt = true;

  void validate() const;
};

/// Lower Cholesky factor of scale^2 (covariance + jitter).
Matrix rwm_proposal_factor(const Matrix& covariance, double scale);

/// Multiplicative scale update between SMC iterations.
double adapt_rwm_scale(double scale, double acceptance, const RwmConfig& cfg);

StepOutcome rwm_step(ChainState& state, const LogTarget& target, const Matrix& proposal_factor,
                     Rng& rng);

// ---------------------------------------------------------------------------
// Hamiltonian dynamics

struct MassMatrix {
  Matrix mass;
  Matrix inverse;
  Matrix chol;  // lower factor of `mass`, for momentum draws

  static MassMatrix identity(std::size_t dim);
  static MassMatrix from_mass(const Matrix& mass);
  /// Mass = inverse of the (regularized) covariance.
  static MassMatrix from_covariance(const Matrix& covariance);

  double kinetic(const Vector& p) const { return 0.5 * p.dot(inverse * p); }
};

struct LeapfrogResult {
  Vector theta;
  Vector momentum;
  bool divergent = false;
  int reflections = 0;
};

namespace detail {

inline constexpr int kMaxReflections = 100;

// Moves theta along the velocity inverse_mass * p for time `eps`, bouncing
// elastically off the faces of the box. At a face with normal e_d the momentum
// is mirrored in the kinetic metric, which for a diagonal mass is p_d -> -p_d.
bool advance_position(Vector& theta, Vector& p, double eps, const Matrix& inverse_mass,
                      const DomainBox& box, int& reflections);

}  // namespace detail

/// Leapfrog integration of L steps. `grad_potential(theta, g)` writes the
/// gradient of U = -log target into g and returns false at a singularity.
template <class GradPotential>
LeapfrogResult leapfrog(Vector theta, Vector p, double eps, int steps, const Matrix& inverse_mass,
                        const DomainBox& box, GradPotential&& grad_potential) {
  LeapfrogResult r;
  Vector g(theta.size());
  auto finish = [&](bool divergent) {
    r.theta = std::move(theta);
    r.momentum = std::move(p);
    r.divergent = divergent;
    return r;
  };
  if (!grad_potential(theta, g) || !g.allFinite()) return finish(true);
  p.noalias() -= 0.5 * eps * g;
  for (int i = 0; i < steps; ++i) {
    if (!detail::advance_position(theta, p, eps, inverse_mass, box, r.reflections)) {
      return finish(true);
    }
    if (!grad_potential(theta, g) || !g.allFinite()) return finish(true);
    p.noalias() -= ((i + 1 < steps) ? eps : 0.5 * eps) * g;
  }
  return finish(!theta.allFinite() || !p.allFinite());
}

struct HmcConfig {
  double epsilon = 0.1;
  int steps = 10;

  void validate() const;
};

/// min(1, exp(h_current - h_proposal)); 0 for non-finite energies.
double hmc_accept_prob(double h_current, double h_proposal);

StepOutcome hmc_step(ChainState& state, const LogTarget& target, const MassMatrix& mass,
                     const HmcConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Hybrid HMC -> RWM

struct HybridConfig {
  double threshold = 0.01;

  void validate() const;
};

struct HybridOutcome {
  StepOutcome hmc;
  bool rwm_applied = false;
  StepOutcome rwm;

  bool accepted() const { return hmc.accepted || rwm.accepted; }
};

/// HMC step; when the acceptance estimate falls below the threshold an RWM
/// step is chained after it. Without an explicit estimate the HMC step's own
/// acceptance probability is screened.
HybridOutcome hybrid_step(ChainState& state, const LogTarget& target, const MassMatrix& mass,
                          const HmcConfig& hmc, const Matrix& rwm_factor,
                          const HybridConfig& cfg, Rng& rng,
                          std::optional<double> screen_estimate = std::nullopt);

// ---------------------------------------------------------------------------
// Stochastic-gradient HMC

struct SghmcConfig {
  double epsilon = 0.01;
  int steps = 10;
  std::size_t batch = 10;
  bool friction = true;
  double friction_offset = 0.0;  // added to the noise estimate B on the diagonal
  bool inject_noise = true;      // N(0, 2 eps offset) momentum noise when friction is on

  void validate() const;
};

struct SghmcOutcome {
  bool divergent = false;
  double mean_friction = 0.0;  // average trace(C) / dim over the trajectory
};

/// Minibatch gradient estimate of U = -power * sum_k log P(d_k | theta) and
/// the noise covariance (N^2 / m) Cov_batch(per-datum gradient).
bool minibatch_gradient(const ModelSpec& spec, std::span<const Datum> data, double power,
                        const Vector& theta, std::size_t batch, Rng& rng, Vector& grad_u,
                        Matrix* noise_cov);

/// Friction-augmented dynamics with minibatch gradients; no Metropolis test.
/// Per step: half kick, position step (with reflection), half kick, then
/// p <- (I + eps C M^-1)^-1 p + noise (implicit friction), where C = eps V/2 + offset I (C = 0 without friction).
SghmcOutcome sghmc_step(Vector& theta, const ModelSpec& spec, std::span<const Datum> data,
                        double power, const MassMatrix& mass, const SghmcConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Gaussian rejection filtering

struct GrfConfig {
  std::size_t samples = 1000;

  void validate() const;
};

struct GrfResult {
  Moments moments;
  bool updated = false;
  std::size_t accepted = 0;
  std::size_t drawn = 0;
};

/// Samples the Gaussian prior, accepts each point with probability L(theta | d)
/// (zero outside the domain) and refits mean and covariance. With fewer than
/// two acceptances it retries once at twice the sample count, then returns the
/// prior unchanged with updated = false.
GrfResult grf_update(const Moments& prior, const ModelSpec& spec, const Datum& d,
                     const GrfConfig& cfg, Rng& rng);

}  // namespace qbi
