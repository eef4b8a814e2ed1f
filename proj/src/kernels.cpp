#include "qbi/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qbi {

namespace {

Vector draw_gaussian(const Vector& mean, const Matrix& chol, Rng& rng) {
  Vector z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  return mean + chol * z;
}

Matrix lower_cholesky(const Matrix& m, const char* what) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw ContractError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

}  // namespace

ChainState make_state(const LogTarget& target, Vector theta) {
  ChainState s;
  s.log = target.log_density(theta);
  s.theta = std::move(theta);
  return s;
}

double metropolis_accept_prob(const LogLikelihood& current, const LogLikelihood& proposal) {
  if (proposal.clamped) return 0.0;
  if (current.clamped) return 1.0;
  const double diff = proposal.value - current.value;
  if (std::isnan(diff)) return 0.0;
  return diff >= 0.0 ? 1.0 : std::exp(diff);
}

// ---------------------------------------------------------------------------

void LiuWestConfig::validate() const {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractError("Liu-West a must lie in [0, 1]");
  if (max_redraws < 0) throw ContractError("Liu-West redraw cap must be non-negative");
}

WeightedEnsemble liu_west_resample(const WeightedEnsemble& e, const DomainBox& box,
                                   const LiuWestConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!is_normalized(e)) throw ContractError("Liu-West resampling requires normalized weights");
  const auto mom = moments(e);
  const double shrink_var = 1.0 - cfg.a * cfg.a;
  const bool bootstrap = shrink_var <= 0.0 || mom.covariance.trace() <= 0.0;
  Matrix chol;
  if (!bootstrap) {
    Eigen::LLT<Matrix> llt(shrink_var * regularized_covariance(mom));
    chol = llt.matrixL();
  }
  const auto idx = multinomial_indices(e.weights, e.size(), rng);
  Matrix out(e.particles.rows(), e.particles.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Vector src = e.particle(idx[i]);
    Vector draw = src;
    if (!bootstrap) {
      const Vector center = cfg.a * src + (1.0 - cfg.a) * mom.mean;
      draw = draw_gaussian(center, chol, rng);
      for (int r = 0; r < cfg.max_redraws && !box.contains(draw); ++r) {
        draw = draw_gaussian(center, chol, rng);
      }
      draw = draw.cwiseMax(box.lower).cwiseMin(box.upper);
    }
    out.col(static_cast<Eigen::Index>(i)) = draw;
  }
  return WeightedEnsemble::uniform(std::move(out));
}

// ---------------------------------------------------------------------------

void RwmConfig::validate() const {
  if (!(scale > 0.0)) throw ContractError("RWM scale must be positive");
  if (!(target_rate > 0.0 && target_rate < 1.0)) throw ContractError("RWM target rate must lie in (0, 1)");
  if (!(adapt_factor >= 1.0)) throw ContractError("RWM adaptation factor must be >= 1");
}

Matrix rwm_proposal_factor(const Matrix& covariance, double scale) {
  const auto n = covariance.rows();
  return scale * lower_cholesky(covariance + kCovarianceJitter * Matrix::Identity(n, n),
                                "proposal covariance");
}

double adapt_rwm_scale(double scale, double acceptance, const RwmConfig& cfg) {
  if (!cfg.adapt) return scale;
  return acceptance > cfg.target_rate ? scale * cfg.adapt_factor : scale / cfg.adapt_factor;
}

StepOutcome rwm_step(ChainState& state, const LogTarget& target, const Matrix& proposal_factor,
                     Rng& rng) {
  StepOutcome out;
  Vector proposal = draw_gaussian(state.theta, proposal_factor, rng);
  const double u = uniform01(rng);
  if (!target.domain().contains(proposal)) return out;
  const auto log = target.log_density(proposal);
  out.accept_prob = metropolis_accept_prob(state.log, log);
  if (u < out.accept_prob) {
    state.theta = std::move(proposal);
    state.log = log;
    out.accepted = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

MassMatrix MassMatrix::identity(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return {Matrix::Identity(n, n), Matrix::Identity(n, n), Matrix::Identity(n, n)};
}

MassMatrix MassMatrix::from_mass(const Matrix& mass) {
  MassMatrix m;
  m.mass = 0.5 * (mass + mass.transpose());
  m.chol = lower_cholesky(m.mass, "mass matrix");
  const auto n = mass.rows();
  m.inverse = Eigen::LLT<Matrix>(m.mass).solve(Matrix::Identity(n, n));
  m.inverse = 0.5 * (m.inverse + m.inverse.transpose()).eval();
  return m;
}

MassMatrix MassMatrix::from_covariance(const Matrix& covariance) {
  const auto n = covariance.rows();
  MassMatrix m;
  m.inverse = 0.5 * (covariance + covariance.transpose()) + kCovarianceJitter * Matrix::Identity(n, n);
  m.mass = Eigen::LLT<Matrix>(m.inverse).solve(Matrix::Identity(n, n));
  m.mass = 0.5 * (m.mass + m.mass.transpose()).eval();
  m.chol = lower_cholesky(m.mass, "mass matrix");
  return m;
}

namespace detail {

bool advance_position(Vector& theta, Vector& p, double eps, const Matrix& inverse_mass,
                      const DomainBox& box, int& reflections) {
  double remaining = eps;
  for (int bounce = 0; bounce <= kMaxReflections; ++bounce) {
    const Vector v = inverse_mass * p;
    double hit_time = remaining;
    Eigen::Index hit = -1;
    double wall = 0.0;
    for (Eigen::Index d = 0; d < theta.size(); ++d) {
      double s;
      double face;
      if (v[d] > 0.0) {
        face = box.upper[d];
      } else if (v[d] < 0.0) {
        face = box.lower[d];
      } else {
        continue;
      }
      s = (face - theta[d]) / v[d];
      if (s < hit_time) {
        hit_time = std::max(s, 0.0);
        hit = d;
        wall = face;
      }
    }
    if (hit < 0) {
      theta.noalias() += remaining * v;
      return theta.allFinite();
    }
    theta.noalias() += hit_time * v;
    theta[hit] = wall;
    p[hit] -= 2.0 * v[hit] / inverse_mass(hit, hit);
    remaining -= hit_time;
    ++reflections;
  }
  return false;
}

}  // namespace detail

void HmcConfig::validate() const {
  if (!(epsilon > 0.0)) throw ContractError("HMC stepsize must be positive");
  if (steps < 1) throw ContractError("HMC path length must be >= 1");
}

double hmc_accept_prob(double h_current, double h_proposal) {
  const double diff = h_current - h_proposal;
  if (std::isnan(diff) || !std::isfinite(h_proposal)) return 0.0;
  return diff >= 0.0 ? 1.0 : std::exp(diff);
}

StepOutcome hmc_step(ChainState& state, const LogTarget& target, const MassMatrix& mass,
                     const HmcConfig& cfg, Rng& rng) {
  StepOutcome out;
  Vector z(state.theta.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = standard_normal(rng);
  const double u = uniform01(rng);
  if (state.log.clamped) {
    out.divergent = true;
    return out;
  }
  const Vector p0 = mass.chol * z;
  const double h0 = -state.log.value + mass.kinetic(p0);
  auto grad_u = [&target](const Vector& th, Vector& g) {
    if (!target.gradient(th, g)) return false;
    g = -g;
    return true;
  };
  auto lf = leapfrog(state.theta, p0, cfg.epsilon, cfg.steps, mass.inverse, target.domain(), grad_u);
  if (lf.divergent) {
    out.divergent = true;
    return out;
  }
  // Momentum negation keeps the proposal reversible; it does not change H.
  lf.momentum = -lf.momentum;
  const auto log = target.log_density(lf.theta);
  if (log.clamped) return out;
  const double h1 = -log.value + mass.kinetic(lf.momentum);
  out.accept_prob = hmc_accept_prob(h0, h1);
  if (u < out.accept_prob) {
    state.theta = std::move(lf.theta);
    state.log = log;
    out.accepted = true;
  }
  return out;
}

// ---------------------------------------------------------------------------

void HybridConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("hybrid threshold must lie in (0, 1)");
}

HybridOutcome hybrid_step(ChainState& state, const LogTarget& target, const MassMatrix& mass,
                          const HmcConfig& hmc, const Matrix& rwm_factor,
                          const HybridConfig& cfg, Rng& rng, std::optional<double> screen_estimate) {
  HybridOutcome out;
  out.hmc = hmc_step(state, target, mass, hmc, rng);
  const double estimate = screen_estimate.value_or(out.hmc.accept_prob);
  if (estimate < cfg.threshold) {
    out.rwm_applied = true;
    out.rwm = rwm_step(state, target, rwm_factor, rng);
  }
  return out;
}

// ---------------------------------------------------------------------------

void SghmcConfig::validate() const {
  if (!(epsilon > 0.0)) throw ContractError("SGHMC stepsize must be positive");
  if (steps < 1) throw ContractError("SGHMC steps must be >= 1");
  if (batch < 1) throw ContractError("SGHMC minibatch must hold at least one datum");
  if (!(friction_offset >= 0.0)) throw ContractError("SGHMC friction offset must be >= 0");
}

bool minibatch_gradient(const ModelSpec& spec, std::span<const Datum> data, double power,
                        const Vector& theta, std::size_t batch, Rng& rng, Vector& grad_u,
                        Matrix* noise_cov) {
  const auto dim = theta.size();
  const std::size_t n = data.size();
  grad_u = Vector::Zero(dim);
  if (noise_cov) *noise_cov = Matrix::Zero(dim, dim);
  if (n == 0) return true;
  if (batch >= n) {
    for (const auto& d : data) {
      if (!detail::accumulate_grad_log_likelihood(spec, theta, d, -power, grad_u)) return false;
    }
    return grad_u.allFinite();
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  Matrix per(dim, static_cast<Eigen::Index>(batch));
  for (std::size_t j = 0; j < batch; ++j) {
    Vector g = Vector::Zero(dim);
    if (!detail::accumulate_grad_log_likelihood(spec, theta, data[pick(rng)], -power, g)) {
      return false;
    }
    per.col(static_cast<Eigen::Index>(j)) = g;
  }
  const double scale = static_cast<double>(n) / static_cast<double>(batch);
  const Vector mean = per.rowwise().mean();
  grad_u = scale * static_cast<double>(batch) * mean;
  if (noise_cov && batch > 1) {
    const Matrix centered = per.colwise() - mean;
    const Matrix cov = centered * centered.transpose() / static_cast<double>(batch - 1);
    *noise_cov = (static_cast<double>(n) * static_cast<double>(n) / static_cast<double>(batch)) * cov;
  }
  return grad_u.allFinite();
}

SghmcOutcome sghmc_step(Vector& theta, const ModelSpec& spec, std::span<const Datum> data,
                        double power, const MassMatrix& mass, const SghmcConfig& cfg, Rng& rng) {
  cfg.validate();
  SghmcOutcome out;
  const auto dim = theta.size();
  const double eps = cfg.epsilon;
  Vector z(dim);
  for (Eigen::Index i = 0; i < dim; ++i) z[i] = standard_normal(rng);
  Vector p = mass.chol * z;
  Vector x = theta;
  Vector g;
  Matrix noise;
  const Matrix identity = Matrix::Identity(dim, dim);
  const double noise_sd = std::sqrt(2.0 * eps * cfg.friction_offset);
  int reflections = 0;
  double friction_sum = 0.0;

  for (int step = 0; step < cfg.steps; ++step) {
    if (!minibatch_gradient(spec, data, power, x, cfg.batch, rng, g, cfg.friction ? &noise : nullptr)) {
      out.divergent = true;
      return out;
    }
    Matrix friction = Matrix::Zero(dim, dim);
    if (cfg.friction) friction = 0.5 * eps * noise + cfg.friction_offset * identity;
    p.noalias() -= 0.5 * eps * g;
    if (!detail::advance_position(x, p, eps, mass.inverse, spec.domain, reflections)) {
      out.divergent = true;
      return out;
    }
    if (!minibatch_gradient(spec, data, power, x, cfg.batch, rng, g, nullptr)) {
      out.divergent = true;
      return out;
    }
    p.noalias() -= 0.5 * eps * g;
    if (cfg.friction) {
      // Implicit friction step: stable for any eps * C / M, unlike p -= eps C M^-1 p.
      const Matrix damp = identity + eps * friction * mass.inverse;
      p = damp.partialPivLu().solve(p).eval();
      if (cfg.inject_noise && noise_sd > 0.0) {
        for (Eigen::Index i = 0; i < dim; ++i) p[i] += noise_sd * standard_normal(rng);
      }
      friction_sum += friction.trace() / static_cast<double>(dim);
    }
    if (!p.allFinite() || !x.allFinite()) {
      out.divergent = true;
      return out;
    }
  }
  out.mean_friction = friction_sum / static_cast<double>(cfg.steps);
  theta = std::move(x);
  return out;
}

// ---------------------------------------------------------------------------

void GrfConfig::validate() const {
  if (samples < 2) throw ContractError("GRF needs at least two samples per update");
}

GrfResult grf_update(const Moments& prior, const ModelSpec& spec, const Datum& d,
                     const GrfConfig& cfg, Rng& rng) {
  cfg.validate();
  validate_controls(spec, d.controls);
  const Matrix chol = lower_cholesky(prior.covariance, "GRF prior covariance");
  GrfResult out;
  std::size_t n = cfg.samples;
  for (int attempt = 0; attempt < 2; ++attempt, n *= 2) {
    std::vector<Vector> accepted;
    for (std::size_t i = 0; i < n; ++i) {
      const Vector x = draw_gaussian(prior.mean, chol, rng);
      const double u = uniform01(rng);
      ++out.drawn;
      if (!spec.domain.contains(x)) continue;
      if (u < detail::datum_probability(spec, x, d)) accepted.push_back(x);
    }
    out.accepted = accepted.size();
    if (accepted.size() < 2) continue;
    Matrix pts(prior.mean.size(), static_cast<Eigen::Index>(accepted.size()));
    for (std::size_t i = 0; i < accepted.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = accepted[i];
    out.moments = moments(WeightedEnsemble::uniform(std::move(pts)));
    out.updated = true;
    return out;
  }
  out.moments = prior;
  return out;
}

}  // namespace qbi
