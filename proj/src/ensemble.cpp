#include "qbi/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace qbi {

WeightedEnsemble WeightedEnsemble::uniform(Matrix particles) {
  WeightedEnsemble e;
  const auto m = particles.cols();
  e.particles = std::move(particles);
  e.weights = Vector::Constant(m, 1.0 / static_cast<double>(m));
  return e;
}

WeightedEnsemble WeightedEnsemble::from_prior(const DomainBox& box, std::size_t count, Rng& rng) {
  Matrix particles(static_cast<Eigen::Index>(box.dimension()), static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < particles.cols(); ++i) particles.col(i) = box.sample(rng);
  return uniform(std::move(particles));
}

bool is_normalized(const WeightedEnsemble& e, double tolerance) {
  if (e.weights.size() == 0 || e.weights.size() != e.particles.cols()) return false;
  if ((e.weights.array() < 0.0).any()) return false;
  return std::abs(e.weights.sum() - 1.0) <= tolerance;
}

double reweight_log(WeightedEnsemble& e, std::span<const double> log_factors) {
  const auto m = e.weights.size();
  if (static_cast<std::size_t>(m) != log_factors.size()) {
    throw ContractError("reweight: one log factor per particle required");
  }
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Vector log_w(m);
  double max_log = kNegInf;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double w = e.weights[i];
    log_w[i] = (w > 0.0) ? std::log(w) + log_factors[static_cast<std::size_t>(i)] : kNegInf;
    max_log = std::max(max_log, log_w[i]);
  }
  if (!std::isfinite(max_log)) {
    throw DegenerateEnsembleError("all particles have zero likelihood");
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    e.weights[i] = std::exp(log_w[i] - max_log);
    sum += e.weights[i];
  }
  e.weights /= sum;
  return max_log + std::log(sum);
}

double reweight(WeightedEnsemble& e, const ModelSpec& spec, const Datum& d, double power) {
  if (!(power > 0.0 && power <= 1.0)) throw ContractError("reweight power must lie in (0, 1]");
  validate_controls(spec, d.controls);
  std::vector<double> factors(e.size());
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto ll = detail::datum_log_likelihood(spec, e.particle(i), d);
    factors[i] = ll.clamped ? -std::numeric_limits<double>::infinity() : power * ll.value;
  }
  return reweight_log(e, factors);
}

double ess(const WeightedEnsemble& e) {
  if (!is_normalized(e)) throw ContractError("ess requires normalized weights");
  return 1.0 / e.weights.squaredNorm();
}

std::vector<std::size_t> multinomial_indices(const Vector& weights, std::size_t count, Rng& rng) {
  std::vector<double> cumulative(static_cast<std::size_t>(weights.size()));
  double run = 0.0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    run += weights[i];
    cumulative[static_cast<std::size_t>(i)] = run;
  }
  std::vector<std::size_t> out(count);
  for (auto& idx : out) {
    const double u = uniform01(rng) * run;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                cumulative.size() - 1);
    // Skip zero-weight entries that share a cumulative value with their successor.
    while (weights[static_cast<Eigen::Index>(idx)] <= 0.0 && idx + 1 < cumulative.size()) ++idx;
  }
  return out;
}

WeightedEnsemble multinomial_resample(const WeightedEnsemble& e, Rng& rng) {
  if (!is_normalized(e)) throw ContractError("resampling requires normalized weights");
  const auto idx = multinomial_indices(e.weights, e.size(), rng);
  Matrix out(e.particles.rows(), e.particles.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = e.particles.col(static_cast<Eigen::Index>(idx[i]));
  }
  return WeightedEnsemble::uniform(std::move(out));
}

Moments moments(const WeightedEnsemble& e) {
  Moments m;
  const double total = e.weights.sum();
  m.mean = e.particles * e.weights / total;
  const Matrix centered = e.particles.colwise() - m.mean;
  m.covariance = centered * e.weights.asDiagonal() * centered.transpose() / total;
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose()).eval();
  m.std = m.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
  return m;
}

Matrix regularized_covariance(const Moments& m) {
  const auto n = m.covariance.rows();
  return m.covariance + kCovarianceJitter * Matrix::Identity(n, n);
}

double occupation_rate(const WeightedEnsemble& e, const DomainBox& box, int bins_per_dim) {
  if (bins_per_dim < 1) throw ContractError("occupation grid needs at least one bin");
  if (e.size() == 0) throw ContractError("occupation rate of an empty ensemble");
  const auto dim = e.particles.rows();
  const Vector width = box.width();
  std::unordered_set<std::uint64_t> cells;
  for (Eigen::Index i = 0; i < e.particles.cols(); ++i) {
    std::uint64_t key = 0;
    for (Eigen::Index d = 0; d < dim; ++d) {
      const double u = (e.particles(d, i) - box.lower[d]) / width[d];
      const auto b = std::clamp(static_cast<long long>(std::floor(u * bins_per_dim)), 0LL,
                                static_cast<long long>(bins_per_dim - 1));
      key = key * static_cast<std::uint64_t>(bins_per_dim) + static_cast<std::uint64_t>(b);
    }
    cells.insert(key);
  }
  const double total = std::pow(static_cast<double>(bins_per_dim), static_cast<double>(dim));
  return static_cast<double>(cells.size()) / total;
}

ModeMetrics mode_metrics(const WeightedEnsemble& e, std::span<const Vector> modes,
                         const DomainBox& box, const ModeThresholds& thresholds) {
  if (modes.empty()) throw ContractError("mode_metrics needs at least one mode");
  const std::size_t k_modes = modes.size();
  const double diameter = box.diameter();
  const double total = e.weights.sum();

  std::vector<std::size_t> assigned(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const auto x = e.particles.col(static_cast<Eigen::Index>(i));
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_modes; ++k) {
      const double dist = (x - modes[k]).squaredNorm();
      if (dist < best) {
        best = dist;
        assigned[i] = k;
      }
    }
  }

  ModeMetrics out;
  out.modes.resize(k_modes);
  std::vector<Vector> centroid(k_modes, Vector::Zero(e.particles.rows()));
  double sq_error = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double w = e.weights[static_cast<Eigen::Index>(i)] / total;
    const auto x = e.particles.col(static_cast<Eigen::Index>(i));
    const std::size_t k = assigned[i];
    out.modes[k].weight += w;
    centroid[k] += w * x;
    const double dist = (x - modes[k]).norm();
    out.mean_distance += w * dist;
    sq_error += w * dist * dist;
  }
  out.rms_error = std::sqrt(sq_error);

  std::vector<double> spread(k_modes, 0.0);
  for (std::size_t k = 0; k < k_modes; ++k) {
    if (out.modes[k].weight > 0.0) centroid[k] /= out.modes[k].weight;
  }
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double w = e.weights[static_cast<Eigen::Index>(i)] / total;
    const std::size_t k = assigned[i];
    spread[k] += w * (e.particles.col(static_cast<Eigen::Index>(i)) - centroid[k]).squaredNorm();
  }

  const double lo = 1.0 / (thresholds.balance_factor * static_cast<double>(k_modes));
  const double hi = thresholds.balance_factor / static_cast<double>(k_modes);
  const double dist_limit = thresholds.max_mean_distance * diameter;
  const double std_limit = thresholds.max_mode_std * diameter;
  out.precise = true;
  out.balanced = true;
  std::size_t covered = 0;
  for (std::size_t k = 0; k < k_modes; ++k) {
    auto& st = out.modes[k];
    if (st.weight > 0.0) {
      st.std = std::sqrt(spread[k] / st.weight);
      st.centroid_distance = (centroid[k] - modes[k]).norm();
      if (st.std >= std_limit) out.precise = false;
    } else {
      st.centroid_distance = std::numeric_limits<double>::infinity();
    }
    out.std_metric += st.weight * st.std;
    const bool weight_ok = st.weight >= lo && st.weight <= hi;
    if (!weight_ok) out.balanced = false;
    st.covered = st.weight >= lo && st.centroid_distance < dist_limit;
    if (st.covered) ++covered;
  }
  out.covered_fraction = static_cast<double>(covered) / static_cast<double>(k_modes);
  out.accurate = out.mean_distance < dist_limit;
  out.correct = out.rms_error <= 0.0 ||
                std::abs(out.std_metric - out.rms_error) < thresholds.max_error_mismatch * out.rms_error;
  out.success = out.accurate && out.precise && out.correct && out.balanced;
  return out;
}

}  // namespace qbi
