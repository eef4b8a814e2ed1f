#include "qbi/subsampling.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace qbi {

double ControlVariates::term(std::size_t k, const Vector& theta) const {
  const Vector delta = theta - reference;
  const auto kk = static_cast<Eigen::Index>(k);
  return values[k] + gradients.col(kk).dot(delta) + 0.5 * delta.dot(hessians[k] * delta);
}

Vector ControlVariates::term_gradient(std::size_t k, const Vector& theta) const {
  return gradients.col(static_cast<Eigen::Index>(k)) + hessians[k] * (theta - reference);
}

double ControlVariates::total(const Vector& theta) const {
  const Vector delta = theta - reference;
  return value_sum + gradient_sum.dot(delta) + 0.5 * delta.dot(hessian_sum * delta);
}

Vector ControlVariates::total_gradient(const Vector& theta) const {
  return gradient_sum + hessian_sum * (theta - reference);
}

ControlVariates build_control_variates(const ModelSpec& spec, std::span<const Datum> data,
                                       const Vector& reference) {
  const auto dim = reference.size();
  ControlVariates cv;
  cv.reference = reference;
  cv.values.reserve(data.size());
  cv.gradients = Matrix::Zero(dim, static_cast<Eigen::Index>(data.size()));
  cv.hessians.reserve(data.size());
  cv.value_sum = 0.0;
  cv.gradient_sum = Vector::Zero(dim);
  cv.hessian_sum = Matrix::Zero(dim, dim);
  double value = 0.0;
  Vector grad;
  Matrix hess;
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (!detail::log_likelihood_derivatives(spec, reference, data[k], value, grad, hess)) {
      throw SingularityError("control variates: datum " + std::to_string(k) +
                             " has zero likelihood at the reference point");
    }
    hess = 0.5 * (hess + hess.transpose()).eval();
    cv.values.push_back(value);
    cv.gradients.col(static_cast<Eigen::Index>(k)) = grad;
    cv.hessians.push_back(hess);
    cv.value_sum += value;
    cv.gradient_sum += grad;
    cv.hessian_sum += hess;
  }
  return cv;
}

std::pair<std::size_t, std::size_t> SubsampleState::block_range(std::size_t b) const {
  const std::size_t m = indices.size();
  const std::size_t base = m / blocks;
  const std::size_t extra = m % blocks;
  const std::size_t begin = b * base + std::min(b, extra);
  const std::size_t len = base + (b < extra ? 1 : 0);
  return {begin, begin + len};
}

SubsampleState SubsampleState::random(std::size_t n, std::size_t m, std::size_t blocks, Rng& rng) {
  if (n == 0 || m == 0) throw ContractError("subsample needs data and a positive size");
  if (blocks < 1 || blocks > m) throw ContractError("block count must lie in [1, m]");
  SubsampleState s;
  s.blocks = blocks;
  s.indices.resize(m);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (auto& i : s.indices) i = pick(rng);
  return s;
}

SubsampleState SubsampleState::exact_cover(std::size_t n, std::size_t blocks) {
  if (blocks < 1 || blocks > n) throw ContractError("block count must lie in [1, n]");
  SubsampleState s;
  s.blocks = blocks;
  s.indices.resize(n);
  std::iota(s.indices.begin(), s.indices.end(), std::size_t{0});
  return s;
}

bool is_exact_cover(const SubsampleState& s, std::size_t n) {
  if (s.indices.size() != n) return false;
  std::vector<char> seen(n, 0);
  for (auto i : s.indices) {
    if (i >= n || seen[i]) return false;
    seen[i] = 1;
  }
  return true;
}

namespace {

// Per-index differences l_uj - q_uj; false at a likelihood zero.
bool differences(const ModelSpec& spec, std::span<const Datum> data, const ControlVariates& cv,
                 const SubsampleState& s, const Vector& theta, std::vector<double>& out) {
  out.resize(s.indices.size());
  for (std::size_t j = 0; j < s.indices.size(); ++j) {
    const auto k = s.indices[j];
    const auto ll = detail::datum_log_likelihood(spec, theta, data[k]);
    if (ll.clamped) return false;
    out[j] = ll.value - cv.term(k, theta);
  }
  return true;
}

void check_indices(const SubsampleState& s, std::size_t n, const ControlVariates& cv) {
  if (cv.size() != n) throw ContractError("control variates were built for another dataset");
  if (s.indices.empty()) throw ContractError("empty subsample");
  for (auto i : s.indices) {
    if (i >= n) throw ContractError("subsample index out of range");
  }
}

}  // namespace

SubsampleEstimate difference_log_estimator(const ModelSpec& spec, std::span<const Datum> data,
                                           const ControlVariates& cv, const SubsampleState& s,
                                           const Vector& theta) {
  check_indices(s, data.size(), cv);
  SubsampleEstimate est;
  std::vector<double> diff;
  if (!differences(spec, data, cv, s, theta, diff)) {
    est.clamped = true;
    est.log_estimate = -std::numeric_limits<double>::infinity();
    return est;
  }
  const double n = static_cast<double>(data.size());
  const double m = static_cast<double>(diff.size());
  const double sum = std::accumulate(diff.begin(), diff.end(), 0.0);
  est.log_estimate = cv.total(theta) + (n / m) * sum;
  if (diff.size() > 1 && !is_exact_cover(s, data.size())) {
    const double mean = sum / m;
    double ss = 0.0;
    for (double x : diff) ss += (x - mean) * (x - mean);
    est.variance = (n * n / m) * ss / (m - 1.0);
  }
  return est;
}

bool corrected_log_estimator_gradient(const ModelSpec& spec, std::span<const Datum> data,
                                      const ControlVariates& cv, const SubsampleState& s,
                                      const Vector& theta, Vector& grad) {
  check_indices(s, data.size(), cv);
  const auto dim = theta.size();
  const std::size_t mm = s.indices.size();
  const double n = static_cast<double>(data.size());
  const double m = static_cast<double>(mm);
  std::vector<double> diff;
  if (!differences(spec, data, cv, s, theta, diff)) return false;
  Matrix dgrad(dim, static_cast<Eigen::Index>(mm));
  for (std::size_t j = 0; j < mm; ++j) {
    Vector g = Vector::Zero(dim);
    if (!detail::accumulate_grad_log_likelihood(spec, theta, data[s.indices[j]], 1.0, g)) return false;
    dgrad.col(static_cast<Eigen::Index>(j)) = g - cv.term_gradient(s.indices[j], theta);
  }
  grad = cv.total_gradient(theta) + (n / m) * dgrad.rowwise().sum();
  if (mm > 1 && !is_exact_cover(s, data.size())) {
    // d/dtheta of (N^2/m) * sum (x_j - xbar)^2 / (m - 1), halved.
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / m;
    const Vector mean_grad = dgrad.rowwise().mean();
    Vector var_grad = Vector::Zero(dim);
    for (std::size_t j = 0; j < mm; ++j) {
      var_grad += (diff[j] - mean) * (dgrad.col(static_cast<Eigen::Index>(j)) - mean_grad);
    }
    var_grad *= 2.0 * (n * n / m) / (m - 1.0);
    grad -= 0.5 * var_grad;
  }
  return grad.allFinite();
}

double corrected_log_likelihood(const SubsampleEstimate& est) {
  if (est.clamped) return -std::numeric_limits<double>::infinity();
  return est.log_estimate - 0.5 * est.variance;
}

double corrected_likelihood_estimator(const SubsampleEstimate& est) {
  return std::exp(corrected_log_likelihood(est));
}

SubsampledTarget::SubsampledTarget(const ModelSpec& spec, std::span<const Datum> data,
                                   const ControlVariates& cv, const SubsampleState& state,
                                   double power)
    : spec_(&spec), data_(data), cv_(&cv), state_(&state), power_(power) {
  if (!(power > 0.0 && power <= 1.0)) throw ContractError("target power must lie in (0, 1]");
}

LogLikelihood SubsampledTarget::log_density(const Vector& theta) const {
  if (!spec_->domain.contains(theta)) return {-std::numeric_limits<double>::infinity(), true};
  const auto est = difference_log_estimator(*spec_, data_, *cv_, *state_, theta);
  if (est.clamped) return {kLogLikelihoodFloor, true};
  return {power_ * corrected_log_likelihood(est), false};
}

bool SubsampledTarget::gradient(const Vector& theta, Vector& grad) const {
  if (!corrected_log_estimator_gradient(*spec_, data_, *cv_, *state_, theta, grad)) return false;
  grad *= power_;
  return true;
}

bool block_pm_index_step(SubsampleState& s, const Vector& theta, const ModelSpec& spec,
                         std::span<const Datum> data, const ControlVariates& cv, double power,
                         Rng& rng) {
  const auto [begin, end] = s.block_range(s.next_block);
  s.next_block = (s.next_block + 1) % s.blocks;
  SubsampleState proposal = s;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t j = begin; j < end; ++j) proposal.indices[j] = pick(rng);
  const double u = uniform01(rng);
  const auto current = difference_log_estimator(spec, data, cv, s, theta);
  const auto next = difference_log_estimator(spec, data, cv, proposal, theta);
  const LogLikelihood cur{power * corrected_log_likelihood(current), current.clamped};
  const LogLikelihood nxt{power * corrected_log_likelihood(next), next.clamped};
  if (u < metropolis_accept_prob(cur, nxt)) {
    s.indices = std::move(proposal.indices);
    return true;
  }
  return false;
}

EcsOutcome ecs_gibbs_step(ChainState& state, SubsampleState& s, const ModelSpec& spec,
                          std::span<const Datum> data, const ControlVariates& cv, double power,
                          const MassMatrix& mass, const HmcConfig& hmc, Rng& rng) {
  EcsOutcome out;
  out.index_accepted = block_pm_index_step(s, state.theta, spec, data, cv, power, rng);
  const SubsampledTarget target(spec, data, cv, s, power);
  state.log = target.log_density(state.theta);
  out.hmc = hmc_step(state, target, mass, hmc, rng);
  return out;
}

}  // namespace qbi
