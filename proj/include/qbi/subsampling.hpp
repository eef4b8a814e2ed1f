#pragma once

#include "qbi/common.hpp"
#include "qbi/kernels.hpp"
#include "qbi/models.hpp"
#include "qbi/random.hpp"
#include "qbi/target.hpp"

#include <span>
#include <vector>

namespace qbi {

/// Second-order Taylor surrogates q_k of the per-datum log-likelihoods around a
/// reference point, with their full-data sums.
struct ControlVariates {
  Vector reference;
  std::vector<double> values;   // l_k(theta*)
  Matrix gradients;             // dim x N
  std::vector<Matrix> hessians; // N matrices, dim x dim
  double value_sum = 0.0;
  Vector gradient_sum;
  Matrix hessian_sum;

  std::size_t size() const { return values.size(); }
  double term(std::size_t k, const Vector& theta) const;
  Vector term_gradient(std::size_t k, const Vector& theta) const;
  double total(const Vector& theta) const;
  Vector total_gradient(const Vector& theta) const;
};

/// Throws SingularityError if any datum is at a likelihood zero at theta*.
ControlVariates build_control_variates(const ModelSpec& spec, std::span<const Datum> data,
                                       const Vector& reference);

/// m indices with replacement, split into B contiguous blocks whose sizes differ
/// by at most one. Blocks are refreshed cyclically.
struct SubsampleState {
  std::vector<std::size_t> indices;
  std::size_t blocks = 1;
  std::size_t next_block = 0;

  std::size_t size() const { return indices.size(); }
  std::pair<std::size_t, std::size_t> block_range(std::size_t b) const;

  static SubsampleState random(std::size_t n, std::size_t m, std::size_t blocks, Rng& rng);
  /// Indices 0..n-1 once each, in order.
  static SubsampleState exact_cover(std::size_t n, std::size_t blocks = 1);
};

/// True when the indices are a permutation of 0..n-1.
bool is_exact_cover(const SubsampleState& s, std::size_t n);

struct SubsampleEstimate {
  double log_estimate = 0.0;  // l_hat
  double variance = 0.0;      // sigma_hat^2
  bool clamped = false;
};

/// Difference estimator l_hat = sum_k q_k + (N/m) sum_j (l_uj - q_uj) with
/// variance (N^2/m) s^2 of the differences. An exact cover has variance 0.
SubsampleEstimate difference_log_estimator(const ModelSpec& spec, std::span<const Datum> data,
                                           const ControlVariates& cv, const SubsampleState& s,
                                           const Vector& theta);

/// Gradient of l_hat - sigma_hat^2 / 2 in theta. Returns false at a zero.
bool corrected_log_estimator_gradient(const ModelSpec& spec, std::span<const Datum> data,
                                      const ControlVariates& cv, const SubsampleState& s,
                                      const Vector& theta, Vector& grad);

/// log L_hat = l_hat - sigma_hat^2 / 2; -inf for a clamped estimate.
double corrected_log_likelihood(const SubsampleEstimate& est);
/// L_hat = exp(l_hat - sigma_hat^2 / 2).
double corrected_likelihood_estimator(const SubsampleEstimate& est);

/// power * log L_hat(theta, u) with a flat prior on the box, for fixed indices.
class SubsampledTarget final : public LogTarget {
 public:
  SubsampledTarget(const ModelSpec& spec, std::span<const Datum> data, const ControlVariates& cv,
                   const SubsampleState& state, double power = 1.0);

  const DomainBox& domain() const override { return spec_->domain; }
  LogLikelihood log_density(const Vector& theta) const override;
  bool gradient(const Vector& theta, Vector& grad) const override;

 private:
  const ModelSpec* spec_;
  std::span<const Datum> data_;
  const ControlVariates* cv_;
  const SubsampleState* state_;
  double power_;
};

/// Refreshes the next block with uniform indices and accepts with
/// min(1, (L_hat(theta, u') / L_hat(theta, u))^power).
bool block_pm_index_step(SubsampleState& s, const Vector& theta, const ModelSpec& spec,
                         std::span<const Datum> data, const ControlVariates& cv, double power,
                         Rng& rng);

struct EcsOutcome {
  bool index_accepted = false;
  StepOutcome hmc;
};

/// Index update at fixed theta, then one HMC step on the fixed-index target.
EcsOutcome ecs_gibbs_step(ChainState& state, SubsampleState& s, const ModelSpec& spec,
                          std::span<const Datum> data, const ControlVariates& cv, double power,
                          const MassMatrix& mass, const HmcConfig& hmc, Rng& rng);

}  // namespace qbi
