#pragma once

#include "qbi/common.hpp"
#include "qbi/models.hpp"

#include <functional>
#include <span>

namespace qbi {

// Unnormalized log posterior with a flat prior on the domain box. Points
// outside the box, and points where some datum has zero probability, are
// reported as clamped; Metropolis tests treat them as density zero.
class LogTarget {
 public:
  virtual ~LogTarget() = default;

  virtual const DomainBox& domain() const = 0;
  virtual LogLikelihood log_density(const Vector& theta) const = 0;
  // Gradient of log_density. Returns false at a likelihood zero.
  virtual bool gradient(const Vector& theta, Vector& grad) const = 0;

  std::size_t dimension() const { return domain().dimension(); }
};

// sum_k power * log P(d_k | theta) over a contiguous data view.
class DataTarget final : public LogTarget {
 public:
  DataTarget(const ModelSpec& spec, std::span<const Datum> data, double power = 1.0);

  const DomainBox& domain() const override { return spec_->domain; }
  LogLikelihood log_density(const Vector& theta) const override;
  bool gradient(const Vector& theta, Vector& grad) const override;

  const ModelSpec& spec() const { return *spec_; }
  std::span<const Datum> data() const { return data_; }
  double power() const { return power_; }

 private:
  const ModelSpec* spec_;
  std::span<const Datum> data_;
  double power_;
};

// Arbitrary smooth target, mainly for tests of the kernels.
class FunctionTarget final : public LogTarget {
 public:
  using Density = std::function<double(const Vector&)>;
  using Gradient = std::function<Vector(const Vector&)>;

  FunctionTarget(DomainBox box, Density density, Gradient gradient);

  const DomainBox& domain() const override { return box_; }
  LogLikelihood log_density(const Vector& theta) const override;
  bool gradient(const Vector& theta, Vector& grad) const override;

 private:
  DomainBox box_;
  Density density_;
  Gradient gradient_;
};

// Sum of the clamped per-datum log-likelihoods; clamped if any term is.
LogLikelihood data_log_likelihood(const ModelSpec& spec, const Vector& theta,
                                  std::span<const Datum> data);

}  // namespace qbi
