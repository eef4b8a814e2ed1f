#include "qbi/target.hpp"

#include <cmath>
#include <limits>

namespace qbi {

namespace {

constexpr LogLikelihood kOutside{-std::numeric_limits<double>::infinity(), true};

}  // namespace

LogLikelihood data_log_likelihood(const ModelSpec& spec, const Vector& theta,
                                  std::span<const Datum> data) {
  LogLikelihood total;
  for (const auto& d : data) {
    const auto ll = detail::datum_log_likelihood(spec, theta, d);
    total.value += ll.value;
    total.clamped = total.clamped || ll.clamped;
  }
  return total;
}

DataTarget::DataTarget(const ModelSpec& spec, std::span<const Datum> data, double power)
    : spec_(&spec), data_(data), power_(power) {
  if (!(power > 0.0 && power <= 1.0)) throw ContractError("target power must lie in (0, 1]");
}

LogLikelihood DataTarget::log_density(const Vector& theta) const {
  if (!spec_->domain.contains(theta)) return kOutside;
  auto ll = data_log_likelihood(*spec_, theta, data_);
  ll.value *= power_;
  return ll;
}

bool DataTarget::gradient(const Vector& theta, Vector& grad) const {
  grad = Vector::Zero(theta.size());
  for (const auto& d : data_) {
    if (!detail::accumulate_grad_log_likelihood(*spec_, theta, d, power_, grad)) return false;
  }
  return grad.allFinite();
}

FunctionTarget::FunctionTarget(DomainBox box, Density density, Gradient gradient)
    : box_(std::move(box)), density_(std::move(density)), gradient_(std::move(gradient)) {}

LogLikelihood FunctionTarget::log_density(const Vector& theta) const {
  if (!box_.contains(theta)) return kOutside;
  const double v = density_(theta);
  if (!std::isfinite(v)) return kOutside;
  return {v, false};
}

bool FunctionTarget::gradient(const Vector& theta, Vector& grad) const {
  grad = gradient_(theta);
  return grad.allFinite();
}

}  // namespace qbi
