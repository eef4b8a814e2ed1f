#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qbi {

// Linear-interpolation quantile (the "type 7" rule); q in [0, 1].
double quantile(std::vector<double> values, double q);
double median(std::vector<double> values);

struct Quartiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;

  double iqr() const { return q75 - q25; }
};
Quartiles quartiles(const std::vector<double>& values);

struct ScalingFit {
  double exponent = 0.0;
  double intercept = 0.0;
  double standard_error = 0.0;
  double ci_low = 0.0;   // 95% Student-t interval on the exponent
  double ci_high = 0.0;
  std::size_t points = 0;
};

// Least-squares slope of log(sigma) against log(time). Needs at least five
// points, all strictly positive; throws std::invalid_argument otherwise.
ScalingFit scaling_fit(std::span<const double> time, std::span<const double> sigma);

// One-sided sign test: P(X >= successes) for X ~ Binomial(trials, 1/2).
double sign_test_p_value(std::size_t successes, std::size_t trials);

}  // namespace qbi
