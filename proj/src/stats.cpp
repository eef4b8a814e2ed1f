#include "qbi/stats.hpp"

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qbi {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

Quartiles quartiles(const std::vector<double>& values) {
  return {quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75)};
}

ScalingFit scaling_fit(std::span<const double> time, std::span<const double> sigma) {
  if (time.size() != sigma.size()) throw std::invalid_argument("scaling fit: length mismatch");
  if (time.size() < 5) throw std::invalid_argument("scaling fit needs at least 5 points");
  const std::size_t n = time.size();
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(time[i] > 0.0) || !(sigma[i] > 0.0)) {
      throw std::invalid_argument("scaling fit needs strictly positive values");
    }
    x[i] = std::log(time[i]);
    y[i] = std::log(sigma[i]);
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("scaling fit needs distinct times");
  ScalingFit fit;
  fit.points = n;
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.exponent * x[i];
    rss += r * r;
  }
  const double dof = static_cast<double>(n - 2);
  fit.standard_error = std::sqrt(rss / dof / sxx);
  const boost::math::students_t dist(dof);
  const double tq = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.ci_low = fit.exponent - tq * fit.standard_error;
  fit.ci_high = fit.exponent + tq * fit.standard_error;
  return fit;
}

double sign_test_p_value(std::size_t successes, std::size_t trials) {
  if (successes > trials) throw std::invalid_argument("more successes than trials");
  if (successes == 0) return 1.0;
  const boost::math::binomial dist(static_cast<double>(trials), 0.5);
  return boost::math::cdf(boost::math::complement(dist, static_cast<double>(successes - 1)));
}

}  // namespace qbi
