#include "qbi/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace qbi {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct KindName {
  ModelKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {ModelKind::precession, "precession"},     {ModelKind::multi_cosine, "multi-cosine"},
    {ModelKind::t1_decay, "t1-decay"},         {ModelKind::hahn_echo, "hahn-echo"},
    {ModelKind::hahn_echo_ab, "hahn-echo-ab"}, {ModelKind::ramsey_decay, "ramsey-decay"},
    {ModelKind::ramsey, "ramsey"},             {ModelKind::ipe, "ipe"},
};

// P(1 | theta; c) together with its first and second derivatives in theta.
// grad / hess are only written when non-null.
double p1_with_derivatives(const ModelSpec& spec, const Vector& theta, const Controls& c,
                           Vector* grad, Matrix* hess) {
  const double t = c.t;
  switch (spec.kind) {
    case ModelKind::precession: {
      const double x = theta[0] * t;
      const double s = std::sin(x);
      if (grad) (*grad)[0] = t * std::sin(2.0 * x);
      if (hess) (*hess)(0, 0) = 2.0 * t * t * std::cos(2.0 * x);
      return s * s;
    }
    case ModelKind::multi_cosine: {
      const auto dim = theta.size();
      const double inv = 1.0 / static_cast<double>(dim);
      double sum = 0.0;
      if (hess) hess->setZero();
      for (Eigen::Index d = 0; d < dim; ++d) {
        const double x = theta[d] * t;
        const double ch = std::cos(0.5 * x);
        sum += ch * ch;
        if (grad) (*grad)[d] = -0.5 * t * inv * std::sin(x);
        if (hess) (*hess)(d, d) = -0.5 * t * t * inv * std::cos(x);
      }
      return sum * inv;
    }
    case ModelKind::t1_decay:
    case ModelKind::hahn_echo:
    case ModelKind::hahn_echo_ab: {
      const double tau = theta[0];
      const double e = std::exp(-t / tau);
      double a = 1.0, b = 0.0;
      if (spec.kind == ModelKind::hahn_echo) {
        a = 0.5;
        b = 0.5;
      } else if (spec.kind == ModelKind::hahn_echo_ab) {
        a = spec.amplitude;
        b = spec.offset;
      }
      const double tau2 = tau * tau;
      if (grad) (*grad)[0] = a * e * t / tau2;
      if (hess) (*hess)(0, 0) = a * e * (t * t / (tau2 * tau2) - 2.0 * t / (tau2 * tau));
      return a * e + b;
    }
    case ModelKind::ramsey_decay: {
      const double delta = theta[0];
      const double rate = theta[1];
      const double e = std::exp(-t * rate);
      const double cs = std::cos(delta * t);
      const double sn = std::sin(delta * t);
      if (grad) {
        (*grad)[0] = -0.5 * e * t * sn;
        (*grad)[1] = -0.5 * t * e * cs;
      }
      if (hess) {
        (*hess)(0, 0) = -0.5 * e * t * t * cs;
        (*hess)(0, 1) = 0.5 * t * t * e * sn;
        (*hess)(1, 0) = (*hess)(0, 1);
        (*hess)(1, 1) = 0.5 * t * t * e * cs;
      }
      return 0.5 + 0.5 * e * cs;
    }
    case ModelKind::ramsey: {
      const double x = theta[0] * t;
      if (grad) (*grad)[0] = -0.5 * t * std::sin(x);
      if (hess) (*hess)(0, 0) = -0.5 * t * t * std::cos(x);
      const double ch = std::cos(0.5 * x);
      return ch * ch;
    }
    case ModelKind::ipe: {
      const double m = static_cast<double>(c.m);
      const double x = m * theta[0] + c.theta_ctl;
      if (grad) (*grad)[0] = 0.5 * m * std::sin(x);
      if (hess) (*hess)(0, 0) = 0.5 * m * m * std::cos(x);
      const double sh = std::sin(0.5 * x);
      return sh * sh;
    }
  }
  return 0.0;
}

void check_theta(const ModelSpec& spec, const Vector& theta) {
  if (static_cast<std::size_t>(theta.size()) != spec.dimension) {
    throw ContractError("parameter dimension mismatch");
  }
  if (!spec.domain.contains(theta)) {
    std::ostringstream os;
    os << "parameter outside domain box: [" << theta.transpose() << "]";
    throw DomainError(os.str());
  }
}

double clamp_probability(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& kn : kKindNames) {
    if (kn.kind == kind) return kn.name;
  }
  return "unknown";
}

std::optional<ModelKind> parse_model_kind(std::string_view name) {
  for (const auto& kn : kKindNames) {
    if (kn.name == name) return kn.kind;
  }
  return std::nullopt;
}

bool DomainBox::contains(const Vector& theta) const {
  if (theta.size() != lower.size()) return false;
  for (Eigen::Index d = 0; d < theta.size(); ++d) {
    if (!(theta[d] >= lower[d] && theta[d] <= upper[d])) return false;
  }
  return true;
}

bool DomainBox::interior(const Vector& theta) const {
  if (theta.size() != lower.size()) return false;
  for (Eigen::Index d = 0; d < theta.size(); ++d) {
    if (!(theta[d] > lower[d] && theta[d] < upper[d])) return false;
  }
  return true;
}

Vector DomainBox::sample(Rng& rng) const {
  Vector out(lower.size());
  for (Eigen::Index d = 0; d < lower.size(); ++d) {
    out[d] = lower[d] + (upper[d] - lower[d]) * uniform01(rng);
  }
  return out;
}

std::size_t expected_dimension(ModelKind kind, std::size_t requested) {
  switch (kind) {
    case ModelKind::multi_cosine:
      return requested;
    case ModelKind::ramsey_decay:
      return 2;
    default:
      return 1;
  }
}

ModelSpec ModelSpec::make(ModelKind kind, Vector lower, Vector upper) {
  ModelSpec spec;
  spec.kind = kind;
  spec.dimension = static_cast<std::size_t>(lower.size());
  spec.domain = DomainBox{std::move(lower), std::move(upper)};
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::precession(double lower, double upper) {
  return make(ModelKind::precession, Vector::Constant(1, lower), Vector::Constant(1, upper));
}

ModelSpec ModelSpec::multi_cosine(std::size_t dim, double lower, double upper) {
  const auto n = static_cast<Eigen::Index>(dim);
  return make(ModelKind::multi_cosine, Vector::Constant(n, lower), Vector::Constant(n, upper));
}

ModelSpec ModelSpec::t1_decay(double lower, double upper) {
  return make(ModelKind::t1_decay, Vector::Constant(1, lower), Vector::Constant(1, upper));
}

ModelSpec ModelSpec::hahn_echo(double lower, double upper) {
  return make(ModelKind::hahn_echo, Vector::Constant(1, lower), Vector::Constant(1, upper));
}

ModelSpec ModelSpec::hahn_echo_ab(double lower, double upper, double amplitude, double offset) {
  ModelSpec spec;
  spec.kind = ModelKind::hahn_echo_ab;
  spec.dimension = 1;
  spec.domain = DomainBox{Vector::Constant(1, lower), Vector::Constant(1, upper)};
  spec.amplitude = amplitude;
  spec.offset = offset;
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::ramsey_decay(Vector lower, Vector upper) {
  return make(ModelKind::ramsey_decay, std::move(lower), std::move(upper));
}

ModelSpec ModelSpec::ramsey(double lower, double upper) {
  return make(ModelKind::ramsey, Vector::Constant(1, lower), Vector::Constant(1, upper));
}

ModelSpec ModelSpec::ipe() {
  return make(ModelKind::ipe, Vector::Constant(1, 0.0), Vector::Constant(1, kTwoPi));
}

void ModelSpec::validate() const {
  if (domain.lower.size() != domain.upper.size()) {
    throw ContractError("domain bounds have different lengths");
  }
  if (dimension == 0 || domain.dimension() != dimension) {
    throw ContractError("domain dimension does not match model dimension");
  }
  if (expected_dimension(kind, dimension) != dimension) {
    throw ContractError("dimension " + std::to_string(dimension) + " invalid for model " +
                        std::string(to_string(kind)));
  }
  for (Eigen::Index d = 0; d < domain.lower.size(); ++d) {
    if (!(domain.upper[d] > domain.lower[d])) {
      throw ContractError("domain box must have strictly positive volume");
    }
  }
  const bool timescale = kind == ModelKind::t1_decay || kind == ModelKind::hahn_echo ||
                         kind == ModelKind::hahn_echo_ab;
  if (timescale && domain.lower[0] < 0.0) {
    throw ContractError("decay-time domain must be non-negative");
  }
  if (kind == ModelKind::ramsey_decay && domain.lower[1] < 0.0) {
    throw ContractError("decay-rate domain must be non-negative");
  }
  if (kind == ModelKind::hahn_echo_ab) {
    if (amplitude < 0.0 || offset < 0.0 || amplitude + offset > 1.0) {
      throw ContractError("echo A, B must satisfy A >= 0, B >= 0, A + B <= 1");
    }
  }
}

std::vector<std::string> ModelSpec::parameter_names() const {
  switch (kind) {
    case ModelKind::precession:
      return {"omega"};
    case ModelKind::multi_cosine: {
      std::vector<std::string> names;
      for (std::size_t d = 0; d < dimension; ++d) names.push_back("omega_" + std::to_string(d));
      return names;
    }
    case ModelKind::t1_decay:
      return {"T1"};
    case ModelKind::hahn_echo:
    case ModelKind::hahn_echo_ab:
      return {"T2"};
    case ModelKind::ramsey_decay:
      return {"delta", "gamma2"};
    case ModelKind::ramsey:
      return {"delta"};
    case ModelKind::ipe:
      return {"phi"};
  }
  return {};
}

void validate_controls(const ModelSpec& spec, const Controls& c) {
  if (!(c.t >= 0.0) || !std::isfinite(c.t)) throw ControlError("evolution time must be >= 0");
  if (spec.kind == ModelKind::ipe) {
    if (c.m < 1) throw ControlError("IPE repetition count must be >= 1");
    if (!(c.theta_ctl >= 0.0 && c.theta_ctl < kTwoPi)) {
      throw ControlError("IPE rotation angle must lie in [0, 2 pi)");
    }
  }
}

double likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  check_theta(spec, theta);
  validate_controls(spec, d.controls);
  if (d.outcome != 0 && d.outcome != 1) throw ContractError("outcome must be 0 or 1");
  return detail::datum_probability(spec, theta, d);
}

LogLikelihood log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  check_theta(spec, theta);
  validate_controls(spec, d.controls);
  if (d.outcome != 0 && d.outcome != 1) throw ContractError("outcome must be 0 or 1");
  return detail::datum_log_likelihood(spec, theta, d);
}

Vector grad_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  check_theta(spec, theta);
  validate_controls(spec, d.controls);
  Vector grad = Vector::Zero(theta.size());
  if (!detail::accumulate_grad_log_likelihood(spec, theta, d, 1.0, grad)) {
    throw SingularityError("gradient requested at a zero of the likelihood");
  }
  return grad;
}

Matrix hessian_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  check_theta(spec, theta);
  validate_controls(spec, d.controls);
  double value = 0.0;
  Vector grad;
  Matrix hess;
  if (!detail::log_likelihood_derivatives(spec, theta, d, value, grad, hess)) {
    throw SingularityError("Hessian requested at a zero of the likelihood");
  }
  return hess;
}

Datum simulate_outcome(const ModelSpec& spec, const Vector& theta_true, const Controls& c,
                       Rng& rng) {
  check_theta(spec, theta_true);
  validate_controls(spec, c);
  const double p1 = clamp_probability(detail::probability_one(spec, theta_true, c));
  Datum d;
  d.controls = c;
  d.outcome = std::bernoulli_distribution(p1)(rng) ? 1 : 0;
  return d;
}

std::vector<Vector> mode_set(const ModelSpec& spec, const Vector& theta_true) {
  if (spec.kind != ModelKind::multi_cosine) {
    throw ContractError("mode_set is defined for the multi-cosine model only");
  }
  if (static_cast<std::size_t>(theta_true.size()) != spec.dimension) {
    throw ContractError("parameter dimension mismatch");
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(theta_true.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Vector> modes;
  do {
    Vector mode(theta_true.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      mode[static_cast<Eigen::Index>(i)] = theta_true[order[i]];
    }
    modes.push_back(std::move(mode));
  } while (std::next_permutation(order.begin(), order.end()));
  return modes;
}

EchoCalibration estimate_echo_ab(double frequency_at_zero, double frequency_at_long_time) {
  EchoCalibration cal{frequency_at_zero - frequency_at_long_time, frequency_at_long_time};
  cal.amplitude = std::clamp(cal.amplitude, 0.0, 1.0);
  cal.offset = std::clamp(cal.offset, 0.0, 1.0 - cal.amplitude);
  return cal;
}

namespace detail {

double probability_one(const ModelSpec& spec, const Vector& theta, const Controls& c) {
  return p1_with_derivatives(spec, theta, c, nullptr, nullptr);
}

double datum_probability(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  const double p1 = clamp_probability(probability_one(spec, theta, d.controls));
  return d.outcome == 1 ? p1 : 1.0 - p1;
}

LogLikelihood datum_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d) {
  const double p = datum_probability(spec, theta, d);
  if (p <= kZeroProbability) return {kLogLikelihoodFloor, true};
  return {std::log(p), false};
}

bool accumulate_grad_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d,
                                    double scale, Vector& grad) {
  Vector dp(theta.size());
  double p = p1_with_derivatives(spec, theta, d.controls, &dp, nullptr);
  if (d.outcome == 0) {
    p = 1.0 - p;
    dp = -dp;
  }
  if (!(p > kZeroProbability)) return false;
  grad.noalias() += (scale / p) * dp;
  return true;
}

bool log_likelihood_derivatives(const ModelSpec& spec, const Vector& theta, const Datum& d,
                                double& value, Vector& grad, Matrix& hessian) {
  const auto n = theta.size();
  Vector dp(n);
  Matrix d2p = Matrix::Zero(n, n);
  double p = p1_with_derivatives(spec, theta, d.controls, &dp, &d2p);
  if (d.outcome == 0) {
    p = 1.0 - p;
    dp = -dp;
    d2p = -d2p;
  }
  if (!(p > kZeroProbability)) return false;
  value = std::log(p);
  grad = dp / p;
  hessian = d2p / p - grad * grad.transpose();
  return true;
}

}  // namespace detail

}  // namespace qbi
