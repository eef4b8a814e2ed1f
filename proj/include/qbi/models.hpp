#pragma once

#include "qbi/common.hpp"
#include "qbi/random.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qbi {

/// Likelihood families for binary-outcome qubit experiments.
///
/// All models report P(outcome = 1 | theta; controls):
///   precession     sin^2(omega t)
///   multi_cosine   (1/dim) sum_d cos^2(omega_d t / 2)
///   t1_decay       exp(-t / T1)
///   hahn_echo      1/2 + exp(-t / T2) / 2
///   hahn_echo_ab   A exp(-t / T2) + B        (A, B fixed hyperparameters)
///   ramsey_decay   exp(-t g) cos^2(delta t / 2) + (1 - exp(-t g)) / 2,  theta = (delta, g = 1/T2*)
///   ramsey         cos^2(delta t / 2)        (echoed Ramsey, decoherence refocused)
///   ipe            sin^2((m phi + theta_ctl) / 2), i.e. P(0) = cos^2((m phi + theta_ctl) / 2)
enum class ModelKind {
  precession,
  multi_cosine,
  t1_decay,
  hahn_echo,
  hahn_echo_ab,
  ramsey_decay,
  ramsey,
  ipe,
};

std::string_view to_string(ModelKind kind);
std::optional<ModelKind> parse_model_kind(std::string_view name);

struct DomainBox {
  Vector lower;
  Vector upper;

  std::size_t dimension() const { return static_cast<std::size_t>(lower.size()); }
  Vector width() const { return upper - lower; }
  double diameter() const { return width().norm(); }
  double volume() const { return width().prod(); }
  bool contains(const Vector& theta) const;
  bool interior(const Vector& theta) const;
  Vector sample(Rng& rng) const;
};

struct Controls {
  double t = 0.0;         // evolution time (us)
  int m = 1;              // IPE repetition count
  double theta_ctl = 0.0; // IPE rotation angle in [0, 2 pi)
};

struct Datum {
  Controls controls;
  int outcome = 0;

  friend bool operator==(const Datum&, const Datum&) = default;
};

using Dataset = std::vector<Datum>;

inline bool operator==(const Controls& a, const Controls& b) {
  return a.t == b.t && a.m == b.m && a.theta_ctl == b.theta_ctl;
}

struct ModelSpec {
  ModelKind kind = ModelKind::precession;
  std::size_t dimension = 1;
  DomainBox domain;
  double amplitude = 0.5;  // A of hahn_echo_ab
  double offset = 0.5;     // B of hahn_echo_ab

  static ModelSpec make(ModelKind kind, Vector lower, Vector upper);
  static ModelSpec precession(double lower, double upper);
  static ModelSpec multi_cosine(std::size_t dim, double lower = 0.0, double upper = 1.0);
  static ModelSpec t1_decay(double lower, double upper);
  static ModelSpec hahn_echo(double lower, double upper);
  static ModelSpec hahn_echo_ab(double lower, double upper, double amplitude, double offset);
  static ModelSpec ramsey_decay(Vector lower, Vector upper);
  static ModelSpec ramsey(double lower, double upper);
  static ModelSpec ipe();

  // Throws ContractError on an inconsistent spec.
  void validate() const;
  std::vector<std::string> parameter_names() const;
};

std::size_t expected_dimension(ModelKind kind, std::size_t requested);

/// Per-datum probabilities at or below this value are treated as exact zeros.
inline constexpr double kZeroProbability = 1e-20;
/// Log-likelihood reported for zero-probability outcomes.
inline constexpr double kLogLikelihoodFloor = -1e9;

struct LogLikelihood {
  double value = 0.0;
  bool clamped = false;
};

void validate_controls(const ModelSpec& spec, const Controls& c);

double likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d);
LogLikelihood log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d);

// Throws SingularityError when the datum's likelihood is at (or numerically at) zero.
Vector grad_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d);
Matrix hessian_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d);

Datum simulate_outcome(const ModelSpec& spec, const Vector& theta_true, const Controls& c, Rng& rng);

/// All coordinate permutations of the multi-cosine ground truth (dim! points).
std::vector<Vector> mode_set(const ModelSpec& spec, const Vector& theta_true);

/// A and B of the echo model from calibration frequencies: P(1|t=0) = A + B, P(1|t->inf) = B.
struct EchoCalibration {
  double amplitude;
  double offset;
};
EchoCalibration estimate_echo_ab(double frequency_at_zero, double frequency_at_long_time);

namespace detail {

// Unchecked hot-path evaluations used by samplers. theta must be in the domain.
double probability_one(const ModelSpec& spec, const Vector& theta, const Controls& c);
double datum_probability(const ModelSpec& spec, const Vector& theta, const Datum& d);
LogLikelihood datum_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d);

// Adds the gradient of log P(d | theta) scaled by `scale` into `grad`.
// Returns false (leaving grad partially updated) at a likelihood zero.
bool accumulate_grad_log_likelihood(const ModelSpec& spec, const Vector& theta, const Datum& d,
                                    double scale, Vector& grad);

// Value, gradient and Hessian of log P(d | theta). Returns false at a zero.
bool log_likelihood_derivatives(const ModelSpec& spec, const Vector& theta, const Datum& d,
                                double& value, Vector& grad, Matrix& hessian);

}  // namespace detail

}  // namespace qbi
