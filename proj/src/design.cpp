#include "qbi/design.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qbi {

namespace {

struct HeuristicName {
  HeuristicKind kind;
  std::string_view name;
};
constexpr HeuristicName kHeuristicNames[] = {
    {HeuristicKind::fixed_grid, "fixed-grid"},
    {HeuristicKind::random, "random"},
    {HeuristicKind::incremental_random, "incremental-random"},
    {HeuristicKind::exponential, "exponential"},
    {HeuristicKind::sigma_inverse, "sigma-inverse"},
    {HeuristicKind::pgh, "pgh"},
    {HeuristicKind::occupation, "occupation"},
    {HeuristicKind::greedy_variance, "greedy-variance"},
};

constexpr int kPghRedraws = 100;

// Weighted variance trace after reweighting by `factor` (not normalized).
double reweighted_variance(const WeightedEnsemble& e, const Vector& factor, double& mass) {
  const Vector w = e.weights.cwiseProduct(factor);
  mass = w.sum();
  if (!(mass > 0.0)) return 0.0;
  const Vector mean = e.particles * w / mass;
  const Matrix centered = e.particles.colwise() - mean;
  return (centered.array().square().matrix() * w).sum() / mass;
}

}  // namespace

std::string_view to_string(HeuristicKind kind) {
  for (const auto& h : kHeuristicNames) {
    if (h.kind == kind) return h.name;
  }
  return "unknown";
}

std::optional<HeuristicKind> parse_heuristic_kind(std::string_view name) {
  for (const auto& h : kHeuristicNames) {
    if (h.name == name) return h.kind;
  }
  return std::nullopt;
}

void HeuristicConfig::validate() const {
  if (!(increment > 0.0 && growth > 0.0 && c1 > 0.0 && c2 > 0.0)) {
    throw ContractError("heuristic constants must be positive");
  }
  if (base < 0.0) throw ContractError("occupation base must be positive (0 selects the default)");
  if (bins < 1) throw ContractError("occupation grid needs at least one bin");
  if (candidates < 1) throw ContractError("greedy design needs at least one candidate");
  if (!(candidate_spread >= 0.0)) throw ContractError("candidate spread must be >= 0");
  if (!(t_max > 0.0)) throw ContractError("time cap must be positive");
}

bool HeuristicConfig::adaptive() const {
  return kind == HeuristicKind::sigma_inverse || kind == HeuristicKind::pgh ||
         kind == HeuristicKind::occupation || kind == HeuristicKind::greedy_variance;
}

double sigma_inverse_time(const Moments& m) {
  const double sigma = m.std.size() ? m.std.maxCoeff() : 0.0;
  if (!(sigma > 0.0)) throw DegenerateUncertaintyError("cannot invert a zero standard deviation");
  return 1.0 / sigma;
}

PghResult pgh_time(const WeightedEnsemble& e, Rng& rng) {
  if (e.size() < 2) throw ContractError("PGH needs at least two particles");
  for (int attempt = 0; attempt < kPghRedraws; ++attempt) {
    const auto idx = multinomial_indices(e.weights, 2, rng);
    const double dist = (e.particle(idx[0]) - e.particle(idx[1])).norm();
    if (dist > 0.0) return {1.0 / dist, false};
  }
  return {sigma_inverse_time(moments(e)), true};
}

double occupation_time(const WeightedEnsemble& e, double ess_value, const DomainBox& box,
                       double base, int bins) {
  const double rate = occupation_rate(e, box, bins);
  const double m = static_cast<double>(e.size());
  if (!(ess_value >= 1.0 && ess_value <= m + 1e-9)) throw ContractError("ESS must lie in [1, M]");
  return base / (rate * ess_value / m);
}

double expected_posterior_variance(const WeightedEnsemble& e, const ModelSpec& spec, const Controls& c) {
  Vector p1(static_cast<Eigen::Index>(e.size()));
  for (std::size_t i = 0; i < e.size(); ++i) {
    p1[static_cast<Eigen::Index>(i)] =
        std::clamp(detail::probability_one(spec, e.particle(i), c), 0.0, 1.0);
  }
  const double total = e.weights.sum();
  double mass1 = 0.0;
  double mass0 = 0.0;
  const double v1 = reweighted_variance(e, p1, mass1);
  const double v0 = reweighted_variance(e, Vector::Ones(p1.size()) - p1, mass0);
  return (mass1 * v1 + mass0 * v0) / total;
}

GreedyChoice greedy_variance_time(const WeightedEnsemble& e, const ModelSpec& spec,
                                  std::span<const double> candidates) {
  if (candidates.empty()) throw ContractError("greedy design needs candidates");
  GreedyChoice out;
  out.candidates.assign(candidates.begin(), candidates.end());
  out.expected_variance.reserve(candidates.size());
  std::size_t best = 0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    Controls c;
    c.t = candidates[j];
    validate_controls(spec, c);
    out.expected_variance.push_back(expected_posterior_variance(e, spec, c));
    const double v = out.expected_variance[j];
    const double vb = out.expected_variance[best];
    if (v < vb || (v == vb && candidates[j] < candidates[best])) best = j;
  }
  out.t = candidates[best];
  return out;
}

std::vector<double> greedy_candidates(double center, std::size_t count, double spread, Rng& rng) {
  std::vector<double> out(count);
  for (auto& t : out) t = center * std::exp(spread * standard_normal(rng));
  return out;
}

double schedule_time(const HeuristicConfig& cfg, std::size_t k, Rng& rng) {
  if (k < 1) throw ContractError("schedule index starts at 1");
  const double kk = static_cast<double>(k);
  // Uniform on (0, hi]: 1 - U with U in [0, 1).
  auto uniform_open_closed = [&rng](double hi) { return hi * (1.0 - uniform01(rng)); };
  double t = 0.0;
  switch (cfg.kind) {
    case HeuristicKind::fixed_grid:
      t = kk * cfg.increment;
      break;
    case HeuristicKind::exponential:
      t = std::pow(cfg.growth, kk);
      break;
    case HeuristicKind::random:
      if (!std::isfinite(cfg.t_max)) throw ContractError("random schedule needs a finite t_max");
      t = uniform_open_closed(cfg.t_max);
      break;
    case HeuristicKind::incremental_random:
      t = uniform_open_closed(cfg.c1 * (std::floor(kk / cfg.c2) + 1.0));
      break;
    default:
      throw ContractError("heuristic " + std::string(to_string(cfg.kind)) + " is adaptive");
  }
  return std::min(t, cfg.t_max);
}

double next_time(const HeuristicConfig& cfg, std::size_t k, const WeightedEnsemble& e,
                 const ModelSpec& spec, double prior_std, Rng& rng) {
  double t = 0.0;
  switch (cfg.kind) {
    case HeuristicKind::sigma_inverse:
      t = sigma_inverse_time(moments(e));
      break;
    case HeuristicKind::pgh:
      t = pgh_time(e, rng).t;
      break;
    case HeuristicKind::occupation: {
      const double base = cfg.base > 0.0 ? cfg.base : 1.0 / prior_std;
      t = occupation_time(e, ess(e), spec.domain, base, cfg.bins);
      break;
    }
    case HeuristicKind::greedy_variance: {
      const auto cands =
          greedy_candidates(sigma_inverse_time(moments(e)), cfg.candidates, cfg.candidate_spread, rng);
      std::vector<double> capped(cands.size());
      std::transform(cands.begin(), cands.end(), capped.begin(),
                     [&](double c) { return std::min(c, cfg.t_max); });
      t = greedy_variance_time(e, spec, capped).t;
      break;
    }
    default:
      return schedule_time(cfg, k, rng);
  }
  return std::min(t, cfg.t_max);
}

Controls ipe_controls(const Moments& m, Rng& rng, int max_repetitions) {
  const double sigma = m.std.size() ? m.std[0] : 0.0;
  if (!(sigma > 0.0)) throw DegenerateUncertaintyError("cannot choose IPE controls at zero uncertainty");
  const double reps = std::min(std::ceil(1.25 / sigma), static_cast<double>(max_repetitions));
  Controls c;
  c.m = std::max(1, static_cast<int>(reps));
  const double theta_w = m.mean[0] + sigma * standard_normal(rng);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double angle = std::fmod(-c.m * theta_w, two_pi);
  if (angle < 0.0) angle += two_pi;
  if (angle >= two_pi) angle = 0.0;
  c.theta_ctl = angle;
  return c;
}

}  // namespace qbi
