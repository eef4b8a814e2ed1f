#include "qbi/smc.hpp"

#include "qbi/parallel.hpp"
#include "qbi/random.hpp"
#include "qbi/target.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qbi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Stream tags; each random decision of a run draws from its own keyed stream.
enum StreamTag : std::uint64_t {
  kPriorTag = 1,
  kResampleTag = 2,
  kMoveTag = 3,
  kOrderTag = 4,
  kSubsampleTag = 5,
  kWarmupTag = 6,
};

struct KernelName {
  KernelKind kind;
  std::string_view name;
};
constexpr KernelName kKernelNames[] = {
    {KernelKind::liu_west, "lw"},   {KernelKind::rwm, "rwm"},     {KernelKind::hmc, "hmc"},
    {KernelKind::hybrid, "hybrid"}, {KernelKind::sghmc, "sghmc"}, {KernelKind::ecs, "ecs"},
};

struct OrderingName {
  Ordering ordering;
  std::string_view name;
};
constexpr OrderingName kOrderingNames[] = {
    {Ordering::as_given, "as-given"},
    {Ordering::ascending, "ascending"},
    {Ordering::descending, "descending"},
    {Ordering::random, "random"},
};

bool needs_mass(KernelKind k) {
  return k == KernelKind::hmc || k == KernelKind::hybrid || k == KernelKind::sghmc ||
         k == KernelKind::ecs;
}

bool adapts_rwm(KernelKind k) { return k == KernelKind::rwm || k == KernelKind::hybrid; }

// Control variates for the ECS kernel. The reference falls back to the
// heaviest particle when some datum has zero likelihood at the mean.
ControlVariates control_variates_at(const ModelSpec& spec, std::span<const Datum> data,
                                    const WeightedEnsemble& e, const Vector& preferred) {
  try {
    return build_control_variates(spec, data, preferred);
  } catch (const SingularityError&) {
    Eigen::Index best = 0;
    e.weights.maxCoeff(&best);
    return build_control_variates(spec, data, e.particles.col(best));
  }
}

std::vector<SubsampleState> fresh_subsamples(std::size_t count, std::size_t n, const EcsConfig& ecs,
                                             std::uint64_t seed, std::uint64_t iteration) {
  std::vector<SubsampleState> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (n <= ecs.subsample) {
      out.push_back(SubsampleState::exact_cover(n, std::min(ecs.blocks, n)));
    } else {
      Rng rng = make_stream(seed, {iteration, i, kSubsampleTag});
      out.push_back(SubsampleState::random(n, ecs.subsample, ecs.blocks, rng));
    }
  }
  return out;
}

template <class T>
std::vector<T> gather(const std::vector<T>& src, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(src[i]);
  return out;
}

WeightedEnsemble gather(const WeightedEnsemble& e, const std::vector<std::size_t>& idx) {
  Matrix out(e.particles.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = e.particles.col(static_cast<Eigen::Index>(idx[i]));
  }
  return WeightedEnsemble::uniform(std::move(out));
}

void fill_moments(TraceRecord& rec, const WeightedEnsemble& e) {
  const auto m = moments(e);
  rec.mean = m.mean;
  rec.std = m.std;
}

void check_initial(const ModelSpec& spec, const WeightedEnsemble& e) {
  if (e.size() < 2) throw ContractError("an ensemble needs at least two particles");
  if (e.dimension() != spec.dimension) throw ContractError("ensemble dimension does not match the model");
  if (!is_normalized(e)) throw ContractError("initial ensemble must be normalized");
  for (std::size_t i = 0; i < e.size(); ++i) {
    if (!spec.domain.contains(e.particle(i))) throw DomainError("initial particle outside the domain box");
  }
}

}  // namespace

std::string_view to_string(KernelKind kind) {
  for (const auto& k : kKernelNames) {
    if (k.kind == kind) return k.name;
  }
  return "unknown";
}

std::optional<KernelKind> parse_kernel_kind(std::string_view name) {
  for (const auto& k : kKernelNames) {
    if (k.name == name) return k.kind;
  }
  if (name == "liu-west") return KernelKind::liu_west;
  return std::nullopt;
}

std::string_view to_string(Ordering ordering) {
  for (const auto& o : kOrderingNames) {
    if (o.ordering == ordering) return o.name;
  }
  return "unknown";
}

std::optional<Ordering> parse_ordering(std::string_view name) {
  for (const auto& o : kOrderingNames) {
    if (o.name == name) return o.ordering;
  }
  return std::nullopt;
}

void EcsConfig::validate() const {
  if (subsample < 2) throw ContractError("ECS subsample size must be >= 2");
  if (blocks < 1 || blocks > subsample) throw ContractError("ECS block count must lie in [1, m]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ContractError("ECS warm-up fraction must lie in [0, 1)");
  }
}

void KernelConfig::validate() const {
  switch (kind) {
    case KernelKind::liu_west:
      liu_west.validate();
      break;
    case KernelKind::rwm:
      rwm.validate();
      break;
    case KernelKind::hmc:
      hmc.validate();
      break;
    case KernelKind::hybrid:
      rwm.validate();
      hmc.validate();
      hybrid.validate();
      break;
    case KernelKind::sghmc:
      sghmc.validate();
      break;
    case KernelKind::ecs:
      hmc.validate();
      ecs.validate();
      break;
  }
}

void SmcConfig::validate() const {
  if (particles < 2) throw ContractError("SMC needs at least two particles");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ContractError("resampling threshold must lie in (0, 1]");
  if (moves < 1) throw ContractError("moves per resample must be >= 1");
  if (workers < 1) throw ContractError("worker count must be >= 1");
  kernel.validate();
}

double MoveStats::acceptance() const {
  return proposals ? static_cast<double>(accepted) / static_cast<double>(proposals) : kNaN;
}

double MoveStats::hmc_fraction() const {
  return proposals ? static_cast<double>(hmc_only_steps) / static_cast<double>(proposals) : kNaN;
}

double MoveStats::hmc_acceptance() const {
  return hmc_only_steps ? hmc_only_accept_sum / static_cast<double>(hmc_only_steps) : kNaN;
}

void MoveStats::merge(const MoveStats& o) {
  proposals += o.proposals;
  accepted += o.accepted;
  divergent += o.divergent;
  hmc_only_steps += o.hmc_only_steps;
  hmc_only_accept_sum += o.hmc_only_accept_sum;
  rwm_fallbacks += o.rwm_fallbacks;
  index_proposals += o.index_proposals;
  index_accepted += o.index_accepted;
}

double evidence(const RunTrace& trace) { return std::exp(trace.log_evidence); }

Dataset order_dataset(const Dataset& data, Ordering ordering, std::uint64_t seed) {
  Dataset out = data;
  switch (ordering) {
    case Ordering::as_given:
      break;
    case Ordering::ascending:
      std::stable_sort(out.begin(), out.end(),
                       [](const Datum& a, const Datum& b) { return a.controls.t < b.controls.t; });
      break;
    case Ordering::descending:
      std::stable_sort(out.begin(), out.end(),
                       [](const Datum& a, const Datum& b) { return a.controls.t > b.controls.t; });
      break;
    case Ordering::random: {
      Rng rng = make_stream(seed, {kOrderTag});
      std::shuffle(out.begin(), out.end(), rng);
      break;
    }
  }
  return out;
}

MoveStats move_particles(WeightedEnsemble& e, const MoveTarget& target, const KernelConfig& kernel,
                         KernelTuning& tuning, int moves, std::uint64_t seed, std::uint64_t iteration,
                         std::size_t workers) {
  MoveStats total;
  if (kernel.kind == KernelKind::liu_west) return total;
  if (!target.spec) throw ContractError("move target has no model");
  if (kernel.kind == KernelKind::ecs && (!target.cv || !target.subsamples)) {
    throw ContractError("ECS moves need control variates and subsample states");
  }
  const ModelSpec& spec = *target.spec;
  const auto mom = moments(e);
  Matrix rwm_factor;
  MassMatrix mass;
  if (adapts_rwm(kernel.kind)) rwm_factor = rwm_proposal_factor(mom.covariance, tuning.rwm_scale);
  if (needs_mass(kernel.kind)) mass = MassMatrix::from_covariance(mom.covariance);

  std::vector<MoveStats> per(e.size());
  parallel_for(e.size(), workers, [&](std::size_t i) {
    Rng rng = make_stream(seed, {iteration, i, kMoveTag});
    MoveStats& st = per[i];
    Vector theta = e.particle(i);
    if (kernel.kind == KernelKind::sghmc) {
      for (int m = 0; m < moves; ++m) {
        const auto out = sghmc_step(theta, spec, target.data, target.power, mass, kernel.sghmc, rng);
        ++st.proposals;
        if (out.divergent) {
          ++st.divergent;
        } else {
          ++st.accepted;
        }
      }
    } else if (kernel.kind == KernelKind::ecs) {
      SubsampleState& sub = (*target.subsamples)[i];
      ChainState state{theta, {}};
      for (int m = 0; m < moves; ++m) {
        const auto out = ecs_gibbs_step(state, sub, spec, target.data, *target.cv, target.power, mass,
                                        kernel.hmc, rng);
        ++st.proposals;
        ++st.index_proposals;
        if (out.index_accepted) ++st.index_accepted;
        if (out.hmc.accepted) ++st.accepted;
        if (out.hmc.divergent) ++st.divergent;
      }
      theta = state.theta;
    } else {
      const DataTarget data_target(spec, target.data, target.power);
      ChainState state = make_state(data_target, theta);
      for (int m = 0; m < moves; ++m) {
        ++st.proposals;
        if (kernel.kind == KernelKind::rwm) {
          if (rwm_step(state, data_target, rwm_factor, rng).accepted) ++st.accepted;
        } else if (kernel.kind == KernelKind::hmc) {
          const auto out = hmc_step(state, data_target, mass, kernel.hmc, rng);
          if (out.accepted) ++st.accepted;
          if (out.divergent) ++st.divergent;
        } else {
          const auto out = hybrid_step(state, data_target, mass, kernel.hmc, rwm_factor, kernel.hybrid, rng);
          if (out.accepted()) ++st.accepted;
          if (out.hmc.divergent) ++st.divergent;
          if (out.rwm_applied) {
            ++st.rwm_fallbacks;
          } else {
            ++st.hmc_only_steps;
            st.hmc_only_accept_sum += out.hmc.accept_prob;
          }
        }
      }
      theta = state.theta;
    }
    e.particles.col(static_cast<Eigen::Index>(i)) = theta;
  });
  for (const auto& st : per) total.merge(st);
  if (adapts_rwm(kernel.kind) && total.proposals > 0) {
    tuning.rwm_scale = adapt_rwm_scale(tuning.rwm_scale, total.acceptance(), kernel.rwm);
  }
  return total;
}

// ---------------------------------------------------------------------------

SirFilter::SirFilter(const ModelSpec& spec, const SmcConfig& cfg, std::uint64_t seed)
    : SirFilter(spec, cfg, [&] {
        Rng rng = make_stream(seed, {kPriorTag});
        return WeightedEnsemble::from_prior(spec.domain, cfg.particles, rng);
      }(), seed) {}

SirFilter::SirFilter(const ModelSpec& spec, const SmcConfig& cfg, WeightedEnsemble initial,
                     std::uint64_t seed)
    : spec_(spec), cfg_(cfg), seed_(seed), ensemble_(std::move(initial)) {
  spec_.validate();
  cfg_.validate();
  check_initial(spec_, ensemble_);
  tuning_.rwm_scale = cfg_.kernel.rwm.scale;
}

void SirFilter::resample_and_move(std::uint64_t iter, MoveStats& stats) {
  Rng rng = make_stream(seed_, {iter, kResampleTag});
  if (cfg_.kernel.kind == KernelKind::liu_west) {
    ensemble_ = liu_west_resample(ensemble_, spec_.domain, cfg_.kernel.liu_west, rng);
    return;
  }
  ensemble_ = multinomial_resample(ensemble_, rng);
  stats = MoveStats{};
  MoveTarget target{&spec_, data_, 1.0, nullptr, nullptr};
  ControlVariates cv;
  std::vector<SubsampleState> subs;
  if (cfg_.kernel.kind == KernelKind::ecs) {
    cv = control_variates_at(spec_, data_, ensemble_, moments(ensemble_).mean);
    subs = fresh_subsamples(ensemble_.size(), data_.size(), cfg_.kernel.ecs, seed_, iter);
    target.cv = &cv;
    target.subsamples = &subs;
  }
  stats = move_particles(ensemble_, target, cfg_.kernel, tuning_, cfg_.moves, seed_, iter, cfg_.workers);
}

void SirFilter::update(const Datum& d) {
  validate_controls(spec_, d.controls);
  if (d.outcome != 0 && d.outcome != 1) throw ContractError("outcome must be 0 or 1");
  data_.push_back(d);
  const std::uint64_t iter = data_.size();

  TraceRecord rec;
  rec.iter = iter;
  rec.control_t = d.controls.t;
  double log_c = 0.0;
  try {
    log_c = reweight(ensemble_, spec_, d);
  } catch (const DegenerateEnsembleError&) {
    throw DegenerateEnsembleError("all particles have zero likelihood at iteration " +
                                      std::to_string(iter),
                                  iter);
  }
  trace_.log_evidence += log_c;
  rec.log_evidence = trace_.log_evidence;
  rec.ess = ess(ensemble_);

  MoveStats stats;
  if (rec.ess < cfg_.threshold * static_cast<double>(ensemble_.size())) {
    resample_and_move(iter, stats);
    rec.resampled = true;
    ++trace_.resample_count;
  } else if (cfg_.move_every_step && cfg_.kernel.kind != KernelKind::liu_west &&
             cfg_.kernel.kind != KernelKind::ecs) {
    MoveTarget target{&spec_, data_, 1.0, nullptr, nullptr};
    stats = move_particles(ensemble_, target, cfg_.kernel, tuning_, cfg_.moves, seed_, iter, cfg_.workers);
  }
  rec.accept_rate = stats.acceptance();
  trace_.moves.merge(stats);
  fill_moments(rec, ensemble_);
  trace_.records.push_back(std::move(rec));
}

SmcResult sir_run(const ModelSpec& spec, const Dataset& data, const SmcConfig& cfg, std::uint64_t seed) {
  Rng rng = make_stream(seed, {kPriorTag});
  return sir_run(spec, data, cfg, WeightedEnsemble::from_prior(spec.domain, cfg.particles, rng), seed);
}

SmcResult sir_run(const ModelSpec& spec, const Dataset& data, const SmcConfig& cfg,
                  WeightedEnsemble initial, std::uint64_t seed) {
  SirFilter filter(spec, cfg, std::move(initial), seed);
  for (const auto& d : order_dataset(data, cfg.ordering, seed)) filter.update(d);
  return {filter.ensemble(), filter.trace()};
}

// ---------------------------------------------------------------------------

std::vector<double> even_schedule(int stages) {
  if (stages < 1) throw ContractError("a tempering schedule needs at least one stage");
  std::vector<double> out(static_cast<std::size_t>(stages));
  for (int s = 1; s <= stages; ++s) out[static_cast<std::size_t>(s - 1)] = static_cast<double>(s) / stages;
  out.back() = 1.0;
  return out;
}

void validate_schedule(std::span<const double> schedule) {
  if (schedule.empty()) throw ContractError("empty tempering schedule");
  double prev = 0.0;
  for (double g : schedule) {
    if (!(g > prev && g <= 1.0)) throw ContractError("tempering exponents must increase strictly within (0, 1]");
    prev = g;
  }
  if (schedule.back() != 1.0) throw ContractError("the last tempering exponent must be 1");
}

Vector warm_up_reference(const ModelSpec& spec, const Dataset& data, double fraction,
                         const SmcConfig& cfg, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("warm-up fraction must lie in (0, 1)");
  Dataset sorted = order_dataset(data, Ordering::ascending);
  const auto count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size()))));
  sorted.resize(std::min(count, sorted.size()));
  SmcConfig warm = cfg;
  warm.ordering = Ordering::as_given;
  if (warm.kernel.kind == KernelKind::ecs || warm.kernel.kind == KernelKind::sghmc) {
    warm.kernel.kind = KernelKind::rwm;
  }
  const auto res = sir_run(spec, sorted, warm, derive_seed(seed, {kWarmupTag}));
  return moments(res.ensemble).mean;
}

SmcResult tle_run(const ModelSpec& spec, const Dataset& data, std::span<const double> schedule,
                  const SmcConfig& cfg, std::uint64_t seed) {
  Rng rng = make_stream(seed, {kPriorTag});
  return tle_run(spec, data, schedule, cfg, WeightedEnsemble::from_prior(spec.domain, cfg.particles, rng),
                 seed);
}

SmcResult tle_run(const ModelSpec& spec, const Dataset& data, std::span<const double> schedule,
                  const SmcConfig& cfg, WeightedEnsemble initial, std::uint64_t seed) {
  spec.validate();
  cfg.validate();
  validate_schedule(schedule);
  check_initial(spec, initial);
  for (const auto& d : data) validate_controls(spec, d.controls);

  SmcResult res;
  WeightedEnsemble& e = res.ensemble;
  e = std::move(initial);
  RunTrace& trace = res.trace;
  KernelTuning tuning;
  tuning.rwm_scale = cfg.kernel.rwm.scale;
  const bool ecs = cfg.kernel.kind == KernelKind::ecs;
  const std::size_t m = e.size();

  // Full-data log-likelihood per particle (-inf at a zero); ECS keeps index states instead.
  std::vector<double> loglik(m);
  auto refresh_loglik = [&] {
    parallel_for(m, cfg.workers, [&](std::size_t i) {
      const auto ll = data_log_likelihood(spec, e.particle(i), data);
      loglik[i] = ll.clamped ? kNegInf : ll.value;
    });
  };
  std::vector<SubsampleState> subs;
  std::optional<Vector> reference;
  if (ecs) {
    subs = fresh_subsamples(m, data.size(), cfg.kernel.ecs, seed, 0);
    if (cfg.kernel.ecs.warmup_fraction > 0.0) {
      reference = warm_up_reference(spec, data, cfg.kernel.ecs.warmup_fraction, cfg, seed);
    }
  } else {
    refresh_loglik();
  }

  double prev = 0.0;
  std::vector<double> factors(m);
  for (std::size_t s = 0; s < schedule.size(); ++s) {
    const std::uint64_t iter = s + 1;
    const double gamma = schedule[s];
    const double dg = gamma - prev;
    prev = gamma;

    ControlVariates cv;
    if (ecs) {
      const Vector ref = (s == 0 && reference) ? *reference : moments(e).mean;
      cv = control_variates_at(spec, data, e, ref);
      parallel_for(m, cfg.workers, [&](std::size_t i) {
        const auto est = difference_log_estimator(spec, data, cv, subs[i], e.particle(i));
        factors[i] = est.clamped ? kNegInf : dg * corrected_log_likelihood(est);
      });
    } else {
      for (std::size_t i = 0; i < m; ++i) factors[i] = std::isfinite(loglik[i]) ? dg * loglik[i] : kNegInf;
    }

    TraceRecord rec;
    rec.iter = iter;
    rec.control_t = kNaN;
    try {
      trace.log_evidence += reweight_log(e, factors);
    } catch (const DegenerateEnsembleError&) {
      throw DegenerateEnsembleError("all particles have zero likelihood at stage " + std::to_string(iter),
                                    iter);
    }
    rec.log_evidence = trace.log_evidence;
    rec.ess = ess(e);

    bool move = cfg.move_every_step;
    if (rec.ess < cfg.threshold * static_cast<double>(m)) {
      Rng rng = make_stream(seed, {iter, kResampleTag});
      if (cfg.kernel.kind == KernelKind::liu_west) {
        e = liu_west_resample(e, spec.domain, cfg.kernel.liu_west, rng);
        refresh_loglik();
      } else {
        const auto idx = multinomial_indices(e.weights, m, rng);
        e = gather(e, idx);
        if (ecs) {
          subs = gather(subs, idx);
        } else {
          loglik = gather(loglik, idx);
        }
      }
      rec.resampled = true;
      ++trace.resample_count;
      move = true;
    }

    MoveStats stats;
    if (move && cfg.kernel.kind != KernelKind::liu_west) {
      MoveTarget target{&spec, data, gamma, nullptr, nullptr};
      if (ecs) {
        target.cv = &cv;
        target.subsamples = &subs;
      }
      stats = move_particles(e, target, cfg.kernel, tuning, cfg.moves, seed, iter, cfg.workers);
      if (!ecs) refresh_loglik();
    }
    rec.accept_rate = stats.acceptance();
    trace.moves.merge(stats);
    fill_moments(rec, e);
    trace.records.push_back(std::move(rec));
  }
  return res;
}

}  // namespace qbi
