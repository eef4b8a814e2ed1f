#include "qbi/experiment.hpp"

#include "qbi/dataset_io.hpp"
#include "qbi/parallel.hpp"
#include "qbi/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace qbi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum StreamTag : std::uint64_t {
  kRunTag = 11,
  kDatasetTag = 12,
  kDeviceTag = 13,
  kDesignTag = 14,
  kCalibrationTag = 15,
  kGrfTag = 16,
};

Vector broadcast(const std::vector<double>& values, std::size_t dim, const std::string& key) {
  if (values.size() == 1) return Vector::Constant(static_cast<Eigen::Index>(dim), values[0]);
  if (values.size() != dim) {
    throw ConfigError(key + ": expected 1 or " + std::to_string(dim) + " values, got " +
                      std::to_string(values.size()));
  }
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(dim));
}

template <class Enum, class Parser>
Enum parse_enum(const ConfigMap& cfg, const std::string& key, Enum fallback, Parser parser) {
  const auto text = cfg.get(key);
  if (!text) return fallback;
  const auto parsed = parser(*text);
  if (!parsed) throw ConfigError(key + ": unknown value '" + *text + "'");
  return *parsed;
}

std::optional<InferenceMethod> parse_method(std::string_view s) {
  if (s == "sir") return InferenceMethod::sir;
  if (s == "tle") return InferenceMethod::tle;
  if (s == "grf") return InferenceMethod::grf;
  return std::nullopt;
}

std::optional<ExperimentMode> parse_mode(std::string_view s) {
  if (s == "offline") return ExperimentMode::offline;
  if (s == "adaptive") return ExperimentMode::adaptive;
  return std::nullopt;
}

template <class T>
T checked_count(const ConfigMap& cfg, const std::string& key, T fallback, long long minimum) {
  const auto v = cfg.get_int(key, static_cast<long long>(fallback));
  if (v < minimum) throw ConfigError(key + ": must be >= " + std::to_string(minimum));
  return static_cast<T>(v);
}

// Offline IPE design: every (m, theta) pair of m in 1..10, theta in {0..9} pi/5.
Controls ipe_grid_controls(std::size_t k) {
  Controls c;
  c.m = 1 + static_cast<int>((k / 10) % 10);
  c.theta_ctl = static_cast<double>(k % 10) * std::numbers::pi / 5.0;
  return c;
}

double prior_std(const ModelSpec& spec) { return spec.domain.width().maxCoeff() / std::sqrt(12.0); }

Moments box_moments(const DomainBox& box) {
  Moments m;
  m.mean = 0.5 * (box.lower + box.upper);
  const Vector var = box.width().array().square() / 12.0;
  m.covariance = var.asDiagonal();
  m.std = var.cwiseSqrt();
  return m;
}

void record_grf(RunTrace& trace, const Moments& m, std::size_t iter, double t) {
  TraceRecord rec;
  rec.iter = iter;
  rec.ess = kNaN;
  rec.log_evidence = kNaN;
  rec.mean = m.mean;
  rec.std = m.std;
  rec.accept_rate = kNaN;
  rec.control_t = t;
  trace.records.push_back(std::move(rec));
}

// Inference model: the configured one, with echo A and B re-estimated from
// calibration shots when requested.
ModelSpec inference_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  const std::size_t calibration_shots = cfg.calibration_shots;
  if (calibration_shots == 0 || cfg.model.kind != ModelKind::hahn_echo_ab || !cfg.truth) return cfg.model;
  Rng rng = make_stream(seed, {kCalibrationTag});
  auto frequency = [&](double t) {
    Controls c;
    c.t = t;
    std::size_t ones = 0;
    for (std::size_t i = 0; i < calibration_shots; ++i) ones += simulate_outcome(cfg.model, *cfg.truth, c, rng).outcome;
    return static_cast<double>(ones) / static_cast<double>(calibration_shots);
  };
  const double long_time = 20.0 * cfg.model.domain.upper[0];
  const auto cal = estimate_echo_ab(frequency(0.0), frequency(long_time));
  ModelSpec spec = cfg.model;
  spec.amplitude = cal.amplitude;
  spec.offset = cal.offset;
  return spec;
}

}  // namespace

void ExperimentConfig::validate() const {
  model.validate();
  smc.validate();
  design.validate();
  grf.validate();
  if (truth.has_value() == dataset_path.has_value()) {
    throw ConfigError("truth, dataset: exactly one of the two must be given");
  }
  if (truth) {
    if (static_cast<std::size_t>(truth->size()) != model.dimension) throw ConfigError("truth: wrong dimension");
    if (!model.domain.contains(*truth)) throw ConfigError("truth: outside the model domain");
  }
  if (mode == ExperimentMode::adaptive) {
    if (!truth) throw ConfigError("experiment.mode: adaptive runs need a simulated device (truth)");
    if (method == InferenceMethod::tle) throw ConfigError("sampler.method: tle cannot run adaptively");
    if (model.kind != ModelKind::ipe && !design.adaptive()) {
      throw ConfigError("design.kind: adaptive mode needs an adaptive heuristic");
    }
  } else if (model.kind != ModelKind::ipe && truth && design.adaptive()) {
    throw ConfigError("design.kind: offline mode needs a schedule (fixed-grid, exponential, random, incremental-random)");
  }
  if (method == InferenceMethod::grf && model.dimension != 1) {
    throw ConfigError("sampler.method: grf is implemented for one-parameter models");
  }
  if (tle_stages < 1) throw ConfigError("tle.stages: must be >= 1");
  if (shots < 1 || repeats < 1) throw ConfigError("experiment.shots, experiment.repeats: must be >= 1");
  if (runs < 1) throw ConfigError("run.count: must be >= 1");
  if (workers < 1) throw ConfigError("run.workers: must be >= 1");
}

ExperimentConfig experiment_from_config(const ConfigMap& cfg) {
  ExperimentConfig ex;
  const auto kind = parse_enum(cfg, "model.kind", ModelKind::precession,
                               [](std::string_view s) { return parse_model_kind(s); });
  const auto dim = expected_dimension(kind, checked_count<std::size_t>(cfg, "model.dimension", 2, 1));
  const auto lower = cfg.get_doubles("model.lower");
  const auto upper = cfg.get_doubles("model.upper");
  if (kind == ModelKind::ipe) {
    ex.model = ModelSpec::ipe();
  } else {
    if (lower.empty() || upper.empty()) throw ConfigError("model.lower, model.upper: domain bounds are required");
    try {
      ex.model = ModelSpec::make(kind, broadcast(lower, dim, "model.lower"), broadcast(upper, dim, "model.upper"));
    } catch (const ContractError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  ex.model.amplitude = cfg.get_double("model.amplitude", ex.model.amplitude);
  ex.model.offset = cfg.get_double("model.offset", ex.model.offset);
  ex.calibration_shots = checked_count<std::size_t>(cfg, "model.calibration_shots", 0, 0);

  if (const auto truth = cfg.get_doubles("truth"); !truth.empty()) ex.truth = broadcast(truth, dim, "truth");
  if (const auto path = cfg.get("dataset"); path && !path->empty()) ex.dataset_path = *path;

  ex.method = parse_enum(cfg, "sampler.method", InferenceMethod::sir, parse_method);
  auto& smc = ex.smc;
  smc.particles = checked_count<std::size_t>(cfg, "sampler.particles", smc.particles, 2);
  smc.threshold = cfg.get_double("sampler.threshold", smc.threshold);
  smc.moves = checked_count<int>(cfg, "sampler.moves", smc.moves, 1);
  smc.move_every_step = cfg.get_bool("sampler.move_every_step", smc.move_every_step);
  smc.kernel.kind = parse_enum(cfg, "sampler.kernel", smc.kernel.kind,
                               [](std::string_view s) { return parse_kernel_kind(s); });
  smc.ordering = parse_enum(cfg, "sampler.ordering", smc.ordering,
                            [](std::string_view s) { return parse_ordering(s); });
  ex.tle_stages = checked_count<int>(cfg, "tle.stages", ex.tle_stages, 1);

  auto& k = smc.kernel;
  k.liu_west.a = cfg.get_double("lw.a", k.liu_west.a);
  k.rwm.scale = cfg.get_double("rwm.scale", k.rwm.scale);
  k.rwm.target_rate = cfg.get_double("rwm.target", k.rwm.target_rate);
  k.rwm.adapt = cfg.get_bool("rwm.adapt", k.rwm.adapt);
  k.hmc.epsilon = cfg.get_double("hmc.epsilon", k.hmc.epsilon);
  k.hmc.steps = checked_count<int>(cfg, "hmc.steps", k.hmc.steps, 1);
  k.hybrid.threshold = cfg.get_double("hybrid.threshold", k.hybrid.threshold);
  k.sghmc.epsilon = cfg.get_double("sghmc.epsilon", k.sghmc.epsilon);
  k.sghmc.steps = checked_count<int>(cfg, "sghmc.steps", k.sghmc.steps, 1);
  k.sghmc.batch = checked_count<std::size_t>(cfg, "sghmc.batch", k.sghmc.batch, 1);
  k.sghmc.friction = cfg.get_bool("sghmc.friction", k.sghmc.friction);
  k.sghmc.friction_offset = cfg.get_double("sghmc.offset", k.sghmc.friction_offset);
  k.sghmc.inject_noise = cfg.get_bool("sghmc.noise", k.sghmc.inject_noise);
  k.ecs.subsample = checked_count<std::size_t>(cfg, "ecs.subsample", k.ecs.subsample, 2);
  k.ecs.blocks = checked_count<std::size_t>(cfg, "ecs.blocks", k.ecs.blocks, 1);
  k.ecs.warmup_fraction = cfg.get_double("ecs.warmup", k.ecs.warmup_fraction);
  ex.grf.samples = checked_count<std::size_t>(cfg, "grf.samples", ex.grf.samples, 2);

  auto& d = ex.design;
  d.kind = parse_enum(cfg, "design.kind", d.kind, [](std::string_view s) { return parse_heuristic_kind(s); });
  d.increment = cfg.get_double("design.increment", d.increment);
  d.growth = cfg.get_double("design.growth", d.growth);
  d.c1 = cfg.get_double("design.c1", d.c1);
  d.c2 = cfg.get_double("design.c2", d.c2);
  d.base = cfg.get_double("design.base", d.base);
  d.bins = checked_count<int>(cfg, "design.bins", d.bins, 1);
  d.candidates = checked_count<std::size_t>(cfg, "design.candidates", d.candidates, 1);
  d.candidate_spread = cfg.get_double("design.spread", d.candidate_spread);
  d.t_max = cfg.get_double("design.t_max", d.t_max);

  ex.mode = parse_enum(cfg, "experiment.mode", ex.mode, parse_mode);
  ex.shots = checked_count<std::size_t>(cfg, "experiment.shots", ex.shots, 1);
  ex.repeats = checked_count<std::size_t>(cfg, "experiment.repeats", ex.repeats, 1);
  ex.datasets = checked_count<std::size_t>(cfg, "experiment.datasets", ex.datasets, 0);

  auto& th = ex.thresholds;
  th.max_mean_distance = cfg.get_double("metrics.distance", th.max_mean_distance);
  th.max_mode_std = cfg.get_double("metrics.std", th.max_mode_std);
  th.max_error_mismatch = cfg.get_double("metrics.mismatch", th.max_error_mismatch);
  th.balance_factor = cfg.get_double("metrics.balance", th.balance_factor);

  ex.runs = checked_count<std::size_t>(cfg, "run.count", ex.runs, 1);
  ex.seed = cfg.get_uint("run.seed", ex.seed);
  ex.out = cfg.get_string("run.out", ex.out);
  ex.workers = checked_count<std::size_t>(cfg, "run.workers", ex.workers, 1);
  smc.workers = ex.workers;

  if (const auto unused = cfg.unused_keys(); !unused.empty()) {
    throw ConfigError(unused.front() + ": unknown key");
  }
  try {
    ex.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return ex;
}

Dataset simulate_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.truth) throw ContractError("simulation needs a ground truth");
  Rng design_rng = make_stream(seed, {kDesignTag});
  Rng device = make_stream(seed, {kDeviceTag});
  Dataset data;
  data.reserve(cfg.shots * cfg.repeats);
  for (std::size_t k = 1; k <= cfg.shots; ++k) {
    Controls c;
    if (cfg.model.kind == ModelKind::ipe) {
      c = ipe_grid_controls(k - 1);
    } else {
      c.t = schedule_time(cfg.design, k, design_rng);
    }
    for (std::size_t r = 0; r < cfg.repeats; ++r) data.push_back(simulate_outcome(cfg.model, *cfg.truth, c, device));
  }
  return data;
}

std::optional<ScalingFit> run_scaling_fit(const RunTrace& trace, const std::vector<double>& cumulative_time) {
  std::vector<double> t, s;
  for (std::size_t i = 0; i < trace.records.size() && i < cumulative_time.size(); ++i) {
    const double sigma = trace.records[i].std.size() ? trace.records[i].std.maxCoeff() : 0.0;
    if (cumulative_time[i] > 0.0 && sigma > 0.0 && std::isfinite(cumulative_time[i])) {
      t.push_back(cumulative_time[i]);
      s.push_back(sigma);
    }
  }
  if (t.size() < 5) return std::nullopt;
  try {
    return scaling_fit(t, s);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

RunResult run_once(const ExperimentConfig& cfg, std::size_t run_index, const Dataset* fixed_data) {
  RunResult res;
  res.run = run_index;
  res.seed = derive_seed(cfg.seed, {kRunTag, run_index});
  const ModelSpec spec = inference_model(cfg, res.seed);
  try {
    if (cfg.mode == ExperimentMode::offline) {
      Dataset data;
      if (fixed_data) {
        data = *fixed_data;
      } else {
        const std::size_t dataset_index = cfg.datasets ? run_index % cfg.datasets : run_index;
        data = simulate_dataset(cfg, derive_seed(cfg.seed, {kDatasetTag, dataset_index}));
      }
      if (cfg.method == InferenceMethod::tle) {
        const auto schedule = even_schedule(cfg.tle_stages);
        auto out = tle_run(spec, data, schedule, cfg.smc, res.seed);
        res.ensemble = std::move(out.ensemble);
        res.trace = std::move(out.trace);
      } else if (cfg.method == InferenceMethod::sir) {
        auto out = sir_run(spec, data, cfg.smc, res.seed);
        res.ensemble = std::move(out.ensemble);
        res.trace = std::move(out.trace);
      } else {
        Rng rng = make_stream(res.seed, {kGrfTag});
        Moments m = box_moments(spec.domain);
        const Dataset ordered = order_dataset(data, cfg.smc.ordering, res.seed);
        for (std::size_t i = 0; i < ordered.size(); ++i) {
          m = grf_update(m, spec, ordered[i], cfg.grf, rng).moments;
          record_grf(res.trace, m, i + 1, ordered[i].controls.t);
        }
      }
    } else {
      Rng design_rng = make_stream(res.seed, {kDesignTag});
      Rng device = make_stream(res.seed, {kDeviceTag});
      const double p_std = prior_std(spec);
      if (cfg.method == InferenceMethod::grf) {
        Rng rng = make_stream(res.seed, {kGrfTag});
        Moments m = box_moments(spec.domain);
        std::size_t iter = 0;
        for (std::size_t k = 1; k <= cfg.shots; ++k) {
          Controls c;
          if (spec.kind == ModelKind::ipe) {
            c = ipe_controls(m, design_rng);
          } else {
            c.t = std::min(sigma_inverse_time(m), cfg.design.t_max);
          }
          for (std::size_t r = 0; r < cfg.repeats; ++r) {
            const Datum d = simulate_outcome(cfg.model, *cfg.truth, c, device);
            m = grf_update(m, spec, d, cfg.grf, rng).moments;
            record_grf(res.trace, m, ++iter, c.t);
          }
        }
      } else {
        SirFilter filter(spec, cfg.smc, res.seed);
        for (std::size_t k = 1; k <= cfg.shots; ++k) {
          Controls c;
          if (spec.kind == ModelKind::ipe) {
            c = ipe_controls(filter.current_moments(), design_rng);
          } else {
            c.t = next_time(cfg.design, k, filter.ensemble(), spec, p_std, design_rng);
          }
          for (std::size_t r = 0; r < cfg.repeats; ++r) {
            filter.update(simulate_outcome(cfg.model, *cfg.truth, c, device));
          }
        }
        res.ensemble = filter.ensemble();
        res.trace = filter.trace();
      }
    }
    res.ok = true;
  } catch (const DegenerateEnsembleError& e) {
    res.error = e.what();
  } catch (const DegenerateUncertaintyError& e) {
    res.error = e.what();
  } catch (const SingularityError& e) {
    res.error = e.what();
  }

  double cum = 0.0;
  for (const auto& r : res.trace.records) {
    if (std::isfinite(r.control_t)) cum += r.control_t;
    res.cumulative_time.push_back(std::isfinite(r.control_t) ? cum : kNaN);
  }
  if (!res.trace.records.empty()) {
    res.final_mean = res.trace.records.back().mean;
    res.final_std = res.trace.records.back().std;
  }
  res.log_evidence = res.trace.log_evidence;
  if (res.ok && res.ensemble.size() > 0 && spec.kind == ModelKind::multi_cosine && cfg.truth) {
    const auto modes = mode_set(spec, *cfg.truth);
    res.metrics = mode_metrics(res.ensemble, modes, spec.domain, cfg.thresholds);
  }
  if (res.ok && cfg.mode == ExperimentMode::adaptive) res.scaling = run_scaling_fit(res.trace, res.cumulative_time);
  return res;
}

void summarize(RunReport& report) {
  auto& runs = report.runs;
  report.failed_runs = static_cast<std::size_t>(
      std::count_if(runs.begin(), runs.end(), [](const RunResult& r) { return !r.ok; }));

  std::size_t dim = 0;
  std::size_t iters = 0;
  for (const auto& r : runs) {
    if (!r.ok) continue;
    dim = std::max(dim, static_cast<std::size_t>(r.final_mean.size()));
    iters = std::max(iters, r.trace.records.size());
  }
  report.summary_mean = Vector::Constant(static_cast<Eigen::Index>(dim), kNaN);
  report.summary_std = Vector::Constant(static_cast<Eigen::Index>(dim), kNaN);
  for (std::size_t d = 0; d < dim; ++d) {
    std::vector<double> means, stds;
    for (const auto& r : runs) {
      if (!r.ok || static_cast<std::size_t>(r.final_mean.size()) <= d) continue;
      means.push_back(r.final_mean[static_cast<Eigen::Index>(d)]);
      stds.push_back(r.final_std[static_cast<Eigen::Index>(d)]);
    }
    if (!means.empty()) {
      report.summary_mean[static_cast<Eigen::Index>(d)] = median(means);
      report.summary_std[static_cast<Eigen::Index>(d)] = median(stds);
    }
  }

  using Getter = double (*)(const TraceRecord&, std::size_t);
  struct Column {
    std::string name;
    Getter get;
    std::size_t d;
  };
  std::vector<Column> columns = {
      {"ess", [](const TraceRecord& r, std::size_t) { return r.ess; }, 0},
      {"evidence_log", [](const TraceRecord& r, std::size_t) { return r.log_evidence; }, 0},
  };
  for (std::size_t d = 0; d < dim; ++d) {
    columns.push_back({"mean_" + std::to_string(d),
                       [](const TraceRecord& r, std::size_t k) { return r.mean[static_cast<Eigen::Index>(k)]; }, d});
  }
  for (std::size_t d = 0; d < dim; ++d) {
    columns.push_back({"std_" + std::to_string(d),
                       [](const TraceRecord& r, std::size_t k) { return r.std[static_cast<Eigen::Index>(k)]; }, d});
  }
  columns.push_back({"accept_rate", [](const TraceRecord& r, std::size_t) { return r.accept_rate; }, 0});

  report.aggregate = Aggregate{};
  report.aggregate.iterations = iters;
  for (const auto& col : columns) {
    AggregateColumn agg;
    agg.name = col.name;
    for (std::size_t i = 0; i < iters; ++i) {
      std::vector<double> values;
      for (const auto& r : runs) {
        if (!r.ok || i >= r.trace.records.size()) continue;
        const double v = col.get(r.trace.records[i], col.d);
        if (std::isfinite(v)) values.push_back(v);
      }
      if (values.empty()) {
        agg.q25.push_back(kNaN);
        agg.median.push_back(kNaN);
        agg.q75.push_back(kNaN);
      } else {
        const auto q = quartiles(values);
        agg.q25.push_back(q.q25);
        agg.median.push_back(q.median);
        agg.q75.push_back(q.q75);
      }
    }
    report.aggregate.columns.push_back(std::move(agg));
  }

  std::vector<double> exponents;
  std::size_t metric_runs = 0, successes = 0;
  for (const auto& r : runs) {
    if (r.scaling) exponents.push_back(r.scaling->exponent);
    if (r.metrics) {
      ++metric_runs;
      if (r.metrics->success) ++successes;
    }
  }
  report.median_scaling_exponent.reset();
  if (!exponents.empty()) report.median_scaling_exponent = median(exponents);
  report.success_rate.reset();
  if (metric_runs) report.success_rate = static_cast<double>(successes) / static_cast<double>(metric_runs);
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  RunReport report;
  report.parameter_names = cfg.model.parameter_names();
  std::optional<Dataset> fixed;
  if (cfg.dataset_path) fixed = ingest_dataset(*cfg.dataset_path);

  // Runs are spread over the workers; a single run keeps the workers for its particles.
  ExperimentConfig per_run = cfg;
  const bool across_runs = cfg.runs > 1 && cfg.workers > 1;
  if (across_runs) per_run.smc.workers = 1;
  report.runs.resize(cfg.runs);
  parallel_for(cfg.runs, across_runs ? cfg.workers : 1, [&](std::size_t r) {
    report.runs[r] = run_once(per_run, r, fixed ? &*fixed : nullptr);
  });
  summarize(report);
  return report;
}

}  // namespace qbi
