#include "qbi/report.hpp"

#include "qbi/dataset_io.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace qbi {

namespace {

using nlohmann::json;

// JSON has no NaN or infinity; non-finite values travel as strings.
json number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

double to_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw std::runtime_error("runs.jsonl: bad number '" + s + "'");
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number(v[i]));
  return a;
}

Vector vector_from(const json& a) {
  Vector v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = to_double(a[i]);
  return v;
}

std::string run_file(const std::string& dir, std::size_t run, const char* suffix) {
  char name[64];
  std::snprintf(name, sizeof name, "run_%03zu_%s.csv", run, suffix);
  return (std::filesystem::path(dir) / name).string();
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

}  // namespace

void write_aggregate(std::ostream& out, const Aggregate& aggregate) {
  out << "iter";
  for (const auto& c : aggregate.columns) out << ',' << c.name << "_median," << c.name << "_q25," << c.name << "_q75";
  out << '\n';
  for (std::size_t i = 0; i < aggregate.iterations; ++i) {
    out << i + 1;
    for (const auto& c : aggregate.columns) {
      out << ',' << format_double(c.median[i]) << ',' << format_double(c.q25[i]) << ',' << format_double(c.q75[i]);
    }
    out << '\n';
  }
}

void write_runs_jsonl(std::ostream& out, const RunReport& report) {
  for (const auto& r : report.runs) {
    json j;
    j["run"] = r.run;
    j["seed"] = r.seed;
    j["ok"] = r.ok;
    j["error"] = r.error;
    j["parameters"] = report.parameter_names;
    j["final_mean"] = vector_json(r.final_mean);
    j["final_std"] = vector_json(r.final_std);
    j["log_evidence"] = number(r.log_evidence);
    j["resample_count"] = r.trace.resample_count;
    if (r.metrics) {
      const auto& m = *r.metrics;
      j["modes"] = {{"success", m.success},       {"accurate", m.accurate},
                    {"precise", m.precise},       {"correct", m.correct},
                    {"balanced", m.balanced},     {"covered_fraction", m.covered_fraction},
                    {"std_metric", m.std_metric}, {"mean_distance", m.mean_distance},
                    {"rms_error", m.rms_error}};
    }
    if (r.scaling) {
      j["scaling"] = {{"exponent", r.scaling->exponent},
                      {"ci_low", r.scaling->ci_low},
                      {"ci_high", r.scaling->ci_high},
                      {"points", r.scaling->points}};
    }
    json trace = json::array();
    for (const auto& t : r.trace.records) {
      trace.push_back({{"iter", t.iter},
                       {"ess", number(t.ess)},
                       {"resampled", t.resampled},
                       {"log_evidence", number(t.log_evidence)},
                       {"mean", vector_json(t.mean)},
                       {"std", vector_json(t.std)},
                       {"accept_rate", number(t.accept_rate)},
                       {"control_t", number(t.control_t)}});
    }
    j["trace"] = std::move(trace);
    out << j.dump() << '\n';
  }
}

RunReport read_runs_jsonl(std::istream& in) {
  RunReport report;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    RunResult r;
    r.run = j.at("run").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("ok").get<bool>();
    r.error = j.at("error").get<std::string>();
    report.parameter_names = j.at("parameters").get<std::vector<std::string>>();
    r.final_mean = vector_from(j.at("final_mean"));
    r.final_std = vector_from(j.at("final_std"));
    r.log_evidence = to_double(j.at("log_evidence"));
    r.trace.log_evidence = r.log_evidence;
    r.trace.resample_count = j.at("resample_count").get<std::size_t>();
    if (j.contains("modes")) {
      const auto& jm = j["modes"];
      ModeMetrics m;
      m.success = jm.at("success").get<bool>();
      m.accurate = jm.at("accurate").get<bool>();
      m.precise = jm.at("precise").get<bool>();
      m.correct = jm.at("correct").get<bool>();
      m.balanced = jm.at("balanced").get<bool>();
      m.covered_fraction = jm.at("covered_fraction").get<double>();
      m.std_metric = jm.at("std_metric").get<double>();
      m.mean_distance = jm.at("mean_distance").get<double>();
      m.rms_error = jm.at("rms_error").get<double>();
      r.metrics = m;
    }
    if (j.contains("scaling")) {
      ScalingFit f;
      f.exponent = j["scaling"]["exponent"].get<double>();
      f.ci_low = j["scaling"]["ci_low"].get<double>();
      f.ci_high = j["scaling"]["ci_high"].get<double>();
      f.points = j["scaling"]["points"].get<std::size_t>();
      r.scaling = f;
    }
    double cum = 0.0;
    for (const auto& t : j.at("trace")) {
      TraceRecord rec;
      rec.iter = t.at("iter").get<std::size_t>();
      rec.ess = to_double(t.at("ess"));
      rec.resampled = t.at("resampled").get<bool>();
      rec.log_evidence = to_double(t.at("log_evidence"));
      rec.mean = vector_from(t.at("mean"));
      rec.std = vector_from(t.at("std"));
      rec.accept_rate = to_double(t.at("accept_rate"));
      rec.control_t = to_double(t.at("control_t"));
      if (std::isfinite(rec.control_t)) cum += rec.control_t;
      r.cumulative_time.push_back(std::isfinite(rec.control_t) ? cum : std::numeric_limits<double>::quiet_NaN());
      r.trace.records.push_back(std::move(rec));
    }
    report.runs.push_back(std::move(r));
  }
  summarize(report);
  return report;
}

std::string summary_text(const RunReport& report) {
  std::ostringstream os;
  for (std::size_t d = 0; d < report.parameter_names.size(); ++d) {
    const auto i = static_cast<Eigen::Index>(d);
    const bool have = i < report.summary_mean.size();
    os << report.parameter_names[d] << " = "
       << format_double(have ? report.summary_mean[i] : std::numeric_limits<double>::quiet_NaN()) << " ± "
       << format_double(have ? report.summary_std[i] : std::numeric_limits<double>::quiet_NaN()) << '\n';
  }
  os << "runs = " << report.runs.size() << '\n';
  os << "failed_runs = " << report.failed_runs << '\n';
  if (report.success_rate) os << "success_rate = " << format_double(*report.success_rate) << '\n';
  if (report.median_scaling_exponent) {
    os << "median_scaling_exponent = " << format_double(*report.median_scaling_exponent) << '\n';
  }
  return os.str();
}

void write_report(const RunReport& report, const std::string& dir) {
  const std::filesystem::path root(dir);
  std::filesystem::create_directories(root);
  {
    auto out = open_out(root / "aggregate.csv");
    write_aggregate(out, report.aggregate);
  }
  {
    auto out = open_out(root / "runs.jsonl");
    write_runs_jsonl(out, report);
  }
  {
    auto out = open_out(root / "summary.txt");
    out << summary_text(report);
  }
  const std::size_t dim = report.parameter_names.size();
  for (const auto& r : report.runs) {
    {
      auto out = open_out(run_file(dir, r.run, "trace"));
      write_trace(out, r.trace, dim);
    }
    if (r.ensemble.size() > 0) {
      auto out = open_out(run_file(dir, r.run, "ensemble"));
      write_ensemble(out, r.ensemble);
    }
  }
}

RunReport load_report(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "runs.jsonl";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_runs_jsonl(in);
}

}  // namespace qbi
