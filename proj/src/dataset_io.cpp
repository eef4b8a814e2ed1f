#include "qbi/dataset_io.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace qbi {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), ptr);
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("dataset is missing its header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "t,m,theta_ctl,outcome") {
    throw DatasetError("dataset header must be 't,m,theta_ctl,outcome'", 1);
  }
  Dataset data;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    auto fail = [&](const std::string& why) {
      throw DatasetError("line " + std::to_string(lineno) + ": " + why, lineno);
    };
    if (cells.size() != 4) fail("expected 4 columns, got " + std::to_string(cells.size()));
    Datum d;
    if (!parse_number(cells[0], d.controls.t)) fail("bad time '" + cells[0] + "'");
    if (!cells[1].empty() && !parse_number(cells[1], d.controls.m)) fail("bad repetition count '" + cells[1] + "'");
    if (!cells[2].empty() && !parse_number(cells[2], d.controls.theta_ctl)) fail("bad angle '" + cells[2] + "'");
    if (!parse_number(cells[3], d.outcome)) fail("bad outcome '" + cells[3] + "'");
    if (d.outcome != 0 && d.outcome != 1) fail("outcome must be 0 or 1");
    if (!(d.controls.t >= 0.0)) fail("time must be >= 0");
    if (d.controls.m < 1) fail("repetition count must be >= 1");
    data.push_back(d);
  }
  return data;
}

Dataset ingest_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  try {
    return read_dataset(in);
  } catch (const DatasetError& e) {
    throw DatasetError(path + ": " + e.what(), e.line());
  }
}

void write_dataset(std::ostream& out, const Dataset& data) {
  out << "t,m,theta_ctl,outcome\n";
  for (const auto& d : data) {
    out << format_double(d.controls.t) << ',' << d.controls.m << ',' << format_double(d.controls.theta_ctl)
        << ',' << d.outcome << '\n';
  }
}

void write_dataset(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset " + path);
  write_dataset(out, data);
}

void write_ensemble(std::ostream& out, const WeightedEnsemble& e) {
  out << 'w';
  for (std::size_t d = 0; d < e.dimension(); ++d) out << ",theta_" << d;
  out << '\n';
  for (std::size_t i = 0; i < e.size(); ++i) {
    out << format_double(e.weights[static_cast<Eigen::Index>(i)]);
    for (std::size_t d = 0; d < e.dimension(); ++d) {
      out << ',' << format_double(e.particles(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)));
    }
    out << '\n';
  }
}

WeightedEnsemble read_ensemble(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("ensemble snapshot is missing its header", 1);
  const auto header = split_csv(line);
  if (header.empty() || header[0] != "w") throw DatasetError("ensemble header must start with 'w'", 1);
  const auto dim = static_cast<Eigen::Index>(header.size() - 1);
  std::vector<double> w;
  std::vector<double> x;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw DatasetError("line " + std::to_string(lineno) + ": column count", lineno);
    double v = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_number(cells[c], v)) throw DatasetError("line " + std::to_string(lineno) + ": bad number", lineno);
      (c == 0 ? w : x).push_back(v);
    }
  }
  WeightedEnsemble e;
  e.weights = Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  e.particles = Eigen::Map<Matrix>(x.data(), dim, static_cast<Eigen::Index>(w.size()));
  return e;
}

void write_trace(std::ostream& out, const RunTrace& trace, std::size_t dimension) {
  out << "iter,ess,resampled,evidence_log";
  for (std::size_t d = 0; d < dimension; ++d) out << ",mean_" << d;
  for (std::size_t d = 0; d < dimension; ++d) out << ",std_" << d;
  out << ",accept_rate,control_t\n";
  for (const auto& r : trace.records) {
    out << r.iter << ',' << format_double(r.ess) << ',' << (r.resampled ? 1 : 0) << ','
        << format_double(r.log_evidence);
    for (Eigen::Index d = 0; d < r.mean.size(); ++d) out << ',' << format_double(r.mean[d]);
    for (Eigen::Index d = 0; d < r.std.size(); ++d) out << ',' << format_double(r.std[d]);
    out << ',' << format_double(r.accept_rate) << ',' << format_double(r.control_t) << '\n';
  }
}

}  // namespace qbi
