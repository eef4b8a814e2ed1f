#pragma once

#include "qbi/ensemble.hpp"
#include "qbi/models.hpp"
#include "qbi/smc.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace qbi {

// Malformed dataset file; line() is 1-based (the header is line 1).
class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

// CSV with header `t,m,theta_ctl,outcome`; empty m / theta_ctl cells take
// their defaults (1 and 0).
Dataset read_dataset(std::istream& in);
Dataset ingest_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& data);
void write_dataset(const std::string& path, const Dataset& data);

// Snapshot with columns `w,theta_0..theta_{d-1}`.
void write_ensemble(std::ostream& out, const WeightedEnsemble& e);
WeightedEnsemble read_ensemble(std::istream& in);

// `iter,ess,resampled,evidence_log,mean_0..,std_0..,accept_rate,control_t`.
void write_trace(std::ostream& out, const RunTrace& trace, std::size_t dimension);

}  // namespace qbi
