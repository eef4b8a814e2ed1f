// Command-line driver: simulate, infer, sweep, report.
#include "qbi/config.hpp"
#include "qbi/dataset_io.hpp"
#include "qbi/experiment.hpp"
#include "qbi/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

constexpr int kConfigExit = 2;
constexpr int kDegenerateExit = 3;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::string> out;
  std::optional<std::size_t> workers;

  void apply(qbi::ConfigMap& cfg) const {
    if (seed) cfg.set("run.seed", std::to_string(*seed));
    if (runs) cfg.set("run.count", std::to_string(*runs));
    if (out) cfg.set("run.out", *out);
    if (workers) cfg.set("run.workers", std::to_string(*workers));
  }
};

int run_and_write(const qbi::ExperimentConfig& ex) {
  const auto report = qbi::run_experiment(ex);
  if (!ex.out.empty()) qbi::write_report(report, ex.out);
  std::cout << qbi::summary_text(report);
  for (const auto& r : report.runs) {
    if (!r.ok) std::cerr << "run " << r.run << " failed: " << r.error << '\n';
  }
  return report.all_failed() ? kDegenerateExit : 0;
}

std::vector<std::string> split_values(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian inference for qubit characterization"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::string out_path;

  auto* simulate = app.add_subcommand("simulate", "Write a simulated dataset CSV from the configured ground truth");
  simulate->add_option("--config", config_path, "Config file")->required();
  simulate->add_option("--seed", ov.seed, "Seed");
  simulate->add_option("--out", out_path, "Output CSV (stdout if omitted)");

  auto* infer = app.add_subcommand("infer", "Run the configured experiment");
  infer->add_option("--config", config_path, "Config file")->required();
  infer->add_option("--seed", ov.seed, "Base seed");
  infer->add_option("--runs", ov.runs, "Number of independent runs");
  infer->add_option("--out", ov.out, "Output directory");
  infer->add_option("--workers", ov.workers, "Worker threads");

  std::string sweep_key;
  std::string sweep_values;
  auto* sweep = app.add_subcommand("sweep", "Run the experiment once per value of one config key");
  sweep->add_option("--config", config_path, "Config file")->required();
  sweep->add_option("--key", sweep_key, "Config key to vary")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("--out", ov.out, "Output directory; one subdirectory per value");
  sweep->add_option("--seed", ov.seed, "Base seed");
  sweep->add_option("--runs", ov.runs, "Runs per value");
  sweep->add_option("--workers", ov.workers, "Worker threads");

  std::string in_dir;
  auto* report = app.add_subcommand("report", "Re-aggregate stored runs");
  report->add_option("--in", in_dir, "Directory holding runs.jsonl")->required();
  report->add_option("--out", out_path, "Output directory (defaults to --in)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      auto cfg = qbi::ConfigMap::load(config_path);
      ov.apply(cfg);
      const auto ex = qbi::experiment_from_config(cfg);
      if (!ex.truth) throw qbi::ConfigError("truth: simulate needs a ground truth");
      const auto data = qbi::simulate_dataset(ex, ex.seed);
      if (out_path.empty()) {
        qbi::write_dataset(std::cout, data);
      } else {
        qbi::write_dataset(out_path, data);
      }
      return 0;
    }
    if (*infer) {
      auto cfg = qbi::ConfigMap::load(config_path);
      ov.apply(cfg);
      return run_and_write(qbi::experiment_from_config(cfg));
    }
    if (*sweep) {
      int worst = 0;
      for (const auto& value : split_values(sweep_values)) {
        auto cfg = qbi::ConfigMap::load(config_path);
        ov.apply(cfg);
        cfg.set(sweep_key, value);
        if (ov.out) cfg.set("run.out", (std::filesystem::path(*ov.out) / (sweep_key + "=" + value)).string());
        const auto ex = qbi::experiment_from_config(cfg);
        std::cout << "[" << sweep_key << " = " << value << "]\n";
        worst = std::max(worst, run_and_write(ex));
      }
      return worst;
    }
    if (*report) {
      auto rep = qbi::load_report(in_dir);
      const std::string dir = out_path.empty() ? in_dir : out_path;
      std::filesystem::create_directories(dir);
      std::ofstream agg(std::filesystem::path(dir) / "aggregate.csv");
      qbi::write_aggregate(agg, rep.aggregate);
      std::ofstream summary(std::filesystem::path(dir) / "summary.txt");
      summary << qbi::summary_text(rep);
      std::cout << qbi::summary_text(rep);
      return 0;
    }
  } catch (const qbi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
