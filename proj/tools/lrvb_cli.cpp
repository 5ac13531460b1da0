// lrvb: simulate, fit, correct, sample and summarize normal mixtures.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lrvb/harness/artifacts.hpp"
#include "lrvb/harness/config.hpp"
#include "lrvb/harness/experiment.hpp"
#include "lrvb/harness/report.hpp"
#include "lrvb/harness/simulate.hpp"

namespace {

using namespace lrvb;
using namespace lrvb::harness;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string profile;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config; keys override the profile")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed override (u64)");
  cmd->add_option("--out", c.out, "output path (default: stdout)");
  cmd->add_option("--profile", c.profile, "base settings")
      ->check(CLI::IsMember({"desk", "paper"}));
}

SimulationConfig resolve(const Common& c, const std::string& fallback = "desk") {
  SimulationConfig cfg = profile_by_name(c.profile.empty() ? fallback : c.profile);
  if (!c.config.empty()) cfg = load_config(c.config, cfg);
  cfg.validate();
  return cfg;
}

/// Writes to --out, or stdout when it is empty.
template <class Writer>
void emit(const std::string& path, Writer&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  write(f);
  if (!f) throw std::runtime_error("write to " + path + " failed");
}

Eigen::VectorXd load_data(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open data file " + path);
  try {
    return read_data_csv(in);
  } catch (const CsvParseError& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

mixture::FitResult checked_fit(const Eigen::VectorXd& x, const SimulationConfig& cfg) {
  auto fit = mixture::fit(mixture::DataMoments::observed(x), cfg.K, cfg.priors, cfg.fit);
  if (!fit.converged) {
    throw std::runtime_error("fit did not converge after " + std::to_string(fit.iterations) +
                             " iterations (residual " + fmt(fit.final_residual) + ")");
  }
  return fit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear-response covariance corrections for normal mixtures"};
  app.require_subcommand(1);

  Common c;
  std::uint64_t sim_id = 0;
  auto* simulate_cmd = app.add_subcommand("simulate", "draw one simulated data set");
  add_common(simulate_cmd, c);
  simulate_cmd->add_option("--sim-id", sim_id, "simulation index");

  std::string data_path;
  auto* fit_cmd = app.add_subcommand("fit", "mean-field fit of a data file");
  auto* lrvb_cmd = app.add_subcommand("lrvb", "fit and linear-response covariance");
  auto* mh_cmd = app.add_subcommand("mh", "MAP and independence MH sampling");
  for (auto* cmd : {fit_cmd, lrvb_cmd, mh_cmd}) {
    add_common(cmd, c);
    cmd->add_option("--data", data_path, "CSV with a single column x")
        ->required()
        ->check(CLI::ExistingFile);
  }

  int jobs = 1;
  auto* leverage_cmd = app.add_subcommand("leverage", "leverage scores vs manual perturbation");
  add_common(leverage_cmd, c);
  leverage_cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  std::string sims;
  bool timing = false;
  auto* experiment_cmd = app.add_subcommand("experiment", "MFVB, LRVB and MH over many sims");
  add_common(experiment_cmd, c);
  experiment_cmd->add_option("--sims", sims, "subset of sim ids, e.g. 0-4,7");
  experiment_cmd->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  experiment_cmd->add_flag("--timing", timing, "fill timing_ms (output is then not reproducible)");

  std::vector<std::string> inputs;
  Thresholds th;
  auto* report_cmd = app.add_subcommand("report", "summarize results and leverage CSVs");
  report_cmd->add_option("inputs", inputs, "results and/or leverage CSVs")
      ->required()
      ->check(CLI::ExistingFile);
  report_cmd->add_option("--out", c.out, "CSV summary path (text summary goes to stdout)");
  report_cmd->add_option("--lrvb-low", th.lrvb_ratio_low);
  report_cmd->add_option("--lrvb-high", th.lrvb_ratio_high);
  report_cmd->add_option("--mfvb-below-fraction", th.mfvb_below_one_fraction);
  report_cmd->add_option("--min-correlation", th.leverage_correlation);
  report_cmd->add_option("--max-relative-error", th.leverage_relative_error);
  report_cmd->add_option("--large-score", th.leverage_large_score);
  report_cmd->add_option("--min-speedup", th.leverage_speedup);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate_cmd->parsed()) {
      SimulationConfig cfg = resolve(c);
      if (c.seed) cfg.master_seed = *c.seed;
      const auto data = simulate(cfg, sim_id);
      emit(c.out, [&](std::ostream& o) { write_data_csv(data.x, o); });
    } else if (fit_cmd->parsed()) {
      SimulationConfig cfg = resolve(c);
      if (c.seed) cfg.fit.seed = *c.seed;
      const auto fit = mixture::fit(mixture::DataMoments::observed(load_data(data_path)), cfg.K,
                                    cfg.priors, cfg.fit);
      emit(c.out, [&](std::ostream& o) { o << fit_json(fit).dump(2) << '\n'; });
      if (!fit.converged) {
        std::cerr << "warning: fit did not converge (residual " << fmt(fit.final_residual)
                  << ")\n";
        return 1;
      }
    } else if (lrvb_cmd->parsed()) {
      SimulationConfig cfg = resolve(c);
      if (c.seed) cfg.fit.seed = *c.seed;
      const Eigen::VectorXd x = load_data(data_path);
      const auto fit = checked_fit(x, cfg);
      const auto sys =
          make_system(ModelKind::mixture, mixture::DataMoments::observed(x), cfg.priors,
                      fit.posterior);
      const auto est = lrvb_estimate(sys, 10.0 * cfg.fit.tolerance);
      const MatrixXd v = est.sigma_q.restricted(0, sys.layout.theta_dim);
      emit(c.out, [&](std::ostream& o) { o << lrvb_json(fit, sys.layout, v, est).dump(2) << '\n'; });
    } else if (mh_cmd->parsed()) {
      SimulationConfig cfg = resolve(c);
      if (c.seed) cfg.mh.seed = *c.seed;
      const Eigen::VectorXd x = load_data(data_path);
      const auto fit = checked_fit(x, cfg);
      const auto sys =
          make_system(ModelKind::mixture, mixture::DataMoments::observed(x), cfg.priors,
                      fit.posterior);
      MatrixXd theta_cov;
      try {
        theta_cov = lrvb_estimate(sys, 10.0 * cfg.fit.tolerance).sigma_hat_theta;
      } catch (const ConditioningError& e) {
        std::cerr << "warning: " << e.what() << "; proposal uses the mean-field covariance\n";
        theta_cov = assemble_sigma_q(sys).restricted(0, sys.layout.theta_dim);
      }
      const auto map =
          mh::find_map(x, cfg.priors, mh::from_point_estimates(mixture::point_estimates(fit.posterior)));
      const auto draws = mh::mh_independence(
          x, cfg.priors, map, mh::unconstrained_covariance(theta_cov, sys.layout), cfg.mh);
      if (draws.low_acceptance) {
        std::cerr << "warning: acceptance rate " << fmt(draws.acceptance_rate) << " is very low\n";
      }
      const auto moments = mh::sample_moments(draws);
      emit(c.out, [&](std::ostream& o) { o << mh_json(map, draws, moments).dump(2) << '\n'; });
    } else if (leverage_cmd->parsed()) {
      SimulationConfig cfg = resolve(c, "leverage");
      if (c.seed) cfg.master_seed = *c.seed;
      const auto run = run_leverage(cfg, jobs);
      emit(c.out, [&](std::ostream& o) { write_leverage_csv(run, o); });
      for (std::size_t n = 0; n < run.errors.size(); ++n) {
        if (!run.errors[n].empty()) std::cerr << "warning: observation " << n << ": "
                                              << run.errors[n] << '\n';
      }
    } else if (experiment_cmd->parsed()) {
      SimulationConfig cfg = resolve(c);
      if (c.seed) cfg.master_seed = *c.seed;
      ExperimentOptions opts;
      if (!sims.empty()) opts.sims = parse_sim_list(sims);
      opts.jobs = jobs;
      opts.timing = timing;
      std::vector<SimOutcome> outcomes;
      emit(c.out, [&](std::ostream& o) { outcomes = run_experiment(cfg, o, opts); });
      for (const auto& s : outcomes) {
        for (const auto* m : {&s.mfvb, &s.lrvb, &s.mh}) {
          if (!m->error.empty()) std::cerr << "sim " << s.sim_id << ": " << m->error << '\n';
        }
      }
    } else if (report_cmd->parsed()) {
      Report report;
      for (const auto& path : inputs) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        try {
          add_to_report(report, in, th);
        } catch (const CsvParseError& e) {
          throw std::runtime_error(path + ": " + e.what());
        }
      }
      write_text_summary(report, std::cout);
      if (!c.out.empty()) emit(c.out, [&](std::ostream& o) { write_csv_summary(report, o); });
      return report.pass() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
