#ifndef LRVB_HARNESS_EXPERIMENT_HPP
#define LRVB_HARNESS_EXPERIMENT_HPP

// Experiment runners. Each simulation is an independent job that owns its
// RNG streams and renders its rows into its own buffer; buffers are written
// in sim_id order, so the output does not depend on scheduling.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lrvb/harness/config.hpp"
#include "lrvb/harness/simulate.hpp"
#include "lrvb/leverage.hpp"
#include "lrvb/lrvb_core.hpp"
#include "lrvb/mh.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::harness {

inline constexpr const char* kResultsHeader =
    "sim_id,method,parameter,point_estimate,sd_estimate,mc_se,timing_ms,error";
inline constexpr const char* kLeverageHeader =
    "n,x_star,k,responsibility,lrvb_score,perturbation_score,lrvb_ms,perturb_ms";

/// Shortest round-trip-safe rendering would vary by library; a fixed
/// 12-significant-digit format keeps files byte-stable.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

/// Commas and newlines would break the CSV.
inline std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return s;
}

inline std::vector<std::string> parameter_labels(int k_count) {
  std::vector<std::string> out;
  for (const char* group : {"logpi", "mu", "logtau"}) {
    for (int k = 1; k <= k_count; ++k) out.push_back(std::string(group) + "_" + std::to_string(k));
  }
  return out;
}

struct MethodSummary {
  Eigen::VectorXd point;  // 3K in (log pi, mu, log tau) order
  Eigen::VectorXd sd;
  std::optional<Eigen::VectorXd> mc_se;
  double timing_ms = 0;
  std::string error;  // non-empty: the method failed and the numbers are absent
};

struct SimOutcome {
  std::uint64_t sim_id = 0;
  MethodSummary mfvb, lrvb, mh;
  double fit_residual = 0;
  double acceptance_rate = 0;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

/// Theta-coordinate indices of (log pi_k, mu_k, log tau_k) in reporting order.
inline std::vector<Index> reporting_indices(const MeanLayout& lay) {
  std::vector<Index> idx;
  for (Index k = 0; k < lay.components; ++k) idx.push_back(lay.logpi(k));
  for (Index k = 0; k < lay.components; ++k) idx.push_back(lay.mu(k));
  for (Index k = 0; k < lay.components; ++k) idx.push_back(lay.logtau(k));
  return idx;
}

inline Eigen::VectorXd sd_from(const MatrixXd& cov, const std::vector<Index>& idx) {
  Eigen::VectorXd sd(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sd[static_cast<Index>(i)] = std::sqrt(std::max(0.0, cov(idx[i], idx[i])));
  }
  return sd;
}

}  // namespace detail

/// simulate -> MFVB -> LRVB -> MAP + MH for one sim. Failures are recorded
/// per method and never thrown.
inline SimOutcome run_simulation(const SimulationConfig& cfg, std::uint64_t sim_id) {
  using clock = std::chrono::steady_clock;
  SimOutcome out;
  out.sim_id = sim_id;
  const SimulatedData data = simulate(cfg, sim_id);
  const auto moments = data.moments();

  mixture::FitOptions fit_opts = cfg.fit;
  fit_opts.seed = derive_seed(cfg.master_seed, sim_id, Phase::fit);
  std::optional<mixture::FitResult> fit;
  auto start = clock::now();
  try {
    fit = mixture::fit(moments, cfg.K, cfg.priors, fit_opts);
    out.fit_residual = fit->final_residual;
    if (!fit->converged) {
      out.mfvb.error = "mfvb fit did not converge (residual " + fmt(fit->final_residual) + ")";
    }
  } catch (const std::exception& e) {
    out.mfvb.error = std::string("mfvb fit failed: ") + e.what();
  }
  const double fit_ms = detail::elapsed_ms(start);
  out.mfvb.timing_ms = fit_ms;

  std::optional<LrvbEstimate> est;
  MeanLayout layout;
  MatrixXd v_theta;
  if (out.mfvb.error.empty()) {
    const auto sys = make_system(ModelKind::mixture, moments, cfg.priors, fit->posterior);
    layout = sys.layout;
    const auto idx = detail::reporting_indices(layout);
    const VectorXd m = mean_vector(sys);
    out.mfvb.point.resize(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) out.mfvb.point[static_cast<Index>(i)] = m[idx[i]];
    start = clock::now();
    const BlockDiagonal sigma_q = assemble_sigma_q(sys);
    v_theta = sigma_q.restricted(0, layout.theta_dim);
    out.mfvb.sd = detail::sd_from(v_theta, idx);
    try {
      est = lrvb_estimate(sys, 10.0 * cfg.fit.tolerance);
      out.lrvb.point = out.mfvb.point;
      out.lrvb.sd = detail::sd_from(est->sigma_hat_theta, idx);
    } catch (const std::exception& e) {
      out.lrvb.error = std::string("lrvb failed: ") + e.what();
    }
    out.lrvb.timing_ms = fit_ms + detail::elapsed_ms(start);
  } else {
    out.lrvb.error = "skipped: " + out.mfvb.error;
    out.mh.error = "skipped: " + out.mfvb.error;
    return out;
  }

  start = clock::now();
  try {
    const auto map = mh::find_map(data.x, cfg.priors,
                                  mh::from_point_estimates(mixture::point_estimates(fit->posterior)));
    // Mean-field covariance when the linear-response one is missing.
    const MatrixXd cov = mh::unconstrained_covariance(est ? est->sigma_hat_theta : v_theta, layout);
    mh::MhConfig mh_cfg = cfg.mh;
    mh_cfg.seed = derive_seed(cfg.master_seed, sim_id, Phase::mh);
    const auto draws = mh::mh_independence(data.x, cfg.priors, map, cov, mh_cfg);
    out.acceptance_rate = draws.acceptance_rate;
    const auto sm = mh::sample_moments(draws);
    out.mh.point = sm.mean;
    out.mh.sd = sm.sd;
    out.mh.mc_se = sm.sd_mc_se;
    if (draws.low_acceptance) {
      out.mh.error = "mh acceptance rate " + fmt(draws.acceptance_rate) + " too low";
    }
  } catch (const std::exception& e) {
    out.mh.error = std::string("mh failed: ") + e.what();
  }
  out.mh.timing_ms = detail::elapsed_ms(start);
  return out;
}

/// Rows for one sim, methods in the order mfvb, lrvb, mh.
inline std::string render_rows(const SimOutcome& o, int k_count, bool timing) {
  const auto labels = parameter_labels(k_count);
  std::ostringstream s;
  const std::pair<const char*, const MethodSummary*> methods[] = {
      {"mfvb", &o.mfvb}, {"lrvb", &o.lrvb}, {"mh", &o.mh}};
  for (const auto& [name, m] : methods) {
    const bool ok = m->error.empty();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Index j = static_cast<Index>(i);
      s << o.sim_id << ',' << name << ',' << labels[i] << ',';
      if (ok) s << fmt(m->point[j]) << ',' << fmt(m->sd[j]);
      else s << ',';
      s << ',';
      if (ok && m->mc_se) s << fmt((*m->mc_se)[j]);
      s << ',';
      if (timing) s << fmt(m->timing_ms);
      s << ',' << sanitize(m->error) << '\n';
    }
  }
  return s.str();
}

struct ExperimentOptions {
  std::vector<std::uint64_t> sims;  // empty: 0 .. n_sims-1
  int jobs = 1;
  bool timing = false;  // timing_ms is left empty unless set, keeping output byte-stable
};

/// Parses "0-4,7,9" into sim ids.
inline std::vector<std::uint64_t> parse_sim_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) throw std::invalid_argument("empty entry in sim list '" + text + "'");
    const auto dash = part.find('-');
    try {
      std::size_t used = 0;
      if (dash == std::string::npos) {
        out.push_back(std::stoull(part, &used));
        if (used != part.size()) throw std::invalid_argument(part);
      } else {
        const std::string lo_s = part.substr(0, dash), hi_s = part.substr(dash + 1);
        const auto lo = std::stoull(lo_s, &used);
        if (used != lo_s.size()) throw std::invalid_argument(part);
        const auto hi = std::stoull(hi_s, &used);
        if (used != hi_s.size() || hi < lo) throw std::invalid_argument(part);
        for (auto i = lo; i <= hi; ++i) out.push_back(i);
      }
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad sim list entry '" + part + "'");
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

/// Runs `count` jobs on up to `jobs` threads; job i writes only slot i.
template <class Job>
void run_pool(std::size_t count, int jobs, Job&& job) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, jobs), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) job(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline std::vector<SimOutcome> run_experiment(const SimulationConfig& cfg, std::ostream& csv,
                                              const ExperimentOptions& opts = {}) {
  cfg.validate();
  std::vector<std::uint64_t> sims = opts.sims;
  if (sims.empty()) {
    for (int i = 0; i < cfg.n_sims; ++i) sims.push_back(static_cast<std::uint64_t>(i));
  }
  std::vector<SimOutcome> outcomes(sims.size());
  std::vector<std::string> buffers(sims.size());
  run_pool(sims.size(), opts.jobs, [&](std::size_t i) {
    outcomes[i] = run_simulation(cfg, sims[i]);
    buffers[i] = render_rows(outcomes[i], cfg.K, opts.timing);
  });
  csv << kResultsHeader << '\n';
  for (const auto& b : buffers) csv << b;
  return outcomes;
}

struct LeverageRun {
  Eigen::VectorXd x;
  Eigen::MatrixXd resp;             // N x K
  Eigen::MatrixXd lrvb_scores;      // K x N
  Eigen::MatrixXd perturb_scores;   // K x N, NaN where a refit failed
  std::vector<std::string> errors;  // per observation, empty when fine
  double lrvb_ms = 0;
  std::vector<double> perturb_ms;   // per observation (both refits)
  double delta = 0;
};

/// Leverage of every observation on E[mu_k], by linear response and by
/// manual perturbation, on data simulated as sim 0 of `cfg`.
inline LeverageRun run_leverage(const SimulationConfig& cfg, int jobs = 1) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  LeverageRun run;
  run.x = simulate(cfg, 0).x;
  leverage::LeverageModel model;
  model.data_star = run.x;
  model.truth_pi = cfg.truth_pi;
  model.truth_tau = cfg.truth_tau;
  model.priors = cfg.priors;
  mixture::FitOptions opts = cfg.fit;
  opts.seed = derive_seed(cfg.master_seed, 0, Phase::fit);
  const auto base = leverage::fit_base(model, opts);
  run.resp = base.posterior.resp;

  auto start = clock::now();
  const auto lev = leverage::mixture_leverage(model, base, 10.0 * opts.tolerance);
  run.lrvb_ms = detail::elapsed_ms(start);
  run.lrvb_scores = lev.scores.mu_scores;

  const Index n_obs = run.x.size();
  run.delta = leverage::default_perturbation_step(run.x);
  run.perturb_scores.resize(cfg.K, n_obs);
  run.errors.assign(static_cast<std::size_t>(n_obs), "");
  run.perturb_ms.assign(static_cast<std::size_t>(n_obs), 0.0);
  const auto refit_opts = leverage::perturbation_options(opts);
  run_pool(static_cast<std::size_t>(n_obs), jobs, [&](std::size_t i) {
    const Index n = static_cast<Index>(i);
    const auto t0 = clock::now();
    try {
      run.perturb_scores.col(n) =
          leverage::manual_perturbation(model, base, n, run.delta, refit_opts);
    } catch (const std::exception& e) {
      run.perturb_scores.col(n).setConstant(std::numeric_limits<double>::quiet_NaN());
      run.errors[i] = e.what();
    }
    run.perturb_ms[i] = detail::elapsed_ms(t0);
  });
  return run;
}

/// One row per (n, k); n is the 0-based observation index, k the 1-based
/// component. lrvb_ms is the wall-clock of the whole linear-response path and
/// repeats on every row; perturb_ms is the cost of observation n's refits.
/// A failed refit leaves perturbation_score empty.
inline void write_leverage_csv(const LeverageRun& run, std::ostream& csv) {
  csv << kLeverageHeader << '\n';
  for (Index n = 0; n < run.x.size(); ++n) {
    for (Index k = 0; k < run.lrvb_scores.rows(); ++k) {
      const double p = run.perturb_scores(k, n);
      csv << n << ',' << fmt(run.x[n]) << ',' << (k + 1) << ',' << fmt(run.resp(n, k)) << ','
          << fmt(run.lrvb_scores(k, n)) << ',' << (std::isnan(p) ? std::string() : fmt(p)) << ','
          << fmt(run.lrvb_ms) << ',' << fmt(run.perturb_ms[static_cast<std::size_t>(n)]) << '\n';
    }
  }
}

}  // namespace lrvb::harness

#endif  // LRVB_HARNESS_EXPERIMENT_HPP
