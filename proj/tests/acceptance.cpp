// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "lrvb/harness/config.hpp"
#include "lrvb/harness/experiment.hpp"
#include "lrvb/harness/report.hpp"
#include "lrvb/leverage.hpp"
#include "lrvb/lrvb_core.hpp"
#include "lrvb/mvn.hpp"
#include "support.hpp"

using namespace lrvb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) { return harness::fmt(v); }

// Fits shared by the Jacobian and residual criteria.
struct SmallFit {
  MixtureSystem sys;
  mixture::FitResult fit;
};

SmallFit small_fit(std::uint64_t seed) {
  const auto data = mixture::DataMoments::observed(testsupport::overlapping_data(50, seed));
  mixture::FitOptions opts;
  opts.tolerance = 1e-12;
  opts.seed = seed;
  const mixture::MixturePriors priors;
  auto fit = mixture::fit(data, 2, priors, opts);
  return {make_system(ModelKind::mixture, data, priors, fit.posterior), fit};
}

// Residuals of every fit accepted along the way, checked by criterion 5.
std::vector<std::pair<std::string, double>> accepted_residuals;

Outcome mvn_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  int targets = 0;
  for (std::uint64_t seed = 1; seed <= 28; ++seed) {
    std::mt19937_64 rng(seed * 104729);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>((seed - 1) % 7);
    std::normal_distribution<double> normal(0, 2);
    VectorXd mu(d);
    for (Eigen::Index i = 0; i < d; ++i) mu[i] = normal(rng);
    mvn::MvnTarget t{mu, testsupport::random_spd(d, rng), testsupport::random_partition(d, rng)};
    worst = std::max(worst, mvn::mvn_lrvb_check(t).max_rel_error);
    ++targets;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-8 && secs < 5.0, std::to_string(targets) + " targets, D 2..8, worst " +
                                          "relative Frobenius error " + num(worst) + ", " +
                                          num(secs) + " s"};
}

Outcome bivariate_closed_form() {
  const auto t0 = std::chrono::steady_clock::now();
  const MatrixXd sigma = (MatrixXd(2, 2) << 1, 0.9, 0.9, 1).finished();
  const auto t = mvn::MvnTarget::unit_blocks(Eigen::Vector2d(1, -1), sigma);
  const auto fit = mvn::mvn_mfvb_fit(t);
  const auto check = mvn::mvn_lrvb_check(t, fit);
  const double var_err = std::max(std::abs(fit.block_cov[0](0, 0) - 0.19),
                                  std::abs(fit.block_cov[1](0, 0) - 0.19));
  const double lrvb_err = (check.sigma_hat - sigma).cwiseAbs().maxCoeff();
  const double secs = seconds_since(t0);
  return {var_err < 1e-10 && lrvb_err < 1e-10 && secs < 1.0,
          "mfvb variances " + num(fit.block_cov[0](0, 0)) + ", " + num(fit.block_cov[1](0, 0)) +
              ", lrvb max abs error " + num(lrvb_err) + ", " + num(secs) + " s"};
}

Outcome linear_leverage() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2015);
  std::normal_distribution<double> normal;
  MatrixXd x(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = normal(rng);
  }
  const VectorXd hat = (x * (x.transpose() * x).ldlt().solve(x.transpose())).diagonal();
  const leverage::LinearModelCase c{x, 1.0, 1e-3};
  const auto closed = leverage::linear_leverage(c);
  const auto via = leverage::linear_leverage_via_lrvb(c);
  const double limit_err = (via.limit_scores - hat).cwiseAbs().maxCoeff();
  double route = 0;
  for (const auto& [a, b] : {std::pair{&via.cov_beta_y, &closed.cov_beta_y},
                             {&via.cov_yhat_y, &closed.cov_yhat_y}}) {
    route = std::max(route, (*a - *b).norm() / b->norm());
  }
  route = std::max(route, (via.scores - closed.scores).norm() / closed.scores.norm());
  route = std::max(route, (via.limit_scores - closed.limit_scores).norm() /
                              closed.limit_scores.norm());
  const double sum_err = std::abs(via.limit_scores.sum() - 3.0);
  const double secs = seconds_since(t0);
  return {limit_err < 1e-6 && route < 1e-9 && sum_err < 1e-9 && secs < 1.0,
          "limit vs diag(P_X) " + num(limit_err) + ", routes " + num(route) +
              ", |sum - p| " + num(sum_err) + ", " + num(secs) + " s"};
}

Outcome jacobian() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0, rzz = 0;
  Eigen::Index entries = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto inst = small_fit(seed);
    if (!inst.fit.converged) return {false, "fit for seed " + std::to_string(seed) + " did not converge"};
    accepted_residuals.emplace_back("jacobian seed " + std::to_string(seed), inst.fit.final_residual);
    const auto check = verify_jacobian(inst.sys, 1e-8);
    worst = std::max(worst, check.max_relative_error);
    rzz = std::max(rzz, check.analytic_rzz_max_abs);
    entries += check.entries_checked;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && rzz == 0.0 && secs < 10.0,
          "K=2 N=50, 5 fits, " + std::to_string(entries) + " entries, worst relative error " +
              num(worst) + ", max |R_zz| " + num(rzz) + ", " + num(secs) + " s"};
}

std::vector<harness::SimOutcome> desk_outcomes;
std::string desk_csv;
double desk_seconds = 0;

Outcome desk_reproduction() {
  const auto cfg = harness::desk_profile();
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream csv;
  desk_outcomes = harness::run_experiment(cfg, csv, {{}, 1, true});
  desk_seconds = seconds_since(t0);
  desk_csv = csv.str();
  std::size_t failed = 0;
  for (const auto& o : desk_outcomes) {
    if (o.mfvb.error.empty()) {
      accepted_residuals.emplace_back("desk sim " + std::to_string(o.sim_id), o.fit_residual);
    }
    failed += o.mfvb.error.empty() && o.lrvb.error.empty() && o.mh.error.empty() ? 0 : 1;
  }
  harness::Report report;
  std::istringstream in(desk_csv);
  try {
    harness::add_to_report(report, in, {});
  } catch (const std::exception& e) {
    return {false, std::string("report failed: ") + e.what()};
  }
  std::ostringstream detail;
  detail << cfg.n_sims << " sims, N=" << cfg.N << ", " << cfg.mh.n_draws << " draws, "
         << failed << " with errors";
  for (const auto& g : report.results->groups) {
    detail << "; " << g.group << " median lrvb/mh " << num(g.lrvb_mh.median) << " mfvb/mh "
           << num(g.mfvb_mh.median);
  }
  detail << "; mfvb/mh < 1 in " << num(report.results->mfvb_below_one) << " of cells, "
         << num(desk_seconds) << " s";
  for (const auto& c : report.checks) {
    if (!c.pass) detail << "; failed: " << c.name;
  }
  return {report.pass() && failed == 0 && desk_seconds < 900.0, detail.str()};
}

Outcome leverage_reproduction() {
  const auto cfg = harness::leverage_profile();
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = harness::run_leverage(cfg);
  const double secs = seconds_since(t0);
  {
    leverage::LeverageModel model;
    model.data_star = run.x;
    model.truth_pi = cfg.truth_pi;
    model.truth_tau = cfg.truth_tau;
    model.priors = cfg.priors;
    mixture::FitOptions opts = cfg.fit;
    opts.seed = harness::derive_seed(cfg.master_seed, 0, harness::Phase::fit);
    accepted_residuals.emplace_back("leverage base", leverage::fit_base(model, opts).final_residual);
  }
  std::ostringstream csv;
  harness::write_leverage_csv(run, csv);
  std::istringstream in(csv.str());
  const auto s = harness::summarize_leverage(harness::parse_leverage_csv(in));
  std::size_t refit_errors = 0;
  for (const auto& e : run.errors) refit_errors += e.empty() ? 0 : 1;
  return {s.correlation > 0.99 && s.max_relative_error < 0.05 && s.speedup >= 10.0 &&
              refit_errors == 0 && secs < 600.0,
          "K=2 N=" + std::to_string(cfg.N) + ", correlation " + num(s.correlation) +
              ", max relative error " + num(s.max_relative_error) + " over " +
              std::to_string(s.large_scores) + " large scores, speedup " + num(s.speedup) +
              ", " + std::to_string(refit_errors) + " failed refits, " + num(secs) + " s"};
}

Outcome fixed_point_tightness() {
  double worst = 0;
  std::string where;
  for (const auto& [name, r] : accepted_residuals) {
    if (!(r <= worst)) worst = r, where = name;
  }
  return {!accepted_residuals.empty() && worst < 1e-9,
          std::to_string(accepted_residuals.size()) + " accepted fits, worst sup-norm residual " +
              num(worst) + (where.empty() ? "" : " (" + where + ")")};
}

Outcome expfam_identities() {
  std::ostringstream detail;
  bool ok = true;
  for (auto f : {testsupport::Family::dirichlet, testsupport::Family::gamma,
                 testsupport::Family::normal, testsupport::Family::categorical}) {
    const auto check = testsupport::expfam_mc(f, 1000000, 777);
    ok = ok && check.worst_z < 4.0;
    detail << testsupport::family_name(f) << " " << num(check.worst_z) << " SE at "
           << check.where << "; ";
  }
  detail << "1e6 draws each";
  return {ok, detail.str()};
}

Outcome schur_consistency() {
  double worst = 0;
  Eigen::Index max_dim = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = mixture::DataMoments::observed(testsupport::overlapping_data(140, seed));
    mixture::FitOptions opts;
    opts.tolerance = 1e-12;
    opts.seed = seed;
    const auto fit = mixture::fit(data, 2, {}, opts);
    const auto sys = make_system(ModelKind::mixture, data, {}, fit.posterior);
    const auto& lay = sys.layout;
    max_dim = std::max(max_dim, lay.dim());
    const auto est = lrvb_estimate(sys, 1e-8);
    const auto dense =
        lrvb_covariance_dense(est.jacobian.dense(lay), est.sigma_q.dense(), lay.theta_dim);
    worst = std::max(worst, (est.sigma_hat_theta - dense.sigma_hat).norm() / dense.sigma_hat.norm());
  }
  return {worst < 1e-9 && max_dim <= 300,
          "5 instances, D up to " + std::to_string(max_dim) + ", worst relative difference " +
              num(worst)};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("lrvb_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string config = std::string(LRVB_TEST_DATA_DIR) + "/small_config.json";
  const auto run = [&](const std::string& name, const std::string& extra) {
    const fs::path out = dir / name;
    const std::string cmd = std::string("\"") + LRVB_CLI_PATH + "\" experiment --config \"" +
                            config + "\" --out \"" + out.string() + "\"" + extra;
    return std::system(cmd.c_str()) == 0 ? read_file(out) : std::string();
  };
  const std::string a = run("a.csv", "");
  const std::string b = run("b.csv", "");
  const std::string c = run("c.csv", " --jobs 2");
  fs::remove_all(dir);
  if (a.empty()) return {false, "experiment run failed"};
  return {a == b && a == c, "3 runs of " + std::to_string(std::count(a.begin(), a.end(), '\n')) +
                                " lines, " + (a == b ? "" : "reruns differ, ") +
                                (a == c ? "" : "threaded run differs, ") + "byte comparison"};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"MVN exactness", mvn_exactness},
      {"bivariate closed form", bivariate_closed_form},
      {"linear leverage oracle", linear_leverage},
      {"Jacobian verification", jacobian},
      // Runs after the criteria whose fits it audits.
      {"fixed-point tightness", nullptr},
      {"desk-scale sd ratios", desk_reproduction},
      {"leverage scores", leverage_reproduction},
      {"expfam identities", expfam_identities},
      {"Schur elimination", schur_consistency},
      {"determinism", cli_determinism},
  };
  std::vector<std::pair<int, Outcome>> results;
  for (int i = 0; i < 10; ++i) {
    if (!criteria[i].second) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    results.emplace_back(i + 1, o);
  }
  results.emplace_back(5, fixed_point_tightness());
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  int failures = 0;
  for (const auto& [id, o] : results) {
    failures += o.pass ? 0 : 1;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[id - 1].first,
                o.detail.c_str());
  }
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
