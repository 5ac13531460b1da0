// Fit a two-component normal mixture with mean-field VB, then compare the
// mean-field standard deviations with the linear-response ones.

#include <cmath>
#include <cstdio>
#include <random>

#include "lrvb/lrvb_core.hpp"
#include "lrvb/mixture.hpp"

int main() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::bernoulli_distribution second(0.6);
  Eigen::VectorXd x(1000);
  for (Eigen::Index n = 0; n < x.size(); ++n) x[n] = (second(rng) ? 2.0 : -2.0) + noise(rng);

  const auto data = lrvb::mixture::DataMoments::observed(x);
  const lrvb::mixture::MixturePriors priors;  // Dirichlet(1), Gamma(2.0001, 0.1), N(0, 100)
  const auto fit = lrvb::mixture::fit(data, 2, priors, {});
  if (!fit.converged) {
    std::fprintf(stderr, "fit did not converge\n");
    return 1;
  }
  std::printf("converged after %d sweeps, residual %.2e\n", fit.iterations, fit.final_residual);

  const auto sys = lrvb::make_system(lrvb::ModelKind::mixture, data, priors, fit.posterior);
  const auto est = lrvb::lrvb_estimate(sys, 1e-8);
  const Eigen::MatrixXd v = est.sigma_q.restricted(0, sys.layout.theta_dim);
  const Eigen::VectorXd m = lrvb::mean_vector(sys);

  std::printf("%-10s %12s %12s %12s\n", "parameter", "mean", "sd mfvb", "sd lrvb");
  for (Eigen::Index i = 0; i < sys.layout.theta_dim; ++i) {
    std::printf("%-10s %12.5f %12.5f %12.5f\n", sys.layout.label(i).c_str(), m[i],
                std::sqrt(v(i, i)), std::sqrt(est.sigma_hat_theta(i, i)));
  }
}
