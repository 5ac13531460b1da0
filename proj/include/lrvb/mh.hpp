#ifndef LRVB_MH_HPP
#define LRVB_MH_HPP

// Metropolis-Hastings independence sampler on the collapsed mixture
// posterior p(pi, mu, tau | x), with z summed out. The chain runs in
// unconstrained coordinates (K-1 additive-logistic logits for pi, mu,
// log tau); proposals are Gaussian and centered at the MAP, which keeps the
// chain inside one labeling mode.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvb/layout.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::mh {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct UnconstrainedParams {
  VectorXd pi_logits;  // K - 1 entries, log(pi_k / pi_K)
  VectorXd mu;
  VectorXd log_tau;

  Index components() const { return mu.size(); }

  VectorXd to_vector() const {
    VectorXd v(pi_logits.size() + mu.size() + log_tau.size());
    v << pi_logits, mu, log_tau;
    return v;
  }

  static UnconstrainedParams from_vector(const VectorXd& v, Index components) {
    if (v.size() != 3 * components - 1) throw std::invalid_argument("parameter vector size");
    return {v.head(components - 1), v.segment(components - 1, components),
            v.tail(components)};
  }
};

/// log pi_k for all K components from the K-1 additive-logistic logits.
inline VectorXd log_pi_from_logits(const VectorXd& logits) {
  const Index k = logits.size() + 1;
  VectorXd full(k);
  full << logits, 0.0;
  const double top = full.maxCoeff();
  const double lse = top + std::log((full.array() - top).exp().sum());
  return full.array() - lse;
}

inline VectorXd logits_from_pi(const VectorXd& pi) {
  const Index k = pi.size();
  return (pi.head(k - 1).array().log() - std::log(pi[k - 1])).matrix();
}

/// Log posterior density in unconstrained coordinates, including the
/// log-Jacobians of pi (sum_k log pi_k) and tau (sum_k log tau_k).
inline double log_posterior(const UnconstrainedParams& params, const VectorXd& x,
                            const mixture::MixturePriors& priors) {
  constexpr double kLog2Pi = 1.8378770664093454836;  // log(2 pi)
  const Index k_count = params.components();
  const VectorXd log_pi = log_pi_from_logits(params.pi_logits);
  if (!log_pi.allFinite() || !params.mu.allFinite() || !params.log_tau.allFinite()) {
    return -std::numeric_limits<double>::infinity();
  }

  std::vector<double> offset(static_cast<std::size_t>(k_count));
  std::vector<double> half_tau(static_cast<std::size_t>(k_count));
  for (Index k = 0; k < k_count; ++k) {
    const auto i = static_cast<std::size_t>(k);
    offset[i] = log_pi[k] + 0.5 * params.log_tau[k] - 0.5 * kLog2Pi;
    half_tau[i] = 0.5 * std::exp(params.log_tau[k]);
  }

  double total = 0.0;
  std::vector<double> term(static_cast<std::size_t>(k_count));
  for (Index n = 0; n < x.size(); ++n) {
    double top = -std::numeric_limits<double>::infinity();
    for (Index k = 0; k < k_count; ++k) {
      const auto i = static_cast<std::size_t>(k);
      const double d = x[n] - params.mu[k];
      term[i] = offset[i] - half_tau[i] * d * d;
      top = std::max(top, term[i]);
    }
    double acc = 0.0;
    for (double t : term) acc += std::exp(t - top);
    total += top + std::log(acc);
  }

  const double a0 = priors.dirichlet_alpha;
  total += std::lgamma(k_count * a0) - k_count * std::lgamma(a0) + (a0 - 1.0) * log_pi.sum();
  for (Index k = 0; k < k_count; ++k) {
    const double dm = params.mu[k] - priors.normal_mean;
    total += -0.5 * (kLog2Pi + std::log(priors.normal_variance)) -
             0.5 * dm * dm / priors.normal_variance;
    const double tau = std::exp(params.log_tau[k]);
    total += priors.gamma_shape * std::log(priors.gamma_rate) - std::lgamma(priors.gamma_shape) +
             (priors.gamma_shape - 1.0) * params.log_tau[k] - priors.gamma_rate * tau;
  }
  total += log_pi.sum() + params.log_tau.sum();
  return std::isnan(total) ? -std::numeric_limits<double>::infinity() : total;
}

using Objective = std::function<double(const VectorXd&)>;

/// Central-difference gradient with h_i = step * max(1, |v_i|).
inline VectorXd numerical_gradient(const Objective& f, const VectorXd& v, double step = 1e-6) {
  VectorXd g(v.size());
  VectorXd probe = v;
  for (Index i = 0; i < v.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(v[i]));
    probe[i] = v[i] + h;
    const double up = f(probe);
    probe[i] = v[i] - h;
    const double down = f(probe);
    probe[i] = v[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline MatrixXd numerical_hessian(const Objective& f, const VectorXd& v, double step = 1e-4) {
  const Index d = v.size();
  MatrixXd h(d, d);
  VectorXd probe = v;
  for (Index j = 0; j < d; ++j) {
    const double hj = step * std::max(1.0, std::abs(v[j]));
    probe[j] = v[j] + hj;
    const VectorXd up = numerical_gradient(f, probe);
    probe[j] = v[j] - hj;
    const VectorXd down = numerical_gradient(f, probe);
    probe[j] = v[j];
    h.col(j) = (up - down) / (2.0 * hj);
  }
  return 0.5 * (h + h.transpose());
}

class MapError : public std::runtime_error {
 public:
  MapError(const std::string& what, VectorXd last) : std::runtime_error(what), last_(std::move(last)) {}
  const VectorXd& last_iterate() const { return last_; }

 private:
  VectorXd last_;
};

struct MaximizeResult {
  VectorXd argmax;
  double value = 0;
  double gradient_norm = 0;  // sup-norm
  int iterations = 0;
};

/// Quasi-Newton (BFGS, backtracking line search) ascent on f with numerical
/// gradients, finished with Newton steps on a numerical Hessian when BFGS
/// stalls. Stops once ||grad||_inf < gtol * (1 + |f|).
inline MaximizeResult maximize(const Objective& f, VectorXd v, double gtol = 1e-6,
                               int max_iterations = 500) {
  const Index d = v.size();
  double value = f(v);
  if (!std::isfinite(value)) throw MapError("objective is not finite at the start", v);
  VectorXd grad = numerical_gradient(f, v);
  MatrixXd inv_hess = MatrixXd::Identity(d, d);
  const auto done = [&] { return grad.cwiseAbs().maxCoeff() < gtol * (1.0 + std::abs(value)); };

  int it = 0;
  bool first = true;
  for (; it < max_iterations && !done(); ++it) {
    VectorXd dir = inv_hess * grad;
    if (dir.dot(grad) <= 0) {
      inv_hess.setIdentity();
      dir = grad;
    }
    double step = 1.0;
    if (first) step = std::min(1.0, 1.0 / std::max(1e-12, grad.norm()));
    VectorXd next;
    double next_value = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      next = v + step * dir;
      next_value = f(next);
      if (std::isfinite(next_value) && next_value >= value + 1e-4 * step * dir.dot(grad)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    const VectorXd next_grad = numerical_gradient(f, next);
    const VectorXd s = next - v;
    const VectorXd y = grad - next_grad;  // gradient of -f
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first) inv_hess *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const MatrixXd id = MatrixXd::Identity(d, d);
      inv_hess = (id - rho * s * y.transpose()) * inv_hess * (id - rho * y * s.transpose()) +
                 rho * s * s.transpose();
      first = false;
    }
    v = std::move(next);
    value = next_value;
    grad = next_grad;
  }

  // Newton polish on the numerical Hessian.
  for (int polish = 0; polish < 20 && !done(); ++polish, ++it) {
    const MatrixXd hess = numerical_hessian(f, v);
    Eigen::LLT<MatrixXd> llt(-hess);
    if (llt.info() != Eigen::Success) break;
    const VectorXd dir = llt.solve(grad);
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      const VectorXd next = v + step * dir;
      const double next_value = f(next);
      if (std::isfinite(next_value) && next_value >= value - 1e-9 * std::abs(value)) {
        v = next;
        value = next_value;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    grad = numerical_gradient(f, v);
  }

  if (!done()) throw MapError("MAP optimizer did not reach the gradient tolerance", v);
  return {v, value, grad.cwiseAbs().maxCoeff(), it};
}

inline UnconstrainedParams from_point_estimates(const std::vector<mixture::PointEstimate>& est) {
  const Index k = static_cast<Index>(est.size());
  UnconstrainedParams p;
  p.pi_logits.resize(k - 1);
  p.mu.resize(k);
  p.log_tau.resize(k);
  for (Index j = 0; j < k; ++j) {
    const auto& e = est[static_cast<std::size_t>(j)];
    if (j < k - 1) p.pi_logits[j] = e.log_pi - est.back().log_pi;
    p.mu[j] = e.mu;
    p.log_tau[j] = e.log_tau;
  }
  return p;
}

/// MAP of the collapsed posterior, started from `init` (normally the
/// mean-field point estimates).
inline UnconstrainedParams find_map(const VectorXd& x, const mixture::MixturePriors& priors,
                                    const UnconstrainedParams& init) {
  const Index k = init.components();
  const Objective f = [&](const VectorXd& v) {
    return log_posterior(UnconstrainedParams::from_vector(v, k), x, priors);
  };
  const auto result = maximize(f, init.to_vector());
  return UnconstrainedParams::from_vector(result.argmax, k);
}

struct MhConfig {
  int n_draws = 100000;
  int n_burn = 5000;
  double proposal_scale = 1.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(n_draws > n_burn && n_burn >= 0)) {
      throw std::invalid_argument("MH config needs n_draws > n_burn >= 0");
    }
    if (!(proposal_scale > 0)) throw std::invalid_argument("proposal_scale must be positive");
  }
};

/// Gaussian independence proposal.
struct GaussianProposal {
  VectorXd center;
  MatrixXd cov;
};

struct ChainOutput {
  MatrixXd draws;  // retained draws, one per row, in the sampler's coordinates
  double acceptance_rate = 0;
  bool low_acceptance = false;  // < 0.01 after burn-in
};

/// Independence sampler: accept theta' with probability
/// min(1, [p(theta') / g(theta')] / [p(theta) / g(theta)]). Deterministic
/// given cfg.seed. The chain starts at the proposal center.
inline ChainOutput independence_sampler(const Objective& log_target,
                                        const GaussianProposal& proposal, const MhConfig& cfg) {
  cfg.validate();
  const Index d = proposal.center.size();
  Eigen::LLT<MatrixXd> llt(proposal.cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument("proposal covariance is not positive definite");
  }
  const MatrixXd chol = llt.matrixL();
  const auto log_proposal = [&](const VectorXd& v) {
    const VectorXd w = chol.triangularView<Eigen::Lower>().solve(v - proposal.center);
    return -0.5 * w.squaredNorm();  // constants cancel in the ratio
  };

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  VectorXd current = proposal.center;
  double current_weight = log_target(current) - log_proposal(current);
  ChainOutput out;
  out.draws.resize(cfg.n_draws - cfg.n_burn, d);
  long accepted_after_burn = 0;
  VectorXd noise(d);
  for (int it = 0; it < cfg.n_draws; ++it) {
    for (Index i = 0; i < d; ++i) noise[i] = normal(rng);
    const VectorXd candidate = proposal.center + chol * noise;
    const double cand_weight = log_target(candidate) + 0.5 * noise.squaredNorm();
    const double log_u = std::log(uniform(rng));
    const bool accept = std::isfinite(cand_weight) &&
                        (!std::isfinite(current_weight) || log_u < cand_weight - current_weight);
    if (accept) {
      current = candidate;
      current_weight = cand_weight;
    }
    if (it >= cfg.n_burn) {
      if (accept) ++accepted_after_burn;
      out.draws.row(it - cfg.n_burn) = current.transpose();
    }
  }
  out.acceptance_rate =
      static_cast<double>(accepted_after_burn) / static_cast<double>(cfg.n_draws - cfg.n_burn);
  out.low_acceptance = out.acceptance_rate < 0.01;
  return out;
}

struct PosteriorDraws {
  MatrixXd draws;  // rows: (log pi [K], mu [K], log tau [K])
  double acceptance_rate = 0;
  bool low_acceptance = false;
  Index components = 0;
};

inline PosteriorDraws to_reporting_coordinates(const ChainOutput& chain, Index k) {
  PosteriorDraws out;
  out.components = k;
  out.acceptance_rate = chain.acceptance_rate;
  out.low_acceptance = chain.low_acceptance;
  out.draws.resize(chain.draws.rows(), 3 * k);
  for (Index r = 0; r < chain.draws.rows(); ++r) {
    const VectorXd row = chain.draws.row(r).transpose();
    out.draws.block(r, 0, 1, k) = log_pi_from_logits(row.head(k - 1)).transpose();
    out.draws.block(r, k, 1, 2 * k) = row.tail(2 * k).transpose();
  }
  return out;
}

/// Proposal covariance in unconstrained coordinates from a covariance over
/// the mixture theta block (log pi, mu, mu^2, tau, log tau). The logits are
/// the linear map l_k = log pi_k - log pi_K, so the mapping is exact.
inline MatrixXd unconstrained_covariance(const MatrixXd& theta_cov, const MeanLayout& layout) {
  const Index k = layout.components;
  MatrixXd jac = MatrixXd::Zero(3 * k - 1, layout.theta_dim);
  for (Index j = 0; j < k - 1; ++j) {
    jac(j, layout.logpi(j)) = 1.0;
    jac(j, layout.logpi(k - 1)) = -1.0;
  }
  for (Index j = 0; j < k; ++j) {
    jac(k - 1 + j, layout.mu(j)) = 1.0;
    jac(2 * k - 1 + j, layout.logtau(j)) = 1.0;
  }
  return jac * theta_cov * jac.transpose();
}

/// Independence sampler for the collapsed mixture posterior, proposals
/// N(map, scale^2 * cov_unconstrained).
inline PosteriorDraws mh_independence(const VectorXd& x, const mixture::MixturePriors& priors,
                                      const UnconstrainedParams& map,
                                      const MatrixXd& cov_unconstrained, const MhConfig& cfg) {
  const Index k = map.components();
  const Objective target = [&](const VectorXd& v) {
    return log_posterior(UnconstrainedParams::from_vector(v, k), x, priors);
  };
  const GaussianProposal proposal{map.to_vector(),
                                  cfg.proposal_scale * cfg.proposal_scale * cov_unconstrained};
  return to_reporting_coordinates(independence_sampler(target, proposal, cfg), k);
}

struct SampleMoments {
  VectorXd mean;      // 3K, label-aligned (log pi, mu, log tau)
  VectorXd sd;
  VectorXd sd_mc_se;  // batch-means standard error of each sd (20 batches)
};

inline constexpr int kBatches = 20;

/// Per-coordinate mean and sd, components ordered by ascending posterior
/// mean of mu.
inline SampleMoments sample_moments(const PosteriorDraws& draws) {
  const Index rows = draws.draws.rows();
  const Index k = draws.components;
  if (rows < 100) throw std::invalid_argument("sample_moments needs at least 100 draws");
  const VectorXd col_mean = draws.draws.colwise().mean().transpose();

  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return col_mean[k + a] < col_mean[k + b]; });
  std::vector<Index> cols;
  for (Index group = 0; group < 3; ++group) {
    for (Index j : order) cols.push_back(group * k + j);
  }

  const auto sd_of = [](const Eigen::Ref<const VectorXd>& v) {
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
  };
  SampleMoments out;
  out.mean.resize(3 * k);
  out.sd.resize(3 * k);
  out.sd_mc_se.resize(3 * k);
  const Index batch = rows / kBatches;
  for (Index c = 0; c < 3 * k; ++c) {
    const VectorXd column = draws.draws.col(cols[static_cast<std::size_t>(c)]);
    out.mean[c] = column.mean();
    out.sd[c] = sd_of(column);
    VectorXd batch_sd(kBatches);
    for (int b = 0; b < kBatches; ++b) batch_sd[b] = sd_of(column.segment(b * batch, batch));
    out.sd_mc_se[c] = sd_of(batch_sd) / std::sqrt(static_cast<double>(kBatches));
  }
  return out;
}

}  // namespace lrvb::mh

#endif  // LRVB_MH_HPP
