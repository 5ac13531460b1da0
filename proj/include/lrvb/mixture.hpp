#ifndef LRVB_MIXTURE_HPP
#define LRVB_MIXTURE_HPP

// Coordinate-ascent mean-field fit of the K-component univariate normal
// mixture with latent indicators:
//
//   pi ~ Dirichlet_K(alpha0), mu_k ~ N(m0, v0), tau_k ~ Gamma(a0, b0)
//   z_n ~ Categorical(pi),    x_n | z_n = k ~ N(mu_k, 1 / tau_k)
//
// q(pi) q(mu) q(tau) q(z) is updated in the fixed order z, pi, mu, tau.
// Each update reads only the expected sufficient statistics of the other
// factors, so one sweep is the fixed-point map m -> M(m).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvb/expfam.hpp"

namespace lrvb::mixture {

using expfam::DirichletBlock;
using expfam::GammaBlock;
using expfam::NormalBlock;

/// Expected data sufficient statistics. For observed data ex = x and
/// ex2 = x^2; for noisy data ex2 also carries the observation variance.
struct DataMoments {
  Eigen::VectorXd ex;
  Eigen::VectorXd ex2;

  static DataMoments observed(const Eigen::VectorXd& x) {
    return DataMoments{x, x.array().square().matrix()};
  }
  Eigen::Index size() const { return ex.size(); }
};

struct MixturePriors {
  double dirichlet_alpha = 1.0;
  double gamma_shape = 2.0001;  // shape-rate convention
  double gamma_rate = 0.1;
  double normal_mean = 0.0;
  double normal_variance = 100.0;  // variance, not precision or sd

  void validate() const {
    if (!(dirichlet_alpha > 0) || !(gamma_shape > 0) || !(gamma_rate > 0) ||
        !(normal_variance > 0) || !std::isfinite(normal_mean)) {
      throw std::domain_error("mixture priors must be positive (mean finite)");
    }
  }
};

struct MixturePosterior {
  DirichletBlock pi;
  std::vector<NormalBlock> mu;
  std::vector<GammaBlock> tau;
  Eigen::MatrixXd resp;  // N x K

  Eigen::Index components() const { return pi.alpha.size(); }
  Eigen::Index observations() const { return resp.rows(); }
};

struct FitOptions {
  int max_iterations = 10000;
  double tolerance = 1e-9;
  int n_restarts = 0;
  std::uint64_t seed = 0;
};

/// Blocks held at fixed values during a fit. A frozen block is never
/// updated; its values are taken from the initial posterior.
struct FrozenBlocks {
  bool pi = false;
  bool tau = false;
};

struct FitResult {
  MixturePosterior posterior;
  int iterations = 0;
  double final_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  std::vector<int> empty_components;  // components that fell back to the prior
  int restart = 0;
};

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int iteration)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// Expected sufficient statistics of the global factors, as read by the
/// local (z) update and by each other.
struct GlobalMoments {
  Eigen::VectorXd e_log_pi;
  Eigen::VectorXd e_mu;
  Eigen::VectorXd e_mu2;
  Eigen::VectorXd e_tau;
  Eigen::VectorXd e_log_tau;
};

/// Below this responsibility mass a component's mu and tau updates return
/// the prior block exactly.
inline constexpr double kEmptyComponentMass = 1e-8;

inline GlobalMoments global_moments(const MixturePosterior& post) {
  const Eigen::Index k = post.components();
  GlobalMoments g;
  g.e_log_pi = expfam::dirichlet_moments(post.pi).mean;
  g.e_mu.resize(k);
  g.e_mu2.resize(k);
  g.e_tau.resize(k);
  g.e_log_tau.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& mu = post.mu[static_cast<std::size_t>(j)];
    const auto& tau = post.tau[static_cast<std::size_t>(j)];
    g.e_mu[j] = mu.mean;
    g.e_mu2[j] = mu.mean * mu.mean + mu.variance;
    g.e_tau[j] = tau.shape / tau.rate;
    g.e_log_tau[j] = digamma(tau.shape) - std::log(tau.rate);
  }
  return g;
}

/// Unnormalized log responsibility of observation n for component k
/// (the -log(2 pi)/2 constant is dropped; it cancels in the softmax).
inline double z_logit(const GlobalMoments& g, double ex, double ex2, Eigen::Index k) {
  const double quad = ex2 - 2.0 * ex * g.e_mu[k] + g.e_mu2[k];
  return g.e_log_pi[k] + 0.5 * g.e_log_tau[k] - 0.5 * g.e_tau[k] * quad;
}

inline Eigen::MatrixXd update_z(const DataMoments& data, const GlobalMoments& g) {
  const Eigen::Index n_obs = data.size();
  const Eigen::Index k = g.e_mu.size();
  Eigen::MatrixXd resp(n_obs, k);
  Eigen::VectorXd logits(k);
  for (Eigen::Index n = 0; n < n_obs; ++n) {
    for (Eigen::Index j = 0; j < k; ++j) logits[j] = z_logit(g, data.ex[n], data.ex2[n], j);
    resp.row(n) = expfam::softmax_from_logits(logits).transpose();
  }
  return resp;
}

inline Eigen::MatrixXd update_z(const DataMoments& data, const MixturePosterior& post) {
  return update_z(data, global_moments(post));
}

inline DirichletBlock update_pi(const MixturePriors& priors, const Eigen::MatrixXd& resp,
                                Eigen::Index components) {
  Eigen::VectorXd alpha = Eigen::VectorXd::Constant(components, priors.dirichlet_alpha);
  if (resp.rows() > 0) alpha += resp.colwise().sum().transpose();
  return DirichletBlock{alpha};
}

inline DirichletBlock update_pi(const MixturePriors& priors, const Eigen::MatrixXd& resp) {
  return update_pi(priors, resp, resp.cols());
}

inline std::vector<NormalBlock> update_mu(const MixturePriors& priors, const DataMoments& data,
                                          const Eigen::MatrixXd& resp,
                                          const Eigen::VectorXd& e_tau) {
  const Eigen::Index k = resp.cols();
  std::vector<NormalBlock> out(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    const double mass = resp.col(j).sum();
    if (mass < kEmptyComponentMass) {
      out[static_cast<std::size_t>(j)] = NormalBlock{priors.normal_mean, priors.normal_variance};
      continue;
    }
    const double weighted_x = resp.col(j).dot(data.ex);
    const double precision = 1.0 / priors.normal_variance + e_tau[j] * mass;
    const double variance = 1.0 / precision;
    const double mean =
        variance * (priors.normal_mean / priors.normal_variance + e_tau[j] * weighted_x);
    out[static_cast<std::size_t>(j)] = NormalBlock{mean, variance};
  }
  return out;
}

inline std::vector<GammaBlock> update_tau(const MixturePriors& priors, const DataMoments& data,
                                          const Eigen::MatrixXd& resp,
                                          const Eigen::VectorXd& e_mu,
                                          const Eigen::VectorXd& e_mu2) {
  const Eigen::Index k = resp.cols();
  std::vector<GammaBlock> out(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    const double mass = resp.col(j).sum();
    if (mass < kEmptyComponentMass) {
      out[static_cast<std::size_t>(j)] = GammaBlock{priors.gamma_shape, priors.gamma_rate};
      continue;
    }
    double quad = 0.0;
    for (Eigen::Index n = 0; n < data.size(); ++n) {
      quad += resp(n, j) * (data.ex2[n] - 2.0 * data.ex[n] * e_mu[j] + e_mu2[j]);
    }
    out[static_cast<std::size_t>(j)] =
        GammaBlock{priors.gamma_shape + 0.5 * mass, priors.gamma_rate + 0.5 * quad};
  }
  return out;
}

/// (E[log pi_k], E[mu_k], E[log tau_k]) for each component.
struct PointEstimate {
  double log_pi;
  double mu;
  double log_tau;
};

inline std::vector<PointEstimate> point_estimates(const MixturePosterior& post) {
  const GlobalMoments g = global_moments(post);
  std::vector<PointEstimate> out;
  for (Eigen::Index k = 0; k < post.components(); ++k) {
    out.push_back({g.e_log_pi[k], g.e_mu[k], g.e_log_tau[k]});
  }
  return out;
}

namespace detail {

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

inline bool all_finite(const MixturePosterior& post) {
  if (!post.pi.alpha.allFinite() || !post.resp.allFinite()) return false;
  for (const auto& m : post.mu) {
    if (!std::isfinite(m.mean) || !std::isfinite(m.variance)) return false;
  }
  for (const auto& t : post.tau) {
    if (!std::isfinite(t.shape) || !std::isfinite(t.rate)) return false;
  }
  return true;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Sup-norm distance between the mean vector of `post` and the simultaneous
/// update of every non-frozen block evaluated at those means.
inline double fixed_point_residual(const DataMoments& data, const MixturePriors& priors,
                                   const MixturePosterior& post, FrozenBlocks frozen = {}) {
  const GlobalMoments g = global_moments(post);
  const Eigen::Index k = post.components();
  double residual = 0.0;

  residual = std::max(residual, detail::max_abs_diff(update_z(data, g), post.resp));
  if (!frozen.pi) {
    const auto pi = update_pi(priors, post.resp, k);
    residual = std::max(residual,
                        detail::max_abs_diff(expfam::dirichlet_moments(pi).mean, g.e_log_pi));
  }
  const auto mu = update_mu(priors, data, post.resp, g.e_tau);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& b = mu[static_cast<std::size_t>(j)];
    residual = std::max(residual, std::abs(b.mean - g.e_mu[j]));
    residual = std::max(residual, std::abs(b.mean * b.mean + b.variance - g.e_mu2[j]));
  }
  if (!frozen.tau) {
    const auto tau = update_tau(priors, data, post.resp, g.e_mu, g.e_mu2);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& b = tau[static_cast<std::size_t>(j)];
      residual = std::max(residual, std::abs(b.shape / b.rate - g.e_tau[j]));
      residual =
          std::max(residual, std::abs(digamma(b.shape) - std::log(b.rate) - g.e_log_tau[j]));
    }
  }
  return residual;
}

/// Sum of log-normalizers of the global blocks; a deterministic tie-breaker
/// between restarts, not an objective.
inline double diagnostic_objective(const MixturePosterior& post) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < post.components(); ++k) total += std::lgamma(post.pi.alpha[k]);
  total -= std::lgamma(post.pi.alpha.sum());
  for (const auto& m : post.mu) total += 0.5 * m.mean * m.mean / m.variance + 0.5 * std::log(m.variance);
  for (const auto& t : post.tau) total += std::lgamma(t.shape) - t.shape * std::log(t.rate);
  return total;
}

/// Relabels components so that E[mu_k] is ascending; returns the permutation
/// (new index -> old index).
inline std::vector<Eigen::Index> align_components(MixturePosterior& post) {
  const Eigen::Index k = post.components();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return post.mu[static_cast<std::size_t>(a)].mean < post.mu[static_cast<std::size_t>(b)].mean;
  });
  MixturePosterior sorted = post;
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto src = order[static_cast<std::size_t>(j)];
    sorted.pi.alpha[j] = post.pi.alpha[src];
    sorted.mu[static_cast<std::size_t>(j)] = post.mu[static_cast<std::size_t>(src)];
    sorted.tau[static_cast<std::size_t>(j)] = post.tau[static_cast<std::size_t>(src)];
    sorted.resp.col(j) = post.resp.col(src);
  }
  post = std::move(sorted);
  return order;
}

/// Quantile-split initial responsibilities: sort by E[x], cut into K equal
/// groups, one-hot, then smooth r <- 0.9 r + 0.1 / K.
inline Eigen::MatrixXd quantile_split_responsibilities(const DataMoments& data,
                                                       Eigen::Index components) {
  const Eigen::Index n_obs = data.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_obs));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return data.ex[a] < data.ex[b]; });
  Eigen::MatrixXd resp = Eigen::MatrixXd::Constant(n_obs, components, 0.1 / components);
  for (Eigen::Index rank = 0; rank < n_obs; ++rank) {
    const Eigen::Index group = std::min(components - 1, rank * components / n_obs);
    resp(order[static_cast<std::size_t>(rank)], group) += 0.9;
  }
  return resp;
}

/// Builds global blocks from responsibilities: pi, then mu with tau at its
/// prior mean, then tau.
inline MixturePosterior posterior_from_responsibilities(const DataMoments& data,
                                                        const MixturePriors& priors,
                                                        Eigen::MatrixXd resp) {
  const Eigen::Index k = resp.cols();
  MixturePosterior post;
  post.pi = update_pi(priors, resp, k);
  const Eigen::VectorXd prior_tau =
      Eigen::VectorXd::Constant(k, priors.gamma_shape / priors.gamma_rate);
  post.mu = update_mu(priors, data, resp, prior_tau);
  Eigen::VectorXd e_mu(k), e_mu2(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& b = post.mu[static_cast<std::size_t>(j)];
    e_mu[j] = b.mean;
    e_mu2[j] = b.mean * b.mean + b.variance;
  }
  post.tau = update_tau(priors, data, resp, e_mu, e_mu2);
  post.resp = std::move(resp);
  return post;
}

/// Runs coordinate-ascent sweeps from `init` until the fixed-point residual
/// drops to opts.tolerance or opts.max_iterations is reached.
inline FitResult fit_from(const DataMoments& data, const MixturePriors& priors,
                          const FitOptions& opts, MixturePosterior init,
                          FrozenBlocks frozen = {}) {
  if (!(opts.tolerance > 0)) throw std::invalid_argument("fit tolerance must be positive");
  const Eigen::Index k = init.components();
  FitResult result;
  result.posterior = std::move(init);
  MixturePosterior& post = result.posterior;

  for (int it = 1; it <= opts.max_iterations; ++it) {
    GlobalMoments g = global_moments(post);
    try {
      post.resp = update_z(data, g);
    } catch (const std::domain_error& e) {
      throw NumericError(std::string("responsibility update: ") + e.what(), it);
    }
    if (!frozen.pi) post.pi = update_pi(priors, post.resp, k);
    post.mu = update_mu(priors, data, post.resp, g.e_tau);
    for (Eigen::Index j = 0; j < k; ++j) {
      const auto& b = post.mu[static_cast<std::size_t>(j)];
      g.e_mu[j] = b.mean;
      g.e_mu2[j] = b.mean * b.mean + b.variance;
    }
    if (!frozen.tau) post.tau = update_tau(priors, data, post.resp, g.e_mu, g.e_mu2);

    if (!detail::all_finite(post)) throw NumericError("non-finite value in mixture update", it);

    result.iterations = it;
    result.final_residual = fixed_point_residual(data, priors, post, frozen);
    if (!std::isfinite(result.final_residual)) {
      throw NumericError("non-finite fixed-point residual", it);
    }
    if (result.final_residual <= opts.tolerance) {
      result.converged = true;
      break;
    }
  }

  result.empty_components.clear();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (post.resp.col(j).sum() < kEmptyComponentMass) {
      result.empty_components.push_back(static_cast<int>(j));
    }
  }
  return result;
}

/// Full fit with quantile-split initialization and opts.n_restarts extra
/// runs from Dirichlet(5)-perturbed responsibilities.
///
/// Frozen blocks take their values from `frozen_values` (which must be
/// given when any block is frozen) and keep them bit for bit. Components are
/// relabeled by ascending E[mu_k] unless some block is frozen, since frozen
/// blocks pin the labels.
inline FitResult fit(const DataMoments& data, Eigen::Index components,
                     const MixturePriors& priors, const FitOptions& opts,
                     FrozenBlocks frozen = {},
                     const MixturePosterior* frozen_values = nullptr) {
  priors.validate();
  if (data.size() < 1) throw std::invalid_argument("fit needs at least one observation");
  if (components < 1) throw std::invalid_argument("fit needs at least one component");
  if ((frozen.pi || frozen.tau) && frozen_values == nullptr) {
    throw std::invalid_argument("frozen blocks need fixed values");
  }

  const Eigen::MatrixXd base = quantile_split_responsibilities(data, components);
  std::optional<FitResult> best;
  for (int restart = 0; restart <= opts.n_restarts; ++restart) {
    Eigen::MatrixXd resp = base;
    if (restart > 0) {
      std::mt19937_64 rng(detail::splitmix64(opts.seed ^ detail::splitmix64(restart)));
      std::gamma_distribution<double> gamma(5.0, 1.0);
      for (Eigen::Index n = 0; n < resp.rows(); ++n) {
        Eigen::VectorXd noise(components);
        for (Eigen::Index j = 0; j < components; ++j) noise[j] = gamma(rng);
        noise /= noise.sum();
        resp.row(n) = 0.5 * resp.row(n) + 0.5 * noise.transpose();
      }
    }
    MixturePosterior init = posterior_from_responsibilities(data, priors, resp);
    if (frozen.pi) init.pi = frozen_values->pi;
    if (frozen.tau) init.tau = frozen_values->tau;

    FitResult candidate = fit_from(data, priors, opts, std::move(init), frozen);
    candidate.restart = restart;
    if (!best) {
      best = std::move(candidate);
      continue;
    }
    // Converged runs tie on residual; then the lower diagnostic objective,
    // then the earlier restart.
    const double cand_key = candidate.converged ? 0.0 : candidate.final_residual;
    const double best_key = best->converged ? 0.0 : best->final_residual;
    if (cand_key < best_key ||
        (cand_key == best_key && diagnostic_objective(candidate.posterior) <
                                     diagnostic_objective(best->posterior))) {
      best = std::move(candidate);
    }
  }
  if (!frozen.pi && !frozen.tau) align_components(best->posterior);
  return std::move(*best);
}

}  // namespace lrvb::mixture

#endif  // LRVB_MIXTURE_HPP
