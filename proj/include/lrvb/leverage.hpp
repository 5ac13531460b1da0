#ifndef LRVB_LEVERAGE_HPP
#define LRVB_LEVERAGE_HPP

// Linear-response leverage scores: the covariance between an infinitesimally
// noisy observation x_n and the posterior means, divided by the noise
// variance. For the mixture with pi and tau fixed at known values,
//
//   L = (I - R_tt - R_tz R_zt)^{-1} (R_tx + R_tz R_zx) V_x,
//
// with V_x the per-observation blocks [[1, 2x*], [2x*, 4x*^2]]. For linear
// regression the same construction reproduces diag(P_X).

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvb/lrvb_core.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::leverage {

/// Concentration used to encode a known pi or tau as a (numerically)
/// degenerate variational block: E[log pi] and E[log tau] then differ from
/// log pi and log tau by O(1e-12).
inline constexpr double kPointMassScale = 1e12;

inline expfam::DirichletBlock point_mass_pi(const VectorXd& probs) {
  return expfam::DirichletBlock{probs * kPointMassScale};
}

inline std::vector<expfam::GammaBlock> point_mass_tau(const VectorXd& tau) {
  std::vector<expfam::GammaBlock> out;
  for (Index k = 0; k < tau.size(); ++k) {
    out.push_back({tau[k] * kPointMassScale, kPointMassScale});
  }
  return out;
}

struct LeverageModel {
  VectorXd data_star;
  VectorXd truth_pi;
  VectorXd truth_tau;
  mixture::MixturePriors priors;
  double sigma_x2 = 0.0;  // only used by the small-noise validation path

  Index components() const { return truth_pi.size(); }

  void validate() const {
    if (truth_pi.size() < 1 || truth_tau.size() != truth_pi.size()) {
      throw std::invalid_argument("truth_pi and truth_tau must have K >= 1 entries");
    }
    if ((truth_pi.array() < 0).any() || std::abs(truth_pi.sum() - 1.0) > 1e-10) {
      throw std::invalid_argument("truth_pi must lie on the simplex");
    }
    if (!(truth_tau.array() > 0).all()) {
      throw std::invalid_argument("truth_tau must be positive");
    }
    if (data_star.size() < 1) throw std::invalid_argument("leverage needs data");
    if (sigma_x2 < 0) throw std::invalid_argument("sigma_x2 must be nonnegative");
  }

  mixture::MixturePosterior frozen_values() const {
    mixture::MixturePosterior v;
    v.pi = point_mass_pi(truth_pi);
    v.tau = point_mass_tau(truth_tau);
    return v;
  }
};

inline constexpr mixture::FrozenBlocks kFrozenPiTau{true, true};

/// Mean-field fit of the model with pi and tau held at their true values.
inline mixture::FitResult fit_base(const LeverageModel& model, const mixture::FitOptions& opts) {
  model.validate();
  const auto values = model.frozen_values();
  auto result = mixture::fit(mixture::DataMoments::observed(model.data_star),
                             model.components(), model.priors, opts, kFrozenPiTau, &values);
  if (!result.converged) {
    throw std::runtime_error("leverage base fit did not converge (residual " +
                             std::to_string(result.final_residual) + ")");
  }
  return result;
}

struct LeverageScores {
  MatrixXd L;          // theta_dim x x_dim: rows (mu_k, mu_k^2), columns (x_n, x_n^2)
  MatrixXd mu_scores;  // K x N, rows mu_k and columns x_n of L
};

struct LeverageResult {
  LeverageScores scores;
  MeanLayout layout;
  JacobianBlocks jacobian;
  double condition = 0;
};

/// Applies the per-observation V_x blocks on the right: columns (2n, 2n+1)
/// of `b` are multiplied by [[1, 2x_n], [2x_n, 4x_n^2]].
inline MatrixXd times_vx(const MatrixXd& b, const VectorXd& x_star) {
  MatrixXd out(b.rows(), b.cols());
  for (Index n = 0; n < x_star.size(); ++n) {
    const double two_x = 2.0 * x_star[n];
    const auto c0 = b.col(2 * n);
    const auto c1 = b.col(2 * n + 1);
    out.col(2 * n) = c0 + two_x * c1;
    out.col(2 * n + 1) = two_x * c0 + two_x * two_x * c1;
  }
  return out;
}

/// Leverage scores from a converged base fit, in closed form in the
/// zero-noise limit.
inline LeverageResult mixture_leverage(const LeverageModel& model,
                                       const mixture::FitResult& base,
                                       double max_residual = 1e-8) {
  model.validate();
  const auto sys = make_system(ModelKind::mixture_leverage,
                               mixture::DataMoments::observed(model.data_star), model.priors,
                               base.posterior, kFrozenPiTau);
  LeverageResult out;
  out.layout = sys.layout;
  out.jacobian = jacobian_M(sys, max_residual);
  const auto& r = out.jacobian;
  const Index t = sys.layout.theta_dim;

  MatrixXd system = MatrixXd::Identity(t, t) - r.tt;
  system.noalias() -= r.tz * r.zt;
  Eigen::PartialPivLU<MatrixXd> lu(system);
  const double rcond = lu.rcond();
  out.condition = rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!std::isfinite(out.condition) || out.condition > kMaxCondition) {
    throw ConditioningError(out.condition);
  }
  MatrixXd coupling = r.tx;
  coupling.noalias() += r.tz * r.zx;
  out.scores.L = lu.solve(times_vx(coupling, model.data_star));

  const Index k_count = sys.layout.components;
  const Index n_obs = sys.layout.observations;
  out.scores.mu_scores.resize(k_count, n_obs);
  const Index x0 = sys.layout.theta_dim + sys.layout.z_dim;
  for (Index k = 0; k < k_count; ++k) {
    for (Index n = 0; n < n_obs; ++n) {
      out.scores.mu_scores(k, n) = out.scores.L(sys.layout.mu(k), sys.layout.x(n) - x0);
    }
  }
  return out;
}

inline LeverageResult mixture_leverage(const LeverageModel& model,
                                       const mixture::FitOptions& opts) {
  return mixture_leverage(model, fit_base(model, opts), 10.0 * opts.tolerance);
}

inline double default_perturbation_step(const VectorXd& x_star) {
  const double mean = x_star.mean();
  const double var =
      x_star.size() > 1 ? (x_star.array() - mean).square().sum() / (x_star.size() - 1) : 1.0;
  return 0.01 * std::sqrt(var);
}

/// Refit tolerance for perturbation refits.
inline mixture::FitOptions perturbation_options(mixture::FitOptions opts) {
  opts.tolerance = 1e-11;
  return opts;
}

/// d E[mu_k] / d x*_n by central differences of warm-started refits.
inline VectorXd manual_perturbation(const LeverageModel& model, const mixture::FitResult& base,
                                    Index n, double delta, const mixture::FitOptions& opts) {
  if (!(delta > 0)) throw std::invalid_argument("perturbation step must be positive");
  if (n < 0 || n >= model.data_star.size()) throw std::out_of_range("observation index");
  const Index k_count = model.components();
  VectorXd mu_plus(k_count), mu_minus(k_count);
  for (int side = 0; side < 2; ++side) {
    VectorXd x = model.data_star;
    x[n] += side == 0 ? delta : -delta;
    const auto refit = mixture::fit_from(mixture::DataMoments::observed(x), model.priors, opts,
                                         base.posterior, kFrozenPiTau);
    if (!refit.converged) {
      throw std::runtime_error(std::string("perturbation refit did not converge on the ") +
                               (side == 0 ? "+delta" : "-delta") + " side for observation " +
                               std::to_string(n));
    }
    VectorXd& target = side == 0 ? mu_plus : mu_minus;
    for (Index k = 0; k < k_count; ++k) {
      target[k] = refit.posterior.mu[static_cast<std::size_t>(k)].mean;
    }
  }
  return (mu_plus - mu_minus) / (2.0 * delta);
}

/// K x N matrix of manual-perturbation scores over every observation.
inline MatrixXd manual_perturbation_all(const LeverageModel& model,
                                        const mixture::FitResult& base, double delta,
                                        const mixture::FitOptions& opts) {
  MatrixXd out(model.components(), model.data_star.size());
  for (Index n = 0; n < model.data_star.size(); ++n) {
    out.col(n) = manual_perturbation(model, base, n, delta, opts);
  }
  return out;
}

/// Validation path: the full (theta, x) linear-response solve at a finite
/// noise variance sigma_x2, with q(x_n) a proper normal factor. Returns
/// Sigma_hat_{theta x}, which should approach sigma_x2 * L as the noise
/// vanishes.
inline MatrixXd small_noise_cross_covariance(const LeverageModel& model,
                                             const mixture::FitResult& base, double sigma_x2,
                                             double max_residual = 1e-8) {
  if (!(sigma_x2 > 0)) throw std::invalid_argument("sigma_x2 must be positive");
  const auto data = mixture::DataMoments::observed(model.data_star);
  const auto sys =
      make_system(ModelKind::mixture_leverage, data, model.priors, base.posterior, kFrozenPiTau);
  const MeanLayout& lay = sys.layout;
  JacobianBlocks r = jacobian_M(sys, max_residual);
  const auto g = mixture::global_moments(sys.post);
  const auto& resp = sys.post.resp;
  const Index t = lay.theta_dim, z = lay.z_dim, xd = lay.x_dim;
  const Index k_count = lay.components;

  // q(x_n): natural parameters (x*/s2 + sum_k r E[tau] E[mu], -(1/s2 + sum_k r E[tau]) / 2).
  r.xt = MatrixXd::Zero(xd, t);
  r.xz = MatrixXd::Zero(xd, z);
  MatrixXd v_x = MatrixXd::Zero(xd, xd);
  for (Index n = 0; n < lay.observations; ++n) {
    double lin = model.data_star[n] / sigma_x2;
    double precision = 1.0 / sigma_x2;
    for (Index k = 0; k < k_count; ++k) {
      lin += resp(n, k) * g.e_tau[k] * g.e_mu[k];
      precision += resp(n, k) * g.e_tau[k];
    }
    const expfam::NormalBlock qx{lin / precision, 1.0 / precision};
    const MatrixXd vn = expfam::normal_moments(qx).cov;
    const Index row = lay.x(n) - t - z;
    v_x.block(row, row, 2, 2) = vn;
    for (Index k = 0; k < k_count; ++k) {
      r.xt.block(row, lay.mu(k), 2, 1) = vn.col(0) * (resp(n, k) * g.e_tau[k]);
      r.xz.block(row, lay.z(n, k) - t, 2, 1) =
          vn * Eigen::Vector2d(g.e_tau[k] * g.e_mu[k], -0.5 * g.e_tau[k]);
    }
  }

  MatrixXd full(t + xd, t + xd);
  full.topLeftCorner(t, t) = MatrixXd::Identity(t, t) - r.tt - r.tz * r.zt;
  full.topRightCorner(t, xd) = -(r.tx + r.tz * r.zx);
  full.bottomLeftCorner(xd, t) = -(r.xt + r.xz * r.zt);
  full.bottomRightCorner(xd, xd) = MatrixXd::Identity(xd, xd) - r.xz * r.zx;
  MatrixXd rhs = MatrixXd::Zero(t + xd, xd);
  rhs.bottomRows(xd) = v_x;
  // Only the x columns of the right-hand side are needed for Sigma_{theta x}.
  return full.partialPivLu().solve(rhs).topRows(t);
}

// ---------------------------------------------------------------------------
// Linear regression with known noise variance.

struct LinearModelCase {
  MatrixXd X;          // N x p
  double sigma2 = 1;   // response noise variance
  double epsilon = 0;  // observation-noise variance, 0 <= epsilon < sigma2
};

struct LinearLeverage {
  MatrixXd cov_beta_y;   // p x N
  MatrixXd cov_yhat_y;   // N x N
  VectorXd limit_scores; // zero-noise leverage, diag(P_X)
  VectorXd scores;       // diag(cov_yhat_y) / epsilon (empty when epsilon == 0)
  double alpha = 1;      // sigma2 / (sigma2 - epsilon)
};

inline Eigen::ColPivHouseholderQR<MatrixXd> checked_qr(const LinearModelCase& c) {
  if (!(c.sigma2 > 0)) throw std::invalid_argument("sigma2 must be positive");
  if (!(c.epsilon >= 0)) throw std::invalid_argument("epsilon must be nonnegative");
  if (!(c.epsilon < c.sigma2)) {
    throw std::invalid_argument("epsilon must be smaller than sigma2 (alpha undefined)");
  }
  if (c.X.rows() < c.X.cols() || c.X.cols() < 1) {
    throw std::invalid_argument("design matrix must have N >= p >= 1");
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(c.X);
  if (qr.rank() < c.X.cols()) throw std::invalid_argument("design matrix is rank deficient");
  return qr;
}

/// Closed forms: Cov(beta, Y) = eps alpha (X^T X)^{-1} X^T, Cov(Yhat, Y) =
/// eps alpha P_X, limit scores diag(P_X).
inline LinearLeverage linear_leverage(const LinearModelCase& c) {
  const auto qr = checked_qr(c);
  const Index n = c.X.rows();
  const MatrixXd pinv = qr.solve(MatrixXd::Identity(n, n));  // (X^T X)^{-1} X^T
  const MatrixXd proj = c.X * pinv;
  LinearLeverage out;
  out.alpha = c.sigma2 / (c.sigma2 - c.epsilon);
  out.cov_beta_y = c.epsilon * out.alpha * pinv;
  out.cov_yhat_y = c.epsilon * out.alpha * proj;
  out.limit_scores = proj.diagonal();
  if (c.epsilon > 0) out.scores = out.cov_yhat_y.diagonal() / c.epsilon;
  return out;
}

/// The same quantities through the linear-response solve: beta and Y are
/// the two mean-field blocks, Y plays the role of the eliminated block.
inline LinearLeverage linear_leverage_via_lrvb(const LinearModelCase& c) {
  const auto qr = checked_qr(c);
  if (!(c.epsilon > 0)) throw std::invalid_argument("linear-response route needs epsilon > 0");
  const Index n = c.X.rows();
  const Index p = c.X.cols();
  const MatrixXd pinv = qr.solve(MatrixXd::Identity(n, n));
  const MatrixXd v_beta = c.sigma2 * pinv * pinv.transpose();  // sigma2 (X^T X)^{-1}

  JacobianBlocks r;
  r.tt = MatrixXd::Zero(p, p);
  r.tz = v_beta * c.X.transpose() / c.sigma2;  // V_beta dEta_beta/dm_Y
  r.zt = c.epsilon * c.X / c.sigma2;           // V_Y dEta_Y/dm_beta
  const auto sol = lrvb_covariance(v_beta, r);

  LinearLeverage out;
  out.alpha = c.sigma2 / (c.sigma2 - c.epsilon);
  out.cov_beta_y = (r.zt * sol.sigma_hat).transpose();
  out.cov_yhat_y = c.X * out.cov_beta_y;
  out.scores = out.cov_yhat_y.diagonal() / c.epsilon;

  // Zero-noise limit: R_zt = eps Q_zt vanishes, V_Y / eps = I.
  const MatrixXd lead = (MatrixXd::Identity(p, p) - r.tt).partialPivLu().solve(r.tz);
  out.limit_scores = (c.X * lead).diagonal();
  return out;
}

}  // namespace lrvb::leverage

#endif  // LRVB_LEVERAGE_HPP
