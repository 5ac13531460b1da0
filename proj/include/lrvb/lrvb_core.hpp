#ifndef LRVB_LRVB_CORE_HPP
#define LRVB_LRVB_CORE_HPP

// Linear-response covariance for the mixture models.
//
// With V = Sigma_q* (block diagonal) and R = dM/dm^T the Jacobian of the
// simultaneous block-update map at the fixed point, the corrected covariance
// is (I - R)^{-1} V. The indicator block never reads other indicators
// (R_zz = 0), so it is eliminated with a Schur complement:
//
//   Sigma_hat_theta = (I - R_tt - R_tz R_zt)^{-1} V_theta.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrvb/expfam.hpp"
#include "lrvb/layout.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when I - R is singular or too ill-conditioned for the corrected
/// covariance to mean anything (a non-isolated fixed point).
class ConditioningError : public std::runtime_error {
 public:
  explicit ConditioningError(double condition)
      : std::runtime_error(message(condition)), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  static std::string message(double condition) {
    std::ostringstream os;
    os << "linear-response system is ill-conditioned (condition estimate " << condition << ")";
    return os.str();
  }
  double condition_;
};

inline constexpr double kMaxCondition = 1e12;

struct BlockDiagonal {
  Index dim = 0;
  std::vector<Index> offsets;
  std::vector<MatrixXd> blocks;

  void push(Index offset, MatrixXd block) {
    offsets.push_back(offset);
    blocks.push_back(std::move(block));
  }

  /// Dense restriction to coordinates [begin, end); blocks must lie wholly
  /// inside or outside the range.
  MatrixXd restricted(Index begin, Index end) const {
    MatrixXd out = MatrixXd::Zero(end - begin, end - begin);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const Index lo = offsets[b];
      const Index size = blocks[b].rows();
      if (lo >= end || lo + size <= begin) continue;
      if (lo < begin || lo + size > end) {
        throw std::logic_error("block straddles the requested range");
      }
      out.block(lo - begin, lo - begin, size, size) = blocks[b];
    }
    return out;
  }

  MatrixXd dense() const { return restricted(0, dim); }
};

/// Partitioned Jacobian R = dM/dm^T. R_zz and R_xx are structurally zero
/// and not stored. The x blocks are empty for the plain mixture model, and
/// xt/xz are empty whenever the observation noise is taken to zero.
struct JacobianBlocks {
  MatrixXd tt, tz, zt;
  MatrixXd tx, zx;
  MatrixXd xt, xz;

  MatrixXd dense(const MeanLayout& layout) const {
    const Index t = layout.theta_dim, z = layout.z_dim, x = layout.x_dim;
    MatrixXd r = MatrixXd::Zero(layout.dim(), layout.dim());
    r.block(0, 0, t, t) = tt;
    r.block(0, t, t, z) = tz;
    r.block(t, 0, z, t) = zt;
    if (x > 0) {
      if (tx.size() > 0) r.block(0, t + z, t, x) = tx;
      if (zx.size() > 0) r.block(t, t + z, z, x) = zx;
      if (xt.size() > 0) r.block(t + z, 0, x, t) = xt;
      if (xz.size() > 0) r.block(t + z, t, x, z) = xz;
    }
    return r;
  }
};

/// Everything the fixed-point map reads: the layout, the data, the priors,
/// and the fitted posterior (which also supplies frozen block values).
struct MixtureSystem {
  MeanLayout layout;
  mixture::DataMoments data;
  mixture::MixturePriors priors;
  mixture::MixturePosterior post;
  mixture::FrozenBlocks frozen;
};

inline MixtureSystem make_system(ModelKind model, const mixture::DataMoments& data,
                                 const mixture::MixturePriors& priors,
                                 const mixture::MixturePosterior& post,
                                 mixture::FrozenBlocks frozen = {}) {
  if (model == ModelKind::mixture_leverage && !(frozen.pi && frozen.tau)) {
    throw std::invalid_argument("the leverage layout requires frozen pi and tau");
  }
  return MixtureSystem{build_layout(post.components(), data.size(), model), data, priors, post,
                       frozen};
}

inline VectorXd mean_vector(const MixtureSystem& sys) {
  const MeanLayout& lay = sys.layout;
  const auto g = mixture::global_moments(sys.post);
  VectorXd m(lay.dim());
  for (Index k = 0; k < lay.components; ++k) {
    if (lay.has_pi_tau()) {
      m[lay.logpi(k)] = g.e_log_pi[k];
      m[lay.tau(k)] = g.e_tau[k];
      m[lay.logtau(k)] = g.e_log_tau[k];
    }
    m[lay.mu(k)] = g.e_mu[k];
    m[lay.mu2(k)] = g.e_mu2[k];
  }
  for (Index n = 0; n < lay.observations; ++n) {
    for (Index k = 0; k < lay.components; ++k) m[lay.z(n, k)] = sys.post.resp(n, k);
  }
  if (lay.x_dim > 0) {
    for (Index n = 0; n < lay.observations; ++n) {
      m[lay.x(n)] = sys.data.ex[n];
      m[lay.x2(n)] = sys.data.ex2[n];
    }
  }
  return m;
}

/// Simultaneous update of every block from the means in m. Frozen blocks
/// and the x block (noise taken to zero) map to constants.
inline VectorXd fixed_point_map(const MixtureSystem& sys, const VectorXd& m) {
  const MeanLayout& lay = sys.layout;
  const Index k_count = lay.components;
  const Index n_obs = lay.observations;
  const auto fixed = mixture::global_moments(sys.post);
  auto g = fixed;
  for (Index k = 0; k < k_count; ++k) {
    if (lay.has_pi_tau()) {
      g.e_log_pi[k] = m[lay.logpi(k)];
      g.e_tau[k] = m[lay.tau(k)];
      g.e_log_tau[k] = m[lay.logtau(k)];
    }
    g.e_mu[k] = m[lay.mu(k)];
    g.e_mu2[k] = m[lay.mu2(k)];
  }
  MatrixXd resp(n_obs, k_count);
  for (Index n = 0; n < n_obs; ++n) {
    for (Index k = 0; k < k_count; ++k) resp(n, k) = m[lay.z(n, k)];
  }
  mixture::DataMoments data = sys.data;
  if (lay.x_dim > 0) {
    for (Index n = 0; n < n_obs; ++n) {
      data.ex[n] = m[lay.x(n)];
      data.ex2[n] = m[lay.x2(n)];
    }
  }

  VectorXd out(lay.dim());
  if (lay.has_pi_tau()) {
    const VectorXd logpi =
        sys.frozen.pi ? fixed.e_log_pi
                      : expfam::dirichlet_moments(mixture::update_pi(sys.priors, resp, k_count)).mean;
    for (Index k = 0; k < k_count; ++k) out[lay.logpi(k)] = logpi[k];
  }
  const auto mu = mixture::update_mu(sys.priors, data, resp, g.e_tau);
  for (Index k = 0; k < k_count; ++k) {
    const auto& b = mu[static_cast<std::size_t>(k)];
    out[lay.mu(k)] = b.mean;
    out[lay.mu2(k)] = b.mean * b.mean + b.variance;
  }
  if (lay.has_pi_tau()) {
    if (sys.frozen.tau) {
      for (Index k = 0; k < k_count; ++k) {
        out[lay.tau(k)] = fixed.e_tau[k];
        out[lay.logtau(k)] = fixed.e_log_tau[k];
      }
    } else {
      const auto tau = mixture::update_tau(sys.priors, data, resp, g.e_mu, g.e_mu2);
      for (Index k = 0; k < k_count; ++k) {
        const auto mom = expfam::gamma_moments(tau[static_cast<std::size_t>(k)]);
        out[lay.tau(k)] = mom.mean[0];
        out[lay.logtau(k)] = mom.mean[1];
      }
    }
  }
  const MatrixXd z = mixture::update_z(data, g);
  for (Index n = 0; n < n_obs; ++n) {
    for (Index k = 0; k < k_count; ++k) out[lay.z(n, k)] = z(n, k);
  }
  if (lay.x_dim > 0) {
    for (Index n = 0; n < n_obs; ++n) {
      out[lay.x(n)] = sys.data.ex[n];
      out[lay.x2(n)] = sys.data.ex2[n];
    }
  }
  return out;
}

/// One covariance block per variational factor. The x block of the
/// leverage layout is zero here (its covariance vanishes with the noise).
inline BlockDiagonal assemble_sigma_q(const MixtureSystem& sys) {
  const MeanLayout& lay = sys.layout;
  BlockDiagonal v;
  v.dim = lay.dim();
  if (lay.has_pi_tau()) v.push(lay.logpi(0), expfam::dirichlet_moments(sys.post.pi).cov);
  for (Index k = 0; k < lay.components; ++k) {
    v.push(lay.mu(k), expfam::normal_moments(sys.post.mu[static_cast<std::size_t>(k)]).cov);
  }
  if (lay.has_pi_tau()) {
    for (Index k = 0; k < lay.components; ++k) {
      v.push(lay.tau(k), expfam::gamma_moments(sys.post.tau[static_cast<std::size_t>(k)]).cov);
    }
  }
  for (Index n = 0; n < lay.observations; ++n) {
    expfam::CategoricalBlock cat;
    cat.probs = sys.post.resp.row(n).transpose();
    v.push(lay.z(n, 0), expfam::categorical_moments(cat).cov);
  }
  return v;
}

/// Analytic dM/dm^T: each block's row is its sufficient-statistic
/// covariance times the derivative of its natural parameters with respect
/// to the other blocks' means.
///
/// Throws PreconditionError unless the posterior is a fixed point to within
/// `max_residual`.
inline JacobianBlocks jacobian_M(const MixtureSystem& sys, double max_residual) {
  const MeanLayout& lay = sys.layout;
  const double residual =
      mixture::fixed_point_residual(sys.data, sys.priors, sys.post, sys.frozen);
  if (!(residual <= max_residual)) {
    std::ostringstream os;
    os << "posterior is not a fixed point: residual " << residual << " exceeds "
       << max_residual;
    throw PreconditionError(os.str());
  }

  const Index k_count = lay.components;
  const Index n_obs = lay.observations;
  const Index t_dim = lay.theta_dim;
  const auto& data = sys.data;
  const auto& resp = sys.post.resp;
  const auto g = mixture::global_moments(sys.post);
  const bool pi_tau = lay.has_pi_tau();
  const bool with_x = lay.x_dim > 0;

  JacobianBlocks r;
  r.tt = MatrixXd::Zero(t_dim, t_dim);
  r.tz = MatrixXd::Zero(t_dim, lay.z_dim);
  r.zt = MatrixXd::Zero(lay.z_dim, t_dim);
  if (with_x) {
    r.tx = MatrixXd::Zero(t_dim, lay.x_dim);
    r.zx = MatrixXd::Zero(lay.z_dim, lay.x_dim);
  }
  const Index z0 = t_dim;
  const Index x0 = t_dim + lay.z_dim;

  // log pi: alpha_k = alpha0 + sum_n r_nk.
  if (pi_tau && !sys.frozen.pi) {
    const MatrixXd v_pi = expfam::dirichlet_moments(sys.post.pi).cov;
    for (Index n = 0; n < n_obs; ++n) {
      for (Index k = 0; k < k_count; ++k) {
        r.tz.col(lay.z(n, k) - z0).segment(lay.logpi(0), k_count) = v_pi.col(k);
      }
    }
  }

  for (Index k = 0; k < k_count; ++k) {
    const double mass = resp.col(k).sum();
    if (mass < mixture::kEmptyComponentMass) continue;  // prior block: constant
    const double weighted_x = resp.col(k).dot(data.ex);

    // (mu, mu^2): natural parameters (m0/v0 + E[tau] sum r x, -(1/v0 + E[tau] sum r)/2).
    const MatrixXd v_mu = expfam::normal_moments(sys.post.mu[static_cast<std::size_t>(k)]).cov;
    const Index row_mu = lay.mu(k);
    if (pi_tau) {
      r.tt.block(row_mu, lay.tau(k), 2, 1) = v_mu * Eigen::Vector2d(weighted_x, -0.5 * mass);
    }
    for (Index n = 0; n < n_obs; ++n) {
      r.tz.block(row_mu, lay.z(n, k) - z0, 2, 1) =
          v_mu * Eigen::Vector2d(g.e_tau[k] * data.ex[n], -0.5 * g.e_tau[k]);
      if (with_x) {
        r.tx.block(row_mu, lay.x(n) - x0, 2, 1) = v_mu.col(0) * (g.e_tau[k] * resp(n, k));
      }
    }

    // (tau, log tau): natural parameters (-rate, shape - 1).
    if (pi_tau && !sys.frozen.tau) {
      const MatrixXd v_tau =
          expfam::gamma_moments(sys.post.tau[static_cast<std::size_t>(k)]).cov;
      const Index row_tau = lay.tau(k);
      r.tt.block(row_tau, lay.mu(k), 2, 1) = v_tau.col(0) * weighted_x;
      r.tt.block(row_tau, lay.mu2(k), 2, 1) = v_tau.col(0) * (-0.5 * mass);
      for (Index n = 0; n < n_obs; ++n) {
        const double quad = data.ex2[n] - 2.0 * data.ex[n] * g.e_mu[k] + g.e_mu2[k];
        r.tz.block(row_tau, lay.z(n, k) - z0, 2, 1) = v_tau * Eigen::Vector2d(-0.5 * quad, 0.5);
      }
    }
  }

  // z_n: logits l_nk = E log pi_k + E log tau_k / 2 - E tau_k (x2 - 2 x E mu_k + E mu2_k) / 2.
  MatrixXd cov(k_count, k_count);
  MatrixXd dlogit_theta(k_count, t_dim);
  MatrixXd dlogit_x(k_count, 2);
  for (Index n = 0; n < n_obs; ++n) {
    const VectorXd rn = resp.row(n).transpose();
    cov = -rn * rn.transpose();
    cov.diagonal() += rn;
    dlogit_theta.setZero();
    dlogit_x.setZero();
    for (Index k = 0; k < k_count; ++k) {
      const double quad = data.ex2[n] - 2.0 * data.ex[n] * g.e_mu[k] + g.e_mu2[k];
      if (pi_tau) {
        dlogit_theta(k, lay.logpi(k)) = 1.0;
        dlogit_theta(k, lay.tau(k)) = -0.5 * quad;
        dlogit_theta(k, lay.logtau(k)) = 0.5;
      }
      dlogit_theta(k, lay.mu(k)) = g.e_tau[k] * data.ex[n];
      dlogit_theta(k, lay.mu2(k)) = -0.5 * g.e_tau[k];
      dlogit_x(k, 0) = g.e_tau[k] * g.e_mu[k];
      dlogit_x(k, 1) = -0.5 * g.e_tau[k];
    }
    r.zt.middleRows(lay.z(n, 0) - z0, k_count) = cov * dlogit_theta;
    if (with_x) r.zx.block(lay.z(n, 0) - z0, lay.x(n) - x0, k_count, 2) = cov * dlogit_x;
  }
  return r;
}

/// Central differences of `map` around m with step h_i = step * max(1, |m_i|).
inline MatrixXd central_difference_jacobian(
    const std::function<VectorXd(const VectorXd&)>& map, const VectorXd& m,
    double step = 1e-6) {
  const Index d = m.size();
  MatrixXd jac(d, d);
  VectorXd probe = m;
  for (Index j = 0; j < d; ++j) {
    const double h = step * std::max(1.0, std::abs(m[j]));
    probe[j] = m[j] + h;
    const VectorXd up = map(probe);
    probe[j] = m[j] - h;
    const VectorXd down = map(probe);
    probe[j] = m[j];
    jac.col(j) = (up - down) / (2.0 * h);
  }
  return jac;
}

struct JacobianCheck {
  double max_relative_error = 0.0;
  Index entries_checked = 0;
  Index worst_row = -1;
  Index worst_col = -1;
  double analytic_rzz_max_abs = 0.0;
};

/// Compares the analytic Jacobian with central differences of the update
/// map on every entry with |analytic| > threshold. Shipped so that new
/// frozen-block configurations can be validated.
inline JacobianCheck verify_jacobian(const MixtureSystem& sys, double max_residual,
                                     double threshold = 1e-8, double step = 1e-6) {
  const MeanLayout& lay = sys.layout;
  const MatrixXd analytic = jacobian_M(sys, max_residual).dense(lay);
  const VectorXd m = mean_vector(sys);
  MatrixXd numeric = central_difference_jacobian(
      [&sys](const VectorXd& v) { return fixed_point_map(sys, v); }, m, step);
  // An indicator near 1 carries only absolute precision, so differencing it
  // loses the small derivatives entirely. Its outputs sum to one, so read
  // the dominant row off the others instead.
  for (Index n = 0; n < lay.observations && lay.components > 1; ++n) {
    Index top = 0;
    sys.post.resp.row(n).maxCoeff(&top);
    auto dominant = numeric.row(lay.z(n, top));
    dominant.setZero();
    for (Index k = 0; k < lay.components; ++k) {
      if (k != top) dominant -= numeric.row(lay.z(n, k));
    }
  }
  JacobianCheck check;
  for (Index i = 0; i < analytic.rows(); ++i) {
    for (Index j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j);
      if (std::abs(a) <= threshold) continue;
      ++check.entries_checked;
      const double rel = std::abs(a - numeric(i, j)) / std::abs(a);
      if (rel > check.max_relative_error) {
        check.max_relative_error = rel;
        check.worst_row = i;
        check.worst_col = j;
      }
    }
  }
  check.analytic_rzz_max_abs =
      analytic.block(lay.theta_dim, lay.theta_dim, lay.z_dim, lay.z_dim).cwiseAbs().maxCoeff();
  return check;
}

struct LrvbSolution {
  MatrixXd sigma_hat;     // symmetrized
  double asymmetry = 0;   // ||S - S^T||_F / ||S||_F before symmetrization
  double condition = 0;   // estimate for the factored system
};

namespace detail {

inline LrvbSolution solve_and_symmetrize(const MatrixXd& system, const MatrixXd& rhs) {
  Eigen::PartialPivLU<MatrixXd> lu(system);
  const double rcond = lu.rcond();
  const double condition = rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!std::isfinite(condition) || condition > kMaxCondition) throw ConditioningError(condition);
  LrvbSolution out;
  out.condition = condition;
  const MatrixXd s = lu.solve(rhs);
  const double norm = s.norm();
  out.asymmetry = norm > 0 ? (s - s.transpose()).norm() / norm : 0.0;
  out.sigma_hat = 0.5 * (s + s.transpose());
  return out;
}

}  // namespace detail

/// Corrected covariance of the theta block with the z block eliminated.
inline LrvbSolution lrvb_covariance(const MatrixXd& v_theta, const JacobianBlocks& r) {
  const Index t = v_theta.rows();
  MatrixXd system = MatrixXd::Identity(t, t) - r.tt;
  if (r.tz.size() > 0) system.noalias() -= r.tz * r.zt;
  return detail::solve_and_symmetrize(system, v_theta);
}

/// (I - R)^{-1} V on the full dense system, restricted to the leading
/// `theta_dim` coordinates. Reference path for small problems.
inline LrvbSolution lrvb_covariance_dense(const MatrixXd& r, const MatrixXd& v, Index theta_dim) {
  const Index d = r.rows();
  Eigen::PartialPivLU<MatrixXd> lu(MatrixXd::Identity(d, d) - r);
  const double rcond = lu.rcond();
  const double condition = rcond > 0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (!std::isfinite(condition) || condition > kMaxCondition) throw ConditioningError(condition);
  const MatrixXd s = lu.solve(v.leftCols(theta_dim)).topRows(theta_dim);
  LrvbSolution out;
  out.condition = condition;
  const double norm = s.norm();
  out.asymmetry = norm > 0 ? (s - s.transpose()).norm() / norm : 0.0;
  out.sigma_hat = 0.5 * (s + s.transpose());
  return out;
}

struct LrvbEstimate {
  BlockDiagonal sigma_q;
  JacobianBlocks jacobian;
  MatrixXd sigma_hat_theta;
  double asymmetry = 0;
  double condition = 0;
};

/// Sigma_q*, R and the corrected theta covariance for a converged fit.
inline LrvbEstimate lrvb_estimate(const MixtureSystem& sys, double max_residual) {
  LrvbEstimate est;
  est.sigma_q = assemble_sigma_q(sys);
  est.jacobian = jacobian_M(sys, max_residual);
  auto sol = lrvb_covariance(est.sigma_q.restricted(0, sys.layout.theta_dim), est.jacobian);
  est.sigma_hat_theta = std::move(sol.sigma_hat);
  est.asymmetry = sol.asymmetry;
  est.condition = sol.condition;
  return est;
}

}  // namespace lrvb

#endif  // LRVB_LRVB_CORE_HPP
