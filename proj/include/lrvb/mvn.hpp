#ifndef LRVB_MVN_HPP
#define LRVB_MVN_HPP

// Multivariate normal testbed. For a N(mu, Sigma) target and any partition
// of the coordinates into blocks, the mean-field solution has the exact
// means and block covariances inv(Lambda_jj), and the linear-response
// correction recovers Sigma exactly. Only the mean coordinates enter the
// correction; the quadratic statistics do not change it.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lrvb/lrvb_core.hpp"

namespace lrvb::mvn {

struct MvnTarget {
  VectorXd mu;
  MatrixXd sigma;
  std::vector<std::vector<Index>> blocks;  // disjoint, covering [0, D)

  Index dim() const { return mu.size(); }

  static MvnTarget unit_blocks(VectorXd mu, MatrixXd sigma) {
    MvnTarget t{std::move(mu), std::move(sigma), {}};
    for (Index i = 0; i < t.dim(); ++i) t.blocks.push_back({i});
    return t;
  }
};

/// Checks symmetry, positive definiteness and that the blocks partition
/// [0, D). Returns the 2-norm condition number of sigma.
inline double validate(const MvnTarget& target) {
  const Index d = target.dim();
  if (d < 1 || target.sigma.rows() != d || target.sigma.cols() != d) {
    throw std::invalid_argument("MVN target dimensions disagree");
  }
  if ((target.sigma - target.sigma.transpose()).norm() > 1e-12 * target.sigma.norm()) {
    throw std::invalid_argument("MVN covariance is not symmetric");
  }
  std::vector<int> seen(static_cast<std::size_t>(d), 0);
  for (const auto& b : target.blocks) {
    if (b.empty()) throw std::invalid_argument("empty block in MVN partition");
    for (Index i : b) {
      if (i < 0 || i >= d || seen[static_cast<std::size_t>(i)]++) {
        throw std::invalid_argument("MVN blocks must partition the coordinates");
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw std::invalid_argument("MVN blocks must cover every coordinate");
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(target.sigma);
  const double lo = eig.eigenvalues().minCoeff();
  if (!(lo > 0)) throw std::invalid_argument("MVN covariance is not positive definite");
  return eig.eigenvalues().maxCoeff() / lo;
}

struct MvnFitOptions {
  int max_iterations = 10000;
  double tolerance = 1e-13;
};

struct MvnFit {
  VectorXd mean;
  std::vector<MatrixXd> block_cov;  // inv(Lambda_jj), in block order
  int iterations = 0;
  bool converged = false;
  double spectral_radius = 0;  // of the block Gauss-Seidel iteration matrix
  double condition = 0;        // of sigma
};

namespace detail {

inline MatrixXd gather(const MatrixXd& a, const std::vector<Index>& rows,
                       const std::vector<Index>& cols) {
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  }
  return out;
}

/// Spectral radius of -(D + L)^{-1} U for the block splitting of Lambda.
inline double gauss_seidel_radius(const MatrixXd& lambda,
                                  const std::vector<std::vector<Index>>& blocks) {
  const Index d = lambda.rows();
  std::vector<Index> block_of(static_cast<std::size_t>(d));
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (Index i : blocks[b]) block_of[static_cast<std::size_t>(i)] = static_cast<Index>(b);
  }
  MatrixXd lower = MatrixXd::Zero(d, d), upper = MatrixXd::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) {
      if (block_of[static_cast<std::size_t>(j)] <= block_of[static_cast<std::size_t>(i)]) {
        lower(i, j) = lambda(i, j);
      } else {
        upper(i, j) = lambda(i, j);
      }
    }
  }
  const MatrixXd iteration = -lower.partialPivLu().solve(upper);
  Eigen::EigenSolver<MatrixXd> eig(iteration, false);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Block coordinate ascent m_j <- mu_j - inv(L_jj) L_{j,-j} (m_{-j} - mu_{-j}),
/// started from the zero vector.
inline MvnFit mvn_mfvb_fit(const MvnTarget& target, const MvnFitOptions& opts = {}) {
  MvnFit fit;
  fit.condition = validate(target);
  const MatrixXd lambda = target.sigma.inverse();
  const Index d = target.dim();
  std::vector<Index> all(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) all[static_cast<std::size_t>(i)] = i;

  std::vector<Eigen::LLT<MatrixXd>> block_llt;
  std::vector<MatrixXd> block_row;
  for (const auto& b : target.blocks) {
    block_llt.emplace_back(detail::gather(lambda, b, b));
    block_row.push_back(detail::gather(lambda, b, all));
    fit.block_cov.push_back(block_llt.back().solve(MatrixXd::Identity(b.size(), b.size())));
  }
  fit.spectral_radius = detail::gauss_seidel_radius(lambda, target.blocks);

  fit.mean = VectorXd::Zero(d);
  const double scale = 1.0 + target.mu.cwiseAbs().maxCoeff();
  for (int it = 1; it <= opts.max_iterations; ++it) {
    double change = 0;
    for (std::size_t b = 0; b < target.blocks.size(); ++b) {
      const auto& idx = target.blocks[b];
      VectorXd centered = fit.mean - target.mu;
      for (Index i : idx) centered[i] = 0.0;  // exclude the block itself
      const VectorXd update = block_llt[b].solve(block_row[b] * centered);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double next = target.mu[idx[i]] - update[static_cast<Index>(i)];
        change = std::max(change, std::abs(next - fit.mean[idx[i]]));
        fit.mean[idx[i]] = next;
      }
    }
    fit.iterations = it;
    if (change <= opts.tolerance * scale) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

struct MvnLrvbCheck {
  MatrixXd sigma_hat;
  double max_rel_error = 0;  // ||Sigma_hat - Sigma||_F / ||Sigma||_F
  LrvbSolution solution;
};

/// Linear-response correction on the mean coordinates of the mean-field
/// solution: R_{jl} = -inv(L_jj) L_jl for j != l, V = blockdiag(inv(L_jj)).
inline MvnLrvbCheck mvn_lrvb_check(const MvnTarget& target, const MvnFit& fit) {
  if (!fit.converged) throw PreconditionError("MVN mean-field fit did not converge");
  const Index d = target.dim();
  const MatrixXd lambda = target.sigma.inverse();
  MatrixXd r = MatrixXd::Zero(d, d);
  MatrixXd v = MatrixXd::Zero(d, d);
  std::vector<Index> all(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) all[static_cast<std::size_t>(i)] = i;
  for (std::size_t b = 0; b < target.blocks.size(); ++b) {
    const auto& idx = target.blocks[b];
    const MatrixXd coupling = -fit.block_cov[b] * detail::gather(lambda, idx, all);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (Index j = 0; j < d; ++j) r(idx[i], j) = coupling(static_cast<Index>(i), j);
      for (std::size_t j = 0; j < idx.size(); ++j) {
        r(idx[i], idx[j]) = 0.0;
        v(idx[i], idx[j]) = fit.block_cov[b](static_cast<Index>(i), static_cast<Index>(j));
      }
    }
  }
  JacobianBlocks blocks;
  blocks.tt = r;
  MvnLrvbCheck out;
  out.solution = lrvb_covariance(v, blocks);
  out.sigma_hat = out.solution.sigma_hat;
  out.max_rel_error = (out.sigma_hat - target.sigma).norm() / target.sigma.norm();
  return out;
}

inline MvnLrvbCheck mvn_lrvb_check(const MvnTarget& target) {
  return mvn_lrvb_check(target, mvn_mfvb_fit(target));
}

}  // namespace lrvb::mvn

#endif  // LRVB_MVN_HPP
