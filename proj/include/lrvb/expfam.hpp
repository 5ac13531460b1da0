#ifndef LRVB_EXPFAM_HPP
#define LRVB_EXPFAM_HPP

// Exponential-family blocks used by the mixture models, with the mean and
// covariance of their sufficient statistics.
//
// Parameter conventions:
//   Gamma(shape, rate)   density  b^a / Gamma(a) * t^(a-1) * exp(-b t)
//   Normal(mean, variance)
// The mixture priors Gamma(2.0001, 0.1) and N(0, 100) are read in these
// conventions throughout the library.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "lrvb/special.hpp"

namespace lrvb::expfam {

struct DirichletBlock {
  Eigen::VectorXd alpha;
};

/// Sufficient statistics (tau, log tau).
struct GammaBlock {
  double shape = 1.0;
  double rate = 1.0;
};

/// Sufficient statistics (theta, theta^2).
struct NormalBlock {
  double mean = 0.0;
  double variance = 1.0;
};

/// Logits are only defined up to a shared additive constant; probs is the
/// normalized (softmax) form.
struct CategoricalBlock {
  Eigen::VectorXd logits;
  Eigen::VectorXd probs;
};

struct FamilyMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline void validate(const DirichletBlock& block) {
  if (block.alpha.size() < 1) {
    throw std::domain_error("Dirichlet block needs at least one component");
  }
  for (Eigen::Index k = 0; k < block.alpha.size(); ++k) {
    if (!(block.alpha[k] > 0.0) || !std::isfinite(block.alpha[k])) {
      throw std::domain_error("Dirichlet concentration must be positive");
    }
  }
}

inline void validate(const GammaBlock& block) {
  if (!(block.shape > 0.0) || !(block.rate > 0.0) || !std::isfinite(block.shape) ||
      !std::isfinite(block.rate)) {
    throw std::domain_error("Gamma shape and rate must be positive");
  }
}

inline void validate(const NormalBlock& block) {
  if (!(block.variance > 0.0) || !std::isfinite(block.mean) || !std::isfinite(block.variance)) {
    throw std::domain_error("Normal variance must be positive");
  }
}

/// mean_k = psi(alpha_k) - psi(sum alpha); cov = diag(psi'(alpha)) - psi'(sum alpha).
inline FamilyMoments dirichlet_moments(const DirichletBlock& block) {
  validate(block);
  const Eigen::Index k = block.alpha.size();
  const double total = block.alpha.sum();
  const double psi_total = digamma(total);
  const double tri_total = trigamma(total);
  FamilyMoments out;
  out.mean.resize(k);
  out.cov = Eigen::MatrixXd::Constant(k, k, -tri_total);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.mean[i] = digamma(block.alpha[i]) - psi_total;
    out.cov(i, i) += trigamma(block.alpha[i]);
  }
  return out;
}

inline FamilyMoments gamma_moments(const GammaBlock& block) {
  validate(block);
  const double a = block.shape;
  const double b = block.rate;
  FamilyMoments out;
  out.mean.resize(2);
  out.mean << a / b, digamma(a) - std::log(b);
  out.cov.resize(2, 2);
  out.cov << a / (b * b), 1.0 / b, 1.0 / b, trigamma(a);
  return out;
}

inline FamilyMoments normal_moments(const NormalBlock& block) {
  validate(block);
  const double m = block.mean;
  const double v = block.variance;
  FamilyMoments out;
  out.mean.resize(2);
  out.mean << m, m * m + v;
  out.cov.resize(2, 2);
  out.cov << v, 2.0 * m * v, 2.0 * m * v, 4.0 * m * m * v + 2.0 * v * v;
  return out;
}

/// One-hot indicator moments: mean = probs, cov = diag(probs) - probs probs^T.
inline FamilyMoments categorical_moments(const CategoricalBlock& block) {
  const Eigen::VectorXd& r = block.probs;
  FamilyMoments out;
  out.mean = r;
  out.cov = -r * r.transpose();
  out.cov.diagonal() += r;
  return out;
}

/// Shift-stabilized softmax. Throws when every logit is -inf.
template <typename Derived>
Eigen::VectorXd softmax_from_logits(const Eigen::MatrixBase<Derived>& logits) {
  const Eigen::Index k = logits.size();
  if (k == 0) {
    throw std::domain_error("softmax of an empty vector");
  }
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i) {
    if (std::isnan(logits(i)) || logits(i) == std::numeric_limits<double>::infinity()) {
      throw std::domain_error("softmax: logits must be finite or -inf");
    }
    top = std::max(top, static_cast<double>(logits(i)));
  }
  if (top == -std::numeric_limits<double>::infinity()) {
    throw std::domain_error("softmax: all logits are -inf");
  }
  Eigen::VectorXd out(k);
  for (Eigen::Index i = 0; i < k; ++i) out[i] = std::exp(logits(i) - top);
  return out / out.sum();
}

inline CategoricalBlock categorical_from_logits(const Eigen::VectorXd& logits) {
  return CategoricalBlock{logits, softmax_from_logits(logits)};
}

}  // namespace lrvb::expfam

#endif  // LRVB_EXPFAM_HPP
