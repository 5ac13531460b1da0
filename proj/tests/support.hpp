#ifndef LRVB_TESTS_SUPPORT_HPP
#define LRVB_TESTS_SUPPORT_HPP

// Shared fixtures: seeded random targets, small mixture instances, and
// Monte-Carlo oracles for the exponential-family moment identities.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lrvb/expfam.hpp"
#include "lrvb/harness/config.hpp"
#include "lrvb/harness/simulate.hpp"
#include "lrvb/mixture.hpp"

namespace testsupport {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Random SPD matrix with a moderate condition number.
inline MatrixXd random_spd(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  MatrixXd a(d, d);
  for (Index i = 0; i < d; ++i) {
    for (Index j = 0; j < d; ++j) a(i, j) = normal(rng);
  }
  return a * a.transpose() / static_cast<double>(d) + 0.5 * MatrixXd::Identity(d, d);
}

/// Random partition of [0, d) into nonempty blocks.
inline std::vector<std::vector<Index>> random_partition(Index d, std::mt19937_64& rng) {
  std::vector<Index> perm(static_cast<std::size_t>(d));
  for (Index i = 0; i < d; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_int_distribution<Index> n_blocks(1, d);
  const Index b = n_blocks(rng);
  std::vector<std::vector<Index>> blocks(static_cast<std::size_t>(b));
  for (Index i = 0; i < d; ++i) {
    // first b entries seed distinct blocks, the rest land anywhere
    const Index target = i < b ? i : std::uniform_int_distribution<Index>(0, b - 1)(rng);
    blocks[static_cast<std::size_t>(target)].push_back(perm[static_cast<std::size_t>(i)]);
  }
  return blocks;
}

/// Two overlapping components: N(-1, 1) and N(1, 1), equal weights.
inline VectorXd overlapping_data(Index n, std::uint64_t seed) {
  lrvb::harness::SimulationConfig cfg = lrvb::harness::desk_profile();
  cfg.N = static_cast<int>(n);
  cfg.truth_pi = Eigen::Vector2d(0.5, 0.5);
  cfg.truth_mu = Eigen::Vector2d(-1.0, 1.0);
  cfg.master_seed = seed;
  return lrvb::harness::simulate(cfg, 0).x;
}

struct McCheck {
  double worst_z = 0;  // largest |estimate - identity| / standard error
  std::string where;
};

/// Compares an analytic mean and covariance of sufficient statistics with
/// the sample mean and covariance of `draw()` outputs. Standard errors of
/// covariance entries come from the sample variance of centred products
/// plus the second-order term from estimating the means.
inline McCheck mc_compare(const lrvb::expfam::FamilyMoments& exact,
                          const std::function<VectorXd()>& draw, int n_draws) {
  const Index d = exact.mean.size();
  MatrixXd s(n_draws, d);
  for (int i = 0; i < n_draws; ++i) s.row(i) = draw().transpose();
  const VectorXd mean = s.colwise().mean().transpose();
  const MatrixXd c = s.rowwise() - mean.transpose();
  McCheck out;
  const double n = n_draws;
  for (Index i = 0; i < d; ++i) {
    const double se = std::sqrt(c.col(i).squaredNorm() / (n - 1) / n);
    const double z = std::abs(mean[i] - exact.mean[i]) / se;
    if (z > out.worst_z) out = {z, "mean[" + std::to_string(i) + "]"};
    for (Index j = 0; j <= i; ++j) {
      const VectorXd prod = c.col(i).cwiseProduct(c.col(j));
      const double cov = prod.sum() / (n - 1);
      const double var_prod = (prod.array() - prod.mean()).square().sum() / (n - 1);
      // The 1/n^2 term matters where the first-order term vanishes, e.g. a
      // Bernoulli(0.5) variance, whose error is then (p_hat - p)^2.
      const double var_i = c.col(i).squaredNorm() / (n - 1);
      const double var_j = c.col(j).squaredNorm() / (n - 1);
      const double se_cov = std::sqrt(var_prod / n + (var_i * var_j + cov * cov) / (n * n));
      const double zc = std::abs(cov - exact.cov(i, j)) / se_cov;
      if (zc > out.worst_z) {
        out = {zc, "cov[" + std::to_string(i) + "," + std::to_string(j) + "]"};
      }
    }
  }
  return out;
}

enum class Family { dirichlet, gamma, normal, categorical };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::dirichlet: return "dirichlet";
    case Family::gamma: return "gamma";
    case Family::normal: return "normal";
    case Family::categorical: return "categorical";
  }
  return "?";
}

/// Monte-Carlo check of one family at fixed test parameters:
/// Dirichlet(3, 1, 2), Gamma(2.0001, 0.1), N(1, 0.25), Categorical(0.2, 0.3, 0.5).
inline McCheck expfam_mc(Family family, int n_draws, std::uint64_t seed) {
  using namespace lrvb::expfam;
  std::mt19937_64 rng(seed);
  switch (family) {
    case Family::dirichlet: {
      const DirichletBlock dir{Eigen::Vector3d(3.0, 1.0, 2.0)};
      return mc_compare(
          dirichlet_moments(dir),
          [&] {
            VectorXd g(3);
            for (Index k = 0; k < 3; ++k) {
              g[k] = std::gamma_distribution<double>(dir.alpha[k], 1.0)(rng);
            }
            return VectorXd((g / g.sum()).array().log());
          },
          n_draws);
    }
    case Family::gamma: {
      const GammaBlock gam{2.0001, 0.1};
      std::gamma_distribution<double> draw(gam.shape, 1.0 / gam.rate);
      return mc_compare(
          gamma_moments(gam),
          [&] {
            const double t = draw(rng);
            return VectorXd(Eigen::Vector2d(t, std::log(t)));
          },
          n_draws);
    }
    case Family::normal: {
      const NormalBlock nor{1.0, 0.25};
      std::normal_distribution<double> draw(nor.mean, std::sqrt(nor.variance));
      return mc_compare(
          normal_moments(nor),
          [&] {
            const double t = draw(rng);
            return VectorXd(Eigen::Vector2d(t, t * t));
          },
          n_draws);
    }
    case Family::categorical: {
      const Eigen::Vector3d probs(0.2, 0.3, 0.5);
      const auto cat = categorical_from_logits(probs.array().log().matrix());
      std::discrete_distribution<int> pick(probs.data(), probs.data() + 3);
      return mc_compare(
          categorical_moments(cat),
          [&] {
            VectorXd e = VectorXd::Zero(3);
            e[pick(rng)] = 1.0;
            return e;
          },
          n_draws);
    }
  }
  return {};
}

}  // namespace testsupport

#endif  // LRVB_TESTS_SUPPORT_HPP
