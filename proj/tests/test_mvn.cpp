#include <gtest/gtest.h>

#include <random>

#include "lrvb/mvn.hpp"
#include "support.hpp"

using namespace lrvb;
using namespace lrvb::mvn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd random_mean(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0, 3);
  VectorXd mu(d);
  for (Eigen::Index i = 0; i < d; ++i) mu[i] = normal(rng);
  return mu;
}

MvnTarget bivariate(double rho) {
  return MvnTarget::unit_blocks(Eigen::Vector2d(0.5, -1),
                                (MatrixXd(2, 2) << 1, rho, rho, 1).finished());
}

}  // namespace

TEST(MvnFit, DiagonalConvergesImmediately) {
  const auto t = MvnTarget::unit_blocks(Eigen::Vector3d(1, -2, 3),
                                        Eigen::Vector3d(0.5, 2, 4).asDiagonal().toDenseMatrix());
  const auto fit = mvn_mfvb_fit(t);
  ASSERT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 2);  // one sweep, plus one to see no change
  EXPECT_EQ(fit.mean, t.mu);
}

TEST(MvnFit, MeansAreExact) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto t = MvnTarget::unit_blocks(random_mean(6, rng), testsupport::random_spd(6, rng));
    const auto fit = mvn_mfvb_fit(t);
    ASSERT_TRUE(fit.converged) << seed;
    EXPECT_LT(fit.spectral_radius, 1.0);
    EXPECT_LT((fit.mean - t.mu).cwiseAbs().maxCoeff(), 1e-10 * (1 + t.mu.cwiseAbs().maxCoeff()))
        << seed;
  }
}

TEST(MvnFit, StronglyCorrelatedPairUnderstatesVariance) {
  const auto fit = mvn_mfvb_fit(bivariate(0.9));
  ASSERT_TRUE(fit.converged);
  EXPECT_NEAR(fit.block_cov[0](0, 0), 0.19, 1e-12);
  EXPECT_NEAR(fit.block_cov[1](0, 0), 0.19, 1e-12);
}

TEST(MvnLrvb, IdentityIsExact) {
  const auto t = MvnTarget::unit_blocks(VectorXd::Zero(4), MatrixXd::Identity(4, 4));
  const auto check = mvn_lrvb_check(t);
  EXPECT_EQ(check.sigma_hat, MatrixXd::Identity(4, 4));
}

TEST(MvnLrvb, BivariateRecovery) {
  for (double rho : {0.5, 0.9}) {
    const auto check = mvn_lrvb_check(bivariate(rho));
    EXPECT_LT(check.max_rel_error, 1e-10) << rho;
    EXPECT_NEAR(check.sigma_hat(0, 1), rho, 1e-10);
  }
}

TEST(MvnLrvb, BlockPartitionOfEight) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(seed * 7919);
    MvnTarget t{random_mean(8, rng), testsupport::random_spd(8, rng),
                {{0, 3, 5}, {1, 7}, {2, 4}, {6}}};
    const auto check = mvn_lrvb_check(t);
    EXPECT_LT(check.max_rel_error, 1e-8) << seed;
  }
}

TEST(MvnLrvb, RandomPartitions) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    std::mt19937_64 rng(seed);
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(seed % 7);
    MvnTarget t{random_mean(d, rng), testsupport::random_spd(d, rng), {}};
    t.blocks = testsupport::random_partition(d, rng);
    const auto check = mvn_lrvb_check(t);
    EXPECT_LT(check.max_rel_error, 1e-8) << "seed " << seed << " d " << d;
    EXPECT_LT(check.solution.asymmetry, 1e-8);
  }
}

TEST(MvnTarget, ValidationRejectsBadInput) {
  auto t = bivariate(0.5);
  t.blocks = {{0}};
  EXPECT_THROW(validate(t), std::invalid_argument);
  t.blocks = {{0, 1}, {1}};
  EXPECT_THROW(validate(t), std::invalid_argument);
  t.blocks = {{0}, {}, {1}};
  EXPECT_THROW(validate(t), std::invalid_argument);
  t = bivariate(1.0);
  EXPECT_THROW(validate(t), std::invalid_argument);
  t = bivariate(0.5);
  t.sigma(0, 1) = 0.4;
  EXPECT_THROW(validate(t), std::invalid_argument);
  t = bivariate(0.5);
  t.mu = VectorXd::Zero(3);
  EXPECT_THROW(validate(t), std::invalid_argument);
}

TEST(MvnLrvb, NeedsConvergedFit) {
  const auto t = bivariate(0.99);
  MvnFitOptions opts;
  opts.max_iterations = 2;
  const auto fit = mvn_mfvb_fit(t, opts);
  EXPECT_FALSE(fit.converged);
  EXPECT_GT(fit.spectral_radius, 0.9);
  EXPECT_THROW(mvn_lrvb_check(t, fit), PreconditionError);
}
