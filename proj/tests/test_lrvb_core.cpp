#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "lrvb/layout.hpp"
#include "lrvb/lrvb_core.hpp"
#include "lrvb/mixture.hpp"
#include "support.hpp"

using namespace lrvb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Instance {
  MixtureSystem sys;
  mixture::FitResult fit;
};

Instance small_instance(Eigen::Index n, std::uint64_t seed) {
  const auto data = mixture::DataMoments::observed(testsupport::overlapping_data(n, seed));
  mixture::FitOptions opts;
  opts.tolerance = 1e-12;
  opts.seed = seed;
  const mixture::MixturePriors priors;
  auto fit = mixture::fit(data, 2, priors, opts);
  return {make_system(ModelKind::mixture, data, priors, fit.posterior), fit};
}

}  // namespace

TEST(Layout, MixtureDimensions) {
  const auto big = build_layout(3, 3000, ModelKind::mixture);
  EXPECT_EQ(big.theta_dim, 15);
  EXPECT_EQ(big.z_dim, 9000);
  EXPECT_EQ(big.dim(), 9015);
  const auto tiny = build_layout(1, 1, ModelKind::mixture);
  EXPECT_EQ(tiny.theta_dim, 5);
  EXPECT_EQ(tiny.z_dim, 1);
  const auto lev = build_layout(2, 500, ModelKind::mixture_leverage);
  EXPECT_EQ(lev.theta_dim, 4);
  EXPECT_EQ(lev.x_dim, 1000);
  EXPECT_EQ(lev.z_dim, 1000);
  EXPECT_THROW(build_layout(0, 5, ModelKind::mixture), std::invalid_argument);
  EXPECT_THROW(build_layout(2, 0, ModelKind::mixture), std::invalid_argument);
}

TEST(Layout, CoordinatesPartitionInOrder) {
  for (auto model : {ModelKind::mixture, ModelKind::mixture_leverage}) {
    const auto lay = build_layout(3, 7, model);
    ASSERT_EQ(static_cast<Eigen::Index>(lay.coords.size()), lay.dim());
    for (Eigen::Index i = 0; i < lay.dim(); ++i) {
      const Coord c = lay.coords[static_cast<std::size_t>(i)].kind;
      const bool is_z = c == Coord::z;
      const bool is_x = c == Coord::x || c == Coord::x2;
      EXPECT_EQ(i < lay.theta_dim, !is_z && !is_x) << i;
      EXPECT_EQ(i >= lay.theta_dim && i < lay.theta_dim + lay.z_dim, is_z) << i;
      EXPECT_EQ(i >= lay.theta_dim + lay.z_dim, is_x) << i;
    }
    for (Eigen::Index n = 0; n < 7; ++n) {
      for (Eigen::Index k = 0; k < 3; ++k) {
        const auto& c = lay.coords[static_cast<std::size_t>(lay.z(n, k))];
        EXPECT_EQ(c.observation, n);
        EXPECT_EQ(c.component, k);
      }
    }
  }
}

TEST(Layout, LabelsAreOneBased) {
  const auto lay = build_layout(2, 3, ModelKind::mixture);
  EXPECT_EQ(lay.label(lay.logpi(0)), "logpi_1");
  EXPECT_EQ(lay.label(lay.mu2(1)), "mu2_2");
  EXPECT_EQ(lay.label(lay.logtau(1)), "logtau_2");
  EXPECT_EQ(lay.label(lay.z(2, 0)), "z_3_1");
  const auto lev = build_layout(2, 3, ModelKind::mixture_leverage);
  EXPECT_EQ(lev.label(lev.x2(0)), "x2_1");
  EXPECT_THROW(lev.tau(0), std::logic_error);
  EXPECT_THROW(lay.x(0), std::logic_error);
}

TEST(SigmaQ, BlocksDelegateToFamilies) {
  auto inst = small_instance(30, 4);
  const auto v = assemble_sigma_q(inst.sys);
  const MatrixXd dense = v.dense();
  const auto& lay = inst.sys.layout;
  EXPECT_EQ(dense.block(0, 0, 2, 2), expfam::dirichlet_moments(inst.sys.post.pi).cov);
  EXPECT_EQ(dense.block(lay.tau(1), lay.tau(1), 2, 2),
            expfam::gamma_moments(inst.sys.post.tau[1]).cov);
  EXPECT_EQ(dense(lay.mu(0), lay.tau(0)), 0.0);

  inst.sys.post.resp.row(0) = Eigen::RowVector2d(1, 0);
  const MatrixXd degenerate = assemble_sigma_q(inst.sys).dense();
  EXPECT_EQ(degenerate.block(lay.z(0, 0), lay.z(0, 0), 2, 2), MatrixXd::Zero(2, 2));
}

// Joint draws from the factorized q*: the sample covariance of the stacked
// sufficient statistics matches the assembled block-diagonal matrix.
TEST(SigmaQ, MatchesFactorizedDraws) {
  auto inst = small_instance(3, 9);
  inst.sys.post.resp << 0.3, 0.7, 0.5, 0.5, 0.9, 0.1;
  const auto& post = inst.sys.post;
  const auto& lay = inst.sys.layout;
  const MatrixXd exact = assemble_sigma_q(inst.sys).dense();
  const VectorXd mean = mean_vector(inst.sys);

  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  auto draw = [&] {
    VectorXd s(lay.dim());
    VectorXd g(2);
    for (int k = 0; k < 2; ++k) g[k] = std::gamma_distribution<double>(post.pi.alpha[k], 1.0)(rng);
    for (int k = 0; k < 2; ++k) {
      s[lay.logpi(k)] = std::log(g[k] / g.sum());
      const auto& mu = post.mu[static_cast<std::size_t>(k)];
      const double m = mu.mean + std::sqrt(mu.variance) * normal(rng);
      s[lay.mu(k)] = m;
      s[lay.mu2(k)] = m * m;
      const auto& tau = post.tau[static_cast<std::size_t>(k)];
      const double t = std::gamma_distribution<double>(tau.shape, 1.0 / tau.rate)(rng);
      s[lay.tau(k)] = t;
      s[lay.logtau(k)] = std::log(t);
    }
    for (Eigen::Index n = 0; n < lay.observations; ++n) {
      const bool first = std::bernoulli_distribution(post.resp(n, 0))(rng);
      s[lay.z(n, 0)] = first ? 1.0 : 0.0;
      s[lay.z(n, 1)] = first ? 0.0 : 1.0;
    }
    return s;
  };
  const auto check = testsupport::mc_compare({mean, exact}, draw, 100000);
  EXPECT_LT(check.worst_z, 4.0) << check.where;
}

class JacobianSeeds : public ::testing::TestWithParam<int> {};

TEST_P(JacobianSeeds, AnalyticMatchesFiniteDifferences) {
  const auto inst = small_instance(50, static_cast<std::uint64_t>(GetParam()));
  ASSERT_TRUE(inst.fit.converged);
  const auto check = verify_jacobian(inst.sys, 1e-8);
  EXPECT_GT(check.entries_checked, 100);
  EXPECT_LT(check.max_relative_error, 1e-5)
      << inst.sys.layout.label(check.worst_row) << " / " << inst.sys.layout.label(check.worst_col);
  EXPECT_EQ(check.analytic_rzz_max_abs, 0.0);
}

INSTANTIATE_TEST_SUITE_P(TenSeeds, JacobianSeeds, ::testing::Range(1, 11));

TEST(Jacobian, IndicatorRowsIgnoreOtherIndicators) {
  const auto inst = small_instance(20, 3);
  const auto& lay = inst.sys.layout;
  const VectorXd m = mean_vector(inst.sys);
  const VectorXd base = fixed_point_map(inst.sys, m);
  VectorXd moved = m;
  moved[lay.z(4, 0)] += 0.3;
  moved[lay.z(4, 1)] -= 0.3;
  const VectorXd out = fixed_point_map(inst.sys, moved);
  for (Eigen::Index n = 0; n < lay.observations; ++n) {
    EXPECT_EQ(out[lay.z(n, 0)], base[lay.z(n, 0)]) << n;
    EXPECT_EQ(out[lay.z(n, 1)], base[lay.z(n, 1)]) << n;
  }
}

TEST(Jacobian, EmptyComponentRowIsZero) {
  // Component 2 carries no responsibility, so its mu update is the prior.
  auto inst = small_instance(20, 5);
  inst.sys.post.resp.col(0).setOnes();
  inst.sys.post.resp.col(1).setZero();
  inst.sys.frozen = {true, true};
  const auto r = jacobian_M(inst.sys, std::numeric_limits<double>::infinity());
  const auto& lay = inst.sys.layout;
  for (auto row : {lay.mu(1), lay.mu2(1)}) {
    EXPECT_EQ(r.tt.row(row).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.tz.row(row).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(Jacobian, FrozenBlocksHaveZeroRows) {
  const auto inst = small_instance(30, 6);
  auto sys = inst.sys;
  sys.frozen = {true, true};
  sys.post = mixture::fit(sys.data, 2, sys.priors, {}, sys.frozen, &inst.fit.posterior).posterior;
  const auto r = jacobian_M(sys, 1e-8);
  for (Eigen::Index k = 0; k < 2; ++k) {
    for (auto row : {sys.layout.logpi(k), sys.layout.tau(k), sys.layout.logtau(k)}) {
      EXPECT_EQ(r.tt.row(row).cwiseAbs().maxCoeff(), 0.0);
      EXPECT_EQ(r.tz.row(row).cwiseAbs().maxCoeff(), 0.0);
    }
  }
  EXPECT_LT(verify_jacobian(sys, 1e-8).max_relative_error, 1e-5);
}

TEST(Jacobian, RejectsPointsAwayFromTheFixedPoint) {
  auto inst = small_instance(30, 7);
  inst.sys.post.mu[0].mean += 0.5;
  try {
    jacobian_M(inst.sys, 1e-8);
    FAIL() << "expected PreconditionError";
  } catch (const PreconditionError& e) {
    EXPECT_NE(std::string(e.what()).find("residual"), std::string::npos);
  }
}

TEST(LrvbCovariance, NoCouplingReturnsSigmaQ) {
  std::mt19937_64 rng(2);
  const MatrixXd v = testsupport::random_spd(5, rng);
  JacobianBlocks r;
  r.tt = MatrixXd::Zero(5, 5);
  const auto sol = lrvb_covariance(v, r);
  EXPECT_LT((sol.sigma_hat - v).norm(), 1e-14 * v.norm());
}

TEST(LrvbCovariance, BivariateClosedForm) {
  JacobianBlocks r;
  r.tt = (MatrixXd(2, 2) << 0, 0.5, 0.5, 0).finished();
  const MatrixXd v = Eigen::Vector2d(0.75, 0.75).asDiagonal();
  const auto sol = lrvb_covariance(v, r);
  const MatrixXd expected = (MatrixXd(2, 2) << 1, 0.5, 0.5, 1).finished();
  EXPECT_LT((sol.sigma_hat - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LrvbCovariance, SingularSystemReportsCondition) {
  JacobianBlocks r;
  r.tt = MatrixXd::Identity(3, 3);
  EXPECT_THROW(lrvb_covariance(MatrixXd::Identity(3, 3), r), ConditioningError);

  r.tt = (MatrixXd(2, 2) << 0, 1, 1 - 1e-14, 0).finished();
  try {
    lrvb_covariance(MatrixXd::Identity(2, 2), r);
    FAIL() << "expected ConditioningError";
  } catch (const ConditioningError& e) {
    EXPECT_GT(e.condition(), kMaxCondition);
    EXPECT_NE(std::string(e.what()).find("condition"), std::string::npos);
  }
}

TEST(LrvbCovariance, SchurMatchesDenseSolve) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto inst = small_instance(100, seed);
    const auto& lay = inst.sys.layout;
    ASSERT_LE(lay.dim(), 300);
    const auto est = lrvb_estimate(inst.sys, 1e-8);
    const auto dense = lrvb_covariance_dense(est.jacobian.dense(lay), est.sigma_q.dense(), lay.theta_dim);
    const double rel = (est.sigma_hat_theta - dense.sigma_hat).norm() / dense.sigma_hat.norm();
    EXPECT_LT(rel, 1e-9) << seed;
  }
}

TEST(LrvbCovariance, InflatesMixtureVariancesAndStaysSymmetric) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto inst = small_instance(100, seed);
    const auto& lay = inst.sys.layout;
    const auto est = lrvb_estimate(inst.sys, 1e-8);
    const MatrixXd v = est.sigma_q.restricted(0, lay.theta_dim);
    EXPECT_LT(est.asymmetry, 1e-8) << seed;
    for (Eigen::Index k = 0; k < 2; ++k) {
      for (auto i : {lay.logpi(k), lay.logtau(k)}) {
        EXPECT_GE(est.sigma_hat_theta(i, i), v(i, i) - 1e-10) << seed << " " << lay.label(i);
      }
    }
  }
}

TEST(System, LeverageLayoutRequiresFrozenBlocks) {
  const auto inst = small_instance(20, 8);
  EXPECT_THROW(make_system(ModelKind::mixture_leverage, inst.sys.data, inst.sys.priors,
                           inst.sys.post),
               std::invalid_argument);
  EXPECT_THROW(make_system(ModelKind::mixture_leverage, inst.sys.data, inst.sys.priors,
                           inst.sys.post, {true, false}),
               std::invalid_argument);
}
