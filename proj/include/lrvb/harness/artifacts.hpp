#ifndef LRVB_HARNESS_ARTIFACTS_HPP
#define LRVB_HARNESS_ARTIFACTS_HPP

// File formats: single-column data CSVs (header "x") and JSON artifacts for
// fits, covariances and MH summaries. Matrices are written row-major with
// the layout labels of their rows and columns.

#include <Eigen/Dense>

#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrvb/harness/experiment.hpp"
#include "lrvb/harness/report.hpp"
#include "lrvb/layout.hpp"
#include "lrvb/lrvb_core.hpp"
#include "lrvb/mh.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::harness {

inline void write_data_csv(const Eigen::VectorXd& x, std::ostream& out) {
  out << "x\n";
  for (Eigen::Index n = 0; n < x.size(); ++n) out << fmt(x[n]) << '\n';
}

inline Eigen::VectorXd read_data_csv(std::istream& in) {
  std::vector<double> values;
  for (auto& [line, f] : detail::read_table(in, "x")) {
    values.push_back(detail::parse_required(f[0], line, "x"));
  }
  return Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

namespace detail {

inline json matrix_json(const MatrixXd& m) {
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline json theta_labels(const MeanLayout& lay) {
  json out = json::array();
  for (Index i = 0; i < lay.theta_dim; ++i) out.push_back(lay.label(i));
  return out;
}

}  // namespace detail

inline json posterior_json(const mixture::MixturePosterior& post) {
  json mu = json::array(), tau = json::array();
  for (const auto& b : post.mu) mu.push_back({{"mean", b.mean}, {"variance", b.variance}});
  for (const auto& b : post.tau) tau.push_back({{"shape", b.shape}, {"rate", b.rate}});
  return json{{"pi", {{"alpha", detail::from_vector(post.pi.alpha)}}},
              {"mu", std::move(mu)},
              {"tau", std::move(tau)},
              {"resp", detail::matrix_json(post.resp)}};
}

inline json fit_json(const mixture::FitResult& fit) {
  return json{{"posterior", posterior_json(fit.posterior)},
              {"iterations", fit.iterations},
              {"final_residual", fit.final_residual},
              {"converged", fit.converged},
              {"empty_components", fit.empty_components},
              {"restart", fit.restart}};
}

/// Fit plus the mean-field and linear-response covariances of theta.
inline json lrvb_json(const mixture::FitResult& fit, const MeanLayout& layout,
                      const MatrixXd& v_theta, const LrvbEstimate& est) {
  json out = fit_json(fit);
  out["labels"] = detail::theta_labels(layout);
  out["mfvb_cov"] = detail::matrix_json(v_theta);
  out["lrvb_cov"] = detail::matrix_json(est.sigma_hat_theta);
  out["condition"] = est.condition;
  out["asymmetry"] = est.asymmetry;
  return out;
}

inline json mh_json(const mh::UnconstrainedParams& map, const mh::PosteriorDraws& draws,
                    const mh::SampleMoments& moments) {
  const auto labels = parameter_labels(static_cast<int>(draws.components));
  json params = json::array();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Index j = static_cast<Index>(i);
    params.push_back({{"parameter", labels[i]},
                      {"mean", moments.mean[j]},
                      {"sd", moments.sd[j]},
                      {"sd_mc_se", moments.sd_mc_se[j]}});
  }
  return json{{"map",
               {{"pi_logits", detail::from_vector(map.pi_logits)},
                {"mu", detail::from_vector(map.mu)},
                {"log_tau", detail::from_vector(map.log_tau)}}},
              {"acceptance_rate", draws.acceptance_rate},
              {"low_acceptance", draws.low_acceptance},
              {"retained_draws", draws.draws.rows()},
              {"parameters", std::move(params)}};
}

}  // namespace lrvb::harness

#endif  // LRVB_HARNESS_ARTIFACTS_HPP
