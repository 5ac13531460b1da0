#ifndef LRVB_HARNESS_CONFIG_HPP
#define LRVB_HARNESS_CONFIG_HPP

// Simulation configuration and its JSON form. Keys match the field names;
// a config file may omit keys (they keep the base profile's values) but
// unknown keys are an error.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrvb/mh.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::harness {

using nlohmann::json;

struct SimulationConfig {
  int K = 3;
  int N = 3000;
  int n_sims = 100;
  Eigen::VectorXd truth_pi = Eigen::Vector3d(0.3, 0.3, 0.4);
  Eigen::VectorXd truth_mu = Eigen::Vector3d(-4.0, 0.0, 4.0);
  Eigen::VectorXd truth_tau = Eigen::Vector3d(1.0, 1.0, 1.0);
  std::uint64_t master_seed = 20150602;
  mixture::MixturePriors priors;
  mh::MhConfig mh;
  mixture::FitOptions fit;

  void validate() const {
    if (K < 1 || N < 1 || n_sims < 1) throw std::invalid_argument("K, N and n_sims must be >= 1");
    if (truth_pi.size() != K || truth_mu.size() != K || truth_tau.size() != K) {
      throw std::invalid_argument("truth_pi, truth_mu and truth_tau need K entries");
    }
    if ((truth_pi.array() < 0).any() || std::abs(truth_pi.sum() - 1.0) > 1e-10) {
      throw std::invalid_argument("truth_pi must lie on the simplex");
    }
    if (!truth_mu.allFinite()) throw std::invalid_argument("truth_mu must be finite");
    if (!(truth_tau.array() > 0).all() || !truth_tau.allFinite()) {
      throw std::invalid_argument("truth_tau must be positive");
    }
    priors.validate();
    mh.validate();
    if (fit.max_iterations < 1 || !(fit.tolerance > 0) || fit.n_restarts < 0) {
      throw std::invalid_argument("fit options out of range");
    }
  }
};

/// Paper-scale settings (the default-constructed config).
inline SimulationConfig paper_profile() { return SimulationConfig{}; }

/// Desk-scale settings used by the acceptance suite.
inline SimulationConfig desk_profile() {
  SimulationConfig c;
  c.K = 2;
  c.N = 1000;
  c.n_sims = 20;
  c.truth_pi = Eigen::Vector2d(0.4, 0.6);
  c.truth_mu = Eigen::Vector2d(-2.0, 2.0);
  c.truth_tau = Eigen::Vector2d(1.0, 1.0);
  return c;
}

/// Defaults for the leverage run.
inline SimulationConfig leverage_profile() {
  SimulationConfig c;
  c.K = 2;
  c.N = 500;
  c.n_sims = 1;
  c.truth_pi = Eigen::Vector2d(0.5, 0.5);
  c.truth_mu = Eigen::Vector2d(-2.0, 2.0);
  c.truth_tau = Eigen::Vector2d(1.0, 1.0);
  return c;
}

inline SimulationConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  if (name == "leverage") return leverage_profile();
  throw std::invalid_argument("unknown profile '" + name + "' (expected desk or paper)");
}

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (const auto& item : j.items()) {
    if (!allowed.count(item.key())) {
      throw std::invalid_argument("unknown config key '" + where + item.key() + "'");
    }
  }
}

inline Eigen::VectorXd to_vector(const json& j, const std::string& key) {
  if (!j.is_array()) throw std::invalid_argument(key + " must be an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw std::invalid_argument(key + " must be an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json from_vector(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace detail

/// Overlays the keys present in `j` onto `base`.
inline SimulationConfig config_from_json(const json& j, SimulationConfig base) {
  detail::reject_unknown(j,
                         {"K", "N", "n_sims", "truth_pi", "truth_mu", "truth_tau", "master_seed",
                          "priors", "mh", "fit"},
                         "");
  detail::read_field(j, "K", base.K, "");
  detail::read_field(j, "N", base.N, "");
  detail::read_field(j, "n_sims", base.n_sims, "");
  detail::read_field(j, "master_seed", base.master_seed, "");
  for (const char* key : {"truth_pi", "truth_mu", "truth_tau"}) {
    if (!j.contains(key)) continue;
    Eigen::VectorXd v = detail::to_vector(j.at(key), key);
    if (std::string(key) == "truth_pi") base.truth_pi = v;
    else if (std::string(key) == "truth_mu") base.truth_mu = v;
    else base.truth_tau = v;
  }
  if (j.contains("priors")) {
    const json& p = j.at("priors");
    detail::reject_unknown(p,
                           {"dirichlet_alpha", "gamma_shape", "gamma_rate", "normal_mean",
                            "normal_variance"},
                           "priors.");
    detail::read_field(p, "dirichlet_alpha", base.priors.dirichlet_alpha, "priors.");
    detail::read_field(p, "gamma_shape", base.priors.gamma_shape, "priors.");
    detail::read_field(p, "gamma_rate", base.priors.gamma_rate, "priors.");
    detail::read_field(p, "normal_mean", base.priors.normal_mean, "priors.");
    detail::read_field(p, "normal_variance", base.priors.normal_variance, "priors.");
  }
  if (j.contains("mh")) {
    const json& m = j.at("mh");
    detail::reject_unknown(m, {"n_draws", "n_burn", "proposal_scale", "seed"}, "mh.");
    detail::read_field(m, "n_draws", base.mh.n_draws, "mh.");
    detail::read_field(m, "n_burn", base.mh.n_burn, "mh.");
    detail::read_field(m, "proposal_scale", base.mh.proposal_scale, "mh.");
    detail::read_field(m, "seed", base.mh.seed, "mh.");
  }
  if (j.contains("fit")) {
    const json& f = j.at("fit");
    detail::reject_unknown(f, {"max_iterations", "tolerance", "n_restarts", "seed"}, "fit.");
    detail::read_field(f, "max_iterations", base.fit.max_iterations, "fit.");
    detail::read_field(f, "tolerance", base.fit.tolerance, "fit.");
    detail::read_field(f, "n_restarts", base.fit.n_restarts, "fit.");
    detail::read_field(f, "seed", base.fit.seed, "fit.");
  }
  base.validate();
  return base;
}

inline SimulationConfig load_config(const std::string& path, SimulationConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return config_from_json(j, std::move(base));
}

inline json config_to_json(const SimulationConfig& c) {
  return json{
      {"K", c.K},
      {"N", c.N},
      {"n_sims", c.n_sims},
      {"truth_pi", detail::from_vector(c.truth_pi)},
      {"truth_mu", detail::from_vector(c.truth_mu)},
      {"truth_tau", detail::from_vector(c.truth_tau)},
      {"master_seed", c.master_seed},
      {"priors",
       {{"dirichlet_alpha", c.priors.dirichlet_alpha},
        {"gamma_shape", c.priors.gamma_shape},
        {"gamma_rate", c.priors.gamma_rate},
        {"normal_mean", c.priors.normal_mean},
        {"normal_variance", c.priors.normal_variance}}},
      {"mh",
       {{"n_draws", c.mh.n_draws},
        {"n_burn", c.mh.n_burn},
        {"proposal_scale", c.mh.proposal_scale},
        {"seed", c.mh.seed}}},
      {"fit",
       {{"max_iterations", c.fit.max_iterations},
        {"tolerance", c.fit.tolerance},
        {"n_restarts", c.fit.n_restarts},
        {"seed", c.fit.seed}}},
  };
}

}  // namespace lrvb::harness

#endif  // LRVB_HARNESS_CONFIG_HPP
