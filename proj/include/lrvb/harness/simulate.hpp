#ifndef LRVB_HARNESS_SIMULATE_HPP
#define LRVB_HARNESS_SIMULATE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lrvb/harness/config.hpp"
#include "lrvb/mixture.hpp"

namespace lrvb::harness {

enum class Phase : std::uint64_t { simulate = 1, fit = 2, mh = 3 };

/// Seed for one phase of one simulation. Each sim gets hash(master, sim_id)
/// and every phase draws from its own stream derived from that.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t sim_id, Phase phase) {
  using mixture::detail::splitmix64;
  const std::uint64_t sim_seed = splitmix64(master ^ splitmix64(sim_id));
  return splitmix64(sim_seed + 0x632BE59BD9B4E019ULL * static_cast<std::uint64_t>(phase));
}

struct SimulatedData {
  Eigen::VectorXd x;
  std::vector<int> labels;
  mixture::DataMoments moments() const { return mixture::DataMoments::observed(x); }
};

/// Labels i.i.d. from truth_pi, then x_n ~ N(mu_z, 1 / tau_z).
inline SimulatedData simulate(const SimulationConfig& cfg, std::uint64_t sim_id) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.master_seed, sim_id, Phase::simulate));
  std::discrete_distribution<int> label(cfg.truth_pi.data(), cfg.truth_pi.data() + cfg.K);
  std::normal_distribution<double> normal(0.0, 1.0);
  SimulatedData out;
  out.x.resize(cfg.N);
  out.labels.resize(static_cast<std::size_t>(cfg.N));
  for (int n = 0; n < cfg.N; ++n) {
    const int z = label(rng);
    out.labels[static_cast<std::size_t>(n)] = z;
    out.x[n] = cfg.truth_mu[z] + normal(rng) / std::sqrt(cfg.truth_tau[z]);
  }
  return out;
}

}  // namespace lrvb::harness

#endif  // LRVB_HARNESS_SIMULATE_HPP
