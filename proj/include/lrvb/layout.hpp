#ifndef LRVB_LAYOUT_HPP
#define LRVB_LAYOUT_HPP

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace lrvb {

enum class ModelKind { mixture, mixture_leverage };

enum class Coord { logpi, mu, mu2, tau, logtau, z, x, x2 };

struct CoordInfo {
  Coord kind;
  Eigen::Index component = -1;    // -1 when not applicable
  Eigen::Index observation = -1;  // -1 when not applicable
};

/// Index map of the stacked mean vector m.
///
/// mixture:          [log pi_k]_k, [mu_k, mu_k^2]_k, [tau_k, log tau_k]_k, z
/// mixture_leverage: [mu_k, mu_k^2]_k, z, [x_n, x_n^2]_n
/// z is observation-major: z(n, k) = theta_dim + n K + k.
struct MeanLayout {
  ModelKind model = ModelKind::mixture;
  Eigen::Index components = 0;
  Eigen::Index observations = 0;
  Eigen::Index theta_dim = 0;
  Eigen::Index z_dim = 0;
  Eigen::Index x_dim = 0;
  std::vector<CoordInfo> coords;

  Eigen::Index dim() const { return theta_dim + z_dim + x_dim; }
  bool has_pi_tau() const { return model == ModelKind::mixture; }

  Eigen::Index logpi(Eigen::Index k) const {
    require_pi_tau();
    return k;
  }
  Eigen::Index mu(Eigen::Index k) const { return mu_offset() + 2 * k; }
  Eigen::Index mu2(Eigen::Index k) const { return mu_offset() + 2 * k + 1; }
  Eigen::Index tau(Eigen::Index k) const {
    require_pi_tau();
    return 3 * components + 2 * k;
  }
  Eigen::Index logtau(Eigen::Index k) const { return tau(k) + 1; }
  Eigen::Index z(Eigen::Index n, Eigen::Index k) const {
    return theta_dim + n * components + k;
  }
  Eigen::Index x(Eigen::Index n) const {
    if (x_dim == 0) throw std::logic_error("layout has no x block");
    return theta_dim + z_dim + 2 * n;
  }
  Eigen::Index x2(Eigen::Index n) const { return x(n) + 1; }

  std::string label(Eigen::Index i) const {
    const CoordInfo& c = coords.at(static_cast<std::size_t>(i));
    const auto k = std::to_string(c.component + 1);
    const auto n = std::to_string(c.observation + 1);
    switch (c.kind) {
      case Coord::logpi: return "logpi_" + k;
      case Coord::mu: return "mu_" + k;
      case Coord::mu2: return "mu2_" + k;
      case Coord::tau: return "tau_" + k;
      case Coord::logtau: return "logtau_" + k;
      case Coord::z: return "z_" + n + "_" + k;
      case Coord::x: return "x_" + n;
      case Coord::x2: return "x2_" + n;
    }
    return {};
  }

 private:
  Eigen::Index mu_offset() const { return has_pi_tau() ? components : 0; }
  void require_pi_tau() const {
    if (!has_pi_tau()) throw std::logic_error("layout has no pi/tau coordinates");
  }
};

inline MeanLayout build_layout(Eigen::Index components, Eigen::Index observations,
                               ModelKind model) {
  if (components < 1 || observations < 1) {
    throw std::invalid_argument("layout needs K >= 1 and N >= 1");
  }
  MeanLayout layout;
  layout.model = model;
  layout.components = components;
  layout.observations = observations;
  const Eigen::Index k_count = components;
  auto& c = layout.coords;
  if (model == ModelKind::mixture) {
    for (Eigen::Index k = 0; k < k_count; ++k) c.push_back({Coord::logpi, k});
  }
  for (Eigen::Index k = 0; k < k_count; ++k) {
    c.push_back({Coord::mu, k});
    c.push_back({Coord::mu2, k});
  }
  if (model == ModelKind::mixture) {
    for (Eigen::Index k = 0; k < k_count; ++k) {
      c.push_back({Coord::tau, k});
      c.push_back({Coord::logtau, k});
    }
  }
  layout.theta_dim = static_cast<Eigen::Index>(c.size());
  for (Eigen::Index n = 0; n < observations; ++n) {
    for (Eigen::Index k = 0; k < k_count; ++k) c.push_back({Coord::z, k, n});
  }
  layout.z_dim = observations * k_count;
  if (model == ModelKind::mixture_leverage) {
    for (Eigen::Index n = 0; n < observations; ++n) {
      c.push_back({Coord::x, -1, n});
      c.push_back({Coord::x2, -1, n});
    }
    layout.x_dim = 2 * observations;
  }
  return layout;
}

}  // namespace lrvb

#endif  // LRVB_LAYOUT_HPP
