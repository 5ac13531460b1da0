#ifndef LRVB_SPECIAL_HPP
#define LRVB_SPECIAL_HPP

#include <cmath>
#include <stdexcept>

namespace lrvb {

namespace detail {
inline constexpr double kSeriesThreshold = 10.0;
}  // namespace detail

/// Digamma function psi(x) for x > 0.
///
/// Shifts the argument up with psi(x) = psi(x + 1) - 1/x until x >= 10 and
/// evaluates the Bernoulli asymptotic series there.
inline double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error("digamma: argument must be positive and finite");
  }
  double shift = 0.0;
  while (x < detail::kSeriesThreshold) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // -sum_n B_{2n} / (2n x^{2n}), Horner form in 1/x^2.
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 -
                                      inv2 * (1.0 / 132 -
                                              inv2 * (691.0 / 32760 - inv2 * (1.0 / 12)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

/// Trigamma function psi'(x) for x > 0.
inline double trigamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error("trigamma: argument must be positive and finite");
  }
  double shift = 0.0;
  while (x < detail::kSeriesThreshold) {
    shift += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * inv *
      (1.0 / 6 -
       inv2 * (1.0 / 30 -
               inv2 * (1.0 / 42 -
                       inv2 * (1.0 / 30 -
                               inv2 * (5.0 / 66 - inv2 * (691.0 / 2730 - inv2 * (7.0 / 6)))))));
  return shift + inv + 0.5 * inv2 + series;
}

}  // namespace lrvb

#endif  // LRVB_SPECIAL_HPP
