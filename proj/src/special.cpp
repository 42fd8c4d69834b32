#include "valc/special.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "valc/error.hpp"

namespace valc {

namespace {

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw Error(ErrorKind::DomainError, std::string(name) + " requires a finite positive argument, got " +
                                            std::to_string(x));
  }
}

}  // namespace

double digamma(double x) {
  require_positive(x, "digamma");
  double shift = 0.0;
  while (x < 6.0) {
    shift += 1.0 / x;
    x += 1.0;
  }
  // Asymptotic series: ln x - 1/(2x) - sum B_2n / (2n x^2n), through x^-14.
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
  return std::log(x) - 0.5 * inv - series - shift;
}

double log_gamma(double x) {
  require_positive(x, "log_gamma");
  double log_shift = 0.0;
  if (x < 7.0) {
    double product = 1.0;
    while (x < 7.0) {
      product *= x;
      x += 1.0;
    }
    log_shift = std::log(product);
  }
  // Stirling series: (x - 1/2) ln x - x + ln(2 pi)/2 + sum B_2n / (2n (2n-1) x^(2n-1)).
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 / 12.0 -
             inv2 * (1.0 / 360.0 -
                     inv2 * (1.0 / 1260.0 -
                             inv2 * (1.0 / 1680.0 -
                                     inv2 * (1.0 / 1188.0 - inv2 * (691.0 / 360360.0 - inv2 / 156.0))))));
  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  return (x - 0.5) * std::log(x) - x + half_log_two_pi + series - log_shift;
}

}  // namespace valc
