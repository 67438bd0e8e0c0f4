#pragma once

#include <cmath>
#include <stdexcept>

namespace cupid {

namespace detail {

// Regularized lower incomplete gamma P(a, x) by series expansion (x < a+1).
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by continued fraction (x >= a+1).
inline double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

// Survival function of the chi-squared distribution with k degrees of
// freedom: P(X > x).
inline double chi2_sf(double x, double k) {
  if (k <= 0) throw std::invalid_argument("chi2_sf: degrees of freedom <= 0");
  if (x <= 0) return 1.0;
  const double a = k / 2.0, xx = x / 2.0;
  if (xx < a + 1.0) return 1.0 - detail::gamma_p_series(a, xx);
  return detail::gamma_q_cf(a, xx);
}

}  // namespace cupid
