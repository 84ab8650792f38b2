#include "cpopt/truncnorm.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>

namespace cpopt {

double normal_quantile(double p) {
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}

double TruncatedNormal::mass() const {
  const double a = alpha();
  const double b = beta();
  // Work in the tail that keeps the difference well conditioned.
  if (a > 0.0) return normal_cdf(-a) - normal_cdf(-b);
  return normal_cdf(b) - normal_cdf(a);
}

double TruncatedNormal::log_pdf(double x) const {
  if (x < lo || x > hi) return -INFINITY;
  const double z = (x - mean) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi) - std::log(mass());
}

double TruncatedNormal::quantile(double u) const {
  const double a = alpha();
  const double b = beta();
  double x;
  if (a > 0.0) {
    // Upper tail: reflect to keep precision.
    const double pa = normal_cdf(-a);
    const double pb = normal_cdf(-b);
    x = mean - sigma * normal_quantile(pa - u * (pa - pb));
  } else {
    const double pa = normal_cdf(a);
    const double pb = normal_cdf(b);
    x = mean + sigma * normal_quantile(pa + u * (pb - pa));
  }
  return std::clamp(x, lo, hi);
}

double TruncatedNormal::dlog_dmean(double x) const {
  const double z = (x - mean) / sigma;
  const double z_mass = mass();
  return z / sigma + (normal_pdf(beta()) - normal_pdf(alpha())) / (sigma * z_mass);
}

double TruncatedNormal::dlog_dlogsigma(double x) const {
  const double z = (x - mean) / sigma;
  const double a = alpha();
  const double b = beta();
  return z * z - 1.0 + (b * normal_pdf(b) - a * normal_pdf(a)) / mass();
}

}  // namespace cpopt
