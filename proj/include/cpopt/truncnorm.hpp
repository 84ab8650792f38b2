#pragma once

// Gaussian truncated to [lo, hi], renormalized so it is an exact density.

#include <cmath>
#include <numbers>

namespace cpopt {

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_quantile(double p);

struct TruncatedNormal {
  double mean;
  double sigma;
  double lo;
  double hi;

  double alpha() const { return (lo - mean) / sigma; }
  double beta() const { return (hi - mean) / sigma; }
  double mass() const;

  double log_pdf(double x) const;
  double pdf(double x) const { return std::exp(log_pdf(x)); }

  // Inverse-CDF draw from u in (0, 1).
  double quantile(double u) const;

  // d log_pdf / d mean and d log_pdf / d log(sigma).
  double dlog_dmean(double x) const;
  double dlog_dlogsigma(double x) const;
};

}  // namespace cpopt
