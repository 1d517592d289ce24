#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "latmix/errors.hpp"
#include "latmix/math.hpp"

namespace latmix {

// Lower bounds on scale parameters (normalized-ms space). They keep the
// likelihood finite on duplicated samples and bound the quantile solver's
// cdf slope.
inline constexpr double kScaleFloor = 1e-3;
inline constexpr double kBetaFloor = 1e-3;
// Below this shape value the Pareto tail switches to its exponential limit,
// which avoids catastrophic cancellation in (1 + shape*h/scale)^(-1/shape).
inline constexpr double kShapeExponentialSwitch = 1e-9;
inline constexpr double kWeightSumTolerance = 1e-9;

/// Gaussian mixture bulk parameters: component weights, locations, scales.
struct GmmParams {
  std::vector<double> weights;
  std::vector<double> locations;
  std::vector<double> scales;

  std::size_t component_count() const { return weights.size(); }

  void validate() const {
    const std::size_t k = weights.size();
    if (k == 0) throw ParameterError("GmmParams: at least one component required");
    if (locations.size() != k || scales.size() != k) {
      throw ParameterError("GmmParams: weights/locations/scales lengths differ");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      if (!std::isfinite(weights[i]) || weights[i] < 0.0) {
        throw ParameterError("GmmParams: weight " + std::to_string(i) +
                             " is negative or non-finite");
      }
      if (!std::isfinite(locations[i])) {
        throw ParameterError("GmmParams: location " + std::to_string(i) +
                             " is non-finite");
      }
      if (!std::isfinite(scales[i]) || scales[i] < kScaleFloor) {
        throw ParameterError("GmmParams: scale " + std::to_string(i) +
                             " below floor " + std::to_string(kScaleFloor));
      }
      sum += weights[i];
    }
    if (std::abs(sum - 1.0) > kWeightSumTolerance) {
      throw ParameterError("GmmParams: weights sum to " + std::to_string(sum) +
                           ", expected 1");
    }
  }
};

/// Generalized Pareto tail: threshold, scale, nonnegative shape.
struct TailParams {
  double threshold = 0.0;
  double scale = 1.0;
  double shape = 0.0;

  void validate() const {
    if (!std::isfinite(threshold)) throw ParameterError("TailParams: threshold non-finite");
    if (!std::isfinite(scale) || scale < kBetaFloor) {
      throw ParameterError("TailParams: scale below floor " + std::to_string(kBetaFloor));
    }
    if (!std::isfinite(shape) || shape < 0.0) {
      throw ParameterError("TailParams: shape must be nonnegative");
    }
  }
};

/// Spliced conditional latency law: Gaussian mixture bulk below the
/// threshold, rescaled Pareto tail above it. With `tail` absent every
/// operation reduces exactly to its pure-mixture counterpart.
struct SplicedMixtureParams {
  GmmParams bulk;
  std::optional<TailParams> tail;

  void validate() const {
    bulk.validate();
    if (tail) tail->validate();
  }
};

namespace detail {

inline double gmm_log_pdf_unchecked(double y, const GmmParams& phi) {
  const std::size_t k = phi.component_count();
  double best = -std::numeric_limits<double>::infinity();
  thread_local std::vector<double> terms;
  terms.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double z = (y - phi.locations[i]) / phi.scales[i];
    terms[i] = std::log(phi.weights[i]) - std::log(phi.scales[i]) +
               log_std_normal_pdf(z);
    best = std::max(best, terms[i]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::exp(terms[i] - best);
  return best + std::log(acc);
}

inline double gmm_cdf_unchecked(double y, const GmmParams& phi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < phi.component_count(); ++i) {
    acc += phi.weights[i] * std_normal_cdf((y - phi.locations[i]) / phi.scales[i]);
  }
  return std::min(acc, 1.0);
}

// Computed from erfc directly, so it keeps relative precision deep in the
// tail where 1 - cdf would cancel.
inline double gmm_ccdf_unchecked(double y, const GmmParams& phi) {
  double acc = 0.0;
  for (std::size_t i = 0; i < phi.component_count(); ++i) {
    acc += phi.weights[i] * std_normal_ccdf((y - phi.locations[i]) / phi.scales[i]);
  }
  return std::min(acc, 1.0);
}

inline double gmm_log_ccdf_unchecked(double y, const GmmParams& phi) {
  const std::size_t k = phi.component_count();
  thread_local std::vector<double> terms;
  terms.resize(k);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    terms[i] = std::log(phi.weights[i]) +
               log_std_normal_ccdf((y - phi.locations[i]) / phi.scales[i]);
    best = std::max(best, terms[i]);
  }
  if (!std::isfinite(best)) return best;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::exp(terms[i] - best);
  return std::min(best + std::log(acc), 0.0);
}

inline double gpd_log_pdf_unchecked(double y, const TailParams& tail) {
  const double h = y - tail.threshold;
  if (tail.shape < kShapeExponentialSwitch) {
    return -std::log(tail.scale) - h / tail.scale;
  }
  return -std::log(tail.scale) -
         (1.0 / tail.shape + 1.0) * std::log1p(tail.shape * h / tail.scale);
}

inline double gpd_ccdf_unchecked(double y, const TailParams& tail) {
  const double h = y - tail.threshold;
  if (tail.shape < kShapeExponentialSwitch) return std::exp(-h / tail.scale);
  return std::exp(-std::log1p(tail.shape * h / tail.scale) / tail.shape);
}

// Inverse of gpd_ccdf: the y >= threshold with conditional tail
// probability `ccdf_level`.
inline double gpd_quantile_from_ccdf_unchecked(double ccdf_level,
                                               const TailParams& tail) {
  const double log_c = std::log(ccdf_level);
  if (tail.shape < kShapeExponentialSwitch) {
    return tail.threshold - tail.scale * log_c;
  }
  return tail.threshold +
         tail.scale / tail.shape * std::expm1(-tail.shape * log_c);
}

inline double spliced_pdf_unchecked(double y, const SplicedMixtureParams& theta) {
  if (theta.tail && y > theta.tail->threshold) {
    return gmm_ccdf_unchecked(theta.tail->threshold, theta.bulk) *
           std::exp(gpd_log_pdf_unchecked(y, *theta.tail));
  }
  return std::exp(gmm_log_pdf_unchecked(y, theta.bulk));
}

inline double log_spliced_pdf_unchecked(double y, const SplicedMixtureParams& theta) {
  if (theta.tail && y > theta.tail->threshold) {
    return gmm_log_ccdf_unchecked(theta.tail->threshold, theta.bulk) +
           gpd_log_pdf_unchecked(y, *theta.tail);
  }
  return gmm_log_pdf_unchecked(y, theta.bulk);
}

inline double spliced_ccdf_unchecked(double y, const SplicedMixtureParams& theta) {
  if (theta.tail && y > theta.tail->threshold) {
    return gmm_ccdf_unchecked(theta.tail->threshold, theta.bulk) *
           gpd_ccdf_unchecked(y, *theta.tail);
  }
  return gmm_ccdf_unchecked(y, theta.bulk);
}

inline double spliced_cdf_unchecked(double y, const SplicedMixtureParams& theta) {
  if (theta.tail && y > theta.tail->threshold) {
    return 1.0 - spliced_ccdf_unchecked(y, theta);
  }
  return gmm_cdf_unchecked(y, theta.bulk);
}

// Monotone bracketed bisection on the mixture cdf. Newton is deliberately
// avoided: the pdf can be near zero between well-separated modes.
inline double gmm_quantile_bisect_unchecked(double p, const GmmParams& phi,
                                            double lo, double hi) {
  // Solve in whichever tail representation conditions better.
  const auto deficit = [&](double y) {
    return p <= 0.5 ? gmm_cdf_unchecked(y, phi) - p
                    : (1.0 - p) - gmm_ccdf_unchecked(y, phi);
  };
  double width = hi - lo;
  for (int guard = 0; guard < 200 && deficit(lo) > 0.0; ++guard) {
    lo -= width;
    width *= 2.0;
  }
  width = hi - lo;
  for (int guard = 0; guard < 200 && deficit(hi) < 0.0; ++guard) {
    hi += width;
    width *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (deficit(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

inline void gmm_default_bracket(const GmmParams& phi, double* lo, double* hi) {
  *lo = std::numeric_limits<double>::infinity();
  *hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < phi.component_count(); ++i) {
    *lo = std::min(*lo, phi.locations[i] - 10.0 * phi.scales[i]);
    *hi = std::max(*hi, phi.locations[i] + 10.0 * phi.scales[i]);
  }
}

inline double spliced_quantile_unchecked(double p, const SplicedMixtureParams& theta) {
  if (theta.tail) {
    const double bulk_mass = gmm_cdf_unchecked(theta.tail->threshold, theta.bulk);
    if (p >= bulk_mass) {
      const double tail_mass = gmm_ccdf_unchecked(theta.tail->threshold, theta.bulk);
      const double conditional = std::min((1.0 - p) / tail_mass, 1.0);
      return gpd_quantile_from_ccdf_unchecked(conditional, *theta.tail);
    }
  }
  double lo, hi;
  gmm_default_bracket(theta.bulk, &lo, &hi);
  return gmm_quantile_bisect_unchecked(p, theta.bulk, lo, hi);
}

}  // namespace detail

/// Mixture density at y, evaluated through log-sum-exp.
inline double gmm_pdf(double y, const GmmParams& phi) {
  phi.validate();
  return std::exp(detail::gmm_log_pdf_unchecked(y, phi));
}

inline double gmm_log_pdf(double y, const GmmParams& phi) {
  phi.validate();
  return detail::gmm_log_pdf_unchecked(y, phi);
}

inline double gmm_cdf(double y, const GmmParams& phi) {
  phi.validate();
  return detail::gmm_cdf_unchecked(y, phi);
}

inline double gmm_ccdf(double y, const GmmParams& phi) {
  phi.validate();
  return detail::gmm_ccdf_unchecked(y, phi);
}

/// Pareto excess density; defined only beyond the threshold.
inline double gpd_pdf(double y, const TailParams& tail) {
  tail.validate();
  if (!(y > tail.threshold)) {
    throw ParameterError("gpd_pdf: y must exceed the threshold");
  }
  return std::exp(detail::gpd_log_pdf_unchecked(y, tail));
}

inline double gpd_ccdf(double y, const TailParams& tail) {
  tail.validate();
  if (!(y >= tail.threshold)) {
    throw ParameterError("gpd_ccdf: y must be at or beyond the threshold");
  }
  return detail::gpd_ccdf_unchecked(y, tail);
}

inline double spliced_pdf(double y, const SplicedMixtureParams& theta) {
  theta.validate();
  return detail::spliced_pdf_unchecked(y, theta);
}

/// Log-density used by the training loss; finite everywhere on the support
/// for any valid parameter set (|y| <= 1e3, scales at their floors included).
inline double log_spliced_pdf(double y, const SplicedMixtureParams& theta) {
  theta.validate();
  return detail::log_spliced_pdf_unchecked(y, theta);
}

inline double spliced_cdf(double y, const SplicedMixtureParams& theta) {
  theta.validate();
  return detail::spliced_cdf_unchecked(y, theta);
}

/// Tail probability P[Y > y | theta].
inline double spliced_ccdf(double y, const SplicedMixtureParams& theta) {
  theta.validate();
  return detail::spliced_ccdf_unchecked(y, theta);
}

/// Quantile at cdf level p: bisection through the bulk, closed form in the
/// tail. |cdf(result) - p| <= 1e-9 over the whole valid parameter space.
inline double spliced_quantile(double p, const SplicedMixtureParams& theta) {
  theta.validate();
  if (!(p > 0.0 && p < 1.0)) {
    throw ParameterError("spliced_quantile: p must lie in (0,1)");
  }
  return detail::spliced_quantile_unchecked(p, theta);
}

/// i.i.d. draws by inverse-cdf of uniform variates; identical seeds give
/// identical vectors.
inline std::vector<double> spliced_sample(std::size_t n,
                                          const SplicedMixtureParams& theta,
                                          std::uint64_t seed) {
  theta.validate();
  std::vector<double> out;
  out.reserve(n);
  Rng rng(seed);
  double lo, hi;
  detail::gmm_default_bracket(theta.bulk, &lo, &hi);
  const bool has_tail = theta.tail.has_value();
  const double bulk_mass =
      has_tail ? detail::gmm_cdf_unchecked(theta.tail->threshold, theta.bulk) : 1.0;
  const double tail_mass =
      has_tail ? detail::gmm_ccdf_unchecked(theta.tail->threshold, theta.bulk) : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    if (has_tail && u >= bulk_mass) {
      const double conditional = std::min((1.0 - u) / tail_mass, 1.0);
      out.push_back(detail::gpd_quantile_from_ccdf_unchecked(conditional, *theta.tail));
    } else {
      out.push_back(detail::gmm_quantile_bisect_unchecked(u, theta.bulk, lo, hi));
    }
  }
  return out;
}

}  // namespace latmix
