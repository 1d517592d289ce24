#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "latmix/distributions.hpp"
#include "oracles.hpp"

using namespace latmix;

namespace {

GmmParams fixed_phi3() {
  return {{0.2, 0.5, 0.3}, {-1.0, 0.5, 2.0}, {0.5, 1.0, 1.5}};
}

SplicedMixtureParams fixed_theta() {
  SplicedMixtureParams theta;
  theta.bulk = fixed_phi3();
  theta.tail = TailParams{2.5, 1.0, 0.3};
  return theta;
}

// Deterministic "random valid theta" generator shared by the property tests.
SplicedMixtureParams random_theta(Rng& rng, bool with_tail, double max_shape = 0.9) {
  const int k = 1 + static_cast<int>(rng.bounded(4));
  SplicedMixtureParams theta;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double w = 0.05 + rng.uniform01();
    theta.bulk.weights.push_back(w);
    sum += w;
    theta.bulk.locations.push_back(-3.0 + 6.0 * rng.uniform01());
    theta.bulk.scales.push_back(0.05 + 1.95 * rng.uniform01());
  }
  for (double& w : theta.bulk.weights) w /= sum;
  if (with_tail) {
    double top = theta.bulk.locations[0];
    double top_scale = theta.bulk.scales[0];
    for (int i = 1; i < k; ++i) {
      if (theta.bulk.locations[i] > top) {
        top = theta.bulk.locations[i];
        top_scale = theta.bulk.scales[i];
      }
    }
    theta.tail = TailParams{top + (2.0 * rng.uniform01() - 0.5) * top_scale,
                            0.05 + 1.5 * rng.uniform01(),
                            max_shape * rng.uniform01()};
  }
  return theta;
}

}  // namespace

// ---------------------------------------------------------------------------
// gmm pdf/cdf
// ---------------------------------------------------------------------------

TEST_CASE("gmm_pdf matches standard normal at its mode", "[distributions]") {
  GmmParams phi{{1.0}, {0.0}, {1.0}};
  REQUIRE(gmm_pdf(0.0, phi) == Catch::Approx(0.3989422804014326779).epsilon(1e-12));
}

TEST_CASE("gmm_pdf symmetric two-component value", "[distributions]") {
  GmmParams phi{{0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0}};
  REQUIRE(gmm_pdf(0.0, phi) == Catch::Approx(0.2419707245191433498).epsilon(1e-12));
}

TEST_CASE("gmm_pdf agrees with the extended-precision oracle", "[distributions]") {
  const GmmParams phi = fixed_phi3();
  // Frozen from the long-double direct-summation oracle.
  REQUIRE(gmm_pdf(2.5, phi) == Catch::Approx(0.1024721287988465469).epsilon(1e-12));
  const double live = static_cast<double>(
      oracles::mixture_pdf_ld(2.5L, phi.weights, phi.locations, phi.scales));
  REQUIRE(gmm_pdf(2.5, phi) == Catch::Approx(live).epsilon(1e-13));
}

TEST_CASE("gmm parameter validation rejects bad inputs", "[distributions]") {
  GmmParams bad_sum{{0.5, 0.6}, {0.0, 1.0}, {1.0, 1.0}};
  REQUIRE_THROWS_AS(gmm_pdf(0.0, bad_sum), ParameterError);
  GmmParams bad_scale{{1.0}, {0.0}, {0.0}};
  REQUIRE_THROWS_AS(gmm_pdf(0.0, bad_scale), ParameterError);
  GmmParams bad_len{{1.0}, {0.0, 1.0}, {1.0}};
  REQUIRE_THROWS_AS(gmm_cdf(0.0, bad_len), ParameterError);
  GmmParams empty;
  REQUIRE_THROWS_AS(gmm_cdf(0.0, empty), ParameterError);
}

TEST_CASE("gmm_cdf hits the symmetry point and the upper limit", "[distributions]") {
  GmmParams phi{{0.5, 0.5}, {-1.0, 1.0}, {1.0, 1.0}};
  REQUIRE(gmm_cdf(0.0, phi) == Catch::Approx(0.5).margin(1e-14));
  REQUIRE(gmm_cdf(1.0 + 12.0, phi) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("gmm_cdf agrees with adaptive quadrature of the pdf", "[distributions]") {
  const GmmParams phi = fixed_phi3();
  // Frozen from the mpmath mixture-of-normal-cdfs evaluation.
  REQUIRE(gmm_cdf(1.0, phi) == Catch::Approx(0.6214726576527168).epsilon(1e-12));
  const auto pdf = [&](long double y) {
    return oracles::mixture_pdf_ld(y, phi.weights, phi.locations, phi.scales);
  };
  const double integral = static_cast<double>(
      oracles::adaptive_simpson(pdf, -1.0L - 12.0L * 0.5L, 1.0L, 1e-10L));
  REQUIRE(gmm_cdf(1.0, phi) == Catch::Approx(integral).margin(1e-6));
}

TEST_CASE("gmm_cdf is nondecreasing", "[distributions]") {
  const GmmParams phi = fixed_phi3();
  double previous = 0.0;
  for (double y = -6.0; y <= 8.0; y += 0.05) {
    const double c = gmm_cdf(y, phi);
    REQUIRE(c >= previous);
    previous = c;
  }
}

// ---------------------------------------------------------------------------
// gpd
// ---------------------------------------------------------------------------

TEST_CASE("gpd_pdf equals 1/scale just past the threshold", "[distributions]") {
  TailParams tail{10.0, 2.0, 0.5};
  REQUIRE(gpd_pdf(10.0 + 1e-12, tail) == Catch::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("gpd exponential limit at shape zero", "[distributions]") {
  TailParams tail{0.0, 1.0, 0.0};
  REQUIRE(gpd_pdf(1.0, tail) == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
  TailParams tail2{0.0, 2.0, 0.0};
  REQUIRE(gpd_ccdf(2.0, tail2) == Catch::Approx(std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("gpd closed-form values", "[distributions]") {
  TailParams tail{10.0, 2.0, 0.5};
  // 0.5 * 1.5^-3 and 1.5^-2, frozen from the closed forms.
  REQUIRE(gpd_pdf(12.0, tail) == Catch::Approx(0.14814814814814814815).epsilon(1e-13));
  REQUIRE(gpd_ccdf(12.0, tail) == Catch::Approx(0.44444444444444444444).epsilon(1e-13));
  REQUIRE(gpd_ccdf(10.0, tail) == 1.0);
}

TEST_CASE("gpd domain errors", "[distributions]") {
  TailParams tail{10.0, 2.0, 0.5};
  REQUIRE_THROWS_AS(gpd_pdf(10.0, tail), ParameterError);
  REQUIRE_THROWS_AS(gpd_pdf(9.0, tail), ParameterError);
  REQUIRE_THROWS_AS(gpd_ccdf(9.999, tail), ParameterError);
  TailParams negative_shape{0.0, 1.0, -0.1};
  REQUIRE_THROWS_AS(gpd_pdf(1.0, negative_shape), ParameterError);
  TailParams tiny_scale{0.0, 1e-6, 0.1};
  REQUIRE_THROWS_AS(gpd_pdf(1.0, tiny_scale), ParameterError);
}

TEST_CASE("gpd shape->0 continuity", "[distributions]") {
  TailParams nearly_exp{1.0, 0.7, 1e-9};
  for (double h = 0.1; h < 8.0; h += 0.3) {
    const double exponential = std::exp(-h / 0.7) / 0.7;
    REQUIRE(gpd_pdf(1.0 + h, nearly_exp) ==
            Catch::Approx(exponential).epsilon(1e-6));
  }
}

// ---------------------------------------------------------------------------
// spliced law
// ---------------------------------------------------------------------------

TEST_CASE("spliced_pdf bulk branch equals the mixture density exactly",
          "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  for (double y : {-2.0, 0.0, 1.7, 2.5}) {
    REQUIRE(spliced_pdf(y, theta) == gmm_pdf(y, theta.bulk));
  }
}

TEST_CASE("spliced_pdf tail branch at the threshold", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const double expected = (1.0 - gmm_cdf(2.5, theta.bulk)) / theta.tail->scale;
  REQUIRE(spliced_pdf(2.5 + 1e-12, theta) == Catch::Approx(expected).epsilon(1e-9));
}

TEST_CASE("spliced density integrates to one", "[distributions]") {
  Rng rng(319);
  for (int trial = 0; trial < 10; ++trial) {
    const SplicedMixtureParams theta = random_theta(rng, true);
    const double y_star = spliced_quantile(1.0 - 1e-8, theta);
    const auto pdf = [&](long double y) {
      return oracles::spliced_pdf_ld(y, theta);
    };
    double lo = theta.bulk.locations[0];
    for (std::size_t i = 0; i < theta.bulk.component_count(); ++i) {
      lo = std::min(lo, theta.bulk.locations[i] - 12.0 * theta.bulk.scales[i]);
    }
    const double u = theta.tail->threshold;
    // Integrate each smooth piece separately; the density may jump at u.
    long double mass = oracles::adaptive_simpson(pdf, lo, std::min(u, y_star), 1e-9L);
    if (y_star > u) mass += oracles::adaptive_simpson(pdf, u, y_star, 1e-9L);
    const double remainder = spliced_ccdf(y_star, theta);
    REQUIRE(static_cast<double>(mass) + remainder == Catch::Approx(1.0).margin(1e-3));
  }
}

TEST_CASE("spliced_ccdf is continuous at the threshold", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const double at_u = spliced_ccdf(2.5, theta);
  const double just_past = spliced_ccdf(std::nextafter(2.5, 3.0), theta);
  REQUIRE(at_u == Catch::Approx(1.0 - gmm_cdf(2.5, theta.bulk)).margin(1e-14));
  REQUIRE(just_past == Catch::Approx(at_u).epsilon(1e-12));
}

TEST_CASE("spliced_ccdf exponential-tail identity", "[distributions]") {
  SplicedMixtureParams theta = fixed_theta();
  theta.tail->shape = 0.0;
  const double u = theta.tail->threshold;
  const double beta = theta.tail->scale;
  const double exceed = 1.0 - gmm_cdf(u, theta.bulk);
  for (double t : {0.1, 1.0, 3.0, 7.0}) {
    REQUIRE(spliced_ccdf(u + beta * t, theta) ==
            Catch::Approx(exceed * std::exp(-t)).epsilon(1e-12));
  }
}

TEST_CASE("spliced_ccdf agrees with Monte Carlo", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const std::size_t n = 10'000'000;
  const std::vector<double> draws = spliced_sample(n, theta, 2024);
  for (double y : {1.0, 3.0, 5.0, 9.0}) {
    const double analytic = spliced_ccdf(y, theta);
    std::size_t hits = 0;
    for (double d : draws) hits += d > y ? 1 : 0;
    const double estimate = static_cast<double>(hits) / static_cast<double>(n);
    const double se = std::sqrt(analytic * (1.0 - analytic) / static_cast<double>(n));
    REQUIRE(std::abs(estimate - analytic) <= 3.0 * se + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// quantile
// ---------------------------------------------------------------------------

TEST_CASE("spliced_quantile threshold fixed point", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const double p = gmm_cdf(theta.tail->threshold, theta.bulk);
  REQUIRE(spliced_quantile(p, theta) ==
          Catch::Approx(theta.tail->threshold).margin(1e-9));
}

TEST_CASE("spliced_quantile/ccdf roundtrip", "[distributions]") {
  Rng rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    const SplicedMixtureParams theta = random_theta(rng, trial % 3 != 0);
    for (double q : {1e-2, 1e-4, 1e-6}) {
      const double y = spliced_quantile(1.0 - q, theta);
      REQUIRE(std::abs(spliced_ccdf(y, theta) - q) <= 1e-9);
    }
  }
}

TEST_CASE("spliced_quantile matches high-precision bisection", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const double y = spliced_quantile(0.999999, theta);
  // Frozen from the mpmath closed-form inversion at the double-rounded p.
  REQUIRE(y == Catch::Approx(111.11253493463146).epsilon(1e-12));
  // The oracle must invert at the same double-rounded probability the
  // implementation receives.
  const long double oracle = oracles::quantile_bisect_ld(
      theta, static_cast<long double>(0.999999), 2.5L, 500.0L);
  REQUIRE(std::abs(y - static_cast<double>(oracle)) <= 2e-12 * std::abs(y));
}

TEST_CASE("spliced_quantile domain errors", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  REQUIRE_THROWS_AS(spliced_quantile(0.0, theta), ParameterError);
  REQUIRE_THROWS_AS(spliced_quantile(1.0, theta), ParameterError);
  REQUIRE_THROWS_AS(spliced_quantile(-0.5, theta), ParameterError);
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

TEST_CASE("spliced_sample is deterministic in the seed", "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const auto a = spliced_sample(1000, theta, 7);
  const auto b = spliced_sample(1000, theta, 7);
  const auto c = spliced_sample(1000, theta, 8);
  REQUIRE(a == b);
  REQUIRE(a != c);
}

TEST_CASE("spliced_sample exceedance fraction matches the bulk mass",
          "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const std::size_t n = 200000;
  const auto draws = spliced_sample(n, theta, 51);
  const double u = theta.tail->threshold;
  std::size_t above = 0;
  for (double d : draws) above += d > u ? 1 : 0;
  const double p = 1.0 - gmm_cdf(u, theta.bulk);
  const double bound = 4.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
  REQUIRE(std::abs(static_cast<double>(above) / n - p) <= bound);
}

TEST_CASE("spliced_sample passes a KS test against the analytic cdf",
          "[distributions]") {
  const SplicedMixtureParams theta = fixed_theta();
  const std::size_t n = 100000;
  auto draws = spliced_sample(n, theta, 1234);
  const double d = oracles::ks_statistic(
      std::move(draws), [&](double y) { return spliced_cdf(y, theta); });
  const double critical = 1.6276 / std::sqrt(static_cast<double>(n));  // alpha=0.01
  REQUIRE(d < critical);
}

// ---------------------------------------------------------------------------
// invariants
// ---------------------------------------------------------------------------

TEST_CASE("spliced law invariants on random parameters", "[distributions]") {
  Rng rng(5150);
  for (int trial = 0; trial < 30; ++trial) {
    const SplicedMixtureParams theta = random_theta(rng, true);
    double previous = 1.0;
    double y = -8.0;
    for (int i = 0; i < 200; ++i) {
      y += 0.12 * rng.uniform01();
      const double density = spliced_pdf(y, theta);
      const double ccdf = spliced_ccdf(y, theta);
      REQUIRE(density >= 0.0);
      REQUIRE(ccdf >= 0.0);
      REQUIRE(ccdf <= 1.0);
      REQUIRE(ccdf <= previous + 1e-12);
      previous = ccdf;
    }
  }
}

TEST_CASE("tail-absent spliced operations reduce to the mixture",
          "[distributions]") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const SplicedMixtureParams theta = random_theta(rng, false);
    for (double y : {-4.0, -0.3, 0.9, 3.5, 20.0}) {
      REQUIRE(spliced_pdf(y, theta) == gmm_pdf(y, theta.bulk));
      REQUIRE(spliced_ccdf(y, theta) == gmm_ccdf(y, theta.bulk));
      REQUIRE(spliced_cdf(y, theta) == gmm_cdf(y, theta.bulk));
    }
    const double y = spliced_quantile(0.999, theta);
    REQUIRE(std::abs(gmm_cdf(y, theta.bulk) - 0.999) <= 1e-9);
  }
}

TEST_CASE("log_spliced_pdf stays finite across the support", "[distributions]") {
  SplicedMixtureParams theta;
  theta.bulk = {{0.7, 0.3}, {0.0, 2.0}, {kScaleFloor, 0.5}};
  theta.tail = TailParams{900.0, kBetaFloor, 0.2};
  for (double y : {-1e3, -500.0, -1.0, 0.0, 899.0, 901.0, 1e3}) {
    REQUIRE(std::isfinite(log_spliced_pdf(y, theta)));
  }
  // Consistency with the plain density where it does not underflow.
  const SplicedMixtureParams mild = fixed_theta();
  for (double y : {0.0, 2.0, 4.0}) {
    REQUIRE(log_spliced_pdf(y, mild) ==
            Catch::Approx(std::log(spliced_pdf(y, mild))).epsilon(1e-12));
  }
}
