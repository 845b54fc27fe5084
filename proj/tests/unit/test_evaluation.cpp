#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "icl/errors.hpp"
#include "icl/evaluation.hpp"
#include "icl/tree_posterior.hpp"

using namespace icl;

namespace {

MixtureComponent haar_component(double alpha = 0.5, int L = 5, const std::string& label = "a") {
  BesovPriorSpec s;
  s.alpha = alpha;
  s.max_level = L;
  return {label, s, 0};
}

TestDistribution base_test(double alpha = 0.5, int L = 5) {
  return {"pi", MixtureSpec::single(haar_component(alpha, L)), DomainSampler::cube(1), NoiseSpec{0.25}, 0.0};
}

std::vector<double> uniform_points(int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> xs(static_cast<std::size_t>(count));
  for (double& x : xs) x = rng.uniform();
  return xs;
}

RealFunction as_real(const RandomFunction& f) {
  return [f](std::span<const double> x) { return f(x); };
}

// Kolmogorov-Smirnov two-sample p-value (asymptotic).
double ks_pvalue(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double dmax = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    dmax = std::max(dmax, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  const double ne = double(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * dmax;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace

TEST_CASE("oracle excess risk is a sane estimate") {
  const auto test = base_test();
  BayesOracle oracle(test.prior, 0.25);
  const NamedPredictor p{"oracle", [&](const Episode& e, std::span<const double> q) { return oracle.predict(e, q); }};
  const auto r = estimate_excess_risk(p, test, 64, 300, 1);
  CHECK(std::isfinite(r.mean));
  CHECK(r.mean > 0.0);
  CHECK(r.se < r.mean);
  CHECK(r.J == 300);
}

TEST_CASE("perfect and zero predictors") {
  const auto test = base_test();
  const NamedPredictor perfect{"truth", [](const Episode& e, std::span<const double>) { return e.g_at_query; }};
  const NamedPredictor zero{"zero", [](const Episode&, std::span<const double>) { return 0.0; }};
  const auto rs = estimate_excess_risks({perfect, zero}, test, 4, 4000, 2);
  CHECK(rs[0].mean == 0.0);
  CHECK(rs[0].se == 0.0);

  // Direct Monte Carlo of E g(X)^2 with independent draws.
  Rng rng(3);
  std::vector<double> sq;
  for (int t = 0; t < 4000; ++t) {
    const auto g = sample_besov(test.prior.components[0].besov, rng);
    const double x[1] = {rng.uniform()};
    sq.push_back(g(x) * g(x));
  }
  const auto direct = RiskEstimate::from_samples(sq);
  CHECK(std::abs(rs[1].mean - direct.mean) <= 4.0 * std::hypot(rs[1].se, direct.se));
}

TEST_CASE("excess risks are deterministic and thread independent") {
  const auto test = base_test();
  const NamedPredictor zero{"zero", [](const Episode& e, std::span<const double>) { return 0.1 * e.ys[0]; }};
  const auto a = estimate_excess_risk(zero, test, 8, 500, 4, 1);
  const auto b = estimate_excess_risk(zero, test, 8, 500, 4, 3);
  CHECK(a.samples == b.samples);
  CHECK(a.mean == b.mean);
}

TEST_CASE("chi-squared of tilts") {
  const auto base = haar_component();
  ShiftSpec none{"none", {}};
  CHECK(chi_squared_of_shift(none) == 0.0);

  ShiftSpec one{"one", {{WaveletIndex::father(0, {0, 0, 0}), 0.6}}};
  CHECK(chi_squared_of_shift(one) == doctest::Approx(0.12).epsilon(1e-14));
  CHECK(std::abs(chi_squared_quadrature(one, 200) - 0.12) <= 1e-6);

  ShiftSpec two{"two", {{WaveletIndex::father(0, {0, 0, 0}), 0.6}, {WaveletIndex::mother(0, {0, 0, 0}, 1), 0.6}}};
  CHECK(chi_squared_of_shift(two) == doctest::Approx(0.2544).epsilon(1e-14));
  CHECK(std::abs(chi_squared_quadrature(two, 200) - 0.2544) <= 1e-6);

  for (double kappa : {0.1, 0.25}) {
    const auto s = ShiftSpec::for_budget(base, kappa, 1);
    CHECK(s.tilts.size() == 4);
    CHECK(chi_squared_of_shift(s) == doctest::Approx(kappa).epsilon(1e-12));
    CHECK(std::abs(chi_squared_quadrature(s, 40) - chi_squared_of_shift(s)) <= 1e-6);
  }
}

TEST_CASE("shifted priors") {
  const auto base = haar_component(0.5, 5);
  const auto shift = ShiftSpec::for_budget(base, 0.25, 1);
  CHECK_THROWS_AS(make_shifted_prior(base, shift, 0.1), ShiftBudgetError);
  const auto mu = make_shifted_prior(base, shift, 0.25);

  const double eps = shift.tilts.begin()->second;
  const auto father = WaveletIndex::father(0, {0, 0, 0});
  std::vector<double> raw;
  for (int t = 0; t < 10000; ++t) {
    Rng rng(derive_seed(7, t));
    const auto g = sample_component(mu, rng);
    raw.push_back(g.raw(father));
    if (t < 50) {
      const double r = density_ratio(g, shift);
      CHECK(std::isfinite(r));
      CHECK(r > 0.0);
    }
  }
  const auto est = RiskEstimate::from_samples(raw);
  CHECK(std::abs(est.mean - eps / 3.0) <= 4.0 * est.se);

  // Zero tilt: same law as the base.
  ShiftSpec zero{"zero", {{father, 0.0}}};
  const auto same = make_shifted_prior(base, zero, 0.25);
  std::vector<double> a, b;
  const double half[1] = {0.5};
  for (int t = 0; t < 10000; ++t) {
    Rng r1(derive_seed(8, t)), r2(derive_seed(9, t));
    a.push_back(sample_component(base, r1)(half));
    b.push_back(sample_component(same, r2)(half));
  }
  CHECK(ks_pvalue(a, b) > 0.01);

  MixtureSpec mix{{haar_component(0.3, 4, "r"), haar_component(0.7, 4, "s")}, {0.5, 0.5}};
  CHECK(mixture_chi_squared_bound(mix, "s", 0.25) == doctest::Approx(1.25 / 0.5 - 1.0));
}

TEST_CASE("KL divergence") {
  const auto xs = uniform_points(2000, 10);
  const double sigma = 0.3;
  const RealFunction g = [](std::span<const double> x) { return std::sin(3 * x[0]); };
  const RealFunction shifted = [&](std::span<const double> x) { return std::sin(3 * x[0]) - sigma; };
  CHECK(kl_gaussian_regression(g, g, xs, 1, sigma).value == 0.0);
  CHECK(kl_gaussian_regression(g, shifted, xs, 1, sigma).value == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("Hellinger divergence") {
  const auto xs = uniform_points(1000, 11);
  const double sigma = 0.4;
  const RealFunction g = [](std::span<const double> x) { return x[0]; };
  const double gap = 2.0 * sigma * std::sqrt(2.0 * std::log(2.0));
  const RealFunction h = [&](std::span<const double> x) { return x[0] + gap; };
  CHECK(hellinger_gaussian_regression(g, g, xs, 1, sigma).value == 0.0);
  CHECK(hellinger_gaussian_regression(g, h, xs, 1, sigma).value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("V2 divergence") {
  const auto xs = uniform_points(1000, 12);
  const RealFunction g = [](std::span<const double> x) { return x[0] * x[0]; };
  const double c = 0.7;
  const RealFunction h = [&](std::span<const double> x) { return x[0] * x[0] + c; };
  const double sigma = std::sqrt(0.5);
  CHECK(v2_gaussian_regression(g, g, xs, 1, sigma).value == 0.0);
  CHECK(v2_gaussian_regression(g, h, xs, 1, sigma).value == doctest::Approx(2 * c * c).epsilon(1e-12));
  CHECK(v2_stated_form(g, h, xs, 1, sigma).value == doctest::Approx(2 * c * c).epsilon(1e-12));
  // Away from sigma^2 = 1/2 only the first form is the variance: c^2 / sigma^2.
  CHECK(v2_gaussian_regression(g, h, xs, 1, 0.25).value == doctest::Approx(c * c / 0.0625).epsilon(1e-12));
}

TEST_CASE("closed forms match definitional Monte Carlo on random pairs") {
  BesovPriorSpec spec;
  spec.alpha = 0.5;
  spec.max_level = 5;
  const double sigma = 0.5;
  const double R = sup_norm_bound(spec);
  const auto xs = uniform_points(4000, 13);
  int kl_bad = 0, v2_bad = 0, h_bad = 0, sandwich_bad = 0;
  for (int t = 0; t < 100; ++t) {
    Rng rng(derive_seed(14, t));
    const auto f1 = sample_besov(spec, rng), f2 = sample_besov(spec, rng);
    const auto g1 = as_real(f1), g2 = as_real(f2);
    const auto kl = kl_gaussian_regression(g1, g2, xs, 1, sigma);
    const auto v2 = v2_gaussian_regression(g1, g2, xs, 1, sigma);
    const auto hd = hellinger_gaussian_regression(g1, g2, xs, 1, sigma);
    const auto def = definitional_divergences(g1, g2, xs, 1, sigma, derive_seed(15, t));
    // The closed forms and the definitional estimates share xs, so the
    // definitional standard error carries the y-noise only.
    if (std::abs(kl.value - def.kl.value) > 4.0 * def.kl.se) ++kl_bad;
    if (std::abs(v2.value - def.v2.value) > 4.0 * def.v2.se) ++v2_bad;
    if (std::abs(hd.value - def.hellinger.value) > 4.0 * def.hellinger.se) ++h_bad;
    if (!hellinger_sandwich(g1, g2, xs, 1, sigma, R).holds()) ++sandwich_bad;
  }
  CHECK(kl_bad <= 1);
  CHECK(v2_bad <= 1);
  CHECK(h_bad <= 1);
  CHECK(sandwich_bad == 0);
}

TEST_CASE("rate fitting") {
  const std::vector<int> grid{8, 16, 32, 64, 128};
  std::vector<double> means, ses;
  for (int n : grid) {
    means.push_back(3.0 * std::pow(n, -0.5));
    ses.push_back(0.01);
  }
  const auto fit = fit_rate(grid, means, ses, -0.5);
  CHECK(std::abs(fit.slope + 0.5) <= 1e-10);
  CHECK(fit.intercept == doctest::Approx(std::log(3.0)).epsilon(1e-10));
  CHECK(fit.r2 == doctest::Approx(1.0));
  CHECK(std::abs(fit.deviation()) <= 1e-10);
  CHECK(target_exponent(0.5, 1) == doctest::Approx(-0.5));
  CHECK(target_exponent(0.5, 3) == doctest::Approx(-0.25));
  CHECK(target_exponent(0.3, 1) == doctest::Approx(-0.375));

  CHECK_THROWS_AS(fit_rate({8, 16, 32}, {1, 0.5, 0.25}, {0, 0, 0}, -0.5), ValidationError);
  CHECK_THROWS_AS(fit_rate({8, 16, 16, 32}, {1, 0.5, 0.4, 0.25}, {0, 0, 0, 0}, -0.5), ValidationError);
  CHECK_THROWS_AS(fit_rate({8, 16, 32, 64}, {1, 0.5, 0.0, 0.25}, {0, 0, 0, 0}, -0.5), LogDomainError);
}

TEST_CASE("decomposition bound") {
  const auto pi = base_test(0.5, 5);
  BayesOracle oracle(pi.prior, 0.25);
  const Predictor g_pi = [&](const Episode& e, std::span<const double> q) { return oracle.predict(e, q); };
  const double R = sup_norm_bound(pi.prior);
  const NamedPredictor as_oracle{"oracle", g_pi};
  const NamedPredictor zero{"zero", [](const Episode&, std::span<const double>) { return 0.0; }};

  const auto same = verify_decomposition_bound(as_oracle, g_pi, pi, pi, 0.0, R, 16, 300, 20);
  CHECK(same.holds);
  CHECK(same.excess_pi.mean <= 1e-12);
  CHECK(std::abs(same.lhs.mean - same.proximity.mean) <= 1e-12);

  const auto shift = ShiftSpec::for_budget(pi.prior.components[0], 0.25, 1);
  TestDistribution mu = pi;
  mu.label = "mu";
  mu.kappa = 0.25;
  mu.prior = MixtureSpec::single(make_shifted_prior(pi.prior.components[0], shift, 0.25));
  double prev_rhs = -1.0;
  for (double kappa : {0.0, 0.25}) {
    const auto& test = kappa == 0.0 ? pi : mu;
    const auto rep = verify_decomposition_bound(zero, g_pi, pi, test, kappa, R, 16, 300, 21);
    CHECK(std::isfinite(rep.lhs.mean));
    CHECK(rep.holds);
    CHECK(rep.rhs > prev_rhs);
    prev_rhs = rep.rhs;
  }
}

TEST_CASE("risk csv round trip") {
  RiskRow row{"oracle", "pi", 0.1, RiskEstimate::from_samples({0.1, 0.2, 0.4}, 16, "oracle")};
  const auto path = std::filesystem::temp_directory_path() / "icl_risks.csv";
  write_risks_csv(path, {row, row});
  const auto back = read_risks_csv(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].predictor == "oracle");
  CHECK(back[0].prior == "pi");
  CHECK(back[0].kappa == 0.1);
  CHECK(back[0].estimate.mean == row.estimate.mean);
  CHECK(back[0].estimate.se == row.estimate.se);
  CHECK(back[0].estimate.n == 16);
  CHECK(back[0].estimate.J == 3);
  std::filesystem::remove(path);
}
