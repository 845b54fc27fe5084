#include "doctest.h"

#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "icl/errors.hpp"
#include "icl/posterior.hpp"
#include "icl/tree_posterior.hpp"

using namespace icl;

namespace {

BesovPriorSpec haar_spec(double alpha, int L) {
  BesovPriorSpec s;
  s.alpha = alpha;
  s.max_level = L;
  return s;
}

// Brute-force Bayes mean for a Haar prior truncated at level 1: four
// uniform coefficients, integrated on a midpoint grid.
struct Brute {
  double mean;
  double log_evidence;
};

Brute brute_level1(double alpha, const std::vector<double>& t, const std::vector<double>& y, double tq, double sigma,
                   const std::array<double, 4>& eps = {0, 0, 0, 0}) {
  const int K = 48;
  const double w1 = std::pow(2.0, -alpha);
  auto cell = [](double x) { return std::min(3, static_cast<int>(x * 4.0)); };
  auto value = [&](const std::array<double, 4>& c, int cl) {
    return c[0] + c[1] * (cl < 2 ? 1.0 : -1.0) + c[2 + cl / 2] * w1 * (cl % 2 == 0 ? 1.0 : -1.0);
  };
  double num = 0.0, den = 0.0;
  std::array<double, 4> c{};
  for (int i0 = 0; i0 < K; ++i0)
    for (int i1 = 0; i1 < K; ++i1)
      for (int i2 = 0; i2 < K; ++i2)
        for (int i3 = 0; i3 < K; ++i3) {
          const int ii[4] = {i0, i1, i2, i3};
          double prior = 1.0;
          for (int j = 0; j < 4; ++j) {
            c[j] = -1.0 + (ii[j] + 0.5) * 2.0 / K;
            prior *= 1.0 + eps[j] * c[j];
          }
          double ll = 0.0;
          for (std::size_t i = 0; i < t.size(); ++i) {
            const double r = y[i] - value(c, cell(t[i]));
            ll -= r * r / (2 * sigma * sigma);
          }
          const double w = prior * std::exp(ll);
          den += w;
          num += w * value(c, cell(tq));
        }
  return {num / den, std::log(den / std::pow(K, 4))};
}

// Self-normalized importance sampling mean and its delta-method error.
std::pair<double, double> pool_mean_se(const std::vector<RandomFunction>& pool, const Episode& e, double sigma) {
  std::vector<double> lw(pool.size()), gq(pool.size());
  double top = -INFINITY;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    lw[m] = log_likelihood(e, pool[m], sigma);
    gq[m] = pool[m](e.query);
    top = std::max(top, lw[m]);
  }
  double sw = 0, swg = 0;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    const double w = std::exp(lw[m] - top);
    sw += w;
    swg += w * gq[m];
  }
  const double mc = swg / sw;
  double var = 0;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    const double w = std::exp(lw[m] - top) / sw;
    var += w * w * (gq[m] - mc) * (gq[m] - mc);
  }
  return {mc, std::sqrt(var)};
}

}  // namespace

TEST_CASE("tree oracle matches brute-force integration") {
  const auto spec = haar_spec(0.5, 1);
  const double sigma = 0.3;
  HaarTreeOracle tree(spec, sigma, {1.0 / 64.0, 1e-30});
  const std::vector<double> t{0.1, 0.3, 0.35, 0.6, 0.9};
  const std::vector<double> y{0.8, -0.2, 0.1, 0.5, -0.7};
  for (double q : {0.05, 0.3, 0.55, 0.8}) {
    const auto b = brute_level1(0.5, t, y, q, sigma);
    const auto r = tree.posterior(t, y, q);
    CHECK(r.mean == doctest::Approx(b.mean).epsilon(3e-3));
    CHECK(r.log_evidence == doctest::Approx(b.log_evidence).epsilon(3e-3));
  }
  // No data: mean 0 and evidence 1, up to the z grid.
  const auto r0 = tree.posterior({}, {}, 0.4);
  CHECK(std::abs(r0.mean) < 1e-4);
  CHECK(std::abs(r0.log_evidence) < 1e-4);
}

TEST_CASE("tree oracle with tilted coefficients") {
  auto spec = haar_spec(0.5, 1);
  spec.law = CoefficientLaw::tilted_levels(spec.basis, 0.5, 1);
  const double sigma = 0.3;
  HaarTreeOracle tree(spec, sigma, {1.0 / 64.0, 1e-30});
  const std::vector<double> t{0.2, 0.7};
  const std::vector<double> y{0.4, 0.1};
  const auto b = brute_level1(0.5, t, y, 0.6, sigma, {0.5, 0.5, 0.5, 0.5});
  CHECK(tree.posterior(t, y, 0.6).mean == doctest::Approx(b.mean).epsilon(3e-3));
  const auto b0 = brute_level1(0.5, {}, {}, 0.1, sigma, {0.5, 0.5, 0.5, 0.5});
  CHECK(tree.posterior({}, {}, 0.1).mean == doctest::Approx(b0.mean).epsilon(3e-3));
}

TEST_CASE("exact oracle agrees with a large Monte Carlo pool") {
  const auto prior = MixtureSpec::single({"a", haar_spec(0.5, 6), 0});
  const double sigma = 0.25;
  BayesOracle oracle(prior, sigma);
  Rng rng(3);
  const auto pool = sample_pool(prior, 1 << 16, rng);
  PretrainingStream stream(prior, 4, 3, NoiseSpec{sigma}, DomainSampler::cube(1), 4);
  for (std::uint64_t s = 0; s < stream.size(); ++s) {
    const auto e = stream.episode(s);
    const double exact = oracle.predict(e, e.query);
    const auto [mc, se] = pool_mean_se(pool, e, sigma);
    CHECK(std::abs(exact - mc) <= 4.0 * se + 2e-3);
  }
}

TEST_CASE("mixture oracle weights components by evidence") {
  MixtureSpec prior{{{"rough", haar_spec(0.3, 4), 0}, {"smooth", haar_spec(0.8, 4), 0}}, {0.5, 0.5}};
  const double sigma = 0.25;
  BayesOracle oracle(prior, sigma);
  PretrainingStream stream(prior, 3, 4, NoiseSpec{sigma}, DomainSampler::cube(1), 5);
  for (std::uint64_t s = 0; s < stream.size(); ++s) {
    const auto e = stream.episode(s);
    const auto parts = oracle.components(e, e.query);
    REQUIRE(parts.size() == 2);
    const double la = parts[0].log_evidence, lb = parts[1].log_evidence;
    const double top = std::max(la, lb);
    const double wa = std::exp(la - top), wb = std::exp(lb - top);
    const double mix = (wa * parts[0].mean + wb * parts[1].mean) / (wa + wb);
    CHECK(oracle.predict(e, e.query) == doctest::Approx(mix).epsilon(1e-12));
  }
}

TEST_CASE("multi-index oracle agrees with Monte Carlo") {
  const auto prior = MixtureSpec::single({"mi", haar_spec(0.5, 4), 2});
  const double sigma = 0.25;
  BayesOracle oracle(prior, sigma);
  Rng rng(6);
  const auto pool = sample_pool(prior, 1 << 17, rng);
  PretrainingStream stream(prior, 3, 2, NoiseSpec{sigma}, DomainSampler::ball(2), 7);
  for (std::uint64_t s = 0; s < stream.size(); ++s) {
    const auto e = stream.episode(s);
    const double exact = oracle.predict(e, e.query);
    const auto [mc, se] = pool_mean_se(pool, e, sigma);
    // The direction integral is a finite quadrature, hence the extra slack.
    CHECK(std::abs(exact - mc) <= 4.0 * se + 1e-2);
  }
}

TEST_CASE("wildly inconsistent data never yields nan") {
  const double sigma = 0.05;
  HaarTreeOracle tree(haar_spec(0.5, 3), sigma);
  const std::vector<double> t{0.1, 0.1};
  const std::vector<double> y{40.0, -40.0};
  const auto r = tree.posterior(t, y, 0.2);
  CHECK(std::isfinite(r.mean));
  CHECK(r.log_evidence < -1e5);

  const auto prior = MixtureSpec::single({"mi", haar_spec(0.5, 3), 2});
  BayesOracle oracle(prior, sigma);
  Episode e;
  e.d = 2;
  e.xs = {0.1, 0.2, 0.1, 0.2};
  e.ys = y;
  e.query = {0.0, 0.3};
  CHECK(std::isfinite(oracle.predict(e, e.query)));

  // One wild point among consistent ones still gives a finite answer.
  e.xs = {0.1, 0.2, -0.4, 0.5};
  e.ys = {0.3, 0.2};
  CHECK(std::isfinite(oracle.predict(e, e.query)));
}

TEST_CASE("unsupported priors are rejected") {
  BesovPriorSpec s = haar_spec(0.5, 3);
  s.basis = WaveletSpec::haar(2);
  CHECK_FALSE(BayesOracle::supports(MixtureSpec::single({"a", s, 0})));
  CHECK_THROWS_AS(HaarTreeOracle(s, 0.25), UnsupportedError);
  CHECK_THROWS_AS(HaarTreeOracle(haar_spec(0.5, 3), 0.0), LikelihoodError);
  HaarTreeOracle ok(haar_spec(0.5, 3), 0.25);
  CHECK_THROWS_AS(ok.posterior(std::vector<double>{1.5}, std::vector<double>{0.0}, 0.5), DomainError);
}
