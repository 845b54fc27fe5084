#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "icl/errors.hpp"
#include "icl/posterior.hpp"

using namespace icl;

namespace {

RandomFunction constant(double c) {
  CoefficientTree t(WaveletSpec::haar(1), 0);
  t.set(WaveletIndex::father(0, {0, 0, 0}), c);
  return RandomFunction(t, 0.5, 1.0);
}

Episode episode_1d(std::vector<double> xs, std::vector<double> ys, double query = 0.5) {
  Episode e;
  e.d = 1;
  e.xs = std::move(xs);
  e.ys = std::move(ys);
  e.query = {query};
  return e;
}

MixtureSpec haar_mix(int L = 5) {
  BesovPriorSpec s;
  s.alpha = 0.5;
  s.max_level = L;
  return MixtureSpec::single({"a", s, 0});
}

}  // namespace

TEST_CASE("log likelihood values") {
  const auto g = constant(0.2);
  CHECK(log_likelihood(episode_1d({}, {}), g, 0.5) == 0.0);
  CHECK(log_likelihood(episode_1d({0.3}, {0.2}), g, 0.5) == 0.0);
  const double s = 0.4;
  CHECK(log_likelihood(episode_1d({0.1, 0.7}, {0.2 + s, 0.2 - 2 * s}), g, s) == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK_THROWS_AS(log_likelihood(episode_1d({0.1}, {0.0}), g, 0.0), LikelihoodError);
}

TEST_CASE("single sample pool returns that sample") {
  Rng rng(1);
  const auto prior = haar_mix();
  const auto pool = sample_pool(prior, 1, rng);
  const auto e = episode_1d({0.1, 0.2, 0.9}, {3.0, -2.0, 0.4}, 0.37);
  CHECK(posterior_mean_pool(pool, e, e.query, 0.25, 100.0) == pool[0](e.query));

  Rng a(2), b(2);
  OracleConfig cfg;
  cfg.M = 1;
  cfg.R = 100.0;
  const double v = posterior_mean(e, e.query, prior, cfg, a);
  CHECK(v == sample_pool(prior, 1, b)[0](e.query));
}

TEST_CASE("empty context under a symmetric prior is near zero") {
  Rng rng(3);
  const auto prior = haar_mix();
  OracleConfig cfg;
  cfg.M = 4096;
  cfg.R = sup_norm_bound(prior);
  const auto e = episode_1d({}, {}, 0.3);
  Rng copy(3);
  const auto pool = sample_pool(prior, cfg.M, copy);
  double m = 0, sq = 0;
  for (const auto& g : pool) {
    const double v = g(e.query);
    m += v / pool.size();
    sq += v * v / pool.size();
  }
  const double se = std::sqrt((sq - m * m) / pool.size());
  CHECK(std::abs(posterior_mean(e, e.query, prior, cfg, rng)) <= 4.0 * se);
}

TEST_CASE("discrete oracle closed forms") {
  const auto plus = constant(1.0), minus = constant(-1.0);
  const auto e0 = episode_1d({0.4}, {0.0});
  CHECK(posterior_mean_discrete({{&plus, 1.0}}, e0, e0.query, 1.0) == 1.0);
  CHECK(posterior_mean_discrete({{&plus, 0.5}, {&minus, 0.5}}, e0, e0.query, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  const auto e1 = episode_1d({0.4}, {1.0});
  const double v = posterior_mean_discrete({{&plus, 0.5}, {&minus, 0.5}}, e1, e1.query, 1.0);
  CHECK(v == doctest::Approx((1.0 - std::exp(-2.0)) / (1.0 + std::exp(-2.0))).epsilon(1e-14));
  CHECK(v == doctest::Approx(0.7616).epsilon(1e-4));
}

TEST_CASE("two-atom pool agrees with the discrete oracle") {
  Rng rng(4);
  const auto pool = sample_pool(haar_mix(), 2, rng);
  const auto e = episode_1d({0.1, 0.45, 0.8}, {0.3, -0.2, 0.5}, 0.6);
  const double a = posterior_mean_pool(pool, e, e.query, 0.3, 100.0);
  const double b = posterior_mean_discrete({{&pool[0], 0.5}, {&pool[1], 0.5}}, e, e.query, 0.3);
  CHECK(std::abs(a - b) <= 1e-12);
}

TEST_CASE("dataflow reference matches the Bayes ratio") {
  Rng rng(5);
  const auto prior = haar_mix();
  const double R = sup_norm_bound(prior);
  const auto pool1 = sample_pool(prior, 1, rng);
  const auto e = episode_1d({0.2, 0.7}, {0.1, 0.4}, 0.33);
  CHECK(dataflow_reference(e, e.query, pool1, 0.25, R).value == doctest::Approx(pool1[0](e.query)).epsilon(1e-12));

  const auto pool = sample_pool(prior, 32, rng);
  PretrainingStream stream(prior, 100, 6, NoiseSpec{0.25}, DomainSampler::cube(1), 6);
  double worst = 0.0;
  for (std::uint64_t t = 0; t < stream.size(); ++t) {
    const auto ep = stream.episode(t);
    const auto tr = dataflow_reference(ep, ep.query, pool, 0.25, R);
    worst = std::max(worst, std::abs(tr.value - posterior_mean_pool(pool, ep, ep.query, 0.25, R)));
  }
  CHECK(worst <= 1e-9);

  for (int n : {1, 4, 9}) {
    PretrainingStream s(prior, 1, n, NoiseSpec{0.25}, DomainSampler::cube(1), 7);
    const auto ep = s.episode(0);
    const auto tr = dataflow_reference(ep, ep.query, pool, 0.25, R);
    CHECK(tr.positional == doctest::Approx(1.0 + 1.0 / (n + 1)).epsilon(1e-14));
    CHECK(tr.input.rows() == n + 1);
  }
}

TEST_CASE("posterior mean is clipped") {
  const auto big = constant(5.0);
  const std::vector<RandomFunction> pool{big};
  const auto e = episode_1d({0.5}, {5.0});
  CHECK(posterior_mean_pool(pool, e, e.query, 0.25, 1.0) == 1.0);
  CHECK(dataflow_reference(e, e.query, pool, 0.25, 1.0).value <= 1.0);
}

TEST_CASE("example order does not matter") {
  Rng rng(8);
  const auto prior = haar_mix();
  const auto pool = sample_pool(prior, 512, rng);
  PretrainingStream stream(prior, 20, 12, NoiseSpec{0.25}, DomainSampler::cube(1), 9);
  for (std::uint64_t t = 0; t < stream.size(); ++t) {
    const auto e = stream.episode(t);
    auto shuffled = e;
    std::vector<int> order(static_cast<std::size_t>(e.n()));
    for (int i = 0; i < e.n(); ++i) order[i] = e.n() - 1 - i;
    for (int i = 0; i < e.n(); ++i) {
      shuffled.xs[i] = e.xs[order[i]];
      shuffled.ys[i] = e.ys[order[i]];
    }
    CHECK(posterior_mean_pool(pool, shuffled, e.query, 0.25, 10.0) == posterior_mean_pool(pool, e, e.query, 0.25, 10.0));
  }
}

TEST_CASE("posterior concentrates on the true atom") {
  const auto a = constant(0.3), b = constant(-0.1);
  const double sigma = 0.5;
  double prev = 0.0;
  for (int n : {1, 4, 16, 64}) {
    double w = 0.0;
    for (int rep = 0; rep < 200; ++rep) {
      Rng rng(derive_seed(n, rep));
      const auto e = make_episode(a, n, NoiseSpec{sigma}, DomainSampler::cube(1), rng);
      // Posterior weight of atom a from the posterior mean.
      const double m = posterior_mean_discrete({{&a, 0.5}, {&b, 0.5}}, e, e.query, sigma);
      w += (m + 0.1) / 0.4 / 200.0;
    }
    CHECK(w > prev);
    prev = w;
  }
  CHECK(prev > 0.95);
}

TEST_CASE("log-sum-exp survives huge log weights") {
  Rng rng(10);
  const auto prior = haar_mix(7);
  const double R = sup_norm_bound(prior);
  const auto pool = sample_pool(prior, 256, rng);
  PretrainingStream stream(prior, 3, 512, NoiseSpec{0.05}, DomainSampler::cube(1), 11);
  for (std::uint64_t t = 0; t < stream.size(); ++t) {
    auto e = stream.episode(t);
    // Push the data far from every pool member.
    for (double& y : e.ys) y += 3.0;
    double lw_min = 0.0;
    for (const auto& g : pool) lw_min = std::min(lw_min, log_likelihood(e, g, 0.05));
    CHECK(lw_min < -1e5);
    const double v = posterior_mean_pool(pool, e, e.query, 0.05, R);
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) <= R);
  }
  CHECK_THROWS_AS(weighted_posterior_mean(std::vector<double>{-INFINITY, -INFINITY}, std::vector<double>{1.0, 2.0}),
                  ConditioningError);
}

TEST_CASE("doubling the pool moves the estimate within bootstrap noise") {
  const auto prior = haar_mix();
  const double R = sup_norm_bound(prior);
  Rng rng(12);
  const auto pool = sample_pool(prior, 2048, rng);
  const std::vector<RandomFunction> half(pool.begin(), pool.begin() + 1024);
  PretrainingStream stream(prior, 1, 4, NoiseSpec{0.25}, DomainSampler::cube(1), 13);
  const auto e = stream.episode(0);
  const double small = posterior_mean_pool(half, e, e.query, 0.25, R);
  const double large = posterior_mean_pool(pool, e, e.query, 0.25, R);
  // Bootstrap the difference by resampling the pool with replacement.
  Rng boot(14);
  std::vector<double> diffs;
  for (int b = 0; b < 100; ++b) {
    std::vector<RandomFunction> rs;
    rs.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) rs.push_back(pool[boot.below(pool.size())]);
    const std::vector<RandomFunction> rh(rs.begin(), rs.begin() + 1024);
    diffs.push_back(posterior_mean_pool(rh, e, e.query, 0.25, R) - posterior_mean_pool(rs, e, e.query, 0.25, R));
  }
  double m = 0, sq = 0;
  for (double d : diffs) {
    m += d / diffs.size();
    sq += d * d / diffs.size();
  }
  const double se = std::sqrt(std::max(sq - m * m, 0.0));
  CHECK(std::abs(small - large) < 4.0 * se);
}
