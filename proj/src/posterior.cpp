#include "icl/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"
#include "icl/transformer.hpp"

namespace icl {

void OracleConfig::validate() const {
  if (M < 1) throw ValidationError("oracle needs M >= 1");
  if (!(sigma > 0.0)) throw LikelihoodError("Gaussian likelihood needs sigma > 0");
  if (!(R > 0.0)) throw ValidationError("clip bound R must be positive");
}

double log_likelihood(std::span<const double> g_values, std::span<const double> ys, double sigma) {
  if (!(sigma > 0.0)) throw LikelihoodError("degenerate likelihood: sigma = 0; use the discrete oracle with exact matching");
  if (g_values.size() != ys.size()) throw ShapeError("likelihood inputs differ in length");
  std::vector<double> terms(ys.size());
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double r = ys[i] - g_values[i];
    terms[i] = -r * r * inv;
  }
  // Sorting first makes the sum independent of the example order.
  std::sort(terms.begin(), terms.end());
  return pairwise_sum(terms);
}

double log_likelihood(const Episode& examples, const RandomFunction& g, double sigma) {
  std::vector<double> gv(static_cast<std::size_t>(examples.n()));
  for (int i = 0; i < examples.n(); ++i) gv[static_cast<std::size_t>(i)] = g(examples.x(i));
  return log_likelihood(gv, examples.ys, sigma);
}

double weighted_posterior_mean(std::span<const double> log_weights, std::span<const double> values) {
  if (log_weights.size() != values.size() || values.empty()) throw ShapeError("weights and values differ in length");
  double top = -std::numeric_limits<double>::infinity();
  for (double w : log_weights) top = std::max(top, w);
  if (!std::isfinite(top)) throw ConditioningError("every posterior weight vanished");
  std::vector<double> num(values.size());
  std::vector<double> den(values.size());
  for (std::size_t m = 0; m < values.size(); ++m) {
    const double e = std::exp(log_weights[m] - top);
    den[m] = e;
    num[m] = e * values[m];
  }
  return pairwise_sum(num) / pairwise_sum(den);
}

double posterior_mean_pool(const std::vector<RandomFunction>& pool, const Episode& examples,
                           std::span<const double> query, double sigma, double R, int threads) {
  if (pool.empty()) throw ValidationError("empty sample pool");
  if (!(sigma > 0.0)) throw LikelihoodError("Gaussian likelihood needs sigma > 0");
  std::vector<double> lw(pool.size());
  std::vector<double> gq(pool.size());
  parallel_for(pool.size(), threads, [&](std::size_t m) {
    lw[m] = log_likelihood(examples, pool[m], sigma);
    gq[m] = pool[m](query);
  });
  return clip(weighted_posterior_mean(lw, gq), R);
}

std::vector<RandomFunction> sample_pool(const MixtureSpec& prior, int M, Rng& rng) {
  prior.validate();
  std::vector<RandomFunction> pool;
  pool.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    Rng stream(rng.next());
    pool.push_back(sample_mixture(prior, stream).second);
  }
  return pool;
}

double posterior_mean(const Episode& examples, std::span<const double> query, const MixtureSpec& prior,
                      const OracleConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto pool = sample_pool(prior, cfg.M, rng);
  return posterior_mean_pool(pool, examples, query, cfg.sigma, cfg.R, cfg.threads);
}

double posterior_mean_discrete(const std::vector<Atom>& atoms, const Episode& examples,
                               std::span<const double> query, double sigma) {
  if (atoms.empty()) throw ValidationError("discrete prior has no atoms");
  double total = 0.0;
  for (const auto& a : atoms) {
    if (!(a.weight > 0.0)) throw ValidationError("atom weights must be positive");
    total += a.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("atom weights must sum to 1");
  std::vector<double> lw(atoms.size());
  std::vector<double> gq(atoms.size());
  for (std::size_t m = 0; m < atoms.size(); ++m) {
    lw[m] = std::log(atoms[m].weight) + log_likelihood(examples, *atoms[m].g, sigma);
    gq[m] = (*atoms[m].g)(query);
  }
  return weighted_posterior_mean(lw, gq);
}

DataflowTrace dataflow_reference(const Episode& examples, std::span<const double> query,
                                 const std::vector<RandomFunction>& pool, double sigma, double R) {
  if (pool.empty()) throw ValidationError("empty sample pool");
  if (!(sigma > 0.0)) throw LikelihoodError("Gaussian likelihood needs sigma > 0");
  const int n = examples.n();
  const int M = static_cast<int>(pool.size());
  const int width = 4 * M + 1;
  const int flag = 4 * M;
  const double shift = R + 1.0;
  const double inv = 1.0 / (2.0 * sigma * sigma);

  DataflowTrace trace;
  trace.shift = shift;
  Matrix Z = Matrix::Zero(n + 1, width);
  for (int m = 0; m < M; ++m) {
    for (int i = 0; i < n; ++i) {
      const double r = examples.ys[static_cast<std::size_t>(i)] - pool[static_cast<std::size_t>(m)](examples.x(i));
      const double ll = -r * r * inv;
      Z(i, m) = ll;
      Z(i, M + m) = ll;
    }
    const double gq = pool[static_cast<std::size_t>(m)](query);
    // log g would fail for g <= 0; the shift keeps the argument >= 1.
    Z(n, m) = std::log(gq + shift);
  }
  Z(n, flag) = 1.0;
  trace.input = Z;

  // One head, Q = K = 0: uniform attention over the n+1 rows. V copies the
  // encoded columns into the free block and keeps the flag column.
  AttnHeadParams head;
  head.Q = Matrix::Zero(width, width);
  head.K = Matrix::Zero(width, width);
  head.V = Matrix::Zero(width, width);
  for (int j = 0; j < 2 * M; ++j) head.V(j, 2 * M + j) = 1.0;
  head.V(flag, flag) = 1.0;
  const Matrix out = attention_forward({head}, Z);
  trace.after_attention = out;
  trace.positional = out(n, flag);

  // Recover n+1 from the flag, then the f3 readout.
  const double rows = 1.0 / (trace.positional - 1.0);
  std::vector<double> top_terms(static_cast<std::size_t>(M));
  std::vector<double> bottom_terms(static_cast<std::size_t>(M));
  double top_max = -std::numeric_limits<double>::infinity();
  for (int m = 0; m < M; ++m) {
    top_terms[static_cast<std::size_t>(m)] = rows * out(n, 2 * M + m);
    bottom_terms[static_cast<std::size_t>(m)] = rows * out(n, 3 * M + m);
    top_max = std::max(top_max, bottom_terms[static_cast<std::size_t>(m)]);
  }
  std::vector<double> num(static_cast<std::size_t>(M));
  std::vector<double> den(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    num[static_cast<std::size_t>(m)] = std::exp(top_terms[static_cast<std::size_t>(m)] - top_max);
    den[static_cast<std::size_t>(m)] = std::exp(bottom_terms[static_cast<std::size_t>(m)] - top_max);
  }
  trace.value = clip(pairwise_sum(num) / pairwise_sum(den) - shift, R);
  return trace;
}

}  // namespace icl
