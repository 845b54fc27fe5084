#pragma once

#include <Eigen/Dense>

#include <span>
#include <utility>
#include <vector>

#include "icl/prior.hpp"
#include "icl/rng.hpp"
#include "icl/task.hpp"

namespace icl {

struct OracleConfig {
  int M = 4096;
  double sigma = 0.25;
  double R = 1.0;  // clip bound, at least the prior's sup-norm bound
  int threads = 1;

  void validate() const;
};

// sum_i -(y_i - g(x_i))^2 / (2 sigma^2); the Gaussian normalizer is dropped.
double log_likelihood(const Episode& examples, const RandomFunction& g, double sigma);
double log_likelihood(std::span<const double> g_values, std::span<const double> ys, double sigma);

// Self-normalized weighted mean with max subtraction. Throws
// ConditioningError when every weight is -inf.
double weighted_posterior_mean(std::span<const double> log_weights, std::span<const double> values);

// Bayes ratio over a fixed sample pool, clipped to [-R, R].
double posterior_mean_pool(const std::vector<RandomFunction>& pool, const Episode& examples,
                           std::span<const double> query, double sigma, double R, int threads = 1);

// Draws cfg.M functions from the prior and returns the Monte Carlo posterior mean.
double posterior_mean(const Episode& examples, std::span<const double> query, const MixtureSpec& prior,
                      const OracleConfig& cfg, Rng& rng);

std::vector<RandomFunction> sample_pool(const MixtureSpec& prior, int M, Rng& rng);

struct Atom {
  const RandomFunction* g;
  double weight;
};
double posterior_mean_discrete(const std::vector<Atom>& atoms, const Episode& examples,
                               std::span<const double> query, double sigma);

struct DataflowTrace {
  double value = 0.0;
  Eigen::MatrixXd input;           // (n+1) x (4M+1) encoded matrix
  Eigen::MatrixXd after_attention; // output of the averaging head
  double positional = 0.0;         // query-row flag after averaging: 1 + 1/(n+1)
  double shift = 0.0;              // R + 1, added before the log encoding
};

// Executes the constructive pipeline: encode per-row log-likelihoods and
// shifted log g-values, average rows with a Q=K=0 attention head, undo the
// 1/(n+1) factor through the flag column, exponentiate and take the ratio.
DataflowTrace dataflow_reference(const Episode& examples, std::span<const double> query,
                                 const std::vector<RandomFunction>& pool, double sigma, double R);

}  // namespace icl
