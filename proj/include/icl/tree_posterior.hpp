#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icl/prior.hpp"
#include "icl/task.hpp"

namespace icl {

// Posterior mean and log evidence of a 1-D Haar prior by sum-product on the
// dyadic tree. The state of a cell is the average of g over it; children
// differ from the parent by +/- w_l b_l. Messages live on a uniform grid in
// the state variable.
struct TreeOracleResult {
  double mean = 0.0;
  double log_evidence = 0.0;  // log p(y | prior) up to the shared Gaussian normalizer
};

struct TreeOracleOptions {
  double delta_over_sigma = 1.0 / 32.0;  // grid spacing in units of sigma
  double trim = 1e-30;                   // relative cutoff for message windows
};

class HaarTreeOracle {
 public:
  HaarTreeOracle(const BesovPriorSpec& spec, double sigma, TreeOracleOptions opts = {});

  TreeOracleResult posterior(std::span<const double> t, std::span<const double> y, double t_query) const;

  double delta() const { return delta_; }
  int grid_size() const { return grid_; }

  struct Message {
    int lo = 0;
    std::vector<double> v;
    double log_scale = 0.0;
    bool unit = false;  // no data below: identically 1
    int hi() const { return lo + static_cast<int>(v.size()) - 1; }
  };

 private:
  struct Points;

  double h_at(int j) const { return h0_ + delta_ * j; }
  Message upward(const Points& pts, int level, std::uint64_t cell, std::size_t begin, std::size_t end) const;
  Message single_point(double y, int level) const;
  Message leaf_product(const Points& pts, std::size_t begin, std::size_t end) const;
  // result(h) = int p(d) m(h + d) dd with p(d) = (1 + e d / w)/(2w) on [-w, w].
  Message convolve(const Message& m, double w, double e) const;
  // result(h) = int p(d) a(h + d) b(h - d) dd.
  Message split(const Message& a, const Message& b, double w, double e) const;
  // result(h') = int p(d) out(h' - d) sib(h' - 2d) dd.
  Message descend(const Message& out, const Message& sib, double w, double e) const;
  void normalize(Message& m) const;
  double tilt(int level, std::uint64_t cell) const;
  double father_tilt() const;

  BesovPriorSpec spec_;
  double sigma_;
  TreeOracleOptions opts_;
  int levels_ = 0;        // number of mother levels, L_max + 1
  int tilt_depth_ = 0;    // mothers at levels < tilt_depth_ may be tilted
  std::vector<double> w_; // increment scale per level
  double father_scale_ = 1.0;
  double delta_ = 0.0;
  double h0_ = 0.0;
  int grid_ = 0;
  // log q_l on the z grid, q_l = law of sum_{m >= l} w_m b_m + noise.
  std::vector<std::vector<double>> log_q_;
  double z0_ = 0.0;
  int zgrid_ = 0;
};

struct DirectionQuadrature {
  int initial_z = 6;      // equal-area cells in cos(theta)
  int initial_phi = 12;   // and in azimuth
  int initial_angle = 128;  // d = 2: cells on the half circle
  int refinements = 48;   // number of 3x3 subdivisions of the heaviest cells
};

struct BayesOracleOptions {
  TreeOracleOptions tree;
  DirectionQuadrature directions;
  int threads = 1;
};

// Exact-in-the-grid Bayes predictor for a mixture of Haar priors with base
// dimension 1 (plain d = 1, or multi-index with p = 1 in any ambient d <= 3).
class BayesOracle {
 public:
  BayesOracle(const MixtureSpec& prior, double sigma, BayesOracleOptions opts = {});

  double predict(const Episode& examples, std::span<const double> query) const;
  // Per-component (log evidence, posterior mean).
  std::vector<TreeOracleResult> components(const Episode& examples, std::span<const double> query) const;

  static bool supports(const MixtureSpec& prior);
  double R() const { return R_; }

 private:
  TreeOracleResult multi_index(std::size_t c, const Episode& examples, std::span<const double> query) const;

  MixtureSpec prior_;
  double sigma_;
  BayesOracleOptions opts_;
  std::vector<HaarTreeOracle> trees_;
  double R_ = 1.0;
};

}  // namespace icl
