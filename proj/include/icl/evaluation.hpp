#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "icl/prior.hpp"
#include "icl/risk.hpp"
#include "icl/task.hpp"
#include "json.hpp"

namespace icl {

// Must be safe to call concurrently.
using Predictor = std::function<double(const Episode&, std::span<const double>)>;

struct NamedPredictor {
  std::string id;
  Predictor f;
};

// Test sampler: a function prior with its covariate law and noise.
struct TestDistribution {
  std::string label;
  MixtureSpec prior;
  DomainSampler domain;
  NoiseSpec noise;
  double kappa = 0.0;  // chi^2 to the reference component; 0 when unshifted
};

// (prediction - g(query))^2 over J episodes drawn from `test`. Episode j is
// a pure function of (seed, j), so predictors scored with the same seed are paired.
std::vector<RiskEstimate> estimate_excess_risks(const std::vector<NamedPredictor>& predictors,
                                                const TestDistribution& test, int n, int J, std::uint64_t seed,
                                                int threads = 1);
RiskEstimate estimate_excess_risk(const NamedPredictor& predictor, const TestDistribution& test, int n, int J,
                                  std::uint64_t seed, int threads = 1);

// Linear tilts (1 + eps x)/2 on a finite set of coefficients of one component.
struct ShiftSpec {
  std::string label;
  std::map<WaveletIndex, double> tilts;

  // eps on the father block and every mother up to max_level, chosen so
  // that the product law gives exactly chi^2 = kappa.
  static ShiftSpec for_budget(const MixtureComponent& base, double kappa, int max_level = 0);
  void validate() const;
};

// prod_c (1 + eps_c^2 / 3) - 1.
double chi_squared_of_shift(const ShiftSpec& shift);
// Tensor-product composite Simpson rule for int (d mu / d pi)^2 d pi - 1 over the
// tilted coordinates; points_per_axis is the (even) number of intervals.
double chi_squared_quadrature(const ShiftSpec& shift, int points_per_axis);
// Same component with the tilted law; throws ShiftBudgetError above kappa_budget.
MixtureComponent make_shifted_prior(const MixtureComponent& base, const ShiftSpec& shift, double kappa_budget);
// prod_c (1 + eps_c b_c) for the raw coefficients of g.
double density_ratio(const RandomFunction& g, const ShiftSpec& shift);
// chi^2(mu, pi) <= (kappa + 1) / lambda_beta - 1 when mu shifts component beta of pi.
double mixture_chi_squared_bound(const MixtureSpec& pi, const std::string& label, double kappa);

struct DivergenceEstimate {
  double value = 0.0;
  double se = 0.0;
};

using RealFunction = std::function<double(std::span<const double>)>;

// Closed forms averaged over covariate draws xs (row-major, dimension d).
DivergenceEstimate kl_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                          std::span<const double> xs, int d, double sigma);
DivergenceEstimate hellinger_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                                 std::span<const double> xs, int d, double sigma);
// Var_{P1} of the log density ratio: E[D^2]/sigma^2 + Var(D^2)/(4 sigma^4), D = g1 - g2.
DivergenceEstimate v2_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                          std::span<const double> xs, int d, double sigma);
// The variance-plus-mean form Var(D^2)/(2 sigma^2) + 2 E[D^2]; equal to the above at sigma^2 = 1/2.
DivergenceEstimate v2_stated_form(const RealFunction& g1, const RealFunction& g2, std::span<const double> xs,
                                  int d, double sigma);

struct HellingerSandwich {
  double lower = 0.0;  // (1 - exp(-R^2/(2 sigma^2))) / (2 R^2) E[D^2]
  double value = 0.0;
  double upper = 0.0;  // E[D^2] / (4 sigma^2)
  double se = 0.0;
  bool holds(double slack_se = 4.0) const;
};
// R bounds |g1| and |g2|.
HellingerSandwich hellinger_sandwich(const RealFunction& g1, const RealFunction& g2, std::span<const double> xs,
                                     int d, double sigma, double R);

// Definitional Monte Carlo under P1: (x, y) pairs with y = g1(x) + sigma eps.
struct DefinitionalDivergences {
  DivergenceEstimate kl;         // E log(p1/p2)
  DivergenceEstimate v2;         // Var log(p1/p2)
  DivergenceEstimate hellinger;  // E (1 - sqrt(p2/p1))^2
};
DefinitionalDivergences definitional_divergences(const RealFunction& g1, const RealFunction& g2,
                                                 std::span<const double> xs, int d, double sigma,
                                                 std::uint64_t seed);

struct RateFit {
  std::vector<int> grid;
  std::vector<double> means;
  std::vector<double> ses;
  double slope = 0.0;
  double slope_se = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double target = 0.0;

  double deviation() const { return slope - target; }
};

// -2 beta / (2 beta + dim).
double target_exponent(double beta, int dim);
RateFit fit_rate(const std::vector<int>& grid, const std::vector<double>& means, const std::vector<double>& ses,
                 double target);
RateFit fit_rate(const std::vector<RiskEstimate>& estimates, double target);
nlohmann::json to_json(const RateFit& f);

struct BoundReport {
  std::string predictor;
  double kappa = 0.0;       // chi^2 of mu to its own component
  double chi2 = 0.0;        // bound used for chi^2(mu, pi)
  double R = 0.0;
  int n = 0;
  int J = 0;
  RiskEstimate lhs;         // excess mu-risk of the predictor
  RiskEstimate excess_pi;   // E_pi (f - g_pi)^2
  RiskEstimate proximity;   // E_mu (g_pi - g)^2
  double rhs = 0.0;
  double combined_se = 0.0;
  bool holds = false;
};

// Everything is estimated on paired episodes: lhs and proximity on mu, the
// excess term on pi.
BoundReport verify_decomposition_bound(const NamedPredictor& predictor, const Predictor& oracle,
                                       const TestDistribution& pi, const TestDistribution& mu, double chi2,
                                       double R, int n, int J, std::uint64_t seed, int threads = 1);
nlohmann::json to_json(const BoundReport& r);
nlohmann::json to_json(const RiskEstimate& r);

struct RiskRow {
  std::string predictor;
  std::string prior;
  double kappa = 0.0;
  RiskEstimate estimate;
};
void write_risks_csv(const std::filesystem::path& path, const std::vector<RiskRow>& rows);
std::vector<RiskRow> read_risks_csv(const std::filesystem::path& path);

}  // namespace icl
