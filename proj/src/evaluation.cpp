#include "icl/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"

namespace icl {

std::vector<RiskEstimate> estimate_excess_risks(const std::vector<NamedPredictor>& predictors,
                                                const TestDistribution& test, int n, int J, std::uint64_t seed,
                                                int threads) {
  if (J < 1) throw ValidationError("risk estimation needs J >= 1");
  if (predictors.empty()) return {};
  PretrainingStream stream(test.prior, static_cast<std::uint64_t>(J), n, test.noise, test.domain, seed);
  const std::size_t P = predictors.size();
  std::vector<std::vector<double>> sq(P, std::vector<double>(static_cast<std::size_t>(J)));
  parallel_for(static_cast<std::size_t>(J), threads, [&](std::size_t j) {
    const Episode e = stream.episode(j);
    for (std::size_t p = 0; p < P; ++p) {
      const double r = predictors[p].f(e, e.query) - e.g_at_query;
      sq[p][j] = r * r;
    }
  });
  std::vector<RiskEstimate> out;
  for (std::size_t p = 0; p < P; ++p) out.push_back(RiskEstimate::from_samples(std::move(sq[p]), n, predictors[p].id));
  return out;
}

RiskEstimate estimate_excess_risk(const NamedPredictor& predictor, const TestDistribution& test, int n, int J,
                                  std::uint64_t seed, int threads) {
  return estimate_excess_risks({predictor}, test, n, J, seed, threads).front();
}

void ShiftSpec::validate() const {
  for (const auto& [idx, eps] : tilts) {
    if (!(std::abs(eps) <= 1.0)) throw ValidationError("tilt eps must satisfy |eps| <= 1");
  }
}

ShiftSpec ShiftSpec::for_budget(const MixtureComponent& base, double kappa, int max_level) {
  if (!(kappa >= 0.0)) throw ValidationError("shift budget kappa must be >= 0");
  ShiftSpec s;
  s.label = base.label;
  if (kappa == 0.0) return s;
  const auto& basis = base.besov.basis;
  std::vector<WaveletIndex> idx = enumerate_fathers(basis);
  for (int l = basis.base_level; l <= max_level; ++l) {
    const auto m = enumerate_mothers(basis, l);
    idx.insert(idx.end(), m.begin(), m.end());
  }
  const double c = static_cast<double>(idx.size());
  const double eps = std::sqrt(3.0 * (std::pow(1.0 + kappa, 1.0 / c) - 1.0));
  if (eps > 1.0) throw ShiftBudgetError("kappa too large for linear tilts on " + std::to_string(idx.size()) + " coefficients");
  for (const auto& i : idx) s.tilts[i] = eps;
  return s;
}

double chi_squared_of_shift(const ShiftSpec& shift) {
  shift.validate();
  double prod = 1.0;
  for (const auto& [idx, eps] : shift.tilts) prod *= 1.0 + eps * eps / 3.0;
  return prod - 1.0;
}

double chi_squared_quadrature(const ShiftSpec& shift, int points_per_axis) {
  shift.validate();
  const std::size_t c = shift.tilts.size();
  if (c == 0) return 0.0;
  if (points_per_axis < 2 || points_per_axis % 2 != 0)
    throw ValidationError("Simpson quadrature needs an even number of intervals per axis");
  if (std::pow(static_cast<double>(points_per_axis + 1), static_cast<double>(c)) > 1e8)
    throw ValidationError("quadrature grid too large");
  std::vector<double> eps;
  for (const auto& [idx, e] : shift.tilts) eps.push_back(e);
  const int m = points_per_axis;
  const double h = 2.0 / m;
  std::vector<double> w(static_cast<std::size_t>(m + 1));
  for (int i = 0; i <= m; ++i) w[static_cast<std::size_t>(i)] = (i == 0 || i == m ? 1.0 : i % 2 ? 4.0 : 2.0) * h / 3.0;
  std::vector<int> counter(c, 0);
  // Composite Simpson over [-1,1]^c against the uniform density 2^{-c}.
  double total = 0.0;
  for (;;) {
    double ratio = 1.0, weight = 1.0;
    for (std::size_t k = 0; k < c; ++k) {
      ratio *= 1.0 + eps[k] * (-1.0 + counter[k] * h);
      weight *= w[static_cast<std::size_t>(counter[k])];
    }
    total += weight * ratio * ratio;
    std::size_t k = 0;
    while (k < c && ++counter[k] == m + 1) counter[k++] = 0;
    if (k == c) break;
  }
  return total * std::pow(0.5, static_cast<double>(c)) - 1.0;
}

MixtureComponent make_shifted_prior(const MixtureComponent& base, const ShiftSpec& shift, double kappa_budget) {
  shift.validate();
  const double chi2 = chi_squared_of_shift(shift);
  if (chi2 > kappa_budget * (1.0 + 1e-12) + 1e-15)
    throw ShiftBudgetError("shift has chi^2 = " + std::to_string(chi2) + " above the budget " + std::to_string(kappa_budget));
  MixtureComponent out = base;
  for (const auto& [idx, eps] : shift.tilts) {
    validate_index(base.besov.basis, idx);
    out.besov.law.tilts[idx] = eps;
  }
  out.besov.law.c0 = std::min(out.besov.law.c0, out.besov.law.implied_c0());
  out.besov.law.validate();
  return out;
}

double density_ratio(const RandomFunction& g, const ShiftSpec& shift) {
  double r = 1.0;
  for (const auto& [idx, eps] : shift.tilts) r *= 1.0 + eps * g.raw(idx);
  return r;
}

double mixture_chi_squared_bound(const MixtureSpec& pi, const std::string& label, double kappa) {
  const double lambda = pi.weights.at(pi.find(label));
  return (kappa + 1.0) / lambda - 1.0;
}

namespace {

DivergenceEstimate mean_se(const std::vector<double>& v) {
  const auto r = RiskEstimate::from_samples(v);
  return {r.mean, r.se};
}

std::vector<double> gaps(const RealFunction& g1, const RealFunction& g2, std::span<const double> xs, int d) {
  if (d < 1 || xs.size() % static_cast<std::size_t>(d) != 0) throw ShapeError("covariate array does not match d");
  const std::size_t m = xs.size() / static_cast<std::size_t>(d);
  if (m < 2) throw ValidationError("divergence estimates need at least two covariate draws");
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto x = xs.subspan(i * d, static_cast<std::size_t>(d));
    out[i] = g1(x) - g2(x);
  }
  return out;
}

void check_sigma(double sigma) {
  if (!(sigma > 0.0)) throw LikelihoodError("divergences need sigma > 0");
}

// Delta-method standard error of a + b Var(u) + c E[v] style combinations.
DivergenceEstimate variance_plus_mean(const std::vector<double>& D, double var_coef, double mean_coef) {
  const std::size_t m = D.size();
  std::vector<double> sq(m), q(m);
  for (std::size_t i = 0; i < m; ++i) {
    sq[i] = D[i] * D[i];
    q[i] = sq[i] * sq[i];
  }
  const double mu2 = pairwise_sum(sq) / m;
  const double mu4 = pairwise_sum(q) / m;
  const double var = (mu4 - mu2 * mu2) * m / (m - 1.0);
  const double value = var_coef * var + mean_coef * mu2;
  // Influence function: var_coef ((D^2 - mu2)^2 - var) + mean_coef (D^2 - mu2).
  std::vector<double> infl(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double c = sq[i] - mu2;
    infl[i] = var_coef * (c * c - var) + mean_coef * c;
  }
  const auto s = mean_se(infl);
  return {value, s.se};
}

}  // namespace

DivergenceEstimate kl_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                          std::span<const double> xs, int d, double sigma) {
  check_sigma(sigma);
  auto D = gaps(g1, g2, xs, d);
  for (double& v : D) v = v * v / (2.0 * sigma * sigma);
  return mean_se(D);
}

DivergenceEstimate hellinger_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                                 std::span<const double> xs, int d, double sigma) {
  check_sigma(sigma);
  auto D = gaps(g1, g2, xs, d);
  for (double& v : D) v = 2.0 * (1.0 - std::exp(-v * v / (8.0 * sigma * sigma)));
  return mean_se(D);
}

DivergenceEstimate v2_gaussian_regression(const RealFunction& g1, const RealFunction& g2,
                                          std::span<const double> xs, int d, double sigma) {
  check_sigma(sigma);
  const double s2 = sigma * sigma;
  return variance_plus_mean(gaps(g1, g2, xs, d), 1.0 / (4.0 * s2 * s2), 1.0 / s2);
}

DivergenceEstimate v2_stated_form(const RealFunction& g1, const RealFunction& g2, std::span<const double> xs,
                                  int d, double sigma) {
  check_sigma(sigma);
  return variance_plus_mean(gaps(g1, g2, xs, d), 1.0 / (2.0 * sigma * sigma), 2.0);
}

bool HellingerSandwich::holds(double slack_se) const {
  return value >= lower - slack_se * se && value <= upper + slack_se * se;
}

HellingerSandwich hellinger_sandwich(const RealFunction& g1, const RealFunction& g2, std::span<const double> xs,
                                     int d, double sigma, double R) {
  check_sigma(sigma);
  if (!(R > 0.0)) throw ValidationError("sandwich needs R > 0");
  const auto D = gaps(g1, g2, xs, d);
  const double s2 = sigma * sigma;
  const double c = (1.0 - std::exp(-R * R / (2.0 * s2))) / (2.0 * R * R);
  std::vector<double> h(D.size()), lo(D.size()), hi(D.size()), gap(D.size());
  for (std::size_t i = 0; i < D.size(); ++i) {
    const double t = D[i] * D[i];
    h[i] = 2.0 * (1.0 - std::exp(-t / (8.0 * s2)));
    lo[i] = c * t;
    hi[i] = t / (4.0 * s2);
    // Both bounds hold pointwise, so the paired gaps carry the MC noise.
    gap[i] = std::min(h[i] - lo[i], hi[i] - h[i]);
  }
  HellingerSandwich out;
  const auto hv = mean_se(h);
  out.value = hv.value;
  out.lower = mean_se(lo).value;
  out.upper = mean_se(hi).value;
  out.se = std::max(mean_se(gap).se, hv.se);
  return out;
}

DefinitionalDivergences definitional_divergences(const RealFunction& g1, const RealFunction& g2,
                                                 std::span<const double> xs, int d, double sigma,
                                                 std::uint64_t seed) {
  check_sigma(sigma);
  if (d < 1 || xs.size() % static_cast<std::size_t>(d) != 0) throw ShapeError("covariate array does not match d");
  const std::size_t m = xs.size() / static_cast<std::size_t>(d);
  Rng rng(seed);
  std::vector<double> llr(m), hel(m);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t i = 0; i < m; ++i) {
    const auto x = xs.subspan(i * d, static_cast<std::size_t>(d));
    const double a = g1(x), b = g2(x);
    const double y = a + sigma * rng.normal();
    // log p1(y|x) - log p2(y|x); the marginal of x cancels.
    const double l = ((y - b) * (y - b) - (y - a) * (y - a)) * inv;
    llr[i] = l;
    // 2 (1 - E_1 sqrt(p2/p1)); the squared form is unbiased too but heavy tailed.
    hel[i] = 2.0 * (1.0 - std::exp(-0.5 * l));
  }
  DefinitionalDivergences out;
  out.kl = mean_se(llr);
  out.hellinger = mean_se(hel);
  const auto mu = out.kl.value;
  std::vector<double> infl(m);
  double var = 0.0;
  for (std::size_t i = 0; i < m; ++i) var += (llr[i] - mu) * (llr[i] - mu);
  var /= (m - 1.0);
  for (std::size_t i = 0; i < m; ++i) infl[i] = (llr[i] - mu) * (llr[i] - mu) - var;
  out.v2 = {var, mean_se(infl).se};
  return out;
}

double target_exponent(double beta, int dim) {
  if (!(beta > 0.0) || dim < 1) throw ValidationError("target exponent needs beta > 0 and dim >= 1");
  return -2.0 * beta / (2.0 * beta + dim);
}

RateFit fit_rate(const std::vector<int>& grid, const std::vector<double>& means, const std::vector<double>& ses,
                 double target) {
  if (grid.size() != means.size() || (!ses.empty() && ses.size() != means.size()))
    throw ShapeError("rate fit inputs differ in length");
  if (grid.size() < 4) throw ValidationError("rate fit needs at least 4 grid points");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 1) throw ValidationError("grid values must be positive");
    if (i > 0 && grid[i] <= grid[i - 1]) throw ValidationError("rate grid must be strictly increasing");
    if (!(means[i] > 0.0)) throw LogDomainError("risk mean at n = " + std::to_string(grid[i]) + " is not positive");
  }
  const std::size_t m = grid.size();
  std::vector<double> x(m), y(m);
  double xbar = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    x[i] = std::log(static_cast<double>(grid[i]));
    y[i] = std::log(means[i]);
    xbar += x[i];
    ybar += y[i];
  }
  xbar /= m;
  ybar /= m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - xbar) * (x[i] - xbar);
    sxy += (x[i] - xbar) * (y[i] - ybar);
    syy += (y[i] - ybar) * (y[i] - ybar);
  }
  RateFit f;
  f.grid = grid;
  f.means = means;
  f.ses = ses;
  f.target = target;
  f.slope = sxy / sxx;
  f.intercept = ybar - f.slope * xbar;
  double sse = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    sse += r * r;
  }
  f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  if (!ses.empty()) {
    // var(log mean_i) ~ (se_i / mean_i)^2, propagated through the OLS weights.
    double v = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double c = (x[i] - xbar) / sxx;
      const double rel = ses[i] / means[i];
      v += c * c * rel * rel;
    }
    f.slope_se = std::sqrt(v);
  }
  return f;
}

RateFit fit_rate(const std::vector<RiskEstimate>& estimates, double target) {
  std::vector<int> grid;
  std::vector<double> means, ses;
  for (const auto& e : estimates) {
    grid.push_back(e.n);
    means.push_back(e.mean);
    ses.push_back(e.se);
  }
  return fit_rate(grid, means, ses, target);
}

nlohmann::json to_json(const RateFit& f) {
  return {{"grid", f.grid},   {"means", f.means},         {"stderrs", f.ses},
          {"slope", f.slope}, {"slope_stderr", f.slope_se}, {"intercept", f.intercept},
          {"r2", f.r2},       {"target", f.target},       {"deviation", f.deviation()}};
}

nlohmann::json to_json(const RiskEstimate& r) {
  return {{"predictor", r.predictor}, {"n", r.n}, {"J", r.J}, {"mean", r.mean}, {"stderr", r.se}};
}

BoundReport verify_decomposition_bound(const NamedPredictor& predictor, const Predictor& oracle,
                                       const TestDistribution& pi, const TestDistribution& mu, double chi2,
                                       double R, int n, int J, std::uint64_t seed, int threads) {
  if (J < 2) throw ValidationError("bound verification needs J >= 2");
  BoundReport rep;
  rep.predictor = predictor.id;
  rep.kappa = mu.kappa;
  rep.chi2 = chi2;
  rep.R = R;
  rep.n = n;
  rep.J = J;

  // Under mu: (f - g)^2 and (g_pi - g)^2 on the same episodes.
  const auto on_mu = estimate_excess_risks({predictor, {"oracle", oracle}}, mu, n, J, derive_seed(seed, 1), threads);
  rep.lhs = on_mu[0];
  rep.proximity = on_mu[1];

  // Under pi: (f - g_pi)^2.
  PretrainingStream stream(pi.prior, static_cast<std::uint64_t>(J), n, pi.noise, pi.domain, derive_seed(seed, 2));
  std::vector<double> ex(static_cast<std::size_t>(J));
  parallel_for(static_cast<std::size_t>(J), threads, [&](std::size_t j) {
    const Episode e = stream.episode(j);
    const double r = predictor.f(e, e.query) - oracle(e, e.query);
    ex[j] = r * r;
  });
  rep.excess_pi = RiskEstimate::from_samples(std::move(ex), n, predictor.id + "-vs-oracle");

  const double a = 4.0 * R * std::sqrt(chi2 + 1.0);
  const double E = std::max(0.0, rep.excess_pi.mean);
  rep.rhs = a * std::sqrt(E) + 2.0 * rep.proximity.mean;
  // lhs - 2 proximity is paired; the square-root term is linearized upward
  // so that E near zero does not blow up the error.
  std::vector<double> diff(static_cast<std::size_t>(J));
  for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = rep.lhs.samples[j] - 2.0 * rep.proximity.samples[j];
  const double se_diff = RiskEstimate::from_samples(std::move(diff)).se;
  const double se_sqrt = a * (std::sqrt(E + rep.excess_pi.se) - std::sqrt(E));
  rep.combined_se = std::sqrt(se_diff * se_diff + se_sqrt * se_sqrt);
  rep.holds = rep.lhs.mean <= rep.rhs + 4.0 * rep.combined_se;
  return rep;
}

nlohmann::json to_json(const BoundReport& r) {
  return {{"predictor", r.predictor},
          {"kappa", r.kappa},
          {"chi2_bound", r.chi2},
          {"R", r.R},
          {"n", r.n},
          {"J", r.J},
          {"lhs", to_json(r.lhs)},
          {"excess_pi", to_json(r.excess_pi)},
          {"posterior_proximity", to_json(r.proximity)},
          {"rhs", r.rhs},
          {"combined_stderr", r.combined_se},
          {"holds", r.holds}};
}

void write_risks_csv(const std::filesystem::path& path, const std::vector<RiskRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.precision(17);
  out << "predictor,prior,kappa,n,J,mean,stderr\n";
  for (const auto& r : rows) {
    out << r.predictor << ',' << r.prior << ',' << r.kappa << ',' << r.estimate.n << ',' << r.estimate.J << ','
        << r.estimate.mean << ',' << r.estimate.se << '\n';
  }
}

std::vector<RiskRow> read_risks_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("risks file is empty: " + path.string());
  std::vector<RiskRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 7 columns");
    try {
      RiskRow r;
      r.predictor = f[0];
      r.prior = f[1];
      r.kappa = std::stod(f[2]);
      r.estimate.n = std::stoi(f[3]);
      r.estimate.J = std::stoi(f[4]);
      r.estimate.mean = std::stod(f[5]);
      r.estimate.se = std::stod(f[6]);
      r.estimate.predictor = r.predictor;
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

}  // namespace icl
