#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "icl/rng.hpp"
#include "icl/wavelet.hpp"
#include "json.hpp"

namespace icl {

// Law of a raw coefficient on [-1,1]: uniform, or the linear tilt
// (1 + eps x)/2 on a finite set of indices.
struct CoefficientLaw {
  std::map<WaveletIndex, double> tilts;  // index -> eps, |eps| <= 1
  double c0 = 1.0;                       // declared density-bound parameter

  static CoefficientLaw uniform() { return {}; }
  // Tilts the father block and every mother with level <= max_level by eps.
  static CoefficientLaw tilted_levels(const WaveletSpec& basis, double eps, int max_level);

  bool is_uniform() const { return tilts.empty(); }
  double epsilon(const WaveletIndex& idx) const;
  double density(const WaveletIndex& idx, double b) const;
  double mean(const WaveletIndex& idx) const { return epsilon(idx) / 3.0; }
  // Largest c0 for which the density stays within [c0/2, 1/(2 c0)].
  double implied_c0() const;
  void validate() const;
  // Counter-based draw: a pure function of (seed, idx).
  double draw(std::uint64_t seed, const WaveletIndex& idx) const;

  friend bool operator==(const CoefficientLaw&, const CoefficientLaw&) = default;
};

struct BesovPriorSpec {
  double alpha = 0.5;
  double C0 = 1.0;
  CoefficientLaw law;
  int max_level = 10;
  WaveletSpec basis = WaveletSpec::haar(1);

  void validate() const;
  // C0 2^{-l0 d/2} for fathers, C0 2^{-l(alpha + d/2)} for mothers.
  double scale(const WaveletIndex& idx) const;
  // max_x sum over the level-l mothers of the scaled |Psi| per unit coefficient,
  // divided by C0 2^{-l alpha}.
  double overlap_constant() const { return basis_overlap_constant(basis); }
};

struct MultiIndexPriorSpec {
  BesovPriorSpec base;  // lives on [0,1]^p
  int ambient_dim = 1;

  int p() const { return base.basis.dim; }
  void validate() const;
};

struct MixtureComponent {
  std::string label;
  BesovPriorSpec besov;
  int ambient_dim = 0;  // > 0 selects the multi-index prior

  bool multi_index() const { return ambient_dim > 0; }
  int input_dim() const { return multi_index() ? ambient_dim : besov.basis.dim; }
  MultiIndexPriorSpec as_multi_index() const { return {besov, ambient_dim}; }
};

struct MixtureSpec {
  std::vector<MixtureComponent> components;
  std::vector<double> weights;

  static MixtureSpec single(MixtureComponent c) { return {{std::move(c)}, {1.0}}; }
  void validate() const;
  int input_dim() const;
  std::size_t find(const std::string& label) const;
};

// Raw coefficients drawn lazily from the coefficient law.
class PriorCoefficientSource final : public CoefficientSource {
 public:
  PriorCoefficientSource(BesovPriorSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {}
  double value(const WaveletIndex& idx) const override { return spec_.scale(idx) * raw(idx); }
  double raw(const WaveletIndex& idx) const { return spec_.law.draw(seed_, idx); }
  const BesovPriorSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

 private:
  BesovPriorSpec spec_;
  std::uint64_t seed_;
};

// A regression function: a scaled wavelet tree, optionally precomposed with
// x -> (U^T x + 1)/2.
class RandomFunction {
 public:
  RandomFunction() = default;
  RandomFunction(CoefficientTree scaled, double alpha, double C0,
                 std::optional<Eigen::MatrixXd> projection = std::nullopt);

  const CoefficientTree& tree() const { return tree_; }
  double alpha() const { return alpha_; }
  double C0() const { return C0_; }
  const std::optional<Eigen::MatrixXd>& projection() const { return projection_; }
  int input_dim() const;
  int base_dim() const { return tree_.spec().dim; }
  // Seed of the generating source, when the tree is generated.
  std::optional<std::uint64_t> seed() const;

  double raw(const WaveletIndex& idx) const;
  // Maps a unit-ball point to [0,1]^p; identity without projection.
  std::vector<double> base_argument(std::span<const double> x) const;
  double evaluate_base(std::span<const double> t) const;
  double operator()(std::span<const double> x) const;

 private:
  CoefficientTree tree_;
  double alpha_ = 0.5;
  double C0_ = 1.0;
  std::optional<Eigen::MatrixXd> projection_;
  const PriorCoefficientSource* prior_source_ = nullptr;
};

inline double eval_function(const RandomFunction& f, std::span<const double> x) { return f(x); }

RandomFunction sample_besov(const BesovPriorSpec& spec, Rng& rng);
RandomFunction make_besov_function(const BesovPriorSpec& spec, std::uint64_t seed);
Eigen::MatrixXd sample_stiefel(int d, int p, Rng& rng);
RandomFunction sample_multi_index(const MultiIndexPriorSpec& spec, Rng& rng,
                                  const std::optional<Eigen::MatrixXd>& forced_projection = std::nullopt);
RandomFunction sample_component(const MixtureComponent& c, Rng& rng);
std::pair<std::size_t, RandomFunction> sample_mixture(const MixtureSpec& mix, Rng& rng);

// C' C0 sum_{l > L_max} 2^{-l alpha}.
double truncation_tail_bound(const BesovPriorSpec& spec);
// Smallest L_max >= l0 with tail bound <= tolerance.
int default_max_level(double alpha, double C0, const WaveletSpec& basis, double tolerance);
// Uniform bound on |g| for every function in the prior's support.
double sup_norm_bound(const BesovPriorSpec& spec);
double sup_norm_bound(const MixtureSpec& mix);

nlohmann::json to_json(const CoefficientLaw& law);
CoefficientLaw law_from_json(const nlohmann::json& j, const WaveletSpec& basis);
nlohmann::json to_json(const WaveletSpec& s);
WaveletSpec wavelet_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RandomFunction& f);
RandomFunction function_from_json(const nlohmann::json& j);

}  // namespace icl
