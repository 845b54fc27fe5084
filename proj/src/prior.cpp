#include "icl/prior.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "icl/errors.hpp"

namespace icl {

using nlohmann::json;

// ---------------------------------------------------------------- law

CoefficientLaw CoefficientLaw::tilted_levels(const WaveletSpec& basis, double eps, int max_level) {
  CoefficientLaw law;
  if (eps == 0.0) return law;
  for (const auto& idx : enumerate_fathers(basis)) law.tilts[idx] = eps;
  for (int level = basis.base_level; level <= max_level; ++level) {
    for (const auto& idx : enumerate_mothers(basis, level)) law.tilts[idx] = eps;
  }
  law.c0 = law.implied_c0();
  return law;
}

double CoefficientLaw::epsilon(const WaveletIndex& idx) const {
  if (tilts.empty()) return 0.0;
  auto it = tilts.find(idx);
  return it == tilts.end() ? 0.0 : it->second;
}

double CoefficientLaw::density(const WaveletIndex& idx, double b) const {
  if (b < -1.0 || b > 1.0) return 0.0;
  return 0.5 * (1.0 + epsilon(idx) * b);
}

double CoefficientLaw::implied_c0() const {
  double worst = 0.0;
  for (const auto& [idx, eps] : tilts) worst = std::max(worst, std::abs(eps));
  return 1.0 - worst;
}

void CoefficientLaw::validate() const {
  for (const auto& [idx, eps] : tilts) {
    if (!std::isfinite(eps) || std::abs(eps) > 1.0) throw ValidationError("tilt magnitude must be at most 1");
  }
  if (!(c0 > 0.0 && c0 <= 1.0)) throw ValidationError("density bound c0 must lie in (0,1]");
  if (c0 > implied_c0() + 1e-12) throw ValidationError("tilted density leaves the declared c0 sandwich");
}

double CoefficientLaw::draw(std::uint64_t seed, const WaveletIndex& idx) const {
  const std::uint64_t tag = (static_cast<std::uint64_t>(idx.kind) << 40) |
                            (static_cast<std::uint64_t>(static_cast<std::uint32_t>(idx.level)) << 8) | idx.type;
  const auto k0 = static_cast<std::uint64_t>(idx.position[0]);
  const auto k1 = static_cast<std::uint64_t>(idx.position[1]);
  const auto k2 = static_cast<std::uint64_t>(idx.position[2]);
  const double eps = epsilon(idx);
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t h = hash_words(seed, {tag, k0, k1, k2, attempt});
    const double b = 2.0 * to_unit_interval(h) - 1.0;
    if (eps == 0.0) return b;
    // Acceptance (1 + eps b)/(1 + |eps|) >= 1/2 when |eps| <= 1.
    const double v = to_unit_interval(splitmix64(h ^ 0xa0761d6478bd642fULL));
    if (v * (1.0 + std::abs(eps)) < 1.0 + eps * b) return b;
  }
}

// ---------------------------------------------------------------- specs

void BesovPriorSpec::validate() const {
  basis.validate();
  law.validate();
  if (!(alpha > 0.0)) throw ValidationError("smoothness alpha must be positive");
  if (!(alpha < basis.regularity())) {
    throw ValidationError("smoothness alpha=" + std::to_string(alpha) + " must stay below the regularity " +
                          std::to_string(basis.regularity()) + " of the " + basis.name() + " basis");
  }
  if (!(C0 >= 1.0) || !std::isfinite(C0)) throw ValidationError("scale C0 must be at least 1");
  if (max_level < basis.base_level) throw ValidationError("L_max must be at least the base level");
  if (max_level > 40) throw ValidationError("L_max above 40 is not supported");
}

double BesovPriorSpec::scale(const WaveletIndex& idx) const {
  const double d = basis.dim;
  if (idx.kind == IndexKind::father) return C0 * std::exp2(-basis.base_level * d / 2.0);
  return C0 * std::exp2(-idx.level * (alpha + d / 2.0));
}

void MultiIndexPriorSpec::validate() const {
  base.validate();
  if (p() < 1 || ambient_dim < p()) throw ValidationError("multi-index prior needs 1 <= p <= d");
  if (ambient_dim > 16) throw ValidationError("ambient dimension above 16 is not supported");
}

void MixtureSpec::validate() const {
  if (components.empty()) throw ValidationError("mixture has no components");
  if (weights.size() != components.size()) throw ValidationError("mixture weights and components differ in length");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ValidationError("mixture weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("mixture weights must sum to 1");
  const int d = components.front().input_dim();
  for (const auto& c : components) {
    if (c.multi_index()) {
      c.as_multi_index().validate();
    } else {
      c.besov.validate();
    }
    if (c.input_dim() != d) throw ValidationError("mixture components disagree on the input dimension");
  }
}

int MixtureSpec::input_dim() const { return components.empty() ? 0 : components.front().input_dim(); }

std::size_t MixtureSpec::find(const std::string& label) const {
  for (std::size_t i = 0; i < components.size(); ++i) {
    if (components[i].label == label) return i;
  }
  throw ValidationError("no mixture component labelled '" + label + "'");
}

// ---------------------------------------------------------------- functions

RandomFunction::RandomFunction(CoefficientTree scaled, double alpha, double C0,
                               std::optional<Eigen::MatrixXd> projection)
    : tree_(std::move(scaled)), alpha_(alpha), C0_(C0), projection_(std::move(projection)) {
  if (projection_) {
    if (projection_->cols() != tree_.spec().dim) throw ShapeError("projection columns must equal the base dimension");
    const Eigen::MatrixXd gram = projection_->transpose() * (*projection_);
    if ((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() > 1e-10) {
      throw ValidationError("projection columns are not orthonormal");
    }
  }
  prior_source_ = dynamic_cast<const PriorCoefficientSource*>(tree_.source().get());
}

int RandomFunction::input_dim() const {
  return projection_ ? static_cast<int>(projection_->rows()) : tree_.spec().dim;
}

std::optional<std::uint64_t> RandomFunction::seed() const {
  if (prior_source_) return prior_source_->seed();
  return std::nullopt;
}

double RandomFunction::raw(const WaveletIndex& idx) const {
  if (prior_source_) return prior_source_->raw(idx);
  const double s = idx.kind == IndexKind::father
                       ? C0_ * std::exp2(-tree_.spec().base_level * tree_.spec().dim / 2.0)
                       : C0_ * std::exp2(-idx.level * (alpha_ + tree_.spec().dim / 2.0));
  return tree_.get(idx) / s;
}

std::vector<double> RandomFunction::base_argument(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != input_dim()) throw DomainError("point dimension does not match the function");
  if (!projection_) {
    for (double v : x) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("point outside [0,1]^d");
    }
    return {x.begin(), x.end()};
  }
  double norm2 = 0.0;
  for (double v : x) norm2 += v * v;
  if (!(norm2 <= 1.0 + 1e-12)) throw DomainError("point outside the unit ball");
  const auto& u = *projection_;
  std::vector<double> t(static_cast<std::size_t>(u.cols()));
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) acc += u(i, j) * x[static_cast<std::size_t>(i)];
    t[static_cast<std::size_t>(j)] = std::clamp((acc + 1.0) / 2.0, 0.0, 1.0);
  }
  return t;
}

double RandomFunction::evaluate_base(std::span<const double> t) const {
  const auto& spec = tree_.spec();
  if (!prior_source_ || spec.family != WaveletFamily::haar) return tree_.evaluate(t);
  // Haar fast path: one cell per level, no index bookkeeping beyond the path.
  for (double v : t) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("point outside [0,1]^d");
  }
  const int d = spec.dim;
  const auto& ps = prior_source_->spec();
  double acc = ps.scale(WaveletIndex::father(0, {0, 0, 0})) * prior_source_->raw(WaveletIndex::father(0, {0, 0, 0}));
  const unsigned full = (1u << d) - 1u;
  for (int level = 0; level <= tree_.max_level(); ++level) {
    Position k{};
    unsigned right = 0;
    const std::int64_t count = std::int64_t{1} << level;
    for (int j = 0; j < d; ++j) {
      const double scaled = std::ldexp(t[static_cast<std::size_t>(j)], level + 1);
      auto fine = static_cast<std::int64_t>(scaled);
      fine = std::min(fine, 2 * count - 1);
      k[static_cast<std::size_t>(j)] = fine >> 1;
      if (fine & 1) right |= 1u << j;
    }
    const double height = std::exp2(level * d / 2.0);
    for (unsigned tau = 1; tau <= full; ++tau) {
      const auto idx = WaveletIndex::mother(level, k, static_cast<std::uint8_t>(tau));
      const double sign = (std::popcount(tau & right) % 2 == 0) ? 1.0 : -1.0;
      acc += ps.scale(idx) * prior_source_->raw(idx) * height * sign;
    }
  }
  return acc;
}

double RandomFunction::operator()(std::span<const double> x) const {
  if (!projection_) {
    if (static_cast<int>(x.size()) != input_dim()) throw DomainError("point dimension does not match the function");
    return evaluate_base(x);
  }
  const auto t = base_argument(x);
  return evaluate_base(t);
}

// ---------------------------------------------------------------- sampling

RandomFunction make_besov_function(const BesovPriorSpec& spec, std::uint64_t seed) {
  auto source = std::make_shared<PriorCoefficientSource>(spec, seed);
  return RandomFunction(CoefficientTree::generated(spec.basis, spec.max_level, source), spec.alpha, spec.C0);
}

RandomFunction sample_besov(const BesovPriorSpec& spec, Rng& rng) {
  spec.validate();
  return make_besov_function(spec, rng.next());
}

Eigen::MatrixXd sample_stiefel(int d, int p, Rng& rng) {
  if (p < 1 || p > d) throw ValidationError("stiefel sampling needs 1 <= p <= d");
  for (;;) {
    Eigen::MatrixXd z(d, p);
    for (int j = 0; j < p; ++j) {
      for (int i = 0; i < d; ++i) z(i, j) = rng.normal();
    }
    const Eigen::MatrixXd gram = z.transpose() * z;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const auto& lambda = eig.eigenvalues();
    if (lambda.minCoeff() <= 1e-12 * std::max(1.0, lambda.maxCoeff())) continue;
    const Eigen::MatrixXd inv_sqrt =
        eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return z * inv_sqrt;
  }
}

RandomFunction sample_multi_index(const MultiIndexPriorSpec& spec, Rng& rng,
                                  const std::optional<Eigen::MatrixXd>& forced_projection) {
  spec.validate();
  const std::uint64_t seed = rng.next();
  Eigen::MatrixXd u;
  if (forced_projection) {
    u = *forced_projection;
  } else {
    Rng stream(derive_seed(seed, 0x5717e1ULL));
    u = sample_stiefel(spec.ambient_dim, spec.p(), stream);
  }
  auto source = std::make_shared<PriorCoefficientSource>(spec.base, seed);
  return RandomFunction(CoefficientTree::generated(spec.base.basis, spec.base.max_level, source), spec.base.alpha,
                        spec.base.C0, u);
}

RandomFunction sample_component(const MixtureComponent& c, Rng& rng) {
  return c.multi_index() ? sample_multi_index(c.as_multi_index(), rng) : sample_besov(c.besov, rng);
}

std::pair<std::size_t, RandomFunction> sample_mixture(const MixtureSpec& mix, Rng& rng) {
  const double u = rng.uniform();
  std::size_t pick = mix.components.size() - 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < mix.weights.size(); ++i) {
    acc += mix.weights[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  return {pick, sample_component(mix.components[pick], rng)};
}

// ---------------------------------------------------------------- bounds

double truncation_tail_bound(const BesovPriorSpec& spec) {
  const double r = std::exp2(-spec.alpha);
  const double tail = std::exp2(-(spec.max_level + 1) * spec.alpha) / (1.0 - r);
  return spec.overlap_constant() * spec.C0 * tail;
}

int default_max_level(double alpha, double C0, const WaveletSpec& basis, double tolerance) {
  BesovPriorSpec s;
  s.alpha = alpha;
  s.C0 = C0;
  s.basis = basis;
  for (int level = basis.base_level; level <= 40; ++level) {
    s.max_level = level;
    if (truncation_tail_bound(s) <= tolerance) return level;
  }
  throw ValidationError("no truncation level up to 40 meets the tail tolerance");
}

double sup_norm_bound(const BesovPriorSpec& spec) {
  double sum = 0.0;
  for (int level = spec.basis.base_level; level <= spec.max_level; ++level) sum += std::exp2(-level * spec.alpha);
  return spec.C0 * (father_overlap_constant(spec.basis) + spec.overlap_constant() * sum);
}

double sup_norm_bound(const MixtureSpec& mix) {
  double r = 0.0;
  for (const auto& c : mix.components) r = std::max(r, sup_norm_bound(c.besov));
  return r;
}

// ---------------------------------------------------------------- json

namespace {

json index_json(const WaveletIndex& idx, int dim) {
  json k = json::array();
  json tau = json::array();
  for (int j = 0; j < dim; ++j) {
    k.push_back(idx.position[static_cast<std::size_t>(j)]);
    tau.push_back((idx.type >> j) & 1u);
  }
  json out{{"kind", idx.kind == IndexKind::father ? "father" : "mother"}, {"level", idx.level}, {"k", k}};
  if (idx.kind == IndexKind::mother) out["type"] = tau;
  return out;
}

WaveletIndex index_from_json(const json& j, const WaveletSpec& basis) {
  WaveletIndex idx;
  idx.kind = j.at("kind").get<std::string>() == "father" ? IndexKind::father : IndexKind::mother;
  idx.level = j.value("level", basis.base_level);
  const auto& k = j.at("k");
  for (std::size_t i = 0; i < k.size() && i < 3; ++i) idx.position[i] = k[i].get<std::int64_t>();
  if (idx.kind == IndexKind::mother) {
    const auto& tau = j.at("type");
    for (std::size_t i = 0; i < tau.size() && i < 8; ++i) {
      if (tau[i].get<int>() != 0) idx.type |= static_cast<std::uint8_t>(1u << i);
    }
  }
  validate_index(basis, idx);
  return idx;
}

}  // namespace

json to_json(const WaveletSpec& s) {
  return json{{"family", s.family == WaveletFamily::haar ? "haar" : "daubechies"}, {"taps", s.taps}, {"dim", s.dim}};
}

WaveletSpec wavelet_from_json(const json& j) {
  const auto family = j.value("family", std::string("haar"));
  const int dim = j.value("dim", 1);
  if (family == "haar") return WaveletSpec::haar(dim);
  if (family == "daubechies") return WaveletSpec::daubechies(j.value("taps", 4), dim);
  throw ValidationError("unknown wavelet family '" + family + "'");
}

json to_json(const CoefficientLaw& law) {
  if (law.is_uniform()) return json{{"kind", "uniform"}, {"c0", law.c0}};
  json tilts = json::array();
  for (const auto& [idx, eps] : law.tilts) {
    json t = index_json(idx, 3);
    t["eps"] = eps;
    tilts.push_back(t);
  }
  return json{{"kind", "tilted"}, {"c0", law.c0}, {"tilts", tilts}};
}

CoefficientLaw law_from_json(const json& j, const WaveletSpec& basis) {
  CoefficientLaw law;
  const auto kind = j.value("kind", std::string("uniform"));
  if (kind == "uniform") {
    law.c0 = j.value("c0", 1.0);
  } else if (kind == "tilted") {
    if (j.contains("tilts")) {
      for (const auto& t : j.at("tilts")) {
        json local = t;
        if (local.contains("k")) {
          json k = json::array();
          for (int i = 0; i < basis.dim; ++i) k.push_back(local["k"][static_cast<std::size_t>(i)]);
          local["k"] = k;
        }
        law.tilts[index_from_json(local, basis)] = t.at("eps").get<double>();
      }
      law.c0 = j.value("c0", law.implied_c0());
    } else {
      law = CoefficientLaw::tilted_levels(basis, j.at("epsilon").get<double>(), j.at("max_level").get<int>());
      if (j.contains("c0")) law.c0 = j["c0"].get<double>();
    }
  } else {
    throw ValidationError("unknown coefficient law '" + kind + "'");
  }
  law.validate();
  return law;
}

json to_json(const RandomFunction& f) {
  const auto& spec = f.tree().spec();
  json out = to_json(spec);
  out["d"] = f.input_dim();
  if (f.projection()) out["p"] = spec.dim;
  out["alpha"] = f.alpha();
  out["C0"] = f.C0();
  out["L_max"] = f.tree().max_level();
  if (f.tree().is_generated()) {
    const auto* src = dynamic_cast<const PriorCoefficientSource*>(f.tree().source().get());
    if (!src) throw UnsupportedError("cannot serialize a tree generated by a custom source");
    out["generator"] = json{{"seed", src->seed()}, {"law", to_json(src->spec().law)}};
  } else {
    json fathers = json::array();
    json mothers = json::array();
    for (const auto& [idx, v] : f.tree().entries()) {
      json k = json::array();
      json tau = json::array();
      for (int j = 0; j < spec.dim; ++j) {
        k.push_back(idx.position[static_cast<std::size_t>(j)]);
        tau.push_back((idx.type >> j) & 1u);
      }
      if (idx.kind == IndexKind::father) {
        fathers.push_back(json::array({k, v}));
      } else {
        mothers.push_back(json::array({idx.level, k, tau, v}));
      }
    }
    out["fathers"] = fathers;
    out["mothers"] = mothers;
  }
  if (f.projection()) {
    const auto& u = *f.projection();
    json flat = json::array();
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      for (Eigen::Index j = 0; j < u.cols(); ++j) flat.push_back(u(i, j));
    }
    out["U"] = flat;
  }
  return out;
}

RandomFunction function_from_json(const json& j) {
  const WaveletSpec basis = wavelet_from_json(j);
  const double alpha = j.at("alpha").get<double>();
  const double C0 = j.at("C0").get<double>();
  const int max_level = j.at("L_max").get<int>();
  std::optional<Eigen::MatrixXd> u;
  if (j.contains("U")) {
    const int d = j.at("d").get<int>();
    const int p = basis.dim;
    const auto& flat = j.at("U");
    if (static_cast<int>(flat.size()) != d * p) throw ValidationError("projection has the wrong number of entries");
    Eigen::MatrixXd m(d, p);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < p; ++c) m(r, c) = flat[static_cast<std::size_t>(r * p + c)].get<double>();
    }
    u = m;
  }
  if (j.contains("generator")) {
    BesovPriorSpec spec;
    spec.alpha = alpha;
    spec.C0 = C0;
    spec.max_level = max_level;
    spec.basis = basis;
    spec.law = law_from_json(j["generator"].at("law"), basis);
    auto source = std::make_shared<PriorCoefficientSource>(spec, j["generator"].at("seed").get<std::uint64_t>());
    return RandomFunction(CoefficientTree::generated(basis, max_level, source), alpha, C0, u);
  }
  CoefficientTree tree(basis, max_level);
  for (const auto& f : j.value("fathers", json::array())) {
    Position k{};
    for (std::size_t i = 0; i < f[0].size() && i < 3; ++i) k[i] = f[0][i].get<std::int64_t>();
    tree.set(WaveletIndex::father(basis.base_level, k), f[1].get<double>());
  }
  for (const auto& m : j.value("mothers", json::array())) {
    Position k{};
    for (std::size_t i = 0; i < m[1].size() && i < 3; ++i) k[i] = m[1][i].get<std::int64_t>();
    std::uint8_t tau = 0;
    for (std::size_t i = 0; i < m[2].size() && i < 8; ++i) {
      if (m[2][i].get<int>() != 0) tau |= static_cast<std::uint8_t>(1u << i);
    }
    tree.set(WaveletIndex::mother(m[0].get<int>(), k, tau), m[3].get<double>());
  }
  return RandomFunction(std::move(tree), alpha, C0, u);
}

}  // namespace icl
