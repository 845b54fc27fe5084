#include "icl/wavelet.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <set>
#include <sstream>

#include "icl/errors.hpp"

namespace icl {
namespace {

constexpr int kCascadeLevels = 14;

const std::vector<double>& daubechies_filter(int taps) {
  static const std::vector<double> db2{0.48296291314469025, 0.83651630373746899, 0.22414386804185735,
                                       -0.12940952255092145};
  static const std::vector<double> db3{0.33267055295095688,  0.80689150931333875,   0.45987750211933132,
                                       -0.13501102001039084, -0.085441273882241486, 0.035226291882100656};
  static const std::vector<double> db4{0.23037781330885523,   0.71484657055254153,  0.63088076792959036,
                                       -0.027983769416983849, -0.18703481171888114, 0.030841381835986965,
                                       0.032883011666982945,  -0.010597401784997278};
  switch (taps) {
    case 4: return db2;
    case 6: return db3;
    case 8: return db4;
    default: throw ValidationError("daubechies: unsupported filter length " + std::to_string(taps));
  }
}

// phi and psi sampled at j / 2^kCascadeLevels on their support [0, taps-1].
struct CascadeTable {
  int taps = 0;
  std::vector<double> phi;
  std::vector<double> psi;

  double lookup(const std::vector<double>& table, double u) const {
    const double span = static_cast<double>(taps - 1);
    if (u <= 0.0 || u >= span) return 0.0;
    const double pos = std::ldexp(u, kCascadeLevels);
    const auto i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= table.size()) return table.back();
    return table[i] + frac * (table[i + 1] - table[i]);
  }
};

CascadeTable build_cascade(int taps) {
  const auto& h = daubechies_filter(taps);
  const int n = taps;
  const double s2 = std::sqrt(2.0);
  // phi at the integers 1..n-2: eigenvector of A_{ij} = sqrt2 h_{2i-j} for
  // eigenvalue 1, normalized to sum 1.
  const int m = n - 2;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m + 1, m);
  for (int i = 1; i <= m; ++i) {
    for (int j = 1; j <= m; ++j) {
      const int k = 2 * i - j;
      if (k >= 0 && k < n) a(i - 1, j - 1) = s2 * h[k];
    }
    a(i - 1, i - 1) -= 1.0;
  }
  for (int j = 0; j < m; ++j) a(m, j) = 1.0;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
  rhs(m) = 1.0;
  const Eigen::VectorXd integer_values = a.colPivHouseholderQr().solve(rhs);

  const std::size_t per_unit = std::size_t{1} << kCascadeLevels;
  const std::size_t size = static_cast<std::size_t>(n - 1) * per_unit + 1;
  std::vector<double> phi(size, 0.0);
  for (int j = 1; j <= m; ++j) phi[static_cast<std::size_t>(j) * per_unit] = integer_values(j - 1);

  // Refine: fill odd multiples of 2^-r using values on the 2^-(r-1) grid.
  for (int r = 1; r <= kCascadeLevels; ++r) {
    const std::size_t stride = per_unit >> r;  // table step for 2^-r
    for (std::size_t idx = stride; idx < size; idx += 2 * stride) {
      // x = idx / per_unit; phi(x) = sqrt2 sum_k h_k phi(2x - k)
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        const long long target = 2 * static_cast<long long>(idx) - static_cast<long long>(k) * static_cast<long long>(per_unit);
        if (target <= 0 || target >= static_cast<long long>(size)) continue;
        acc += h[k] * phi[static_cast<std::size_t>(target)];
      }
      phi[idx] = s2 * acc;
    }
  }

  std::vector<double> psi(size, 0.0);
  for (std::size_t idx = 0; idx < size; ++idx) {
    double acc = 0.0;
    for (int k = 0; k < n; ++k) {
      const double g = ((k % 2) == 0 ? 1.0 : -1.0) * h[n - 1 - k];
      const long long target = 2 * static_cast<long long>(idx) - static_cast<long long>(k) * static_cast<long long>(per_unit);
      if (target <= 0 || target >= static_cast<long long>(size)) continue;
      acc += g * phi[static_cast<std::size_t>(target)];
    }
    psi[idx] = s2 * acc;
  }
  return CascadeTable{taps, std::move(phi), std::move(psi)};
}

const CascadeTable& cascade_table(int taps) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<CascadeTable>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[taps];
  if (!slot) slot = std::make_unique<CascadeTable>(build_cascade(taps));
  return *slot;
}

std::int64_t dyadic_cell(double x, int level) {
  const std::int64_t count = std::int64_t{1} << level;
  const auto cell = static_cast<std::int64_t>(std::floor(std::ldexp(x, level)));
  return std::clamp<std::int64_t>(cell, 0, count - 1);
}

double periodized(const CascadeTable& table, const std::vector<double>& values, int level, std::int64_t k, double x) {
  const double count = std::ldexp(1.0, level);
  double u = std::fmod(std::ldexp(x, level) - static_cast<double>(k), count);
  if (u < 0) u += count;
  const double span = static_cast<double>(table.taps - 1);
  double acc = 0.0;
  for (double v = u; v < span; v += count) acc += table.lookup(values, v);
  return std::ldexp(1.0, 0) * std::sqrt(count) * acc;
}

void check_point(const WaveletSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.dim) {
    throw DomainError("point has dimension " + std::to_string(x.size()) + ", basis expects " + std::to_string(spec.dim));
  }
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("point outside [0,1]^d");
  }
}

}  // namespace

WaveletSpec WaveletSpec::haar(int dim) {
  WaveletSpec s;
  s.family = WaveletFamily::haar;
  s.taps = 2;
  s.base_level = 0;
  s.dim = dim;
  return s;
}

WaveletSpec WaveletSpec::daubechies(int taps, int dim) {
  WaveletSpec s;
  s.family = WaveletFamily::daubechies;
  s.taps = taps;
  s.dim = dim;
  s.base_level = static_cast<int>(std::ceil(std::log2(static_cast<double>(taps - 1))));
  return s;
}

void WaveletSpec::validate() const {
  if (dim < 1 || dim > 3) throw ValidationError("wavelet dimension must be 1, 2 or 3");
  if (family == WaveletFamily::haar) {
    if (base_level != 0 || taps != 2) throw ValidationError("haar basis requires base level 0");
  } else {
    daubechies_filter(taps);
    const int expected = static_cast<int>(std::ceil(std::log2(static_cast<double>(taps - 1))));
    if (base_level != expected) {
      throw ValidationError("periodized daubechies with " + std::to_string(taps) + " taps requires base level " +
                            std::to_string(expected));
    }
  }
}

std::string WaveletSpec::name() const {
  std::ostringstream os;
  if (family == WaveletFamily::haar) {
    os << "haar";
  } else {
    os << "daubechies" << taps;
  }
  return os.str();
}

double WaveletSpec::regularity() const {
  if (family == WaveletFamily::haar) return 1.0;
  switch (taps) {
    case 4: return 0.550;
    case 6: return 1.088;
    case 8: return 1.618;
    default: return 0.0;
  }
}

void validate_index(const WaveletSpec& spec, const WaveletIndex& idx) {
  const int level = idx.kind == IndexKind::father ? spec.base_level : idx.level;
  if (idx.kind == IndexKind::father && idx.level != spec.base_level) {
    throw IndexError("father index must sit at the base level " + std::to_string(spec.base_level));
  }
  if (idx.kind == IndexKind::mother) {
    if (idx.level < spec.base_level) throw IndexError("mother level below base level");
    if (idx.level > 60) throw IndexError("mother level too large");
    const unsigned full = (1u << spec.dim) - 1u;
    if (idx.type == 0 || (idx.type & ~full) != 0) throw IndexError("invalid wavelet type vector");
  } else if (idx.type != 0) {
    throw IndexError("father index carries a type vector");
  }
  const std::int64_t count = std::int64_t{1} << level;
  for (int j = 0; j < 3; ++j) {
    const std::int64_t k = idx.position[static_cast<std::size_t>(j)];
    if (j < spec.dim) {
      if (k < 0 || k >= count) throw IndexError("position out of range");
    } else if (k != 0) {
      throw IndexError("position set beyond the basis dimension");
    }
  }
}

double scaling_1d(const WaveletSpec& spec, int level, std::int64_t k, double x) {
  if (spec.family == WaveletFamily::haar) {
    return dyadic_cell(x, level) == k ? std::sqrt(std::ldexp(1.0, level)) : 0.0;
  }
  const auto& table = cascade_table(spec.taps);
  return periodized(table, table.phi, level, k, x);
}

double wavelet_1d(const WaveletSpec& spec, int level, std::int64_t k, double x) {
  if (spec.family == WaveletFamily::haar) {
    if (dyadic_cell(x, level) != k) return 0.0;
    const double height = std::sqrt(std::ldexp(1.0, level));
    return (dyadic_cell(x, level + 1) % 2 == 0) ? height : -height;
  }
  const auto& table = cascade_table(spec.taps);
  return periodized(table, table.psi, level, k, x);
}

double eval_basis(const WaveletSpec& spec, const WaveletIndex& idx, std::span<const double> x) {
  validate_index(spec, idx);
  check_point(spec, x);
  double value = 1.0;
  for (int j = 0; j < spec.dim; ++j) {
    const std::int64_t k = idx.position[static_cast<std::size_t>(j)];
    const bool mother_factor = idx.kind == IndexKind::mother && ((idx.type >> j) & 1u);
    value *= mother_factor ? wavelet_1d(spec, idx.level, k, x[static_cast<std::size_t>(j)])
                           : scaling_1d(spec, idx.level, k, x[static_cast<std::size_t>(j)]);
    if (value == 0.0) return 0.0;
  }
  return value;
}

std::size_t mother_count(int dim, int level) {
  return (std::size_t{1} << (static_cast<std::size_t>(level) * static_cast<std::size_t>(dim))) *
         ((std::size_t{1} << dim) - 1);
}

namespace {

template <class F>
void for_each_position(int dim, int level, F&& f) {
  const std::int64_t count = std::int64_t{1} << level;
  Position k{};
  const std::int64_t total = [&] {
    std::int64_t t = 1;
    for (int j = 0; j < dim; ++j) t *= count;
    return t;
  }();
  for (std::int64_t linear = 0; linear < total; ++linear) {
    std::int64_t rest = linear;
    for (int j = dim - 1; j >= 0; --j) {
      k[static_cast<std::size_t>(j)] = rest % count;
      rest /= count;
    }
    f(k);
  }
}

}  // namespace

std::vector<WaveletIndex> enumerate_fathers(const WaveletSpec& spec) {
  spec.validate();
  std::vector<WaveletIndex> out;
  for_each_position(spec.dim, spec.base_level,
                    [&](const Position& k) { out.push_back(WaveletIndex::father(spec.base_level, k)); });
  return out;
}

std::vector<WaveletIndex> enumerate_mothers(const WaveletSpec& spec, int level) {
  spec.validate();
  if (level < spec.base_level) {
    throw LevelError("level " + std::to_string(level) + " below base level " + std::to_string(spec.base_level));
  }
  std::vector<WaveletIndex> out;
  out.reserve(mother_count(spec.dim, level));
  const unsigned full = (1u << spec.dim) - 1u;
  for_each_position(spec.dim, level, [&](const Position& k) {
    for (unsigned t = 1; t <= full; ++t) out.push_back(WaveletIndex::mother(level, k, static_cast<std::uint8_t>(t)));
  });
  return out;
}

void visit_active(const WaveletSpec& spec, int max_level, std::span<const double> x,
                  const std::function<void(const WaveletIndex&, double)>& visit) {
  check_point(spec, x);
  const int dim = spec.dim;
  const unsigned full = (1u << dim) - 1u;

  // Per dimension, candidate positions at a level and their scaling/wavelet values.
  struct Candidate {
    std::int64_t k;
    double phi;
    double psi;
  };
  std::array<std::vector<Candidate>, 3> cand;

  auto fill = [&](int level) {
    for (int j = 0; j < dim; ++j) {
      auto& list = cand[static_cast<std::size_t>(j)];
      list.clear();
      const double xj = x[static_cast<std::size_t>(j)];
      if (spec.family == WaveletFamily::haar) {
        const std::int64_t k = dyadic_cell(xj, level);
        list.push_back({k, scaling_1d(spec, level, k, xj), wavelet_1d(spec, level, k, xj)});
      } else {
        const std::int64_t count = std::int64_t{1} << level;
        const std::int64_t top = dyadic_cell(xj, level);
        std::set<std::int64_t> seen;
        for (int s = 0; s < spec.taps; ++s) {
          std::int64_t k = ((top - s) % count + count) % count;
          if (!seen.insert(k).second) continue;
          list.push_back({k, scaling_1d(spec, level, k, xj), wavelet_1d(spec, level, k, xj)});
        }
      }
    }
  };

  auto recurse_positions = [&](int level, bool mothers) {
    Position k{};
    std::array<std::size_t, 3> choice{};
    std::function<void(int)> rec = [&](int j) {
      if (j == dim) {
        if (!mothers) {
          double v = 1.0;
          for (int i = 0; i < dim; ++i) v *= cand[static_cast<std::size_t>(i)][choice[static_cast<std::size_t>(i)]].phi;
          if (v != 0.0) visit(WaveletIndex::father(level, k), v);
          return;
        }
        for (unsigned t = 1; t <= full; ++t) {
          double v = 1.0;
          for (int i = 0; i < dim; ++i) {
            const auto& c = cand[static_cast<std::size_t>(i)][choice[static_cast<std::size_t>(i)]];
            v *= ((t >> i) & 1u) ? c.psi : c.phi;
          }
          if (v != 0.0) visit(WaveletIndex::mother(level, k, static_cast<std::uint8_t>(t)), v);
        }
        return;
      }
      const auto& list = cand[static_cast<std::size_t>(j)];
      for (std::size_t c = 0; c < list.size(); ++c) {
        choice[static_cast<std::size_t>(j)] = c;
        k[static_cast<std::size_t>(j)] = list[c].k;
        rec(j + 1);
      }
    };
    rec(0);
  };

  fill(spec.base_level);
  recurse_positions(spec.base_level, false);
  for (int level = spec.base_level; level <= max_level; ++level) {
    if (level != spec.base_level) fill(level);
    recurse_positions(level, true);
  }
}

namespace {

double measure_overlap(const WaveletSpec& spec, bool mothers) {
  // Dense 1-D grid per axis; tensor structure makes the per-axis maxima
  // combine multiplicatively, but a direct scan over a product grid is used
  // for d <= 2 and a coarser one for d = 3.
  const int level = spec.base_level;
  const int per_axis = spec.dim == 1 ? 4096 : (spec.dim == 2 ? 256 : 48);
  const auto fathers = enumerate_fathers(spec);
  const auto moms = enumerate_mothers(spec, level);
  const auto& set = mothers ? moms : fathers;
  const double norm = std::sqrt(std::ldexp(1.0, level * spec.dim));
  double best = 0.0;
  std::vector<double> x(static_cast<std::size_t>(spec.dim));
  std::int64_t total = 1;
  for (int j = 0; j < spec.dim; ++j) total *= per_axis;
  for (std::int64_t linear = 0; linear < total; ++linear) {
    std::int64_t rest = linear;
    for (int j = 0; j < spec.dim; ++j) {
      x[static_cast<std::size_t>(j)] = (static_cast<double>(rest % per_axis) + 0.5) / per_axis;
      rest /= per_axis;
    }
    double acc = 0.0;
    for (const auto& idx : set) acc += std::abs(eval_basis(spec, idx, x));
    best = std::max(best, acc / norm);
  }
  return best;
}

}  // namespace

double basis_overlap_constant(const WaveletSpec& spec) {
  spec.validate();
  if (spec.family == WaveletFamily::haar) return static_cast<double>((1 << spec.dim) - 1);
  static std::mutex mutex;
  static std::map<std::pair<int, int>, double> cache;
  std::lock_guard<std::mutex> lock(mutex);
  const auto key = std::make_pair(spec.taps, spec.dim);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const double value = measure_overlap(spec, true);
  cache[key] = value;
  return value;
}

double father_overlap_constant(const WaveletSpec& spec) {
  spec.validate();
  if (spec.family == WaveletFamily::haar) return 1.0;
  static std::mutex mutex;
  static std::map<std::pair<int, int>, double> cache;
  std::lock_guard<std::mutex> lock(mutex);
  const auto key = std::make_pair(spec.taps, spec.dim);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const double value = measure_overlap(spec, false);
  cache[key] = value;
  return value;
}

CoefficientTree::CoefficientTree(WaveletSpec spec, int max_level) : spec_(spec), max_level_(max_level) {
  spec_.validate();
  if (max_level_ < spec_.base_level) throw LevelError("truncation level below base level");
}

CoefficientTree CoefficientTree::generated(WaveletSpec spec, int max_level,
                                           std::shared_ptr<const CoefficientSource> source) {
  CoefficientTree tree(spec, max_level);
  tree.source_ = std::move(source);
  return tree;
}

void CoefficientTree::set(const WaveletIndex& idx, double value) {
  if (source_) throw Error("cannot assign into a generated coefficient tree; materialize it first");
  validate_index(spec_, idx);
  if (idx.kind == IndexKind::mother && idx.level > max_level_) throw LevelError("coefficient above truncation level");
  if (!std::isfinite(value)) throw ValidationError("coefficient must be finite");
  entries_[idx] = value;
}

double CoefficientTree::get(const WaveletIndex& idx) const {
  if (idx.kind == IndexKind::mother && idx.level > max_level_) return 0.0;
  if (source_) return source_->value(idx);
  auto it = entries_.find(idx);
  return it == entries_.end() ? 0.0 : it->second;
}

void CoefficientTree::for_each(const std::function<void(const WaveletIndex&, double)>& visit) const {
  if (!source_) {
    for (const auto& [idx, v] : entries_) visit(idx, v);
    return;
  }
  for (const auto& idx : enumerate_fathers(spec_)) visit(idx, source_->value(idx));
  for (int level = spec_.base_level; level <= max_level_; ++level) {
    for (const auto& idx : enumerate_mothers(spec_, level)) visit(idx, source_->value(idx));
  }
}

std::size_t CoefficientTree::index_count() const {
  if (!source_) return entries_.size();
  std::size_t total = enumerate_fathers(spec_).size();
  for (int level = spec_.base_level; level <= max_level_; ++level) total += mother_count(spec_.dim, level);
  return total;
}

CoefficientTree CoefficientTree::materialized() const {
  CoefficientTree out(spec_, max_level_);
  for_each([&](const WaveletIndex& idx, double v) { out.entries_[idx] = v; });
  return out;
}

double CoefficientTree::evaluate(std::span<const double> x) const {
  if (!source_ && entries_.empty()) {
    check_point(spec_, x);
    return 0.0;
  }
  double acc = 0.0;
  visit_active(spec_, max_level_, x, [&](const WaveletIndex& idx, double basis) { acc += get(idx) * basis; });
  return acc;
}

double besov_sup_norm(const CoefficientTree& tree, double alpha, const WaveletSpec& spec) {
  if (!(alpha > 0.0)) throw ValidationError("besov smoothness must be positive");
  const double d = spec.dim;
  double father_max = 0.0;
  double mother_max = 0.0;
  tree.for_each([&](const WaveletIndex& idx, double v) {
    if (idx.kind == IndexKind::father) {
      father_max = std::max(father_max, std::abs(v));
    } else {
      mother_max = std::max(mother_max, std::exp2(idx.level * (alpha + d / 2.0)) * std::abs(v));
    }
  });
  return std::exp2(spec.base_level * d / 2.0) * father_max + mother_max;
}

double inner_product_grid(const ScalarField& f, const ScalarField& g, int dim, int resolution) {
  if (resolution < 1) throw ValidationError("grid resolution must be positive");
  std::int64_t total = 1;
  for (int j = 0; j < dim; ++j) total *= resolution;
  std::vector<double> x(static_cast<std::size_t>(dim));
  double acc = 0.0;
  for (std::int64_t linear = 0; linear < total; ++linear) {
    std::int64_t rest = linear;
    for (int j = 0; j < dim; ++j) {
      x[static_cast<std::size_t>(j)] = (static_cast<double>(rest % resolution) + 0.5) / resolution;
      rest /= resolution;
    }
    acc += f(x) * g(x);
  }
  return acc / static_cast<double>(total);
}

}  // namespace icl
