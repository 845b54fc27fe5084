#include "icl/tree_posterior.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <queue>

#include "icl/errors.hpp"
#include "icl/parallel.hpp"

namespace icl {
namespace {

using Message = HaarTreeOracle::Message;

constexpr std::array<double, 8> kGaussNodes{-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                                            -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
                                            0.7966664774136267,  0.9602898564975363};
constexpr std::array<double, 8> kGaussWeights{0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                                              0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                                              0.2223810344533745, 0.1012285362903763};

// Piecewise-linear value at a fractional global index; zero off the window.
inline double interp(const Message& m, double s) {
  if (m.unit) return 1.0;
  const double local = s - m.lo;
  if (local < 0.0 || local > static_cast<double>(m.v.size() - 1)) return 0.0;
  const auto i = static_cast<std::size_t>(local);
  if (i + 1 >= m.v.size()) return m.v.back();
  const double u = local - static_cast<double>(i);
  return m.v[i] + u * (m.v[i + 1] - m.v[i]);
}

inline double at(const Message& m, int j) {
  if (m.unit) return 1.0;
  const int local = j - m.lo;
  if (local < 0 || local >= static_cast<int>(m.v.size())) return 0.0;
  return m.v[static_cast<std::size_t>(local)];
}

// Cumulative integrals of the piecewise-linear interpolant, in index units.
struct Cumulative {
  std::vector<double> a;  // int_0^i m
  std::vector<double> b;  // int_0^i s m(s) ds
  const std::vector<double>* v;

  explicit Cumulative(const std::vector<double>& values) : a(values.size()), b(values.size()), v(&values) {
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const double m0 = values[i];
      const double dm = values[i + 1] - m0;
      a[i + 1] = a[i] + m0 + 0.5 * dm;
      b[i + 1] = b[i] + static_cast<double>(i) * (m0 + 0.5 * dm) + (0.5 * m0 + dm / 3.0);
    }
  }

  void eval(double s, double& A, double& B) const {
    const auto& m = *v;
    const double last = static_cast<double>(m.size() - 1);
    if (s <= 0.0) {
      A = 0.0;
      B = 0.0;
      return;
    }
    if (s >= last) {
      A = a.back();
      B = b.back();
      return;
    }
    const auto i = static_cast<std::size_t>(s);
    const double u = s - static_cast<double>(i);
    const double m0 = m[i];
    const double dm = m[i + 1] - m0;
    const double p0 = m0 * u + 0.5 * dm * u * u;
    A = a[i] + p0;
    B = b[i] + static_cast<double>(i) * p0 + (0.5 * m0 * u * u + dm * u * u * u / 3.0);
  }
};

// result(x) = int p(d) m(x + d) dd, p(d) = (1 + e d/w)/(2w) on [-w, w],
// with everything in index units (omega = w / delta).
Message convolve_impl(const Message& m, double omega, double e, int grid) {
  Message out;
  out.log_scale = m.log_scale;
  const int reach = static_cast<int>(std::ceil(omega));
  const int lo = std::max(0, m.lo - reach);
  const int hi = std::min(grid - 1, m.hi() + reach);
  if (hi < lo) {
    out.lo = 0;
    return out;
  }
  out.lo = lo;
  out.v.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
  Cumulative cum(m.v);
  for (int j = lo; j <= hi; ++j) {
    const double s = static_cast<double>(j - m.lo);
    double Ap, Bp, Am, Bm;
    cum.eval(s + omega, Ap, Bp);
    cum.eval(s - omega, Am, Bm);
    const double dA = Ap - Am;
    double r = dA / (2.0 * omega);
    if (e != 0.0) r += e / (2.0 * omega * omega) * ((Bp - Bm) - s * dA);
    out.v[static_cast<std::size_t>(j - lo)] = std::max(0.0, r);
  }
  return out;
}

}  // namespace

struct HaarTreeOracle::Points {
  std::vector<std::uint64_t> leaf;
  std::vector<double> y;
};

HaarTreeOracle::HaarTreeOracle(const BesovPriorSpec& spec, double sigma, TreeOracleOptions opts)
    : spec_(spec), sigma_(sigma), opts_(opts) {
  spec_.validate();
  if (spec_.basis.family != WaveletFamily::haar || spec_.basis.dim != 1) {
    throw UnsupportedError("tree oracle needs a one-dimensional Haar prior");
  }
  if (!(sigma_ > 0.0)) throw LikelihoodError("tree oracle needs sigma > 0");
  if (!(opts_.delta_over_sigma > 0.0)) throw ValidationError("grid spacing must be positive");

  levels_ = spec_.max_level + 1;
  w_.resize(static_cast<std::size_t>(levels_));
  double reach = spec_.C0;
  for (int l = 0; l < levels_; ++l) {
    w_[static_cast<std::size_t>(l)] = spec_.C0 * std::exp2(-l * spec_.alpha);
    reach += w_[static_cast<std::size_t>(l)];
  }
  father_scale_ = spec_.C0;
  for (const auto& [idx, eps] : spec_.law.tilts) {
    if (idx.kind == IndexKind::mother) tilt_depth_ = std::max(tilt_depth_, idx.level + 1);
  }
  tilt_depth_ = std::min(tilt_depth_, levels_);

  // Put the father box edges on grid nodes.
  const double cells = std::ceil(father_scale_ / (opts_.delta_over_sigma * sigma_));
  delta_ = father_scale_ / cells;
  const int half = static_cast<int>(std::ceil(reach / delta_)) + 2;
  grid_ = 2 * half + 1;
  h0_ = -half * delta_;

  // z = y - h spans at most the state range plus a generous noise margin.
  const int zhalf = static_cast<int>(std::ceil((2.0 * reach + 14.0 * sigma_) / delta_)) + 2;
  zgrid_ = 2 * zhalf + 1;
  z0_ = -zhalf * delta_;
  log_q_.assign(static_cast<std::size_t>(levels_ + 1), {});
  Message q;
  q.lo = 0;
  q.v.resize(static_cast<std::size_t>(zgrid_));
  for (int i = 0; i < zgrid_; ++i) {
    const double z = z0_ + delta_ * i;
    q.v[static_cast<std::size_t>(i)] = std::exp(-z * z / (2.0 * sigma_ * sigma_));
  }
  auto store = [&](int level, const Message& m) {
    auto& t = log_q_[static_cast<std::size_t>(level)];
    t.assign(static_cast<std::size_t>(zgrid_), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < m.v.size(); ++i) {
      const int g = m.lo + static_cast<int>(i);
      if (g >= 0 && g < zgrid_ && m.v[i] > 0.0) t[static_cast<std::size_t>(g)] = std::log(m.v[i]) + m.log_scale;
    }
  };
  store(levels_, q);
  for (int l = levels_ - 1; l >= tilt_depth_; --l) {
    q = convolve_impl(q, w_[static_cast<std::size_t>(l)] / delta_, 0.0, zgrid_);
    normalize(q);
    store(l, q);
  }
}

double HaarTreeOracle::tilt(int level, std::uint64_t cell) const {
  if (level >= tilt_depth_) return 0.0;
  return spec_.law.epsilon(WaveletIndex::mother(level, {static_cast<std::int64_t>(cell), 0, 0}, 1));
}

double HaarTreeOracle::father_tilt() const { return spec_.law.epsilon(WaveletIndex::father(0, {0, 0, 0})); }

void HaarTreeOracle::normalize(Message& m) const {
  if (m.unit) return;
  double top = 0.0;
  for (double x : m.v) top = std::max(top, x);
  if (!(top > 0.0) || !std::isfinite(top)) throw ConditioningError("tree message vanished on the state grid");
  const double cut = opts_.trim;
  std::size_t first = 0;
  std::size_t last = m.v.size();
  const double inv = 1.0 / top;
  for (auto& x : m.v) x *= inv;
  while (first < last && m.v[first] < cut) ++first;
  while (last > first && m.v[last - 1] < cut) --last;
  if (first > 0 || last < m.v.size()) {
    m.v = std::vector<double>(m.v.begin() + static_cast<std::ptrdiff_t>(first),
                              m.v.begin() + static_cast<std::ptrdiff_t>(last));
    m.lo += static_cast<int>(first);
  }
  m.log_scale += std::log(top);
}

Message HaarTreeOracle::convolve(const Message& m, double w, double e) const {
  Message out = convolve_impl(m, w / delta_, e, grid_);
  normalize(out);
  return out;
}

Message HaarTreeOracle::split(const Message& a, const Message& b, double w, double e) const {
  const double omega = w / delta_;
  Message out;
  out.log_scale = a.log_scale + b.log_scale;
  const int reach = static_cast<int>(std::ceil(omega));
  int lo = std::max({0, a.lo - reach, b.lo - reach, (a.lo + b.lo) / 2 - 1});
  int hi = std::min({grid_ - 1, a.hi() + reach, b.hi() + reach, (a.hi() + b.hi()) / 2 + 1});
  if (hi < lo) throw ConditioningError("disjoint messages at a split");
  out.lo = lo;
  out.v.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
  if (omega >= 4.0) {
    const int I = static_cast<int>(std::floor(omega));
    const double frac = omega - I;
    const double norm = 1.0 / (2.0 * omega);
    for (int j = lo; j <= hi; ++j) {
      const int i_lo = std::max({-I, a.lo - j, j - b.hi()});
      const int i_hi = std::min({I, a.hi() - j, j - b.lo});
      double acc = 0.0;
      for (int i = i_lo; i <= i_hi; ++i) {
        double term = a.v[static_cast<std::size_t>(j + i - a.lo)] * b.v[static_cast<std::size_t>(j - i - b.lo)];
        if (e != 0.0) term *= 1.0 + e * i / omega;
        if (i == -I || i == I) term *= 0.5;
        acc += term;
      }
      if (frac > 0.0) {
        for (int sgn = -1; sgn <= 1; sgn += 2) {
          const double end = at(a, j + sgn * I) * at(b, j - sgn * I) * (1.0 + e * sgn * I / omega);
          const double tip =
              interp(a, j + sgn * omega) * interp(b, j - sgn * omega) * (1.0 + e * sgn);
          acc += 0.5 * frac * (end + tip);
        }
      }
      out.v[static_cast<std::size_t>(j - lo)] = std::max(0.0, acc * norm);
    }
  } else {
    for (int j = lo; j <= hi; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kGaussNodes.size(); ++k) {
        const double x = kGaussNodes[k];
        acc += kGaussWeights[k] * (1.0 + e * x) * interp(a, j + omega * x) * interp(b, j - omega * x);
      }
      out.v[static_cast<std::size_t>(j - lo)] = std::max(0.0, 0.5 * acc);
    }
  }
  normalize(out);
  return out;
}

Message HaarTreeOracle::descend(const Message& out_msg, const Message& sib, double w, double e) const {
  if (sib.unit) {
    // int p(d) out(h - d) dd = int p(-d) out(h + d) dd
    return convolve(out_msg, w, -e);
  }
  const double omega = w / delta_;
  Message out;
  out.log_scale = out_msg.log_scale + sib.log_scale;
  const int reach = static_cast<int>(std::ceil(omega));
  int lo = std::max({0, out_msg.lo - reach, 2 * out_msg.lo - sib.hi() - 1});
  int hi = std::min({grid_ - 1, out_msg.hi() + reach, 2 * out_msg.hi() - sib.lo + 1});
  if (hi < lo) throw ConditioningError("disjoint messages on the query path");
  out.lo = lo;
  out.v.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
  if (omega >= 4.0) {
    const int I = static_cast<int>(std::floor(omega));
    const double frac = omega - I;
    const double norm = 1.0 / (2.0 * omega);
    for (int j = lo; j <= hi; ++j) {
      // j - i in out window, j - 2i in sib window.
      int i_lo = std::max(-I, j - out_msg.hi());
      int i_hi = std::min(I, j - out_msg.lo);
      // ceil/floor of (j - sib.hi)/2 and (j - sib.lo)/2
      const int s_lo = static_cast<int>(std::ceil((j - sib.hi()) / 2.0));
      const int s_hi = static_cast<int>(std::floor((j - sib.lo) / 2.0));
      i_lo = std::max(i_lo, s_lo);
      i_hi = std::min(i_hi, s_hi);
      double acc = 0.0;
      for (int i = i_lo; i <= i_hi; ++i) {
        double term = out_msg.v[static_cast<std::size_t>(j - i - out_msg.lo)] *
                      sib.v[static_cast<std::size_t>(j - 2 * i - sib.lo)];
        if (e != 0.0) term *= 1.0 + e * i / omega;
        if (i == -I || i == I) term *= 0.5;
        acc += term;
      }
      if (frac > 0.0) {
        for (int sgn = -1; sgn <= 1; sgn += 2) {
          const double end = at(out_msg, j - sgn * I) * at(sib, j - 2 * sgn * I) * (1.0 + e * sgn * I / omega);
          const double tip = interp(out_msg, j - sgn * omega) * interp(sib, j - 2.0 * sgn * omega) * (1.0 + e * sgn);
          acc += 0.5 * frac * (end + tip);
        }
      }
      out.v[static_cast<std::size_t>(j - lo)] = std::max(0.0, acc * norm);
    }
  } else {
    for (int j = lo; j <= hi; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kGaussNodes.size(); ++k) {
        const double x = kGaussNodes[k];
        acc += kGaussWeights[k] * (1.0 + e * x) * interp(out_msg, j - omega * x) * interp(sib, j - 2.0 * omega * x);
      }
      out.v[static_cast<std::size_t>(j - lo)] = std::max(0.0, 0.5 * acc);
    }
  }
  normalize(out);
  return out;
}

Message HaarTreeOracle::single_point(double y, int level) const {
  const auto& table = log_q_[static_cast<std::size_t>(level)];
  // z index of h_j is c - j.
  const double c = (y - h0_ - z0_) / delta_;
  const double base = std::floor(c);
  const double frac = c - base;
  const int cb = static_cast<int>(base);
  int lo = std::max(0, cb - (zgrid_ - 1) + 1);
  int hi = std::min(grid_ - 1, cb);
  Message out;
  if (hi < lo) throw ConditioningError("observation outside the likelihood table");
  out.lo = lo;
  out.v.resize(static_cast<std::size_t>(hi - lo + 1));
  double top = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(out.v.size());
  for (int j = lo; j <= hi; ++j) {
    const int z = cb - j;  // log q at c - j = z + frac, between z and z + 1
    const double l0 = table[static_cast<std::size_t>(z)];
    const double l1 = table[static_cast<std::size_t>(z + 1)];
    double l;
    if (!std::isfinite(l0) || !std::isfinite(l1)) {
      l = -std::numeric_limits<double>::infinity();
    } else {
      l = l0 + frac * (l1 - l0);
    }
    logs[static_cast<std::size_t>(j - lo)] = l;
    top = std::max(top, l);
  }
  if (!std::isfinite(top)) throw ConditioningError("observation has zero likelihood under the prior");
  for (std::size_t i = 0; i < logs.size(); ++i) out.v[i] = std::exp(logs[i] - top);
  out.log_scale = top;
  normalize(out);
  return out;
}

Message HaarTreeOracle::leaf_product(const Points& pts, std::size_t begin, std::size_t end) const {
  double sum = 0.0;
  double sum2 = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    sum += pts.y[i];
    sum2 += pts.y[i] * pts.y[i];
  }
  const double k = static_cast<double>(end - begin);
  const double ybar = sum / k;
  const double prec = k / (2.0 * sigma_ * sigma_);
  Message out;
  out.lo = 0;
  out.v.resize(static_cast<std::size_t>(grid_));
  for (int j = 0; j < grid_; ++j) {
    const double d = h_at(j) - ybar;
    out.v[static_cast<std::size_t>(j)] = std::exp(-prec * d * d);
  }
  out.log_scale = -(sum2 - k * ybar * ybar) / (2.0 * sigma_ * sigma_);
  normalize(out);
  return out;
}

Message HaarTreeOracle::upward(const Points& pts, int level, std::uint64_t cell, std::size_t begin,
                               std::size_t end) const {
  if (end - begin == 1 && level >= tilt_depth_) return single_point(pts.y[begin], level);
  if (level == levels_) return leaf_product(pts, begin, end);
  const int shift = levels_ - (level + 1);
  const auto mid_it = std::partition_point(pts.leaf.begin() + static_cast<std::ptrdiff_t>(begin),
                                           pts.leaf.begin() + static_cast<std::ptrdiff_t>(end),
                                           [&](std::uint64_t c) { return ((c >> shift) & 1u) == 0; });
  const auto mid = static_cast<std::size_t>(mid_it - pts.leaf.begin());
  const double w = w_[static_cast<std::size_t>(level)];
  const double e = tilt(level, cell);
  if (mid > begin && mid < end) {
    const Message a = upward(pts, level + 1, 2 * cell, begin, mid);
    const Message b = upward(pts, level + 1, 2 * cell + 1, mid, end);
    return split(a, b, w, e);
  }
  if (mid == end) return convolve(upward(pts, level + 1, 2 * cell, begin, end), w, e);
  return convolve(upward(pts, level + 1, 2 * cell + 1, begin, end), w, -e);
}

TreeOracleResult HaarTreeOracle::posterior(std::span<const double> t, std::span<const double> y,
                                           double t_query) const {
  if (t.size() != y.size()) throw ShapeError("tree oracle inputs differ in length");
  const std::uint64_t leaves = std::uint64_t{1} << levels_;
  auto leaf_of = [&](double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("tree oracle point outside [0,1]");
    const auto c = static_cast<std::uint64_t>(std::ldexp(x, levels_));
    return std::min(c, leaves - 1);
  };
  Points pts;
  {
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<std::uint64_t> cells(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) cells[i] = leaf_of(t[i]);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (cells[a] != cells[b]) return cells[a] < cells[b];
      return y[a] < y[b];
    });
    pts.leaf.reserve(t.size());
    pts.y.reserve(t.size());
    for (std::size_t i : order) {
      pts.leaf.push_back(cells[i]);
      pts.y.push_back(y[i]);
    }
  }
  const std::uint64_t qleaf = leaf_of(t_query);

  // Root state h = C0 a.
  Message out;
  {
    const int half = static_cast<int>(std::lround(father_scale_ / delta_));
    const int centre = static_cast<int>(std::lround(-h0_ / delta_));
    const double e = father_tilt();
    out.lo = centre - half;
    out.v.resize(static_cast<std::size_t>(2 * half + 1));
    for (int j = -half; j <= half; ++j) {
      const double h = j * delta_;
      out.v[static_cast<std::size_t>(j + half)] = (1.0 + e * h / father_scale_) / (2.0 * father_scale_);
    }
    normalize(out);
  }

  std::size_t begin = 0;
  std::size_t end = pts.leaf.size();
  std::uint64_t cell = 0;
  for (int level = 0; level < levels_; ++level) {
    const int shift = levels_ - (level + 1);
    const auto mid_it = std::partition_point(pts.leaf.begin() + static_cast<std::ptrdiff_t>(begin),
                                             pts.leaf.begin() + static_cast<std::ptrdiff_t>(end),
                                             [&](std::uint64_t c) { return ((c >> shift) & 1u) == 0; });
    const auto mid = static_cast<std::size_t>(mid_it - pts.leaf.begin());
    const bool right = ((qleaf >> shift) & 1u) != 0;
    const std::size_t qb = right ? mid : begin;
    const std::size_t qe = right ? end : mid;
    const std::size_t sb = right ? begin : mid;
    const std::size_t se = right ? mid : end;
    const std::uint64_t qcell = 2 * cell + (right ? 1 : 0);
    const std::uint64_t scell = 2 * cell + (right ? 0 : 1);
    Message sib;
    if (sb == se) {
      sib.unit = true;
    } else {
      sib = upward(pts, level + 1, scell, sb, se);
    }
    const double e = tilt(level, cell);
    out = descend(out, sib, w_[static_cast<std::size_t>(level)], right ? -e : e);
    cell = qcell;
    begin = qb;
    end = qe;
    if (begin == end) {
      // No data below: remaining increments keep their prior means.
      double tail = 0.0;
      for (int l = level + 1; l < levels_ && l < tilt_depth_; ++l) {
        const int sh = levels_ - (l + 1);
        const bool r = ((qleaf >> sh) & 1u) != 0;
        const std::uint64_t c = qleaf >> (levels_ - l);
        tail += (r ? -1.0 : 1.0) * w_[static_cast<std::size_t>(l)] * tilt(l, c) / 3.0;
      }
      Cumulative cum(out.v);
      const double mass = cum.a.back();
      if (!(mass > 0.0) || !std::isfinite(mass)) throw ConditioningError("posterior mass vanished on the grid");
      const double first = (h_at(out.lo) * cum.a.back() + delta_ * cum.b.back());
      return {first / mass + tail, std::log(mass * delta_) + out.log_scale};
    }
  }
  // The query shares its finest cell with data.
  Message leaf = leaf_product(pts, begin, end);
  Message prod;
  prod.lo = std::max(out.lo, leaf.lo);
  const int hi = std::min(out.hi(), leaf.hi());
  if (hi < prod.lo) throw ConditioningError("disjoint messages at the query leaf");
  prod.v.resize(static_cast<std::size_t>(hi - prod.lo + 1));
  for (int j = prod.lo; j <= hi; ++j) prod.v[static_cast<std::size_t>(j - prod.lo)] = at(out, j) * at(leaf, j);
  prod.log_scale = out.log_scale + leaf.log_scale;
  normalize(prod);
  Cumulative cum(prod.v);
  const double mass = cum.a.back();
  if (!(mass > 0.0) || !std::isfinite(mass)) throw ConditioningError("posterior mass vanished on the grid");
  const double first = (h_at(prod.lo) * cum.a.back() + delta_ * cum.b.back());
  return {first / mass, std::log(mass * delta_) + prod.log_scale};
}

// ---------------------------------------------------------------- mixture oracle

bool BayesOracle::supports(const MixtureSpec& prior) {
  for (const auto& c : prior.components) {
    if (c.besov.basis.family != WaveletFamily::haar || c.besov.basis.dim != 1) return false;
    if (c.multi_index() && c.ambient_dim > 3) return false;
  }
  return true;
}

BayesOracle::BayesOracle(const MixtureSpec& prior, double sigma, BayesOracleOptions opts)
    : prior_(prior), sigma_(sigma), opts_(opts) {
  prior_.validate();
  if (!supports(prior_)) {
    throw UnsupportedError("exact oracle supports Haar priors with base dimension 1 and ambient dimension <= 3");
  }
  for (const auto& c : prior_.components) trees_.emplace_back(c.besov, sigma_, opts_.tree);
  R_ = sup_norm_bound(prior_);
}

namespace {

double log_sum_exp(const std::vector<double>& v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace

TreeOracleResult BayesOracle::multi_index(std::size_t c, const Episode& ex, std::span<const double> query) const {
  const auto& comp = prior_.components[c];
  const int d = comp.ambient_dim;
  const bool symmetric = comp.besov.law.is_uniform();
  const int n = ex.n();
  std::vector<double> t(static_cast<std::size_t>(n));

  auto eval_dir = [&](const std::array<double, 3>& u) {
    for (int i = 0; i < n; ++i) {
      const auto x = ex.x(i);
      double s = 0.0;
      for (int k = 0; k < d; ++k) s += u[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(k)];
      t[static_cast<std::size_t>(i)] = std::clamp((s + 1.0) / 2.0, 0.0, 1.0);
    }
    double sq = 0.0;
    for (int k = 0; k < d; ++k) sq += u[static_cast<std::size_t>(k)] * query[static_cast<std::size_t>(k)];
    // Data this far from the direction underflows the grid: zero evidence.
    const TreeOracleResult none{0.0, -std::numeric_limits<double>::infinity()};
    try {
      const auto r = trees_[c].posterior(t, ex.ys, std::clamp((sq + 1.0) / 2.0, 0.0, 1.0));
      return std::isfinite(r.log_evidence) && std::isfinite(r.mean) ? r : none;
    } catch (const ConditioningError&) {
      return none;
    }
  };

  if (d == 1) {
    const auto a = eval_dir({1.0, 0.0, 0.0});
    const auto b = eval_dir({-1.0, 0.0, 0.0});
    const double top = std::max(a.log_evidence, b.log_evidence);
    const double wa = std::exp(a.log_evidence - top);
    const double wb = std::exp(b.log_evidence - top);
    return {(wa * a.mean + wb * b.mean) / (wa + wb), top + std::log((wa + wb) / 2.0)};
  }

  // Cells in a parameter box with uniform direction measure:
  // d = 2: angle in [0, span); d = 3: (cos theta, phi) in [zlo, 1] x [0, 2 pi).
  struct Cell {
    std::array<double, 2> lo;
    std::array<double, 2> hi;
    TreeOracleResult r;
    double log_mass;
  };
  const int k = d == 2 ? 1 : 2;
  const double two_pi = 2.0 * std::numbers::pi;
  std::array<double, 2> box_lo{0.0, 0.0};
  std::array<double, 2> box_hi{0.0, 0.0};
  if (d == 2) {
    box_hi[0] = symmetric ? std::numbers::pi : two_pi;
  } else {
    box_lo[0] = symmetric ? 0.0 : -1.0;
    box_hi[0] = 1.0;
    box_hi[1] = two_pi;
  }
  auto direction = [&](const std::array<double, 2>& p) {
    std::array<double, 3> u{0.0, 0.0, 0.0};
    if (d == 2) {
      u[0] = std::cos(p[0]);
      u[1] = std::sin(p[0]);
    } else {
      const double z = p[0];
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      u[0] = r * std::cos(p[1]);
      u[1] = r * std::sin(p[1]);
      u[2] = z;
    }
    return u;
  };
  auto area = [&](const Cell& cell) {
    double a = 1.0;
    for (int i = 0; i < k; ++i) a *= cell.hi[static_cast<std::size_t>(i)] - cell.lo[static_cast<std::size_t>(i)];
    return a;
  };
  auto evaluate = [&](Cell& cell) {
    std::array<double, 2> mid{};
    for (int i = 0; i < k; ++i) {
      mid[static_cast<std::size_t>(i)] = 0.5 * (cell.lo[static_cast<std::size_t>(i)] + cell.hi[static_cast<std::size_t>(i)]);
    }
    cell.r = eval_dir(direction(mid));
    cell.log_mass = std::log(area(cell)) + cell.r.log_evidence;
  };

  std::vector<Cell> cells;
  const int nz = opts_.directions.initial_z;
  const int nphi = d == 2 ? 1 : opts_.directions.initial_phi;
  const int first_axis = d == 2 ? opts_.directions.initial_angle : nz;
  for (int a = 0; a < first_axis; ++a) {
    for (int b = 0; b < nphi; ++b) {
      Cell cell;
      cell.lo[0] = box_lo[0] + (box_hi[0] - box_lo[0]) * a / first_axis;
      cell.hi[0] = box_lo[0] + (box_hi[0] - box_lo[0]) * (a + 1) / first_axis;
      cell.lo[1] = box_lo[1] + (box_hi[1] - box_lo[1]) * b / nphi;
      cell.hi[1] = box_lo[1] + (box_hi[1] - box_lo[1]) * (b + 1) / nphi;
      evaluate(cell);
      cells.push_back(cell);
    }
  }
  for (int step = 0; step < opts_.directions.refinements; ++step) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < cells.size(); ++i) {
      if (cells[i].log_mass > cells[best].log_mass) best = i;
    }
    const Cell parent = cells[best];
    std::vector<Cell> children;
    const int splits_b = k == 2 ? 3 : 1;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < splits_b; ++b) {
        Cell child;
        child.lo[0] = parent.lo[0] + (parent.hi[0] - parent.lo[0]) * a / 3.0;
        child.hi[0] = parent.lo[0] + (parent.hi[0] - parent.lo[0]) * (a + 1) / 3.0;
        child.lo[1] = parent.lo[1] + (parent.hi[1] - parent.lo[1]) * b / splits_b;
        child.hi[1] = parent.lo[1] + (parent.hi[1] - parent.lo[1]) * (b + 1) / splits_b;
        const bool centre = a == 1 && (k == 1 || b == 1);
        if (centre) {
          child.r = parent.r;
          child.log_mass = std::log(area(child)) + child.r.log_evidence;
        } else {
          evaluate(child);
        }
        children.push_back(child);
      }
    }
    cells[best] = children.front();
    cells.insert(cells.end(), children.begin() + 1, children.end());
  }

  std::vector<double> lm(cells.size());
  double total_area = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    lm[i] = cells[i].log_mass;
    total_area += area(cells[i]);
  }
  const double lz = log_sum_exp(lm);
  if (!std::isfinite(lz)) throw ConditioningError("no direction carries evidence");
  double mean = 0.0;
  for (std::size_t i = 0; i < cells.size(); ++i) mean += std::exp(lm[i] - lz) * cells[i].r.mean;
  return {mean, lz - std::log(total_area)};
}

std::vector<TreeOracleResult> BayesOracle::components(const Episode& examples, std::span<const double> query) const {
  std::vector<TreeOracleResult> out(prior_.components.size());
  std::vector<double> t(static_cast<std::size_t>(examples.n()));
  bool any = false;
  for (std::size_t c = 0; c < prior_.components.size(); ++c) {
    try {
      if (prior_.components[c].multi_index()) {
        out[c] = multi_index(c, examples, query);
      } else {
        for (int i = 0; i < examples.n(); ++i) t[static_cast<std::size_t>(i)] = examples.x(i)[0];
        out[c] = trees_[c].posterior(t, examples.ys, query[0]);
      }
      any = true;
    } catch (const ConditioningError&) {
      // Data outside what this component can produce on its grid.
      if (prior_.components.size() == 1) throw;
      out[c] = {0.0, -std::numeric_limits<double>::infinity()};
    }
  }
  if (!any) throw ConditioningError("no mixture component carries evidence");
  return out;
}

double BayesOracle::predict(const Episode& examples, std::span<const double> query) const {
  const auto parts = components(examples, query);
  std::vector<double> lw(parts.size());
  for (std::size_t c = 0; c < parts.size(); ++c) lw[c] = std::log(prior_.weights[c]) + parts[c].log_evidence;
  const double lz = log_sum_exp(lw);
  double mean = 0.0;
  for (std::size_t c = 0; c < parts.size(); ++c) mean += std::exp(lw[c] - lz) * parts[c].mean;
  return std::clamp(mean, -R_, R_);
}

}  // namespace icl
