#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace icl {

enum class WaveletFamily { haar, daubechies };

// A compactly supported orthonormal tensor-product wavelet basis on [0,1]^d.
// Haar is exact and closed-form; the Daubechies family is periodized and
// evaluated from cascade-algorithm tables.
struct WaveletSpec {
  WaveletFamily family = WaveletFamily::haar;
  int taps = 2;        // filter length; 2 for Haar, 4/6/8 for Daubechies
  int base_level = 0;  // coarsest level l0
  int dim = 1;

  static WaveletSpec haar(int dim = 1);
  static WaveletSpec daubechies(int taps, int dim = 1);

  void validate() const;
  std::string name() const;
  // Hoelder regularity of the mother wavelet; smoothness parameters of a
  // prior built on this basis must stay below it.
  double regularity() const;
  // Width of the mother wavelet support in units of 2^-l.
  int support_width() const { return taps - 1; }

  friend bool operator==(const WaveletSpec&, const WaveletSpec&) = default;
};

enum class IndexKind : std::uint8_t { father = 0, mother = 1 };

using Position = std::array<std::int64_t, 3>;

struct WaveletIndex {
  IndexKind kind = IndexKind::father;
  int level = 0;           // base level for fathers
  Position position{};     // k, one entry per active dimension
  std::uint8_t type = 0;   // tau as a bitmask: bit j set <=> tau_j = 1

  static WaveletIndex father(int base_level, Position k) { return {IndexKind::father, base_level, k, 0}; }
  static WaveletIndex mother(int level, Position k, std::uint8_t type) { return {IndexKind::mother, level, k, type}; }

  auto operator<=>(const WaveletIndex&) const = default;
};

void validate_index(const WaveletSpec& spec, const WaveletIndex& idx);

// 1-D periodized (or Haar) scaling function and mother wavelet at level l.
double scaling_1d(const WaveletSpec& spec, int level, std::int64_t k, double x);
double wavelet_1d(const WaveletSpec& spec, int level, std::int64_t k, double x);

double eval_basis(const WaveletSpec& spec, const WaveletIndex& idx, std::span<const double> x);

std::size_t mother_count(int dim, int level);
std::vector<WaveletIndex> enumerate_fathers(const WaveletSpec& spec);
std::vector<WaveletIndex> enumerate_mothers(const WaveletSpec& spec, int level);

// Calls visit(index, basis value) for every basis function with level <=
// max_level that may be nonzero at x.
void visit_active(const WaveletSpec& spec, int max_level, std::span<const double> x,
                  const std::function<void(const WaveletIndex&, double)>& visit);

// max_x sum_{gamma} |Psi_{l0,gamma}(x)| / 2^{l0 d/2}, measured on a dense grid.
double basis_overlap_constant(const WaveletSpec& spec);
// Same for the father functions.
double father_overlap_constant(const WaveletSpec& spec);

// Supplies coefficient values on demand (counter-based sampling).
class CoefficientSource {
 public:
  virtual ~CoefficientSource() = default;
  virtual double value(const WaveletIndex& idx) const = 0;
};

// Wavelet expansion truncated at max_level. Either holds explicit entries
// (absent entries are zero) or draws every coefficient from a source.
class CoefficientTree {
 public:
  CoefficientTree() = default;
  CoefficientTree(WaveletSpec spec, int max_level);
  static CoefficientTree generated(WaveletSpec spec, int max_level, std::shared_ptr<const CoefficientSource> source);

  const WaveletSpec& spec() const { return spec_; }
  int max_level() const { return max_level_; }
  bool is_generated() const { return source_ != nullptr; }
  const std::shared_ptr<const CoefficientSource>& source() const { return source_; }

  void set(const WaveletIndex& idx, double value);
  double get(const WaveletIndex& idx) const;
  const std::map<WaveletIndex, double>& entries() const { return entries_; }

  // Visits every coefficient: stored entries, or the full index set up to
  // max_level for generated trees.
  void for_each(const std::function<void(const WaveletIndex&, double)>& visit) const;
  std::size_t index_count() const;
  CoefficientTree materialized() const;

  double evaluate(std::span<const double> x) const;

 private:
  WaveletSpec spec_;
  int max_level_ = 0;
  std::map<WaveletIndex, double> entries_;
  std::shared_ptr<const CoefficientSource> source_;
};

// B^alpha_{inf,inf} coefficient norm restricted to the stored levels.
double besov_sup_norm(const CoefficientTree& tree, double alpha, const WaveletSpec& spec);

using ScalarField = std::function<double(std::span<const double>)>;

// Midpoint rule for int_{[0,1]^d} f g with `resolution` cells per axis.
double inner_product_grid(const ScalarField& f, const ScalarField& g, int dim, int resolution);

}  // namespace icl
