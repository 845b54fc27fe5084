#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "icl/prior.hpp"
#include "icl/rng.hpp"
#include "json.hpp"

namespace icl {

enum class DomainKind { unit_cube, unit_ball };

struct DomainSampler {
  DomainKind kind = DomainKind::unit_cube;
  int dim = 1;

  static DomainSampler cube(int d) { return {DomainKind::unit_cube, d}; }
  static DomainSampler ball(int d) { return {DomainKind::unit_ball, d}; }
  // Cube for plain Besov mixtures, ball for multi-index ones.
  static DomainSampler for_mixture(const MixtureSpec& mix);

  void sample(Rng& rng, std::span<double> out) const;
  std::vector<double> sample(Rng& rng) const;
};

struct NoiseSpec {
  double sigma = 0.25;
  void validate() const;
};

struct Episode {
  int d = 1;
  std::vector<double> xs;  // n rows of length d
  std::vector<double> ys;
  std::vector<double> query;
  double target = 0.0;      // noisy response at the query
  double g_at_query = 0.0;  // g(query)
  std::size_t component = 0;
  std::string component_label;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(ys.size()); }
  std::span<const double> x(int i) const { return {xs.data() + static_cast<std::size_t>(i) * d, static_cast<std::size_t>(d)}; }
};

Episode make_episode(const RandomFunction& g, int n, const NoiseSpec& noise, const DomainSampler& sampler, Rng& rng);

// Episode t is a pure function of (root_seed, t).
class PretrainingStream {
 public:
  PretrainingStream(MixtureSpec mix, std::uint64_t T, int n, NoiseSpec noise, DomainSampler sampler,
                    std::uint64_t root_seed, int n_min = 0);

  std::uint64_t size() const { return T_; }
  std::uint64_t episode_seed(std::uint64_t t) const { return derive_seed(root_seed_, t); }
  Episode episode(std::uint64_t t) const;
  // Same draw, also returning the sampled function.
  Episode episode(std::uint64_t t, RandomFunction* g) const;

  const MixtureSpec& mixture() const { return mix_; }
  int n() const { return n_; }
  const NoiseSpec& noise() const { return noise_; }
  const DomainSampler& sampler() const { return sampler_; }

  class iterator {
   public:
    iterator(const PretrainingStream* s, std::uint64_t t) : s_(s), t_(t) {}
    Episode operator*() const { return s_->episode(t_); }
    iterator& operator++() {
      ++t_;
      return *this;
    }
    bool operator!=(const iterator& o) const { return t_ != o.t_; }

   private:
    const PretrainingStream* s_;
    std::uint64_t t_;
  };
  iterator begin() const { return {this, 0}; }
  iterator end() const { return {this, T_}; }

 private:
  MixtureSpec mix_;
  std::uint64_t T_;
  int n_;
  int n_min_;
  NoiseSpec noise_;
  DomainSampler sampler_;
  std::uint64_t root_seed_;
};

nlohmann::json to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);
void write_jsonl(const std::filesystem::path& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_jsonl(const std::filesystem::path& path);

}  // namespace icl
