#include "icl/task.hpp"

#include <cmath>
#include <fstream>

#include "icl/errors.hpp"

namespace icl {

using nlohmann::json;

DomainSampler DomainSampler::for_mixture(const MixtureSpec& mix) {
  const auto& c = mix.components.front();
  return c.multi_index() ? ball(c.ambient_dim) : cube(c.besov.basis.dim);
}

void DomainSampler::sample(Rng& rng, std::span<double> out) const {
  if (static_cast<int>(out.size()) != dim) throw ShapeError("covariate buffer has the wrong dimension");
  if (kind == DomainKind::unit_cube) {
    for (auto& v : out) v = rng.uniform();
    return;
  }
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& v : out) {
      v = rng.normal();
      norm2 += v * v;
    }
  } while (norm2 == 0.0);
  const double radius = std::pow(rng.uniform(), 1.0 / dim);
  const double s = radius / std::sqrt(norm2);
  for (auto& v : out) v *= s;
}

std::vector<double> DomainSampler::sample(Rng& rng) const {
  std::vector<double> x(static_cast<std::size_t>(dim));
  sample(rng, x);
  return x;
}

void NoiseSpec::validate() const {
  if (!std::isfinite(sigma) || sigma < 0.0) throw ValidationError("noise sigma must be finite and nonnegative");
}

Episode make_episode(const RandomFunction& g, int n, const NoiseSpec& noise, const DomainSampler& sampler, Rng& rng) {
  if (n < 1) throw ValidationError("episode needs n >= 1");
  noise.validate();
  if (sampler.dim != g.input_dim()) throw ShapeError("sampler dimension does not match the function");
  Episode e;
  e.d = sampler.dim;
  e.xs.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(e.d));
  e.ys.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::span<double> xi(e.xs.data() + static_cast<std::size_t>(i) * e.d, static_cast<std::size_t>(e.d));
    sampler.sample(rng, xi);
  }
  e.query = sampler.sample(rng);
  for (int i = 0; i < n; ++i) {
    const double xi = noise.sigma > 0.0 ? noise.sigma * rng.normal() : 0.0;
    e.ys[static_cast<std::size_t>(i)] = g(e.x(i)) + xi;
  }
  e.g_at_query = g(e.query);
  e.target = e.g_at_query + (noise.sigma > 0.0 ? noise.sigma * rng.normal() : 0.0);
  return e;
}

PretrainingStream::PretrainingStream(MixtureSpec mix, std::uint64_t T, int n, NoiseSpec noise, DomainSampler sampler,
                                     std::uint64_t root_seed, int n_min)
    : mix_(std::move(mix)), T_(T), n_(n), n_min_(n_min), noise_(noise), sampler_(sampler), root_seed_(root_seed) {
  mix_.validate();
  noise_.validate();
  if (T_ < 1) throw ValidationError("corpus size T must be at least 1");
  if (n_ < 1) throw ValidationError("context length n must be at least 1");
  if (n_min_ > n_) throw ValidationError("minimum context length exceeds n");
  if (sampler_.dim != mix_.input_dim()) throw ValidationError("domain dimension does not match the prior");
}

Episode PretrainingStream::episode(std::uint64_t t) const { return episode(t, nullptr); }

Episode PretrainingStream::episode(std::uint64_t t, RandomFunction* g) const {
  const std::uint64_t seed = episode_seed(t);
  Rng rng(seed);
  auto [label, f] = sample_mixture(mix_, rng);
  int n = n_;
  if (n_min_ > 0) n = n_min_ + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_ - n_min_ + 1)));
  Episode e = make_episode(f, n, noise_, sampler_, rng);
  e.component = label;
  e.component_label = mix_.components[label].label;
  e.seed = seed;
  if (g) *g = std::move(f);
  return e;
}

json to_json(const Episode& e) {
  json xs = json::array();
  for (int i = 0; i < e.n(); ++i) {
    const auto row = e.x(i);
    xs.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return json{{"d", e.d},
              {"xs", xs},
              {"ys", e.ys},
              {"query", e.query},
              {"target", e.target},
              {"g_at_query", e.g_at_query},
              {"component", e.component},
              {"component_label", e.component_label},
              {"seed", e.seed}};
}

Episode episode_from_json(const json& j) {
  Episode e;
  e.d = j.at("d").get<int>();
  for (const auto& row : j.at("xs")) {
    if (static_cast<int>(row.size()) != e.d) throw ValidationError("episode covariate has the wrong dimension");
    for (const auto& v : row) e.xs.push_back(v.get<double>());
  }
  e.ys = j.at("ys").get<std::vector<double>>();
  if (e.xs.size() != e.ys.size() * static_cast<std::size_t>(e.d)) throw ValidationError("episode xs and ys differ in length");
  e.query = j.at("query").get<std::vector<double>>();
  e.target = j.at("target").get<double>();
  e.g_at_query = j.at("g_at_query").get<double>();
  e.component = j.value("component", std::size_t{0});
  e.component_label = j.value("component_label", std::string());
  e.seed = j.value("seed", std::uint64_t{0});
  return e;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Episode>& episodes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open " + path.string() + " for writing");
  for (const auto& e : episodes) out << to_json(e).dump() << '\n';
  if (!out) throw FileError("write failed for " + path.string());
}

std::vector<Episode> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  std::vector<Episode> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(episode_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace icl
