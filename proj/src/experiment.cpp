#include "icl/experiment.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "icl/errors.hpp"

namespace icl {

using json = nlohmann::json;

namespace {

// Collects every problem instead of stopping at the first one.
class Issues {
 public:
  void add(const std::string& path, const std::string& msg) { list_.push_back(path + ": " + msg); }
  bool empty() const { return list_.empty(); }
  std::size_t size() const { return list_.size(); }
  std::string joined() const {
    std::string s = std::to_string(list_.size()) + " configuration error(s):";
    for (const auto& l : list_) s += "\n  " + l;
    return s;
  }

  // Flags keys the schema does not know.
  void known(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) return;
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (!ok.count(it.key())) add(join(path, it.key()), "unknown key");
    }
  }

  template <class T>
  T get(const json& j, const std::string& path, const char* key, T fallback, bool required = false) {
    if (!j.is_object() || !j.contains(key)) {
      if (required) add(join(path, key), "required key is missing");
      return fallback;
    }
    const json& v = j.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)
            throw std::invalid_argument("expected a nonnegative integer");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      return v.get<T>();
    } catch (const std::exception& e) {
      add(join(path, key), e.what());
      return fallback;
    }
  }

  static std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

  // Runs a validator and records its message under path.
  template <class F>
  void check(const std::string& path, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      add(path, e.what());
    } catch (const json::exception& e) {
      add(path, e.what());
    }
  }

 private:
  std::vector<std::string> list_;
};

MixtureComponent parse_component(const json& j, const std::string& path, double sigma, Issues& is) {
  const std::size_t before = is.size();
  is.known(j, path, {"label", "alpha", "C0", "L_max", "basis", "ambient_dim", "law"});
  MixtureComponent c;
  c.label = is.get<std::string>(j, path, "label", "", true);
  c.besov.alpha = is.get<double>(j, path, "alpha", 0.5, true);
  if (!(c.besov.alpha > 0.0)) is.add(path + ".alpha", "must be positive");
  c.besov.C0 = is.get<double>(j, path, "C0", 1.0);
  if (!(c.besov.C0 > 0.0)) is.add(path + ".C0", "must be positive");
  if (is.size() > before) return c;
  c.ambient_dim = is.get<int>(j, path, "ambient_dim", 0);
  if (j.contains("basis")) {
    is.known(j["basis"], path + ".basis", {"family", "dim", "taps"});
    is.check(path + ".basis", [&] { c.besov.basis = wavelet_from_json(j["basis"]); });
  }
  if (j.contains("law")) {
    is.check(path + ".law", [&] { c.besov.law = law_from_json(j["law"], c.besov.basis); });
  }
  if (j.contains("L_max")) {
    c.besov.max_level = is.get<int>(j, path, "L_max", 10);
  } else {
    // Tail of the truncated expansion at most sigma / 10.
    is.check(path + ".L_max", [&] {
      c.besov.max_level = default_max_level(c.besov.alpha, c.besov.C0, c.besov.basis, sigma / 10.0);
    });
  }
  if (c.label.empty()) c.label = "alpha" + std::to_string(c.besov.alpha);
  is.check(path, [&] {
    if (c.multi_index()) c.as_multi_index().validate();
    else c.besov.validate();
  });
  return c;
}

}  // namespace

json component_to_json(const MixtureComponent& c) {
  return {{"label", c.label},
          {"alpha", c.besov.alpha},
          {"C0", c.besov.C0},
          {"L_max", c.besov.max_level},
          {"basis", to_json(c.besov.basis)},
          {"ambient_dim", c.ambient_dim},
          {"law", to_json(c.besov.law)}};
}

DomainSampler ExperimentConfig::sampler() const {
  const int d = prior.input_dim();
  return domain == "ball" ? DomainSampler::ball(d) : DomainSampler::cube(d);
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : source.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

ExperimentConfig parse_experiment(const json& j) {
  Issues is;
  ExperimentConfig cfg;
  if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
  is.known(j, "", {"name", "seed", "output_dir", "prior", "domain", "noise", "transformer", "train", "eval", "shifts",
                   "kappa_budget", "verify", "checkpoint"});
  cfg.name = is.get<std::string>(j, "", "name", cfg.name);
  cfg.seed = is.get<std::uint64_t>(j, "", "seed", cfg.seed);
  cfg.output_dir = is.get<std::string>(j, "", "output_dir", "runs/" + cfg.name);
  cfg.checkpoint = is.get<std::string>(j, "", "checkpoint", "");

  if (j.contains("noise")) {
    is.known(j["noise"], "noise", {"sigma"});
    cfg.noise.sigma = is.get<double>(j["noise"], "noise", "sigma", 0.25);
  }
  if (!(cfg.noise.sigma > 0.0)) is.add("noise.sigma", "must be positive");

  // Prior.
  if (!j.contains("prior")) {
    is.add("prior", "required key is missing");
  } else {
    const json& p = j["prior"];
    const std::size_t before_prior = is.size();
    is.known(p, "prior", {"components", "weights"});
    if (!p.contains("components") || !p["components"].is_array() || p["components"].empty()) {
      is.add("prior.components", "expected a nonempty array");
    } else {
      for (std::size_t i = 0; i < p["components"].size(); ++i) {
        cfg.prior.components.push_back(
            parse_component(p["components"][i], "prior.components[" + std::to_string(i) + "]", cfg.noise.sigma, is));
      }
    }
    if (p.contains("weights")) {
      cfg.prior.weights = is.get<std::vector<double>>(p, "prior", "weights", {});
    } else {
      cfg.prior.weights.assign(cfg.prior.components.size(), 1.0 / std::max<std::size_t>(1, cfg.prior.components.size()));
    }
    std::set<std::string> labels;
    for (const auto& c : cfg.prior.components) {
      if (!labels.insert(c.label).second) is.add("prior.components", "duplicate label '" + c.label + "'");
    }
    if (!cfg.prior.components.empty() && is.size() == before_prior) is.check("prior", [&] { cfg.prior.validate(); });
  }

  cfg.domain = is.get<std::string>(j, "", "domain", "");
  if (cfg.domain.empty()) {
    cfg.domain = "cube";
    for (const auto& c : cfg.prior.components) {
      if (c.multi_index()) cfg.domain = "ball";
    }
  }
  if (cfg.domain != "cube" && cfg.domain != "ball") is.add("domain", "expected 'cube' or 'ball'");

  const int d = std::max(1, cfg.prior.input_dim());
  double R = 1.0;
  is.check("prior", [&] {
    if (!cfg.prior.components.empty()) R = sup_norm_bound(cfg.prior);
  });

  // Evaluation.
  if (j.contains("eval")) {
    const json& e = j["eval"];
    is.known(e, "eval", {"grid", "J", "predictors", "test_component", "delta_over_sigma", "mc_M"});
    cfg.eval.grid = is.get<std::vector<int>>(e, "eval", "grid", cfg.eval.grid);
    cfg.eval.J = is.get<int>(e, "eval", "J", cfg.eval.J);
    cfg.eval.predictors = is.get<std::vector<std::string>>(e, "eval", "predictors", cfg.eval.predictors);
    cfg.eval.test_component = is.get<std::string>(e, "eval", "test_component", "");
    cfg.eval.delta_over_sigma = is.get<double>(e, "eval", "delta_over_sigma", cfg.eval.delta_over_sigma);
    cfg.eval.mc_M = is.get<int>(e, "eval", "mc_M", cfg.eval.mc_M);
  }
  for (std::size_t i = 0; i < cfg.eval.grid.size(); ++i) {
    if (cfg.eval.grid[i] < 1) is.add("eval.grid[" + std::to_string(i) + "]", "context lengths must be >= 1");
    if (i > 0 && cfg.eval.grid[i] <= cfg.eval.grid[i - 1]) is.add("eval.grid", "must be strictly increasing");
  }
  if (cfg.eval.J < 2) is.add("eval.J", "must be >= 2");
  if (!(cfg.eval.delta_over_sigma > 0.0 && cfg.eval.delta_over_sigma <= 0.5)) is.add("eval.delta_over_sigma", "must lie in (0, 0.5]");
  if (cfg.eval.mc_M < 1) is.add("eval.mc_M", "must be >= 1");
  for (const auto& p : cfg.eval.predictors) {
    if (p != "oracle" && p != "zero" && p != "checkpoint" && p != "mc") is.add("eval.predictors", "unknown predictor '" + p + "'");
  }
  if (!cfg.eval.test_component.empty() && !cfg.prior.components.empty()) {
    is.check("eval.test_component", [&] { cfg.prior.find(cfg.eval.test_component); });
  }

  // Training.
  if (j.contains("train")) {
    is.known(j["train"], "train", {"T", "batch_size", "steps", "optimizer", "beta1", "beta2", "eps", "momentum",
                                   "learning_rate", "schedule", "warmup_steps", "grad_clip", "seed", "regenerate", "n",
                                   "n_min", "micro_batch", "val_every", "val_J"});
    is.check("train", [&] { cfg.train = train_config_from_json(j["train"]); });
    if (!j["train"].contains("seed")) cfg.train.seed = derive_seed(cfg.seed, 0x7a1);
  } else {
    cfg.train.seed = derive_seed(cfg.seed, 0x7a1);
  }
  is.check("train", [&] { cfg.train.validate(); });

  // Transformer; d, N and R default to what the prior and grids need.
  int max_n = cfg.train.n;
  for (int n : cfg.eval.grid) max_n = std::max(max_n, n);
  cfg.transformer.d = d;
  cfg.transformer.N = max_n;
  cfg.transformer.R_clip = R;
  if (j.contains("transformer")) {
    is.known(j["transformer"], "transformer", {"L", "H", "d_model", "d_ffn", "activation", "N", "R_clip", "d"});
    json t = j["transformer"];
    if (!t.contains("d")) t["d"] = d;
    if (!t.contains("N")) t["N"] = max_n;
    if (!t.contains("R_clip")) t["R_clip"] = R;
    is.check("transformer", [&] { cfg.transformer = tf_config_from_json(t); });
  }
  is.check("transformer", [&] { cfg.transformer.validate(); });
  if (cfg.transformer.d != d) is.add("transformer.d", "differs from the prior's input dimension " + std::to_string(d));
  if (cfg.transformer.N < cfg.train.n) is.add("transformer.N", "smaller than train.n");

  // Shifts.
  cfg.kappa_budget = is.get<double>(j, "", "kappa_budget", cfg.kappa_budget);
  if (!(cfg.kappa_budget >= 0.0)) is.add("kappa_budget", "must be >= 0");
  if (j.contains("shifts")) {
    if (!j["shifts"].is_array()) {
      is.add("shifts", "expected an array");
    } else {
      for (std::size_t i = 0; i < j["shifts"].size(); ++i) {
        const std::string path = "shifts[" + std::to_string(i) + "]";
        const json& s = j["shifts"][i];
        is.known(s, path, {"label", "kappa", "max_level"});
        ShiftConfig sc;
        sc.label = is.get<std::string>(s, path, "label", cfg.prior.components.empty() ? "" : cfg.prior.components[0].label);
        sc.kappa = is.get<double>(s, path, "kappa", 0.0, true);
        sc.max_level = is.get<int>(s, path, "max_level", 1);
        if (!(sc.kappa >= 0.0)) is.add(path + ".kappa", "must be >= 0");
        if (sc.kappa > cfg.kappa_budget) is.add(path + ".kappa", "exceeds kappa_budget " + std::to_string(cfg.kappa_budget));
        if (!cfg.prior.components.empty()) is.check(path + ".label", [&] { cfg.prior.find(sc.label); });
        cfg.shifts.push_back(sc);
      }
    }
  }

  if (j.contains("verify")) {
    is.known(j["verify"], "verify", {"n", "J", "label"});
    cfg.verify.n = is.get<int>(j["verify"], "verify", "n", cfg.verify.n);
    cfg.verify.J = is.get<int>(j["verify"], "verify", "J", cfg.verify.J);
    cfg.verify.label = is.get<std::string>(j["verify"], "verify", "label", "");
  }
  if (cfg.verify.label.empty() && !cfg.prior.components.empty()) cfg.verify.label = cfg.prior.components[0].label;
  if (cfg.verify.n < 1) is.add("verify.n", "must be >= 1");
  if (cfg.verify.J < 2) is.add("verify.J", "must be >= 2");
  if (!cfg.prior.components.empty()) is.check("verify.label", [&] { cfg.prior.find(cfg.verify.label); });

  if (!is.empty()) throw ConfigError(is.joined());

  // Canonical document with defaults filled in.
  json comps = json::array();
  for (const auto& c : cfg.prior.components) comps.push_back(component_to_json(c));
  json shifts = json::array();
  for (const auto& s : cfg.shifts) shifts.push_back({{"label", s.label}, {"kappa", s.kappa}, {"max_level", s.max_level}});
  cfg.source = {{"name", cfg.name},
                {"seed", cfg.seed},
                {"prior", {{"components", comps}, {"weights", cfg.prior.weights}}},
                {"domain", cfg.domain},
                {"noise", {{"sigma", cfg.noise.sigma}}},
                {"transformer", to_json(cfg.transformer)},
                {"train", to_json(cfg.train)},
                {"eval",
                 {{"grid", cfg.eval.grid},
                  {"J", cfg.eval.J},
                  {"predictors", cfg.eval.predictors},
                  {"test_component", cfg.eval.test_component},
                  {"delta_over_sigma", cfg.eval.delta_over_sigma},
                  {"mc_M", cfg.eval.mc_M}}},
                {"shifts", shifts},
                {"kappa_budget", cfg.kappa_budget},
                {"verify", {{"n", cfg.verify.n}, {"J", cfg.verify.J}, {"label", cfg.verify.label}}},
                {"checkpoint", cfg.checkpoint}};
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = parse_experiment(j);
  // Relative checkpoint paths are taken from the config's directory.
  if (!cfg.checkpoint.empty() && std::filesystem::path(cfg.checkpoint).is_relative() && path.has_parent_path())
    cfg.checkpoint = (path.parent_path() / cfg.checkpoint).string();
  return cfg;
}

std::string code_version() { return "0.1.0"; }

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::write(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json files_json = json::array();
  for (const auto& f : files) {
    if (!std::filesystem::exists(f)) throw FileError("manifest lists a missing file: " + f.string());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(file_hash(f)));
    files_json.push_back({{"path", std::filesystem::relative(f, dir).string()}, {"fnv1a", hex}});
  }
  json j = {{"command", command},   {"config_hash", config_hash}, {"seed", seed},
            {"code_version", code_version}, {"started", started}, {"finished", finished},
            {"files", files_json}};
  std::ofstream out(dir / "run_manifest.json", std::ios::trunc);
  if (!out) throw FileError("cannot write " + (dir / "run_manifest.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace icl
