#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icl/prior.hpp"
#include "icl/task.hpp"
#include "icl/training.hpp"
#include "icl/transformer.hpp"
#include "json.hpp"

namespace icl {

struct ShiftConfig {
  std::string label;  // component to tilt
  double kappa = 0.0;
  int max_level = 1;  // tilt the fathers and mothers up to this level
};

struct EvalConfig {
  std::vector<int> grid{8, 16, 32, 64, 128, 256, 512};
  int J = 2000;
  // "oracle", "zero", "checkpoint", or "mc" (Monte Carlo posterior with mc_M draws).
  std::vector<std::string> predictors{"oracle"};
  std::string test_component;  // empty: test on the whole prior
  double delta_over_sigma = 1.0 / 16.0;
  int mc_M = 1 << 14;
};

struct VerifyConfig {
  int n = 16;
  int J = 2000;
  std::string label;  // component the shifts act on; defaults to the first
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/experiment";
  MixtureSpec prior;
  std::string domain = "cube";
  NoiseSpec noise{0.25};
  TFConfig transformer;
  TrainConfig train;
  EvalConfig eval;
  std::vector<ShiftConfig> shifts;
  double kappa_budget = 0.25;
  VerifyConfig verify;
  std::string checkpoint;  // path used by eval/verify when a trained model is requested
  nlohmann::json source;   // the parsed document, after defaults

  DomainSampler sampler() const;
  // FNV-1a of the canonical dump of `source`, as 16 hex digits.
  std::string hash() const;
};

// Reads and validates the whole document. Every violation is collected with
// its key path and reported in one ConfigError.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

nlohmann::json component_to_json(const MixtureComponent& c);

struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string code_version;
  std::string started;
  std::string finished;
  std::vector<std::filesystem::path> files;

  void add(const std::filesystem::path& p) { files.push_back(p); }
  // Writes run_manifest.json in dir; every listed file must exist.
  void write(const std::filesystem::path& dir);
};

std::string code_version();
std::string utc_timestamp();

}  // namespace icl
