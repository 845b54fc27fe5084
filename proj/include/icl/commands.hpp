#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "icl/evaluation.hpp"
#include "icl/experiment.hpp"
#include "icl/tree_posterior.hpp"

namespace icl {

// Exit codes of the command-line front end.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Parses argv and dispatches; never throws.
int run_cli(int argc, const char* const* argv);
// Maps an exception to the exit code policy above.
int exit_code_for(const std::exception& e);

struct CommandContext {
  int threads = 1;
  std::optional<std::filesystem::path> out;  // overrides output_dir
};

std::filesystem::path cmd_gen_tasks(const ExperimentConfig& cfg, std::uint64_t count, const CommandContext& ctx);
std::filesystem::path cmd_train(const ExperimentConfig& cfg, const CommandContext& ctx,
                                const std::optional<std::filesystem::path>& resume = std::nullopt);
// model: empty (use the config's predictor list), "oracle", "zero", or a checkpoint path.
std::filesystem::path cmd_eval(const ExperimentConfig& cfg, const std::string& model, const CommandContext& ctx);
std::filesystem::path cmd_rate(const std::filesystem::path& risks_csv, double beta, int dim, const CommandContext& ctx);
std::filesystem::path cmd_verify(const ExperimentConfig& cfg, const std::string& model, const CommandContext& ctx);
std::filesystem::path cmd_report(const std::filesystem::path& run_dir);

// Predictor for a name: "oracle", "zero", "mc" or a checkpoint path.
// The returned object keeps whatever it needs alive.
struct PredictorHandle {
  NamedPredictor predictor;
  std::shared_ptr<const void> keep;
};
PredictorHandle make_predictor(const std::string& name, const ExperimentConfig& cfg, const MixtureSpec& prior);

// Test distributions described by a config: the unshifted prior (or its
// test component) followed by every configured shift.
std::vector<TestDistribution> test_distributions(const ExperimentConfig& cfg);

}  // namespace icl
