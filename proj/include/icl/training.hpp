#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icl/prior.hpp"
#include "icl/risk.hpp"
#include "icl/task.hpp"
#include "icl/transformer.hpp"
#include "json.hpp"

namespace icl {

enum class OptimizerKind { adam, sgd };
enum class Schedule { constant, cosine };

struct TrainConfig {
  std::uint64_t T = 0;  // corpus size when regenerate is false
  int batch_size = 16;
  long long steps = 1000;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // sgd only
  double learning_rate = 1e-3;
  Schedule schedule = Schedule::cosine;
  long long warmup_steps = 0;
  double grad_clip = 0.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
  bool regenerate = true;
  int n = 16;
  int n_min = 0;        // > 0 draws n per episode from [n_min, n]
  int micro_batch = 8;  // fixed gradient chunks; results do not depend on threads
  long long val_every = 0;
  int val_J = 256;
  int threads = 1;

  void validate() const;
  // Passes over the corpus in fixed-corpus mode.
  double epochs() const;
  double lr_at(long long step) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainLogRow {
  long long step = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_risk;
  double wall = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  double wall_seconds = 0.0;
  void write_csv(const std::filesystem::path& path) const;
  // Exponentially smoothed loss (1 - 1/window weight) at row i.
  std::vector<double> smoothed(int window = 100) const;
};

struct TrainResult {
  TransformerParams params;
  TrainLog log;
  CheckpointExtras state;
};

// Optional warm start from a checkpoint (parameters plus optimizer moments).
struct ResumeFrom {
  TransformerParams params;
  CheckpointExtras state;
};

using StepCallback = std::function<void(const TrainLogRow&)>;

TrainResult erm_train(const MixtureSpec& prior, const TFConfig& tf, const TrainConfig& cfg, const NoiseSpec& noise,
                      const DomainSampler& sampler, const std::optional<ResumeFrom>& resume = std::nullopt,
                      const StepCallback& on_step = {});

// Mean of (Y - clip(f)) ^ 2 over J fresh episodes.
RiskEstimate validation_pi_risk(const TransformerParams& params, const MixtureSpec& prior, int n,
                                const NoiseSpec& noise, const DomainSampler& sampler, int J, std::uint64_t seed,
                                int threads = 1);

// Gradient of the mean squared loss over the episodes (all sharing n), in tensor order.
double batch_loss_and_grad(const TransformerParams& params, const std::vector<const Episode*>& episodes,
                           std::vector<Matrix>* grads);

}  // namespace icl
