#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "icl/autodiff.hpp"
#include "icl/rng.hpp"
#include "icl/task.hpp"
#include "json.hpp"

namespace icl {

enum class Activation { relu, gelu, silu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct TFConfig {
  int L = 3;
  int H = 1;
  int d_model = 32;
  int d_ffn = 64;
  Activation activation = Activation::gelu;
  int N = 512;   // maximum context length
  double R_clip = 1.0;
  int d = 1;     // covariate dimension

  void validate() const;
  friend bool operator==(const TFConfig&, const TFConfig&) = default;
};

using Matrix = Eigen::MatrixXd;

struct AttnHeadParams {
  Matrix Q, K, V;  // d_model x d_model
};

struct FfnParams {
  Matrix W1;         // d_model x d_ffn
  Matrix W2;         // d_ffn x d_model
  Matrix v;          // d_ffn x 1 bias
};

struct BlockParams {
  std::vector<AttnHeadParams> heads;
  FfnParams ffn;
};

struct TransformerParams {
  TFConfig cfg;
  std::vector<BlockParams> blocks;

  // Flat views in a fixed order: per block, heads (Q, K, V) then W1, v, W2.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;
};

enum class InitScheme { zero, gaussian };

TransformerParams init_params(const TFConfig& cfg, InitScheme scheme, Rng& rng);

// Row i = (x_i, y_i, 0.., 0); last row = (x, 0, 0.., 1).
Matrix embed_prompt(const Episode& examples, std::span<const double> query, int d_model, int N);

Matrix attention_forward(const std::vector<AttnHeadParams>& heads, const Matrix& Z);
Matrix ffn_forward(const FfnParams& p, const Matrix& Z, Activation rho);
Matrix apply_activation(const Matrix& A, Activation rho);
Matrix rowwise_softmax(const Matrix& A);

double tf_forward(const TransformerParams& params, const Episode& examples, std::span<const double> query);
double clip(double v, double R);
double predict_clipped(const TransformerParams& params, const Episode& examples, std::span<const double> query,
                       double R);

// Batched forward on a tape. Z is [B, n+1, d_model]; returns B predictions
// read from entry (n, d) of each output matrix (unclipped).
std::vector<Tape::Var> register_params(Tape& tape, const TransformerParams& params);
Tape::Var tf_forward_tape(Tape& tape, const std::vector<Tape::Var>& vars, const TFConfig& cfg, Tape::Var Z);
// All episodes must share n.
Tensor embed_batch(const std::vector<const Episode*>& episodes, int d_model, int N);
Tensor to_tensor(const Matrix& m);
Matrix to_matrix(const Tensor& t);

// Manifest JSON (config + tensor index) next to a little-endian array of doubles.
struct CheckpointExtras {
  long long step = 0;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& manifest, const TransformerParams& params,
                     const CheckpointExtras& extras = {});
TransformerParams load_checkpoint(const std::filesystem::path& manifest, CheckpointExtras* extras = nullptr);
// FNV-1a over the raw parameter bytes.
std::uint64_t params_hash(const TransformerParams& params);
std::uint64_t file_hash(const std::filesystem::path& path);

nlohmann::json to_json(const TFConfig& cfg);
TFConfig tf_config_from_json(const nlohmann::json& j);

}  // namespace icl
