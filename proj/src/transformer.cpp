#include "icl/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "icl/errors.hpp"

namespace icl {

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  if (s == "silu") return Activation::silu;
  throw ConfigError("unknown activation '" + s + "' (expected relu, gelu or silu)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::silu: return "silu";
  }
  return "?";
}

void TFConfig::validate() const {
  if (L < 0) throw ValidationError("transformer needs L >= 0 blocks");
  if (H < 1) throw ValidationError("transformer needs H >= 1 heads");
  if (d < 1) throw ValidationError("covariate dimension d must be >= 1");
  if (d_model < d + 2) throw ValidationError("d_model must be at least d + 2");
  if (d_ffn < 1) throw ValidationError("d_ffn must be >= 1");
  if (N < 1) throw ValidationError("context length N must be >= 1");
  if (!(R_clip > 0.0)) throw ValidationError("R_clip must be positive");
}

std::vector<Matrix*> TransformerParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& b : blocks) {
    for (auto& h : b.heads) {
      out.push_back(&h.Q);
      out.push_back(&h.K);
      out.push_back(&h.V);
    }
    out.push_back(&b.ffn.W1);
    out.push_back(&b.ffn.v);
    out.push_back(&b.ffn.W2);
  }
  return out;
}

std::vector<const Matrix*> TransformerParams::tensors() const {
  std::vector<const Matrix*> out;
  for (auto* m : const_cast<TransformerParams*>(this)->tensors()) out.push_back(m);
  return out;
}

std::vector<std::string> TransformerParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < blocks[l].heads.size(); ++h) {
      const std::string p = b + "head" + std::to_string(h) + ".";
      out.push_back(p + "Q");
      out.push_back(p + "K");
      out.push_back(p + "V");
    }
    out.push_back(b + "W1");
    out.push_back(b + "v");
    out.push_back(b + "W2");
  }
  return out;
}

std::size_t TransformerParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto* m : tensors()) total += static_cast<std::size_t>(m->size());
  return total;
}

TransformerParams init_params(const TFConfig& cfg, InitScheme scheme, Rng& rng) {
  cfg.validate();
  TransformerParams p;
  p.cfg = cfg;
  const int D = cfg.d_model;
  auto gauss = [&](int r, int c) {
    Matrix m = Matrix::Zero(r, c);
    if (scheme == InitScheme::gaussian) {
      // Row-major fill so the stream order does not depend on storage order.
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = 0.02 * rng.normal();
    }
    return m;
  };
  for (int l = 0; l < cfg.L; ++l) {
    BlockParams b;
    for (int h = 0; h < cfg.H; ++h) {
      AttnHeadParams head;
      head.Q = gauss(D, D);
      head.K = gauss(D, D);
      head.V = gauss(D, D);
      b.heads.push_back(std::move(head));
    }
    b.ffn.W1 = gauss(D, cfg.d_ffn);
    b.ffn.v = Matrix::Zero(cfg.d_ffn, 1);
    b.ffn.W2 = Matrix::Zero(cfg.d_ffn, D);
    p.blocks.push_back(std::move(b));
  }
  return p;
}

Matrix embed_prompt(const Episode& examples, std::span<const double> query, int d_model, int N) {
  const int n = examples.n();
  const int d = examples.d;
  if (n < 1 || n > N) throw ContextLengthError("context length " + std::to_string(n) + " outside [1, " + std::to_string(N) + "]");
  if (static_cast<int>(query.size()) != d) throw ShapeError("query dimension differs from covariates");
  if (d_model < d + 2) throw ShapeError("d_model too small for the embedding");
  Matrix Z = Matrix::Zero(n + 1, d_model);
  for (int i = 0; i < n; ++i) {
    const auto x = examples.x(i);
    for (int k = 0; k < d; ++k) Z(i, k) = x[static_cast<std::size_t>(k)];
    Z(i, d) = examples.ys[static_cast<std::size_t>(i)];
  }
  for (int k = 0; k < d; ++k) Z(n, k) = query[static_cast<std::size_t>(k)];
  Z(n, d_model - 1) = 1.0;
  return Z;
}

Matrix rowwise_softmax(const Matrix& A) {
  Matrix S(A.rows(), A.cols());
  for (Eigen::Index r = 0; r < A.rows(); ++r) {
    const double top = A.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      S(r, j) = std::exp(A(r, j) - top);
      total += S(r, j);
    }
    S.row(r) /= total;
  }
  return S;
}

Matrix apply_activation(const Matrix& A, Activation rho) {
  Matrix out = A;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    double& v = out.data()[i];
    switch (rho) {
      case Activation::relu: v = v > 0.0 ? v : 0.0; break;
      case Activation::gelu: v = gelu(v); break;
      case Activation::silu: v = silu(v); break;
    }
  }
  return out;
}

Matrix attention_forward(const std::vector<AttnHeadParams>& heads, const Matrix& Z) {
  Matrix out = Z;
  const double inv = 1.0 / std::sqrt(static_cast<double>(Z.cols()));
  for (const auto& h : heads) {
    if (h.Q.rows() != Z.cols() || h.K.rows() != Z.cols() || h.V.rows() != Z.cols())
      throw ShapeError("attention weights do not match d_model");
    const Matrix scores = (Z * h.Q) * (Z * h.K).transpose() * inv;
    out.noalias() += rowwise_softmax(scores) * (Z * h.V);
  }
  return out;
}

Matrix ffn_forward(const FfnParams& p, const Matrix& Z, Activation rho) {
  if (p.W1.rows() != Z.cols() || p.W2.cols() != Z.cols()) throw ShapeError("FFN weights do not match d_model");
  Matrix pre = Z * p.W1;
  if (p.v.rows() != p.W1.cols()) throw ShapeError("FFN bias does not match d_ffn");
  pre.rowwise() += p.v.col(0).transpose();
  return Z + apply_activation(pre, rho) * p.W2;
}

double tf_forward(const TransformerParams& params, const Episode& examples, std::span<const double> query) {
  const auto& cfg = params.cfg;
  Matrix Z = embed_prompt(examples, query, cfg.d_model, cfg.N);
  for (const auto& b : params.blocks) {
    Z = attention_forward(b.heads, Z);
    Z = ffn_forward(b.ffn, Z, cfg.activation);
  }
  return Z(examples.n(), cfg.d);
}

double clip(double v, double R) {
  if (!(R > 0.0)) throw ValidationError("clip bound must be positive");
  return std::clamp(v, -R, R);
}

double predict_clipped(const TransformerParams& params, const Episode& examples, std::span<const double> query,
                       double R) {
  return clip(tf_forward(params, examples, query), R);
}

Tensor to_tensor(const Matrix& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, 0.0);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return t;
}

Matrix to_matrix(const Tensor& t) {
  if (t.rank() == 1) {
    Matrix m(t.dim(0), 1);
    for (int i = 0; i < t.dim(0); ++i) m(i, 0) = t.data[static_cast<std::size_t>(i)];
    return m;
  }
  if (t.rank() != 2) throw ShapeError("to_matrix needs a rank-2 tensor");
  Matrix m(t.rows(), t.cols());
  for (int i = 0; i < t.rows(); ++i)
    for (int j = 0; j < t.cols(); ++j) m(i, j) = t.data[static_cast<std::size_t>(i * t.cols() + j)];
  return m;
}

std::vector<Tape::Var> register_params(Tape& tape, const TransformerParams& params) {
  std::vector<Tape::Var> vars;
  for (const auto& b : params.blocks) {
    for (const auto& h : b.heads) {
      vars.push_back(tape.leaf(to_tensor(h.Q)));
      vars.push_back(tape.leaf(to_tensor(h.K)));
      vars.push_back(tape.leaf(to_tensor(h.V)));
    }
    vars.push_back(tape.leaf(to_tensor(b.ffn.W1)));
    vars.push_back(tape.leaf(Tensor({static_cast<int>(b.ffn.v.size())},
                                    std::vector<double>(b.ffn.v.data(), b.ffn.v.data() + b.ffn.v.size()))));
    vars.push_back(tape.leaf(to_tensor(b.ffn.W2)));
  }
  return vars;
}

Tape::Var tf_forward_tape(Tape& tape, const std::vector<Tape::Var>& vars, const TFConfig& cfg, Tape::Var Z) {
  const std::size_t per_block = static_cast<std::size_t>(3 * cfg.H + 3);
  if (vars.size() != per_block * static_cast<std::size_t>(cfg.L)) throw ShapeError("parameter list does not match config");
  const double inv = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  const int rows = tape.value(Z).rows();
  std::size_t k = 0;
  for (int l = 0; l < cfg.L; ++l) {
    Tape::Var out = Z;
    for (int h = 0; h < cfg.H; ++h) {
      const auto q = tape.matmul(Z, vars[k]);
      const auto kk = tape.matmul(Z, vars[k + 1]);
      const auto v = tape.matmul(Z, vars[k + 2]);
      k += 3;
      const auto scores = tape.scale(tape.matmul(q, tape.transpose(kk)), inv);
      out = tape.add(out, tape.matmul(tape.softmax_rows(scores), v));
    }
    Z = out;
    const auto pre = tape.add(tape.matmul(Z, vars[k]), vars[k + 1]);
    Z = tape.add(Z, tape.matmul(tape.activation(pre, cfg.activation), vars[k + 2]));
    k += 3;
  }
  return tape.select(Z, rows - 1, cfg.d);
}

Tensor embed_batch(const std::vector<const Episode*>& episodes, int d_model, int N) {
  if (episodes.empty()) throw ShapeError("empty batch");
  const int n = episodes.front()->n();
  const int B = static_cast<int>(episodes.size());
  Tensor Z({B, n + 1, d_model}, 0.0);
  for (int b = 0; b < B; ++b) {
    const Episode& e = *episodes[static_cast<std::size_t>(b)];
    if (e.n() != n) throw ShapeError("batched episodes must share the context length");
    const Matrix m = embed_prompt(e, e.query, d_model, N);
    double* dst = Z.data.data() + static_cast<std::size_t>(b) * (n + 1) * d_model;
    for (int i = 0; i <= n; ++i)
      for (int j = 0; j < d_model; ++j) dst[i * d_model + j] = m(i, j);
  }
  return Z;
}

nlohmann::json to_json(const TFConfig& cfg) {
  return {{"L", cfg.L},         {"H", cfg.H},       {"d_model", cfg.d_model},
          {"d_ffn", cfg.d_ffn}, {"activation", to_string(cfg.activation)},
          {"N", cfg.N},         {"R_clip", cfg.R_clip}, {"d", cfg.d}};
}

TFConfig tf_config_from_json(const nlohmann::json& j) {
  TFConfig c;
  c.L = j.value("L", c.L);
  c.H = j.value("H", c.H);
  c.d_model = j.value("d_model", c.d_model);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
  c.N = j.value("N", c.N);
  c.R_clip = j.value("R_clip", c.R_clip);
  c.d = j.value("d", c.d);
  return c;
}

}  // namespace icl
