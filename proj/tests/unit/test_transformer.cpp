#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "icl/errors.hpp"
#include "icl/transformer.hpp"

using namespace icl;

namespace {

TFConfig small_cfg(int d = 1) {
  TFConfig c;
  c.L = 2;
  c.H = 2;
  c.d_model = 8;
  c.d_ffn = 12;
  c.N = 32;
  c.d = d;
  c.R_clip = 2.0;
  return c;
}

Episode random_episode(int n, int d, Rng& rng) {
  Episode e;
  e.d = d;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < d; ++k) e.xs.push_back(rng.uniform());
    e.ys.push_back(rng.normal());
  }
  for (int k = 0; k < d; ++k) e.query.push_back(rng.uniform());
  e.target = rng.normal();
  return e;
}

TransformerParams noisy_params(const TFConfig& cfg, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  auto p = init_params(cfg, InitScheme::gaussian, rng);
  for (auto* m : p.tensors())
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = scale * rng.normal();
  return p;
}

// Second, loop-only implementation of the forward pass.
double straight_line_forward(const TransformerParams& p, const Episode& e) {
  const int D = p.cfg.d_model, n = e.n(), rows = n + 1;
  std::vector<std::vector<double>> Z(rows, std::vector<double>(D, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < e.d; ++k) Z[i][k] = e.xs[i * e.d + k];
    Z[i][e.d] = e.ys[i];
  }
  for (int k = 0; k < e.d; ++k) Z[n][k] = e.query[k];
  Z[n][D - 1] = 1.0;
  auto mul = [&](const std::vector<std::vector<double>>& A, const Matrix& W) {
    std::vector<std::vector<double>> C(A.size(), std::vector<double>(W.cols(), 0.0));
    for (std::size_t i = 0; i < A.size(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j)
        for (Eigen::Index k = 0; k < W.rows(); ++k) C[i][j] += A[i][k] * W(k, j);
    return C;
  };
  for (const auto& b : p.blocks) {
    auto out = Z;
    for (const auto& h : b.heads) {
      const auto q = mul(Z, h.Q), k = mul(Z, h.K), v = mul(Z, h.V);
      for (int i = 0; i < rows; ++i) {
        std::vector<double> s(rows);
        double top = -INFINITY;
        for (int j = 0; j < rows; ++j) {
          s[j] = 0.0;
          for (int c = 0; c < D; ++c) s[j] += q[i][c] * k[j][c];
          s[j] /= std::sqrt(double(D));
          top = std::max(top, s[j]);
        }
        double tot = 0.0;
        for (double& x : s) tot += (x = std::exp(x - top));
        for (int j = 0; j < rows; ++j)
          for (int c = 0; c < D; ++c) out[i][c] += s[j] / tot * v[j][c];
      }
    }
    Z = out;
    auto pre = mul(Z, b.ffn.W1);
    for (auto& row : pre)
      for (std::size_t j = 0; j < row.size(); ++j) {
        const double x = row[j] + b.ffn.v(static_cast<Eigen::Index>(j), 0);
        row[j] = p.cfg.activation == Activation::relu ? std::max(x, 0.0)
                 : p.cfg.activation == Activation::gelu ? 0.5 * x * std::erfc(-x / std::sqrt(2.0))
                                                        : x / (1.0 + std::exp(-x));
      }
    const auto f = mul(pre, b.ffn.W2);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < D; ++c) Z[i][c] += f[i][c];
  }
  return Z[n][e.d];
}

}  // namespace

TEST_CASE("embedding layout") {
  Episode e;
  e.d = 1;
  e.xs = {0.5};
  e.ys = {2.0};
  const std::vector<double> q{0.25};
  const Matrix Z = embed_prompt(e, q, 3, 4);
  REQUIRE(Z.rows() == 2);
  REQUIRE(Z.cols() == 3);
  CHECK(Z(0, 0) == 0.5);
  CHECK(Z(0, 1) == 2.0);
  CHECK(Z(0, 2) == 0.0);
  CHECK(Z(1, 0) == 0.25);
  CHECK(Z(1, 1) == 0.0);
  CHECK(Z(1, 2) == 1.0);

  Rng rng(1);
  const auto e2 = random_episode(5, 2, rng);
  const Matrix Z2 = embed_prompt(e2, e2.query, 7, 8);
  CHECK(Z2.rows() == 6);
  CHECK(Z2.cols() == 7);
  for (int i = 0; i < 5; ++i) CHECK(Z2(i, 6) == 0.0);
  CHECK(Z2(5, 6) == 1.0);

  CHECK_THROWS_AS(embed_prompt(e2, e2.query, 7, 4), ContextLengthError);
  Episode empty;
  empty.query = {0.1};
  CHECK_THROWS_AS(embed_prompt(empty, empty.query, 3, 4), ContextLengthError);
}

TEST_CASE("attention special cases") {
  Rng rng(2);
  const int D = 4;
  Matrix Z = Matrix::Random(3, D);
  AttnHeadParams h{Matrix::Random(D, D), Matrix::Random(D, D), Matrix::Zero(D, D)};
  CHECK(attention_forward({h}, Z) == Z);

  AttnHeadParams u{Matrix::Zero(D, D), Matrix::Zero(D, D), Matrix::Random(D, D)};
  const Matrix out = attention_forward({u}, Z);
  const Matrix expect = Z.rowwise() + (Z.colwise().mean() * u.V);
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-14);

  // 2x2 by hand.
  Matrix Z2(2, 2);
  Z2 << 1.0, 0.5, -0.5, 2.0;
  AttnHeadParams s{Matrix::Identity(2, 2), Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  s.Q(0, 1) = 0.3;
  s.V(1, 0) = -1.0;
  const Matrix o = attention_forward({s}, Z2);
  const double q[2][2] = {{1.0, 0.3 * 1.0 + 0.5}, {-0.5, 0.3 * -0.5 + 2.0}};
  const double k[2][2] = {{1.0, 0.5}, {-0.5, 2.0}};
  const double v[2][2] = {{1.0 - 0.5, 0.5}, {-0.5 - 2.0, 2.0}};
  for (int i = 0; i < 2; ++i) {
    const double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
    const double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
    const double a0 = 1.0 / (1.0 + std::exp(s1 - s0)), a1 = 1.0 - a0;
    for (int c = 0; c < 2; ++c) CHECK(std::abs(o(i, c) - (Z2(i, c) + a0 * v[0][c] + a1 * v[1][c])) < 1e-12);
  }
}

TEST_CASE("feed-forward special cases") {
  const int D = 3, F = 4;
  Matrix Z = Matrix::Random(2, D);
  FfnParams p{Matrix::Random(D, F), Matrix::Zero(F, D), Matrix::Random(F, 1)};
  CHECK(ffn_forward(p, Z, Activation::gelu) == Z);

  FfnParams dead{Matrix::Random(D, F), Matrix::Random(F, D), Matrix::Constant(F, 1, -100.0)};
  CHECK(ffn_forward(dead, Z, Activation::relu) == Z);

  Matrix z(1, 2);
  z << 0.5, -1.0;
  FfnParams h{Matrix(2, 2), Matrix(2, 2), Matrix(2, 1)};
  h.W1 << 1.0, 2.0, 0.5, -1.0;
  h.v << 0.1, -0.2;
  h.W2 << 1.0, 0.0, 3.0, -2.0;
  const Matrix o = ffn_forward(h, z, Activation::relu);
  const double a0 = std::max(0.0, 0.5 * 1.0 + -1.0 * 0.5 + 0.1);  // 0.1
  const double a1 = std::max(0.0, 0.5 * 2.0 + -1.0 * -1.0 - 0.2);  // 1.8
  CHECK(o(0, 0) == doctest::Approx(0.5 + a0 * 1.0 + a1 * 3.0).epsilon(1e-14));
  CHECK(o(0, 1) == doctest::Approx(-1.0 + a0 * 0.0 + a1 * -2.0).epsilon(1e-14));
}

TEST_CASE("zero and identity-preserving networks output zero") {
  const auto cfg = small_cfg();
  Rng rng(3);
  const auto zero = init_params(cfg, InitScheme::zero, rng);
  for (int t = 0; t < 10; ++t) {
    const auto e = random_episode(1 + t, 1, rng);
    CHECK(tf_forward(zero, e, e.query) == 0.0);
  }
  auto skel = noisy_params(cfg, 4);
  for (auto& b : skel.blocks) {
    for (auto& h : b.heads) h.V.setZero();
    b.ffn.W2.setZero();
  }
  const auto e = random_episode(7, 1, rng);
  CHECK(tf_forward(skel, e, e.query) == 0.0);
}

TEST_CASE("forward matches a straight-line implementation") {
  for (auto act : {Activation::relu, Activation::gelu, Activation::silu}) {
    auto cfg = small_cfg(2);
    cfg.activation = act;
    const auto p = noisy_params(cfg, 5);
    Rng rng(6);
    for (int n : {1, 3, 10}) {
      const auto e = random_episode(n, 2, rng);
      CHECK(std::abs(tf_forward(p, e, e.query) - straight_line_forward(p, e)) < 1e-12);
    }
  }
}

TEST_CASE("clipping") {
  CHECK(clip(5.0, 1.0) == 1.0);
  CHECK(clip(-0.3, 1.0) == -0.3);
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 7, 1.0);
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    const auto e = random_episode(1 + t % 20, 1, rng);
    CHECK(std::abs(predict_clipped(p, e, e.query, cfg.R_clip)) <= cfg.R_clip);
  }
}

TEST_CASE("permuting examples leaves the output unchanged") {
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 9);
  Rng rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto e = random_episode(12, 1, rng);
    auto shuffled = e;
    for (int i = e.n() - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(shuffled.xs[i], shuffled.xs[j]);
      std::swap(shuffled.ys[i], shuffled.ys[j]);
    }
    CHECK(std::abs(tf_forward(p, e, e.query) - tf_forward(p, shuffled, e.query)) <= 1e-12);
  }
}

TEST_CASE("one parameter set handles every context length") {
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 11);
  Rng rng(12);
  for (int n = 1; n <= cfg.N; ++n) {
    const auto e = random_episode(n, 1, rng);
    CHECK(std::isfinite(tf_forward(p, e, e.query)));
  }
}

TEST_CASE("initialization") {
  TFConfig cfg;
  cfg.L = 1;
  cfg.H = 1;
  cfg.d_model = 100;
  cfg.d_ffn = 1000;
  Rng a(13), b(14);
  const auto p = init_params(cfg, InitScheme::gaussian, a);
  const auto q = init_params(cfg, InitScheme::gaussian, b);
  const Matrix& W1 = p.blocks[0].ffn.W1;
  REQUIRE(W1.size() == 100000);
  const double mean = W1.mean();
  const double sd = std::sqrt((W1.array() - mean).square().sum() / (W1.size() - 1));
  CHECK(std::abs(sd - 0.02) <= 0.001);
  CHECK(p.blocks[0].heads[0].Q != q.blocks[0].heads[0].Q);

  Rng c(15);
  const auto z = init_params(small_cfg(), InitScheme::zero, c);
  for (const auto* m : z.tensors()) CHECK(m->isZero(0.0));
}

TEST_CASE("tensor names and counts") {
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 16);
  const auto names = p.tensor_names();
  CHECK(names.size() == p.tensors().size());
  CHECK(names.size() == static_cast<std::size_t>(cfg.L * (3 * cfg.H + 3)));
  const std::size_t per_block = 3 * cfg.H * cfg.d_model * cfg.d_model + 2 * cfg.d_model * cfg.d_ffn + cfg.d_ffn;
  CHECK(p.parameter_count() == cfg.L * per_block);
}

TEST_CASE("tape forward agrees with the matrix forward") {
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 17);
  Rng rng(18);
  std::vector<Episode> eps;
  for (int b = 0; b < 3; ++b) eps.push_back(random_episode(6, 1, rng));
  Tape tape;
  const auto vars = register_params(tape, p);
  const auto out = tape.value(tf_forward_tape(tape, vars, cfg, tape.constant(embed_batch({&eps[0], &eps[1], &eps[2]}, cfg.d_model, cfg.N))));
  for (int b = 0; b < 3; ++b) CHECK(std::abs(out.data[b] - tf_forward(p, eps[b], eps[b].query)) < 1e-13);
}

TEST_CASE("checkpoint round trip") {
  const auto cfg = small_cfg();
  const auto p = noisy_params(cfg, 19);
  const auto dir = std::filesystem::temp_directory_path() / "icl_ckpt_test";
  std::filesystem::create_directories(dir);
  CheckpointExtras ex;
  ex.step = 42;
  ex.meta["note"] = "x";
  save_checkpoint(dir / "ckpt.json", p, ex);
  CheckpointExtras back_ex;
  const auto q = load_checkpoint(dir / "ckpt.json", &back_ex);
  CHECK(q.cfg == p.cfg);
  CHECK(params_hash(q) == params_hash(p));
  CHECK(back_ex.step == 42);
  CHECK(back_ex.meta["note"] == "x");
  Rng rng(20);
  for (int t = 0; t < 10; ++t) {
    const auto e = random_episode(1 + t, 1, rng);
    CHECK(tf_forward(q, e, e.query) == tf_forward(p, e, e.query));
  }

  // A flipped byte in the data file is detected.
  {
    std::fstream f(dir / "ckpt.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(16);
    char c = 0x7f;
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "ckpt.json"), FileError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.json"), FileError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config validation") {
  auto cfg = small_cfg();
  cfg.d_model = 2;
  CHECK_THROWS(cfg.validate());
  CHECK(activation_from_string("silu") == Activation::silu);
  CHECK_THROWS(activation_from_string("tanh"));
  const auto good = small_cfg();
  CHECK(tf_config_from_json(to_json(good)) == good);
}
