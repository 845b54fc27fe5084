#include "doctest.h"

#include <cmath>
#include <utility>
#include <vector>

#include "icl/autodiff.hpp"
#include "icl/errors.hpp"
#include "icl/rng.hpp"
#include "icl/transformer.hpp"

using namespace icl;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Scalar through a fixed random projection of the last row, so gradients
// are not trivially uniform.
Tape::Var project(Tape& tape, Tape::Var a, Rng& rng) {
  Tensor w({tape.value(a).cols(), 1}, 0.0);
  for (double& x : w.data) x = rng.normal();
  auto out = tape.matmul(a, tape.constant(w));
  const auto& o = tape.value(out);
  return tape.mse_loss(tape.select(out, o.rows() - 1, 0), Tensor({o.batch()}, 0.3));
}

}  // namespace

TEST_CASE("matmul values") {
  Rng rng(1);
  const Tensor A = random_tensor({3, 4}, rng), B = random_tensor({4, 2}, rng);
  Tape tape;
  const auto C = tape.value(tape.matmul(tape.constant(A), tape.constant(B)));
  REQUIRE(C.shape == std::vector<int>{3, 2});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += A.at({i, k}) * B.at({k, j});
      CHECK(std::abs(C.at({i, j}) - s) <= 1e-12);
    }

  Tensor I({4, 4}, 0.0);
  for (int i = 0; i < 4; ++i) I.at({i, i}) = 1.0;
  Tape t2;
  CHECK(t2.value(t2.matmul(t2.constant(I), t2.constant(B))).data == B.data);

  Tape t3;
  CHECK_THROWS_AS(t3.matmul(t3.constant(A), t3.constant(A)), ShapeError);
}

TEST_CASE("batched matmul variants") {
  Rng rng(2);
  const Tensor A = random_tensor({2, 3, 4}, rng), W = random_tensor({4, 5}, rng), Bb = random_tensor({2, 4, 3}, rng);
  Tape tape;
  const auto S = tape.value(tape.matmul(tape.constant(A), tape.constant(W)));
  const auto P = tape.value(tape.matmul(tape.constant(A), tape.constant(Bb)));
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += A.at({b, i, k}) * W.at({k, j});
        CHECK(std::abs(S.at({b, i, j}) - s) <= 1e-12);
      }
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += A.at({b, i, k}) * Bb.at({b, k, j});
        CHECK(std::abs(P.at({b, i, j}) - s) <= 1e-12);
      }
    }
}

TEST_CASE("gradient of half the squared Frobenius norm is the matrix") {
  Rng rng(3);
  const Tensor A = random_tensor({3, 3}, rng);
  Tape tape;
  auto a = tape.leaf(A);
  // mean((A - 0)^2) = |A|^2 / 9, so grad = 2A/9.
  auto loss = tape.mse_loss(a, Tensor({3, 3}, 0.0));
  tape.backward(loss);
  const auto& g = tape.grad(a);
  for (std::size_t i = 0; i < A.size(); ++i) CHECK(g.data[i] * 9.0 / 2.0 == doctest::Approx(A.data[i]).epsilon(1e-14));
}

TEST_CASE("derivative of x squared") {
  Tape tape;
  auto x = tape.leaf(Tensor({1}, std::vector<double>{3.0}));
  auto loss = tape.mse_loss(x, Tensor({1}, 0.0));
  tape.backward(loss);
  CHECK(std::abs(tape.grad(x).data[0] - 6.0) <= 1e-8);
  CHECK(tape.consumed());
  CHECK_THROWS_AS(tape.backward(loss), TapeError);
  CHECK_THROWS_AS(tape.leaf(Tensor({1}, 0.0)), TapeError);
}

TEST_CASE("identical prediction and target") {
  Tape tape;
  const Tensor v({4}, std::vector<double>{1, -2, 3, 0.5});
  auto p = tape.leaf(v);
  auto loss = tape.mse_loss(p, v);
  CHECK(tape.value(loss).data[0] == 0.0);
  tape.backward(loss);
  for (double g : tape.grad(p).data) CHECK(g == 0.0);
}

TEST_CASE("softmax rows") {
  Tape tape;
  const auto s = tape.value(tape.softmax_rows(tape.constant(Tensor({2, 2}, std::vector<double>{0.0, std::log(3.0), 5.0, 5.0}))));
  CHECK(s.data[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s.data[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.data[2] == 0.5);
  CHECK(s.data[3] == 0.5);

  Rng rng(4);
  Tensor row = random_tensor({1, 7}, rng);
  Tensor shifted = row;
  Tape t2;
  const auto a = t2.value(t2.softmax_rows(t2.constant(row)));
  for (double& v : shifted.data) v += 4.0;
  const auto b = t2.value(t2.softmax_rows(t2.constant(shifted)));
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a.data[i];
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  const auto c = rowwise_softmax(to_matrix(row));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == c(0, static_cast<Eigen::Index>(i)));
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) <= 1e-15);

  const Tensor flat({1, 5}, 2.0);
  Tape t3;
  for (double v : t3.value(t3.softmax_rows(t3.constant(flat))).data) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("activation values") {
  Tape tape;
  const auto r = tape.value(tape.activation(tape.constant(Tensor({2}, std::vector<double>{-1.0, 2.0})), Activation::relu));
  CHECK(r.data[0] == 0.0);
  CHECK(r.data[1] == 2.0);
  CHECK(gelu(0.0) == 0.0);
  CHECK(silu(0.0) == 0.0);
  const double phi1 = 0.5 * std::erfc(-1.0 / std::sqrt(2.0));
  CHECK(gelu(1.0) == doctest::Approx(phi1).epsilon(1e-15));
  CHECK(gelu(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(silu(1.0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  for (double x : {-3.0, -0.7, 0.2, 1.9}) {
    const double h = 1e-6;
    CHECK(gelu_grad(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-7));
    CHECK(silu_grad(x) == doctest::Approx((silu(x + h) - silu(x - h)) / (2 * h)).epsilon(1e-7));
  }
}

TEST_CASE("each op passes a gradient check in isolation") {
  Rng rng(5);
  std::vector<Tensor> ab{random_tensor({2, 3, 4}, rng), random_tensor({4, 3}, rng)};
  CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
          Rng r(6);
          return project(t, t.matmul(v[0], v[1]), r);
        }, ab) < 1e-6);

  std::vector<Tensor> bb{random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)};
  CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
          Rng r(7);
          return project(t, t.matmul(v[0], v[1]), r);
        }, bb) < 1e-6);

  std::vector<Tensor> add{random_tensor({2, 3, 4}, rng), random_tensor({1, 4}, rng)};
  CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
          Rng r(8);
          return project(t, t.add(v[0], v[1]), r);
        }, add) < 1e-6);

  std::vector<Tensor> tr{random_tensor({2, 3, 4}, rng)};
  CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
          Rng r(9);
          return project(t, t.scale(t.transpose(v[0]), 1.7), r);
        }, tr) < 1e-6);

  std::vector<Tensor> sm{random_tensor({2, 3, 4}, rng)};
  CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
          Rng r(10);
          return project(t, t.softmax_rows(v[0]), r);
        }, sm) < 1e-6);

  for (auto act : {Activation::relu, Activation::gelu, Activation::silu}) {
    std::vector<Tensor> x{random_tensor({3, 4}, rng)};
    CHECK(grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
            Rng r(11);
            return project(t, t.activation(v[0], act), r);
          }, x) < 1e-5);
  }
}

TEST_CASE("transformer gradient check") {
  for (auto act : {Activation::relu, Activation::gelu, Activation::silu}) {
    TFConfig cfg;
    cfg.L = 3;
    cfg.H = 1;
    cfg.d_model = 6;
    cfg.d_ffn = 8;
    cfg.N = 8;
    cfg.activation = act;
    Rng rng(12);
    auto params = init_params(cfg, InitScheme::gaussian, rng);
    for (auto* m : params.tensors())
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = 0.5 * rng.normal();

    std::vector<Episode> eps(2);
    for (auto& e : eps) {
      e.d = 1;
      for (int i = 0; i < 3; ++i) {
        e.xs.push_back(rng.uniform());
        e.ys.push_back(rng.normal());
      }
      e.query = {rng.uniform()};
      e.target = rng.normal();
    }
    const Tensor Z = embed_batch({&eps[0], &eps[1]}, cfg.d_model, cfg.N);
    const Tensor target({2}, std::vector<double>{eps[0].target, eps[1].target});

    std::vector<Tensor> flat;
    for (const auto* m : std::as_const(params).tensors()) flat.push_back(to_tensor(*m));
    // FFN biases enter the tape as rank-1 rows.
    for (int b = 0; b < cfg.L; ++b) {
      auto& v = flat[static_cast<std::size_t>(b * (3 * cfg.H + 3) + 3 * cfg.H + 1)];
      v.shape = {static_cast<int>(v.size())};
    }
    const double err = grad_check([&](Tape& t, const std::vector<Tape::Var>& v) {
      auto z = t.constant(Z);
      return t.mse_loss(tf_forward_tape(t, v, cfg, z), target);
    }, flat);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("reruns are bitwise identical") {
  Rng rng(13);
  const Tensor A = random_tensor({2, 4, 4}, rng), W = random_tensor({4, 4}, rng);
  auto run = [&](std::vector<double>& grad) {
    Tape t;
    auto a = t.leaf(A);
    auto w = t.leaf(W);
    auto s = t.softmax_rows(t.matmul(a, w));
    auto loss = t.mse_loss(t.select(s, 3, 1), Tensor({2}, 0.1));
    const double v = t.value(loss).data[0];
    t.backward(loss);
    grad = t.grad(w).data;
    return v;
  };
  std::vector<double> g1, g2;
  CHECK(run(g1) == run(g2));
  CHECK(g1 == g2);
}
