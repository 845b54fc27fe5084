#include "icl/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/transformer.hpp"

namespace icl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<int>& s) {
  std::size_t p = 1;
  for (int v : s) {
    if (v < 0) throw ShapeError("negative tensor extent");
    p *= static_cast<std::size_t>(v);
  }
  return p;
}

// View of matrix b inside a rank-2 or rank-3 tensor.
MapMat mat(Tensor& t, int b) {
  const int r = t.rows(), c = t.cols();
  return MapMat(t.data.data() + static_cast<std::size_t>(b) * r * c, r, c);
}
CMapMat mat(const Tensor& t, int b) {
  const int r = t.rows(), c = t.cols();
  return CMapMat(t.data.data() + static_cast<std::size_t>(b) * r * c, r, c);
}

void accumulate(Tensor& into, const Tensor& g) {
  for (std::size_t i = 0; i < g.data.size(); ++i) into.data[i] += g.data[i];
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double gelu(double x) { return 0.5 * x * std::erfc(-x * kInvSqrt2); }
double gelu_grad(double x) { return 0.5 * std::erfc(-x * kInvSqrt2) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(product(shape), fill) {
  if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1, 2 or 3");
}

Tensor::Tensor(std::vector<int> s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape.empty() || shape.size() > 3) throw ShapeError("tensor rank must be 1, 2 or 3");
  if (data.size() != product(shape)) throw ShapeError("tensor data does not match shape " + shape_string());
}

double& Tensor::at(std::initializer_list<int> idx) {
  if (static_cast<int>(idx.size()) != rank()) throw IndexError("tensor index rank mismatch");
  std::size_t off = 0;
  std::size_t k = 0;
  for (int i : idx) {
    if (i < 0 || i >= shape[k]) throw IndexError("tensor index out of range");
    off = off * static_cast<std::size_t>(shape[k]) + static_cast<std::size_t>(i);
    ++k;
  }
  return data[off];
}

double Tensor::at(std::initializer_list<int> idx) const { return const_cast<Tensor*>(this)->at(idx); }

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw TapeError("variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw TapeError("variable does not belong to this tape");
  return nodes_[static_cast<std::size_t>(v.id)];
}

void Tape::check_open() const {
  if (consumed_) throw TapeError("tape already consumed by backward()");
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.data.size() != n.value.data.size()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

Tape::Var Tape::push(Tensor value, std::vector<int> inputs, std::function<void(Tape&, Node&)> bw) {
  check_open();
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  for (int i : n.inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(i)].requires_grad;
  if (n.requires_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Var Tape::leaf(Tensor value, bool requires_grad) {
  check_open();
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.data.size() != n.value.data.size()) throw TapeError("no gradient recorded for this variable");
  return n.grad;
}

Tape::Var Tape::matmul(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  if (A.rank() < 2 || B.rank() < 2) throw ShapeError("matmul needs rank >= 2 operands");
  if (A.cols() != B.rows()) throw ShapeError("matmul inner extents differ: " + A.shape_string() + " x " + B.shape_string());
  const bool shared = B.rank() == 2;
  if (!shared && (A.rank() != 3 || A.batch() != B.batch())) throw ShapeError("batched matmul batch mismatch");
  if (A.rank() == 2 && B.rank() == 3) throw ShapeError("matmul of a matrix by a batch is not supported");
  const int nb = A.batch();
  std::vector<int> shape = A.shape;
  shape.back() = B.cols();
  Tensor C(shape, 0.0);
  if (shared) {
    // A batch times a shared factor is one tall product.
    const int m = nb * A.rows();
    MapMat(C.data.data(), m, B.cols()).noalias() = CMapMat(A.data.data(), m, A.cols()) * mat(B, 0);
  } else {
    for (int i = 0; i < nb; ++i) mat(C, i).noalias() = mat(A, i) * mat(B, i);
  }
  const int ia = a.id, ib = b.id;
  return push(std::move(C), {ia, ib}, [ia, ib, nb, shared](Tape& t, Node& self) {
    const Tensor& A = t.nodes_[static_cast<std::size_t>(ia)].value;
    const Tensor& B = t.nodes_[static_cast<std::size_t>(ib)].value;
    const int m = nb * A.rows();
    if (t.nodes_[static_cast<std::size_t>(ia)].requires_grad) {
      Tensor& gA = t.grad_buffer(ia);
      if (shared) {
        MapMat(gA.data.data(), m, A.cols()).noalias() += CMapMat(self.grad.data.data(), m, B.cols()) * mat(B, 0).transpose();
      } else {
        for (int i = 0; i < nb; ++i) mat(gA, i).noalias() += mat(self.grad, i) * mat(B, i).transpose();
      }
    }
    if (t.nodes_[static_cast<std::size_t>(ib)].requires_grad) {
      Tensor& gB = t.grad_buffer(ib);
      if (shared) {
        mat(gB, 0).noalias() += CMapMat(A.data.data(), m, A.cols()).transpose() * CMapMat(self.grad.data.data(), m, B.cols());
      } else {
        for (int i = 0; i < nb; ++i) mat(gB, i).noalias() += mat(A, i).transpose() * mat(self.grad, i);
      }
    }
  });
}

Tape::Var Tape::add(Var a, Var b) {
  const Tensor& A = node(a).value;
  const Tensor& B = node(b).value;
  const bool same = A.shape == B.shape;
  // A [1, cols] matrix broadcasts like a rank-1 row.
  const bool row = !same && A.rank() >= 2 && static_cast<int>(B.size()) == A.cols() &&
                   (B.rank() == 1 || (B.rank() == 2 && B.dim(0) == 1));
  if (!same && !row) throw ShapeError("add shapes incompatible: " + A.shape_string() + " + " + B.shape_string());
  Tensor C = A;
  if (same) {
    accumulate(C, B);
  } else {
    const std::size_t w = static_cast<std::size_t>(A.cols());
    for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i % w];
  }
  const int ia = a.id, ib = b.id;
  return push(std::move(C), {ia, ib}, [ia, ib, same](Tape& t, Node& self) {
    if (t.nodes_[static_cast<std::size_t>(ia)].requires_grad) accumulate(t.grad_buffer(ia), self.grad);
    if (t.nodes_[static_cast<std::size_t>(ib)].requires_grad) {
      Tensor& gB = t.grad_buffer(ib);
      if (same) {
        accumulate(gB, self.grad);
      } else {
        const std::size_t w = gB.data.size();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i) gB.data[i % w] += self.grad.data[i];
      }
    }
  });
}

Tape::Var Tape::transpose(Var a) {
  const Tensor& A = node(a).value;
  if (A.rank() < 2) throw ShapeError("transpose needs rank >= 2");
  std::vector<int> shape = A.shape;
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor C(shape, 0.0);
  const int nb = A.batch();
  for (int i = 0; i < nb; ++i) mat(C, i) = mat(A, i).transpose();
  const int ia = a.id;
  return push(std::move(C), {ia}, [ia, nb](Tape& t, Node& self) {
    Tensor& gA = t.grad_buffer(ia);
    for (int i = 0; i < nb; ++i) mat(gA, i) += mat(self.grad, i).transpose();
  });
}

Tape::Var Tape::scale(Var a, double c) {
  Tensor C = node(a).value;
  for (double& v : C.data) v *= c;
  const int ia = a.id;
  return push(std::move(C), {ia}, [ia, c](Tape& t, Node& self) {
    Tensor& gA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < gA.data.size(); ++i) gA.data[i] += c * self.grad.data[i];
  });
}

Tape::Var Tape::softmax_rows(Var a) {
  const Tensor& A = node(a).value;
  if (A.rank() < 2) throw ShapeError("softmax needs rank >= 2");
  Tensor S(A.shape, 0.0);
  const std::size_t w = static_cast<std::size_t>(A.cols());
  const std::size_t rows = A.data.size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = A.data.data() + r * w;
    double* out = S.data.data() + r * w;
    const double top = *std::max_element(in, in + w);
    double total = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
      out[j] = std::exp(in[j] - top);
      total += out[j];
    }
    for (std::size_t j = 0; j < w; ++j) out[j] /= total;
  }
  const int ia = a.id;
  return push(std::move(S), {ia}, [ia, w, rows](Tape& t, Node& self) {
    Tensor& gA = t.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = self.value.data.data() + r * w;
      const double* g = self.grad.data.data() + r * w;
      double dot = 0.0;
      for (std::size_t j = 0; j < w; ++j) dot += s[j] * g[j];
      for (std::size_t j = 0; j < w; ++j) gA.data[r * w + j] += s[j] * (g[j] - dot);
    }
  });
}

Tape::Var Tape::activation(Var a, Activation rho) {
  Tensor C = node(a).value;
  for (double& v : C.data) {
    switch (rho) {
      case Activation::relu: v = v > 0.0 ? v : 0.0; break;
      case Activation::gelu: v = gelu(v); break;
      case Activation::silu: v = silu(v); break;
    }
  }
  const int ia = a.id;
  return push(std::move(C), {ia}, [ia, rho](Tape& t, Node& self) {
    const Tensor& X = t.nodes_[static_cast<std::size_t>(ia)].value;
    Tensor& gA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < X.data.size(); ++i) {
      const double x = X.data[i];
      double d = 0.0;
      switch (rho) {
        case Activation::relu: d = x > 0.0 ? 1.0 : 0.0; break;
        case Activation::gelu: d = gelu_grad(x); break;
        case Activation::silu: d = silu_grad(x); break;
      }
      gA.data[i] += d * self.grad.data[i];
    }
  });
}

Tape::Var Tape::select(Var a, int row, int col) {
  const Tensor& A = node(a).value;
  if (A.rank() < 2) throw ShapeError("select needs rank >= 2");
  if (row < 0 || row >= A.rows() || col < 0 || col >= A.cols()) throw IndexError("select index out of range");
  const int nb = A.batch();
  Tensor C({nb}, 0.0);
  const std::size_t stride = static_cast<std::size_t>(A.rows()) * A.cols();
  const std::size_t off = static_cast<std::size_t>(row) * A.cols() + col;
  for (int i = 0; i < nb; ++i) C.data[static_cast<std::size_t>(i)] = A.data[i * stride + off];
  const int ia = a.id;
  return push(std::move(C), {ia}, [ia, nb, stride, off](Tape& t, Node& self) {
    Tensor& gA = t.grad_buffer(ia);
    for (int i = 0; i < nb; ++i) gA.data[i * stride + off] += self.grad.data[static_cast<std::size_t>(i)];
  });
}

Tape::Var Tape::mse_loss(Var pred, const Tensor& target) {
  const Tensor& P = node(pred).value;
  if (P.data.size() != target.data.size()) throw ShapeError("mse_loss prediction and target sizes differ");
  if (P.data.empty()) throw ShapeError("mse_loss on an empty tensor");
  const double inv = 1.0 / static_cast<double>(P.data.size());
  double total = 0.0;
  for (std::size_t i = 0; i < P.data.size(); ++i) {
    const double r = P.data[i] - target.data[i];
    total += r * r;
  }
  Tensor L({1}, total * inv);
  const int ip = pred.id;
  return push(std::move(L), {ip}, [ip, target, inv](Tape& t, Node& self) {
    const Tensor& P = t.nodes_[static_cast<std::size_t>(ip)].value;
    Tensor& gP = t.grad_buffer(ip);
    const double g = self.grad.data[0];
    for (std::size_t i = 0; i < P.data.size(); ++i) gP.data[i] += 2.0 * inv * g * (P.data[i] - target.data[i]);
  });
}

void Tape::backward(Var loss) {
  check_open();
  Node& root = node(loss);
  if (root.value.data.size() != 1) throw ShapeError("backward needs a scalar loss");
  consumed_ = true;
  grad_buffer(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.backward || n.grad.data.size() != n.value.data.size()) continue;
    n.backward(*this, n);
  }
}

double grad_check(const TapeFunction& f, std::vector<Tensor>& params, double h, double floor) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Tape::Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    const auto loss = f(tape, vars);
    tape.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& n = vars[k];
      try {
        analytic.push_back(tape.grad(n));
      } catch (const TapeError&) {
        analytic.emplace_back(params[k].shape, 0.0);
      }
    }
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Tape::Var> vars;
    for (const auto& p : params) vars.push_back(tape.leaf(p));
    return tape.value(f(tape, vars)).data[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].data.size(); ++i) {
      const double keep = params[k].data[i];
      params[k].data[i] = keep + h;
      const double up = eval();
      params[k].data[i] = keep - h;
      const double down = eval();
      params[k].data[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k].data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace icl
