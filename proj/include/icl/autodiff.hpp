#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

namespace icl {

enum class Activation;

// Dense row-major tensor of doubles; rank 1 to 3.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i < 0 ? rank() + i : i)]; }
  // Number of matrices in a rank-3 tensor, 1 otherwise.
  int batch() const { return rank() == 3 ? shape[0] : 1; }
  int rows() const { return dim(-2); }
  int cols() const { return dim(-1); }
  double& at(std::initializer_list<int> idx);
  double at(std::initializer_list<int> idx) const;
  std::string shape_string() const;
};

// Single-use reverse-mode tape. Nodes are created in topological order;
// backward() walks them once in reverse and then the tape is consumed.
class Tape {
 public:
  struct Var {
    int id = -1;
  };

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // [m,k]x[k,n], [B,m,k]x[k,n] (shared right factor) or [B,m,k]x[B,k,n].
  Var matmul(Var a, Var b);
  // Same shape, or b a row vector of length cols(a) broadcast over rows.
  Var add(Var a, Var b);
  Var transpose(Var a);  // swaps the last two axes
  Var scale(Var a, double c);
  Var softmax_rows(Var a);
  Var activation(Var a, Activation rho);
  // Entry (row, col) of every matrix in the batch, as a vector of length batch.
  Var select(Var a, int row, int col);
  // mean((pred - target)^2) as a scalar.
  Var mse_loss(Var pred, const Tensor& target);

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;
  void backward(Var loss);
  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    std::function<void(Tape&, Node&)> backward;
  };
  Var push(Tensor value, std::vector<int> inputs, std::function<void(Tape&, Node&)> bw);
  Node& node(Var v);
  const Node& node(Var v) const;
  void check_open() const;
  Tensor& grad_buffer(int id);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all
// parameter entries, with central differences of step h.
using TapeFunction = std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>;
double grad_check(const TapeFunction& f, std::vector<Tensor>& params, double h = 1e-5, double floor = 1e-6);

double gelu(double x);
double gelu_grad(double x);
double silu(double x);
double silu_grad(double x);

}  // namespace icl
