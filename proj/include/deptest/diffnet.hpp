#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "deptest/numkit.hpp"

namespace deptest::diffnet {

using numkit::Matrix;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named tensors, iterated in name order for determinism.
class ParamStore {
 public:
  void set(const std::string& name, Matrix value) { tensors_[name] = std::move(value); }
  const Matrix& get(const std::string& name) const;
  Matrix& get_mut(const std::string& name);
  bool has(const std::string& name) const { return tensors_.count(name) > 0; }

  double scalar(const std::string& name) const { return get(name)(0, 0); }

  const std::map<std::string, Matrix>& tensors() const { return tensors_; }
  std::map<std::string, Matrix>& tensors() { return tensors_; }

  bool all_finite() const;

 private:
  std::map<std::string, Matrix> tensors_;
};

using GradMap = std::map<std::string, Matrix>;

/// Binary checkpoint: key -> tensor with explicit shapes, little-endian f64;
/// round-trips bit-exactly.
void save_checkpoint(const ParamStore& params, const std::string& path);
ParamStore load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Layer widths including input and output; ReLU on hidden layers, linear
/// output.
struct MlpSpec {
  std::vector<int> widths;
  int n_layers() const { return static_cast<int>(widths.size()) - 1; }
  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }
};

/// Weights uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); parameter names are
/// "<prefix>.w<i>" / "<prefix>.b<i>".
void init_mlp_params(ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                     numkit::Rng& rng);

/// Plain forward pass: row i of the output is the network applied to row i.
Matrix mlp_forward(const ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                   const Matrix& inputs);

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class OpKind : std::uint8_t {
  Input,
  Param,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  AddRow,   // (m x n) + broadcast row (1 x n)
  Relu,
  Exp,
  Log,
  Square,
  Sqrt,
  Neg,
  Logistic,
  Scale,     // c0 * x
  AddConst,  // x + c0
  Sum,       // -> 1x1
  Mean,      // -> 1x1
  RowSum,    // m x n -> m x 1
  Diag,      // m x m -> m x 1
  ZeroDiag,
  Reshape,
  PairwiseSqDist,  // m x d -> m x m of squared row distances
  RowLogSumExp,    // m x n -> m x 1, max-stabilized
  PermuteSym,      // out[i][j] = in[perm[i]][perm[j]]
  GammaQuantile,   // (shape 1x1, scale 1x1) -> quantile at fixed p = c0
};

class Tape;

/// Lightweight handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

/// Define-by-run reverse-mode tape over matrix-valued ops. Values are
/// computed eagerly at node creation; backward() fills adjoints in reverse
/// order. Non-finite forward values raise TrainingDivergence with the op
/// name.
class Tape {
 public:
  Var input(Matrix value, std::string name = "input");
  Var constant(double value);

  /// Registers params.get(name); repeated registration of the same name
  /// returns the same node, so shared parameters accumulate one gradient.
  Var param(const ParamStore& params, const std::string& name);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var matmul(Var a, Var b);
  Var add_row(Var a, Var row);
  Var relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var sqrt(Var a);
  Var neg(Var a);
  Var logistic(Var a);
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var sum(Var a);
  Var mean(Var a);
  Var row_sum(Var a);
  Var diag(Var a);
  Var zero_diag(Var a);
  Var reshape(Var a, int rows, int cols);
  Var pairwise_sqdist(Var a);
  Var row_logsumexp(Var a);
  Var permute_sym(Var a, std::vector<int> perm);
  Var gamma_quantile(Var shape, Var scale, double p);

  const Matrix& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }

  /// Reverse pass from a 1x1 root; adjoint of the root is 1.
  void backward(Var root);

  const Matrix& adjoint(Var v) const;

  /// Adjoints of registered parameters, keyed by name. Only valid after
  /// backward().
  GradMap param_grads() const;

  /// MLP forward as graph ops; inputs may be any previously created var.
  Var mlp_graph(const ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                Var inputs);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    OpKind kind;
    int a = -1, b = -1;
    double c0 = 0.0;
    std::vector<int> perm;
    std::string name;
    Matrix value;
    Matrix adjoint;
  };

  Var push(Node node);
  void check_finite(const Node& n) const;
  void backward_node(int id);
  void accumulate(int id, const Matrix& grad);
  // Adds grad to node `id`, reducing over broadcast if the node is 1x1 but
  // grad is larger.
  void accumulate_broadcast(int id, const Matrix& grad);

  std::vector<Node> nodes_;
  std::map<std::string, int> param_ids_;
};

/// Gradient of a scalar root with respect to every registered parameter.
GradMap grad(Tape& tape, Var objective);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::int64_t step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

/// Decoupled weight decay: p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p).
/// Only parameters present in `grads` are updated. Gradient ascent is done by
/// negating gradients upstream.
void adamw_step(ParamStore& params, const GradMap& grads, AdamWState& state,
                const AdamWConfig& cfg);

}  // namespace deptest::diffnet
