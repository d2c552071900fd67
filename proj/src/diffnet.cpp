#include "deptest/diffnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "deptest/errors.hpp"

namespace deptest::diffnet {

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

const Matrix& ParamStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

Matrix& ParamStore::get_mut(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

bool ParamStore::all_finite() const {
  for (const auto& [name, t] : tensors_)
    if (!t.is_finite()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'D', 'P', 'C', 'K', 'P', 'T', '0', '1'};

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}
}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, 8);
  write_u64(out, params.tensors().size());
  for (const auto& [name, t] : params.tensors()) {
    write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(out, static_cast<std::uint64_t>(t.rows()));
    write_u64(out, static_cast<std::uint64_t>(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) {
        // little-endian IEEE-754 f64
        double d = t(i, j);
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        write_u64(out, bits);
      }
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("bad checkpoint header: " + path);
  ParamStore params;
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint64_t name_len = read_u64(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = static_cast<int>(read_u64(in));
    const auto cols = static_cast<int>(read_u64(in));
    Matrix t(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const std::uint64_t bits = read_u64(in);
        double d;
        std::memcpy(&d, &bits, 8);
        t(i, j) = d;
      }
    if (!in) throw DataError("truncated checkpoint: " + path);
    params.set(name, std::move(t));
  }
  return params;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

void init_mlp_params(ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                     numkit::Rng& rng) {
  if (spec.n_layers() < 1) throw ConfigError("MlpSpec needs at least one layer");
  for (int w : spec.widths)
    if (w <= 0) throw ConfigError("MlpSpec widths must be positive");
  for (int l = 0; l < spec.n_layers(); ++l) {
    const int fan_in = spec.widths[l];
    const int fan_out = spec.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i)
      for (int j = 0; j < fan_out; ++j) w(i, j) = rng.uniform(-bound, bound);
    Matrix b(1, fan_out);
    for (int j = 0; j < fan_out; ++j) b(0, j) = rng.uniform(-bound, bound);
    params.set(prefix + ".w" + std::to_string(l), std::move(w));
    params.set(prefix + ".b" + std::to_string(l), std::move(b));
  }
}

Matrix mlp_forward(const ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                   const Matrix& inputs) {
  if (inputs.cols() != spec.in_dim()) throw ShapeError("mlp_forward: input width mismatch");
  Matrix h = inputs;
  for (int l = 0; l < spec.n_layers(); ++l) {
    const Matrix& w = params.get(prefix + ".w" + std::to_string(l));
    const Matrix& b = params.get(prefix + ".b" + std::to_string(l));
    Matrix next = numkit::matmul(h, w);
    for (int i = 0; i < next.rows(); ++i)
      for (int j = 0; j < next.cols(); ++j) next(i, j) += b(0, j);
    if (l + 1 < spec.n_layers())
      for (int i = 0; i < next.rows(); ++i)
        for (int j = 0; j < next.cols(); ++j)
          if (next(i, j) < 0) next(i, j) = 0;
    h = std::move(next);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

namespace {
const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::AddRow: return "add_row";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Neg: return "neg";
    case OpKind::Logistic: return "logistic";
    case OpKind::Scale: return "scale";
    case OpKind::AddConst: return "add_const";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::RowSum: return "row_sum";
    case OpKind::Diag: return "diag";
    case OpKind::ZeroDiag: return "zero_diag";
    case OpKind::Reshape: return "reshape";
    case OpKind::PairwiseSqDist: return "pairwise_sqdist";
    case OpKind::RowLogSumExp: return "row_logsumexp";
    case OpKind::PermuteSym: return "permute_sym";
    case OpKind::GammaQuantile: return "gamma_quantile";
  }
  return "?";
}

bool scalar_shaped(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }
}  // namespace

Var Tape::push(Node node) {
  check_finite(node);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check_finite(const Node& n) const {
  if (!n.value.is_finite()) throw TrainingDivergence(op_name(n.kind));
}

const Matrix& Tape::value(Var v) const { return nodes_.at(v.id).value; }

const Matrix& Tape::adjoint(Var v) const { return nodes_.at(v.id).adjoint; }

Var Tape::input(Matrix value, std::string name) {
  Node n{OpKind::Input};
  n.value = std::move(value);
  n.name = std::move(name);
  return push(std::move(n));
}

Var Tape::constant(double value) { return input(Matrix(1, 1, value), "const"); }

Var Tape::param(const ParamStore& params, const std::string& name) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return {this, it->second};
  Node n{OpKind::Param};
  n.value = params.get(name);
  n.name = name;
  Var v = push(std::move(n));
  param_ids_[name] = v.id;
  return v;
}

namespace {
// Elementwise binary with 1x1 broadcast on either side.
template <typename F>
Matrix broadcast_binary(const Matrix& a, const Matrix& b, F f, const char* what) {
  if (a.same_shape(b)) {
    Matrix out(a.rows(), a.cols());
    for (int i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], b.data()[i]);
    return out;
  }
  if (scalar_shaped(b)) {
    Matrix out(a.rows(), a.cols());
    const double s = b(0, 0);
    for (int i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i], s);
    return out;
  }
  if (scalar_shaped(a)) {
    Matrix out(b.rows(), b.cols());
    const double s = a(0, 0);
    for (int i = 0; i < b.size(); ++i) out.data()[i] = f(s, b.data()[i]);
    return out;
  }
  throw ShapeError(std::string(what) + ": incompatible shapes");
}
}  // namespace

Var Tape::add(Var a, Var b) {
  Node n{OpKind::Add, a.id, b.id};
  n.value = broadcast_binary(value(a), value(b), [](double x, double y) { return x + y; }, "add");
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  Node n{OpKind::Sub, a.id, b.id};
  n.value = broadcast_binary(value(a), value(b), [](double x, double y) { return x - y; }, "sub");
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  Node n{OpKind::Mul, a.id, b.id};
  n.value = broadcast_binary(value(a), value(b), [](double x, double y) { return x * y; }, "mul");
  return push(std::move(n));
}

Var Tape::div(Var a, Var b) {
  Node n{OpKind::Div, a.id, b.id};
  n.value = broadcast_binary(value(a), value(b), [](double x, double y) { return x / y; }, "div");
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  Node n{OpKind::MatMul, a.id, b.id};
  n.value = numkit::matmul(value(a), value(b));
  return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
  const Matrix& x = value(a);
  const Matrix& r = value(row);
  if (r.rows() != 1 || r.cols() != x.cols()) throw ShapeError("add_row: row shape mismatch");
  Node n{OpKind::AddRow, a.id, row.id};
  Matrix out = x;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) += r(0, j);
  n.value = std::move(out);
  return push(std::move(n));
}

namespace {
template <typename F>
Matrix map_unary(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  for (int i = 0; i < a.size(); ++i) out.data()[i] = f(a.data()[i]);
  return out;
}
}  // namespace

Var Tape::relu(Var a) {
  Node n{OpKind::Relu, a.id};
  n.value = map_unary(value(a), [](double x) { return x > 0 ? x : 0.0; });
  return push(std::move(n));
}

Var Tape::exp(Var a) {
  Node n{OpKind::Exp, a.id};
  n.value = map_unary(value(a), [](double x) { return std::exp(x); });
  return push(std::move(n));
}

Var Tape::log(Var a) {
  Node n{OpKind::Log, a.id};
  n.value = map_unary(value(a), [](double x) { return std::log(x); });
  return push(std::move(n));
}

Var Tape::square(Var a) {
  Node n{OpKind::Square, a.id};
  n.value = map_unary(value(a), [](double x) { return x * x; });
  return push(std::move(n));
}

Var Tape::sqrt(Var a) {
  Node n{OpKind::Sqrt, a.id};
  n.value = map_unary(value(a), [](double x) { return std::sqrt(x); });
  return push(std::move(n));
}

Var Tape::neg(Var a) {
  Node n{OpKind::Neg, a.id};
  n.value = map_unary(value(a), [](double x) { return -x; });
  return push(std::move(n));
}

Var Tape::logistic(Var a) {
  Node n{OpKind::Logistic, a.id};
  n.value = map_unary(value(a), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
  Node n{OpKind::Scale, a.id};
  n.c0 = c;
  n.value = map_unary(value(a), [c](double x) { return c * x; });
  return push(std::move(n));
}

Var Tape::add_const(Var a, double c) {
  Node n{OpKind::AddConst, a.id};
  n.c0 = c;
  n.value = map_unary(value(a), [c](double x) { return x + c; });
  return push(std::move(n));
}

Var Tape::sum(Var a) {
  Node n{OpKind::Sum, a.id};
  double s = 0.0;
  for (int i = 0; i < value(a).size(); ++i) s += value(a).data()[i];
  n.value = Matrix(1, 1, s);
  return push(std::move(n));
}

Var Tape::mean(Var a) {
  if (value(a).size() == 0) throw ShapeError("mean of empty matrix");
  Node n{OpKind::Mean, a.id};
  double s = 0.0;
  for (int i = 0; i < value(a).size(); ++i) s += value(a).data()[i];
  n.value = Matrix(1, 1, s / value(a).size());
  return push(std::move(n));
}

Var Tape::row_sum(Var a) {
  const Matrix& x = value(a);
  Node n{OpKind::RowSum, a.id};
  Matrix out(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += x(i, j);
    out(i, 0) = s;
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::diag(Var a) {
  const Matrix& x = value(a);
  if (x.rows() != x.cols()) throw ShapeError("diag: matrix not square");
  Node n{OpKind::Diag, a.id};
  Matrix out(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) out(i, 0) = x(i, i);
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::zero_diag(Var a) {
  const Matrix& x = value(a);
  if (x.rows() != x.cols()) throw ShapeError("zero_diag: matrix not square");
  Node n{OpKind::ZeroDiag, a.id};
  Matrix out = x;
  for (int i = 0; i < x.rows(); ++i) out(i, i) = 0.0;
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::reshape(Var a, int rows, int cols) {
  const Matrix& x = value(a);
  if (rows * cols != x.size()) throw ShapeError("reshape: element count mismatch");
  Node n{OpKind::Reshape, a.id};
  Matrix out(rows, cols);
  std::memcpy(out.data(), x.data(), sizeof(double) * static_cast<std::size_t>(x.size()));
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::pairwise_sqdist(Var a) {
  const Matrix& f = value(a);
  const int m = f.rows();
  Node n{OpKind::PairwiseSqDist, a.id};
  Matrix out(m, m);
  for (int i = 0; i < m; ++i) {
    out(i, i) = 0.0;
    for (int j = i + 1; j < m; ++j) {
      const double d2 = numkit::squared_distance(f.row(i), f.row(j));
      out(i, j) = d2;
      out(j, i) = d2;
    }
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::row_logsumexp(Var a) {
  const Matrix& x = value(a);
  Node n{OpKind::RowLogSumExp, a.id};
  Matrix out(x.rows(), 1);
  for (int i = 0; i < x.rows(); ++i) {
    double mx = x(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x(i, j));
    double s = 0.0;
    for (int j = 0; j < x.cols(); ++j) s += std::exp(x(i, j) - mx);
    out(i, 0) = mx + std::log(s);
  }
  n.value = std::move(out);
  return push(std::move(n));
}

Var Tape::permute_sym(Var a, std::vector<int> perm) {
  const Matrix& x = value(a);
  const int m = x.rows();
  if (x.cols() != m || static_cast<int>(perm.size()) != m)
    throw ShapeError("permute_sym: shape mismatch");
  Node n{OpKind::PermuteSym, a.id};
  Matrix out(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) out(i, j) = x(perm[i], perm[j]);
  n.value = std::move(out);
  n.perm = std::move(perm);
  return push(std::move(n));
}

Var Tape::gamma_quantile(Var shape, Var scale, double p) {
  if (!scalar_shaped(value(shape)) || !scalar_shaped(value(scale)))
    throw ShapeError("gamma_quantile: shape and scale must be 1x1");
  Node n{OpKind::GammaQuantile, shape.id, scale.id};
  n.c0 = p;
  n.value = Matrix(1, 1, numkit::gamma_quantile(p, value(shape)(0, 0), value(scale)(0, 0)));
  return push(std::move(n));
}

Var Tape::mlp_graph(const ParamStore& params, const std::string& prefix, const MlpSpec& spec,
                    Var inputs) {
  if (value(inputs).cols() != spec.in_dim()) throw ShapeError("mlp_graph: input width mismatch");
  Var h = inputs;
  for (int l = 0; l < spec.n_layers(); ++l) {
    Var w = param(params, prefix + ".w" + std::to_string(l));
    Var b = param(params, prefix + ".b" + std::to_string(l));
    h = add_row(matmul(h, w), b);
    if (l + 1 < spec.n_layers()) h = relu(h);
  }
  return h;
}

void Tape::accumulate(int id, const Matrix& grad) {
  Node& n = nodes_[id];
  if (n.adjoint.empty()) n.adjoint = Matrix(n.value.rows(), n.value.cols());
  for (int i = 0; i < grad.size(); ++i) n.adjoint.data()[i] += grad.data()[i];
}

void Tape::accumulate_broadcast(int id, const Matrix& grad) {
  Node& n = nodes_[id];
  if (scalar_shaped(n.value) && !scalar_shaped(grad)) {
    double s = 0.0;
    for (int i = 0; i < grad.size(); ++i) s += grad.data()[i];
    accumulate(id, Matrix(1, 1, s));
  } else {
    accumulate(id, grad);
  }
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ShapeError("backward: var from another tape");
  if (!scalar_shaped(value(root))) throw ShapeError("backward: root must be 1x1");
  for (auto& n : nodes_) n.adjoint = Matrix();
  accumulate(root.id, Matrix(1, 1, 1.0));
  for (int id = root.id; id >= 0; --id) backward_node(id);
}

void Tape::backward_node(int id) {
  Node& n = nodes_[id];
  if (n.adjoint.empty()) return;
  const Matrix& g = n.adjoint;
  const Matrix& out = n.value;
  switch (n.kind) {
    case OpKind::Input:
    case OpKind::Param:
      break;
    case OpKind::Add: {
      accumulate_broadcast(n.a, g);
      accumulate_broadcast(n.b, g);
      break;
    }
    case OpKind::Sub: {
      accumulate_broadcast(n.a, g);
      accumulate_broadcast(n.b, map_unary(g, [](double x) { return -x; }));
      break;
    }
    case OpKind::Mul: {
      const Matrix& va = nodes_[n.a].value;
      const Matrix& vb = nodes_[n.b].value;
      accumulate_broadcast(n.a, broadcast_binary(g, vb, [](double x, double y) { return x * y; }, "mul'"));
      accumulate_broadcast(n.b, broadcast_binary(g, va, [](double x, double y) { return x * y; }, "mul'"));
      break;
    }
    case OpKind::Div: {
      const Matrix& va = nodes_[n.a].value;
      const Matrix& vb = nodes_[n.b].value;
      accumulate_broadcast(n.a, broadcast_binary(g, vb, [](double x, double y) { return x / y; }, "div'"));
      Matrix gb = broadcast_binary(broadcast_binary(g, va, [](double x, double y) { return x * y; }, "div'"),
                                   vb, [](double x, double y) { return -x / (y * y); }, "div'");
      accumulate_broadcast(n.b, gb);
      break;
    }
    case OpKind::MatMul: {
      const Matrix& va = nodes_[n.a].value;
      const Matrix& vb = nodes_[n.b].value;
      accumulate(n.a, numkit::matmul(g, numkit::transpose(vb)));
      accumulate(n.b, numkit::matmul(numkit::transpose(va), g));
      break;
    }
    case OpKind::AddRow: {
      accumulate(n.a, g);
      Matrix gr(1, g.cols());
      for (int i = 0; i < g.rows(); ++i)
        for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
      accumulate(n.b, gr);
      break;
    }
    case OpKind::Relu: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) ga.data()[i] = va.data()[i] > 0 ? g.data()[i] : 0.0;
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Exp: {
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] * out.data()[i];
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Log: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] / va.data()[i];
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Square: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) ga.data()[i] = 2.0 * g.data()[i] * va.data()[i];
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Sqrt: {
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] / (2.0 * out.data()[i]);
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Neg: {
      accumulate(n.a, map_unary(g, [](double x) { return -x; }));
      break;
    }
    case OpKind::Logistic: {
      Matrix ga(g.rows(), g.cols());
      for (int i = 0; i < g.size(); ++i) {
        const double s = out.data()[i];
        ga.data()[i] = g.data()[i] * s * (1.0 - s);
      }
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Scale: {
      accumulate(n.a, map_unary(g, [&](double x) { return n.c0 * x; }));
      break;
    }
    case OpKind::AddConst: {
      accumulate(n.a, g);
      break;
    }
    case OpKind::Sum: {
      const Matrix& va = nodes_[n.a].value;
      accumulate(n.a, Matrix(va.rows(), va.cols(), g(0, 0)));
      break;
    }
    case OpKind::Mean: {
      const Matrix& va = nodes_[n.a].value;
      accumulate(n.a, Matrix(va.rows(), va.cols(), g(0, 0) / va.size()));
      break;
    }
    case OpKind::RowSum: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(va.rows(), va.cols());
      for (int i = 0; i < va.rows(); ++i)
        for (int j = 0; j < va.cols(); ++j) ga(i, j) = g(i, 0);
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Diag: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(va.rows(), va.cols());
      for (int i = 0; i < va.rows(); ++i) ga(i, i) = g(i, 0);
      accumulate(n.a, ga);
      break;
    }
    case OpKind::ZeroDiag: {
      Matrix ga = g;
      for (int i = 0; i < ga.rows(); ++i) ga(i, i) = 0.0;
      accumulate(n.a, ga);
      break;
    }
    case OpKind::Reshape: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(va.rows(), va.cols());
      std::memcpy(ga.data(), g.data(), sizeof(double) * static_cast<std::size_t>(g.size()));
      accumulate(n.a, ga);
      break;
    }
    case OpKind::PairwiseSqDist: {
      const Matrix& f = nodes_[n.a].value;
      const int m = f.rows();
      const int d = f.cols();
      Matrix ga(m, d);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) {
          if (i == j) continue;
          const double c = 2.0 * (g(i, j) + g(j, i));
          if (c == 0.0) continue;
          for (int t = 0; t < d; ++t) ga(i, t) += c * (f(i, t) - f(j, t));
        }
      accumulate(n.a, ga);
      break;
    }
    case OpKind::RowLogSumExp: {
      const Matrix& va = nodes_[n.a].value;
      Matrix ga(va.rows(), va.cols());
      for (int i = 0; i < va.rows(); ++i)
        for (int j = 0; j < va.cols(); ++j)
          ga(i, j) = g(i, 0) * std::exp(va(i, j) - out(i, 0));
      accumulate(n.a, ga);
      break;
    }
    case OpKind::PermuteSym: {
      const int m = out.rows();
      Matrix ga(m, m);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) ga(n.perm[i], n.perm[j]) += g(i, j);
      accumulate(n.a, ga);
      break;
    }
    case OpKind::GammaQuantile: {
      const double shape = nodes_[n.a].value(0, 0);
      const double scl = nodes_[n.b].value(0, 0);
      const double r = out(0, 0);
      const double dens = numkit::gamma_pdf(r, shape, scl);
      if (!(dens > 0.0)) throw GradientUnavailable("gamma quantile pdf vanishes at the quantile");
      // Implicit differentiation of F(r; shape, scale) = p.
      const double dr_dscale = r / scl;
      const double h = 1e-5 * shape;
      const double dF_dshape =
          (numkit::gamma_cdf(r, shape + h, scl) - numkit::gamma_cdf(r, shape - h, scl)) / (2.0 * h);
      const double dr_dshape = -dF_dshape / dens;
      accumulate(n.a, Matrix(1, 1, g(0, 0) * dr_dshape));
      accumulate(n.b, Matrix(1, 1, g(0, 0) * dr_dscale));
      break;
    }
  }
}

GradMap Tape::param_grads() const {
  GradMap grads;
  for (const auto& [name, id] : param_ids_) {
    const Node& n = nodes_[id];
    grads[name] = n.adjoint.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.adjoint;
  }
  return grads;
}

GradMap grad(Tape& tape, Var objective) {
  tape.backward(objective);
  return tape.param_grads();
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

void adamw_step(ParamStore& params, const GradMap& grads, AdamWState& state,
                const AdamWConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("adamw: learning rate must be positive");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Matrix& p = params.get_mut(name);
    if (!p.same_shape(g)) throw ShapeError("adamw: gradient shape mismatch for " + name);
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m = Matrix(p.rows(), p.cols());
    if (v.empty()) v = Matrix(p.rows(), p.cols());
    for (int i = 0; i < p.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * gi;
      v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      p.data()[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p.data()[i]);
    }
    if (!p.is_finite()) throw NumericError("adamw: non-finite parameter " + name);
  }
}

}  // namespace deptest::diffnet
