#include "deptest/kernels.hpp"

#include <cmath>

#include "deptest/errors.hpp"

namespace deptest::kernels {

Matrix Kernel::gram(const Matrix& pts) const {
  const int m = pts.rows();
  Matrix g(m, m);
  for (int i = 0; i < m; ++i) {
    g(i, i) = eval(pts.row(i), pts.row(i));
    for (int j = i + 1; j < m; ++j) {
      const double v = eval(pts.row(i), pts.row(j));
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

GaussianKernel::GaussianKernel(double bandwidth) : bandwidth_(bandwidth) {
  if (!(bandwidth > 0.0)) throw ConfigError("GaussianKernel: bandwidth must be positive");
}

double GaussianKernel::eval(std::span<const double> a, std::span<const double> b) const {
  return std::exp(-numkit::squared_distance(a, b) / (2.0 * bandwidth_ * bandwidth_));
}

Matrix GaussianKernel::gram(const Matrix& pts) const {
  const int m = pts.rows();
  Matrix g(m, m);
  const double inv = -1.0 / (2.0 * bandwidth_ * bandwidth_);
  for (int i = 0; i < m; ++i) {
    g(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      const double v = std::exp(inv * numkit::squared_distance(pts.row(i), pts.row(j)));
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

GaussianKernel median_heuristic_kernel(const Matrix& points) {
  const double med = numkit::median_pairwise_sqdist(points);
  if (!(med > 0.0))
    throw DegenerateDataError("median heuristic: zero median pairwise distance");
  return GaussianKernel(std::sqrt(med));
}

// ---------------------------------------------------------------------------
// DeepKernelStructure
// ---------------------------------------------------------------------------

DeepKernelStructure DeepKernelStructure::deep(diffnet::MlpSpec featurizer, std::string prefix) {
  DeepKernelStructure s;
  s.featurizer = std::move(featurizer);
  s.prefix = std::move(prefix);
  s.plain_gaussian = false;
  return s;
}

DeepKernelStructure DeepKernelStructure::plain(std::string prefix) {
  DeepKernelStructure s;
  s.prefix = std::move(prefix);
  s.plain_gaussian = true;
  return s;
}

void DeepKernelStructure::init_params(diffnet::ParamStore& params, numkit::Rng& rng) const {
  if (plain_gaussian) {
    params.set(prefix + ".log_bw", Matrix(1, 1, 0.1 * rng.normal()));
    return;
  }
  diffnet::init_mlp_params(params, prefix, featurizer, rng);
  params.set(prefix + ".log_bw_feature", Matrix(1, 1, 0.1 * rng.normal()));
  params.set(prefix + ".log_bw_smooth", Matrix(1, 1, 0.1 * rng.normal()));
  params.set(prefix + ".mixture_logit", Matrix(1, 1, std::log(0.01 / 0.99)));
}

double DeepKernelStructure::eval(const diffnet::ParamStore& params, std::span<const double> a,
                                 std::span<const double> b) const {
  if (a.size() != b.size()) throw ShapeError("deep kernel eval: dimension mismatch");
  if (plain_gaussian) {
    const double bw = std::exp(params.scalar(prefix + ".log_bw"));
    return std::exp(-numkit::squared_distance(a, b) / (2.0 * bw * bw));
  }
  Matrix two(2, static_cast<int>(a.size()));
  for (std::size_t j = 0; j < a.size(); ++j) {
    two(0, static_cast<int>(j)) = a[j];
    two(1, static_cast<int>(j)) = b[j];
  }
  const Matrix f = diffnet::mlp_forward(params, prefix, featurizer, two);
  const double bw_f = std::exp(params.scalar(prefix + ".log_bw_feature"));
  const double bw_q = std::exp(params.scalar(prefix + ".log_bw_smooth"));
  const double logit = params.scalar(prefix + ".mixture_logit");
  const double eps = 1.0 / (1.0 + std::exp(-logit));
  const double kf = std::exp(-numkit::squared_distance(f.row(0), f.row(1)) / (2.0 * bw_f * bw_f));
  const double kq = std::exp(-numkit::squared_distance(a, b) / (2.0 * bw_q * bw_q));
  return (1.0 - eps) * kf + eps * kq;
}

Matrix DeepKernelStructure::gram(const diffnet::ParamStore& params, const Matrix& pts) const {
  const int m = pts.rows();
  if (plain_gaussian)
    return GaussianKernel(std::exp(params.scalar(prefix + ".log_bw"))).gram(pts);
  const Matrix f = diffnet::mlp_forward(params, prefix, featurizer, pts);
  const double bw_f = std::exp(params.scalar(prefix + ".log_bw_feature"));
  const double bw_q = std::exp(params.scalar(prefix + ".log_bw_smooth"));
  const double eps = 1.0 / (1.0 + std::exp(-params.scalar(prefix + ".mixture_logit")));
  const double inv_f = -1.0 / (2.0 * bw_f * bw_f);
  const double inv_q = -1.0 / (2.0 * bw_q * bw_q);
  Matrix g(m, m);
  for (int i = 0; i < m; ++i) {
    g(i, i) = 1.0;
    for (int j = i + 1; j < m; ++j) {
      const double kf = std::exp(inv_f * numkit::squared_distance(f.row(i), f.row(j)));
      const double kq = std::exp(inv_q * numkit::squared_distance(pts.row(i), pts.row(j)));
      const double v = (1.0 - eps) * kf + eps * kq;
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

diffnet::Var DeepKernelStructure::gram_graph(diffnet::Tape& tape, const diffnet::ParamStore& params,
                                             const Matrix& pts) const {
  using diffnet::Var;
  Var x = tape.input(pts, prefix + ".points");
  if (plain_gaussian) {
    Var sq = tape.pairwise_sqdist(x);
    Var bw = tape.exp(tape.param(params, prefix + ".log_bw"));
    return tape.exp(tape.neg(tape.div(sq, tape.scale(tape.square(bw), 2.0))));
  }
  Var f = tape.mlp_graph(params, prefix, featurizer, x);
  Var bw_f = tape.exp(tape.param(params, prefix + ".log_bw_feature"));
  Var kf = tape.exp(tape.neg(tape.div(tape.pairwise_sqdist(f), tape.scale(tape.square(bw_f), 2.0))));
  Var bw_q = tape.exp(tape.param(params, prefix + ".log_bw_smooth"));
  Var kq = tape.exp(tape.neg(tape.div(tape.pairwise_sqdist(x), tape.scale(tape.square(bw_q), 2.0))));
  Var eps = tape.logistic(tape.param(params, prefix + ".mixture_logit"));
  Var one = tape.constant(1.0);
  return tape.add(tape.mul(kf, tape.sub(one, eps)), tape.mul(kq, eps));
}

// ---------------------------------------------------------------------------
// DeepKernel
// ---------------------------------------------------------------------------

DeepKernel::DeepKernel(diffnet::ParamStore params, DeepKernelStructure structure)
    : params_(std::move(params)), structure_(std::move(structure)) {}

double DeepKernel::eval(std::span<const double> a, std::span<const double> b) const {
  return structure_.eval(params_, a, b);
}

Matrix DeepKernel::gram(const Matrix& pts) const { return structure_.gram(params_, pts); }

double DeepKernel::feature_bandwidth() const {
  return std::exp(params_.scalar(structure_.prefix +
                                 (structure_.plain_gaussian ? ".log_bw" : ".log_bw_feature")));
}

double DeepKernel::smooth_bandwidth() const {
  return std::exp(params_.scalar(structure_.prefix +
                                 (structure_.plain_gaussian ? ".log_bw" : ".log_bw_smooth")));
}

double DeepKernel::mixture_eps() const {
  if (structure_.plain_gaussian) return 1.0;
  const double logit = params_.scalar(structure_.prefix + ".mixture_logit");
  return 1.0 / (1.0 + std::exp(-logit));
}

// ---------------------------------------------------------------------------
// GramPair
// ---------------------------------------------------------------------------

GramPair gram_pair(const Kernel& kernel_x, const Kernel& kernel_y, const PairedSample& sample) {
  if (sample.m() < 1) throw SampleSizeError("gram_pair: empty sample");
  return gram_pair_from(kernel_x.gram(sample.x), kernel_y.gram(sample.y));
}

GramPair gram_pair_from(Matrix k, Matrix l) {
  if (k.rows() != k.cols() || l.rows() != l.cols() || k.rows() != l.rows())
    throw ShapeError("gram_pair_from: matrices must be square and same size");
  GramPair g;
  g.kt = k;
  g.lt = l;
  for (int i = 0; i < k.rows(); ++i) {
    g.kt(i, i) = 0.0;
    g.lt(i, i) = 0.0;
  }
  g.k = std::move(k);
  g.l = std::move(l);
  return g;
}

}  // namespace deptest::kernels
