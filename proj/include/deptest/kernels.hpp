#pragma once

#include <memory>
#include <span>
#include <string>

#include "deptest/datasets.hpp"
#include "deptest/diffnet.hpp"
#include "deptest/numkit.hpp"

namespace deptest::kernels {

using datasets::PairedSample;
using numkit::Matrix;

class Kernel {
 public:
  virtual ~Kernel() = default;
  virtual double eval(std::span<const double> a, std::span<const double> b) const = 0;
  /// Gram matrix over rows of pts; default loops eval per entry.
  virtual Matrix gram(const Matrix& pts) const;
};

/// k(x, x') = exp(-||x - x'||^2 / (2 sigma^2)).
class GaussianKernel final : public Kernel {
 public:
  explicit GaussianKernel(double bandwidth);
  double bandwidth() const { return bandwidth_; }
  double eval(std::span<const double> a, std::span<const double> b) const override;
  Matrix gram(const Matrix& pts) const override;

 private:
  double bandwidth_;
};

/// Gaussian kernel with bandwidth^2 set to the lower-median pairwise squared
/// distance. Throws DegenerateDataError when all points coincide.
GaussianKernel median_heuristic_kernel(const Matrix& points);

/// Structure of a learnable kernel, separate from its parameter values.
/// Parameter names live under `prefix`:
///   deep variant:  .w<i>/.b<i> featurizer layers, .log_bw_feature,
///                  .log_bw_smooth, .mixture_logit
///   plain variant: .log_bw (Gaussian with learnable bandwidth, no featurizer)
struct DeepKernelStructure {
  diffnet::MlpSpec featurizer;  // ignored for the plain variant
  std::string prefix = "k";
  bool plain_gaussian = false;

  static DeepKernelStructure deep(diffnet::MlpSpec featurizer, std::string prefix);
  static DeepKernelStructure plain(std::string prefix);

  /// Bandwidths start near 1.0 with small jitter; the mixture weight starts
  /// at 0.01.
  void init_params(diffnet::ParamStore& params, numkit::Rng& rng) const;

  double eval(const diffnet::ParamStore& params, std::span<const double> a,
              std::span<const double> b) const;
  Matrix gram(const diffnet::ParamStore& params, const Matrix& pts) const;

  /// Differentiable Gram matrix; registers this structure's parameters on the
  /// tape, so two structures sharing a prefix share gradients.
  diffnet::Var gram_graph(diffnet::Tape& tape, const diffnet::ParamStore& params,
                          const Matrix& pts) const;
};

/// Value-type deep kernel: (1-eps) * kappa(f(x), f(x')) + eps * q(x, x') with
/// frozen parameters, used at test time.
class DeepKernel final : public Kernel {
 public:
  DeepKernel(diffnet::ParamStore params, DeepKernelStructure structure);

  double eval(std::span<const double> a, std::span<const double> b) const override;
  Matrix gram(const Matrix& pts) const override;

  double feature_bandwidth() const;
  double smooth_bandwidth() const;
  double mixture_eps() const;

  const diffnet::ParamStore& params() const { return params_; }
  const DeepKernelStructure& structure() const { return structure_; }

 private:
  diffnet::ParamStore params_;
  DeepKernelStructure structure_;
};

/// Gram matrices K (on x) and L (on y) with zero-diagonal companions.
struct GramPair {
  Matrix k, l;    // full
  Matrix kt, lt;  // zero diagonal, off-diagonals agree with k, l
  int m() const { return k.rows(); }
};

GramPair gram_pair(const Kernel& kernel_x, const Kernel& kernel_y, const PairedSample& sample);
GramPair gram_pair_from(Matrix k, Matrix l);

}  // namespace deptest::kernels
