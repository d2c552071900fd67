#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deptest/diffnet.hpp"
#include "deptest/kernels.hpp"

namespace deptest::estimators {

using datasets::PairedSample;
using kernels::GramPair;
using numkit::Matrix;

enum class StatKind { HsicBiased, HsicUnbiased, Nds, InfoNce, Nwj, Mmd2Perm };

struct StatValue {
  double value = 0.0;
  StatKind kind = StatKind::HsicBiased;
  int m = 0;
};

struct VarianceEstimate {
  double sigma2 = 0.0;  // 16 (R - hsic_u^2) clamped at 0, plus lambda
  double r_term = 0.0;
  double lambda = 0.0;
};

// ---------------------------------------------------------------------------
// HSIC estimators
// ---------------------------------------------------------------------------

/// (1/m^2) <K, H L H>_F via row/column/grand means, no matrix products.
StatValue hsic_biased(const GramPair& g);

/// U-statistic estimator; requires m >= 4.
StatValue hsic_unbiased(const GramPair& g);

/// Variance of sqrt(m) * hsic_unbiased via the h-vector second-moment term;
/// requires m >= 5.
VarianceEstimate hsic_variance(const GramPair& g, double lambda);

/// Three-term permuted-MMD estimator of MMD^2(Pxy, Px x Py) from p
/// permutations; with all m circular shifts it equals hsic_biased.
StatValue mmd2_biased_perm(const GramPair& g, const std::vector<std::vector<int>>& perms);

// ---------------------------------------------------------------------------
// Critic statistics
// ---------------------------------------------------------------------------

/// Real-valued function on (x, y) pairs.
class Critic {
 public:
  virtual ~Critic() = default;
  virtual double eval(std::span<const double> x, std::span<const double> y) const = 0;
  /// Matrix of f(x_i, y_j) over all pairs; default loops eval.
  virtual Matrix grid(const PairedSample& sample) const;
  /// f(x_i, y_i) along the pairing; default loops eval.
  virtual std::vector<double> paired_values(const PairedSample& sample) const;
};

/// Structure of an MLP critic f(x, y) acting on the concatenated pair.
struct CriticStructure {
  diffnet::MlpSpec mlp;  // in_dim = dx + dy, out_dim = 1
  std::string prefix = "critic";

  void init_params(diffnet::ParamStore& params, numkit::Rng& rng) const;
  Matrix grid(const diffnet::ParamStore& params, const PairedSample& sample) const;
  diffnet::Var grid_graph(diffnet::Tape& tape, const diffnet::ParamStore& params,
                          const PairedSample& sample) const;
};

class MlpCritic final : public Critic {
 public:
  MlpCritic(diffnet::ParamStore params, CriticStructure structure);
  double eval(std::span<const double> x, std::span<const double> y) const override;
  Matrix grid(const PairedSample& sample) const override;
  std::vector<double> paired_values(const PairedSample& sample) const override;
  const diffnet::ParamStore& params() const { return params_; }
  const CriticStructure& structure() const { return structure_; }

 private:
  diffnet::ParamStore params_;
  CriticStructure structure_;
};

/// T-hat: mean of f over the true pairing (the grid diagonal).
StatValue nds_stat(const Matrix& fgrid);
StatValue nds_stat(const Critic& critic, const PairedSample& sample);

/// T0-hat: V-statistic mean of f over the full cross grid.
StatValue t0_vstat(const Matrix& fgrid);
StatValue t0_vstat(const Critic& critic, const PairedSample& sample);

/// Contrastive lower-bound statistic, log-sum-exp stabilized.
StatValue infonce(const Matrix& fgrid);
StatValue infonce(const Critic& critic, const PairedSample& sample);

/// mean f(x_i, y_i) - e^{-1} * mean_{ij} e^{f(x_i, y_j)}, stabilized.
StatValue nwj(const Matrix& fgrid);
StatValue nwj(const Critic& critic, const PairedSample& sample);

/// Regularized (biased) sample variances of the diagonal and of the full
/// cross grid: (tau1_sq, tau0_sq), each plus lambda.
std::pair<double, double> sample_variances(const Matrix& fgrid, double lambda);
std::pair<double, double> sample_variances(const Critic& critic, const PairedSample& sample,
                                           double lambda);

}  // namespace deptest::estimators
