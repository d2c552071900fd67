#pragma once

#include "deptest/estimators.hpp"

namespace deptest::objectives {

using datasets::PairedSample;
using diffnet::Tape;
using diffnet::Var;
using estimators::CriticStructure;
using kernels::DeepKernelStructure;
using kernels::GramPair;

enum class ObjectiveVariant {
  NdsWithThreshold,
  NdsPlain,
  HsicPlain,
  HsicWithGammaThreshold,
};

struct ObjectiveConfig {
  double lambda = 1e-8;
  double alpha = 0.05;
  int m_target = 0;  // planned test size for threshold terms; 0 = batch size
  ObjectiveVariant variant = ObjectiveVariant::HsicPlain;
  int gamma_perms = 20;  // permutations behind the gamma moment estimates
};

/// SNR objective for critic statistics:
///   (T - T0)/tau1 - (tau0 / (sqrt(m_target) tau1)) * Phi^{-1}(1 - alpha),
/// with the threshold term dropped for the plain variant. Differentiable in
/// the grid entries.
Var j_nds_from_grid(Tape& tape, Var fgrid, const ObjectiveConfig& cfg);
Var j_nds(Tape& tape, const diffnet::ParamStore& params, const CriticStructure& critic,
          const PairedSample& batch, const ObjectiveConfig& cfg);

/// SNR objective for HSIC: hsic_u / sqrt(16(R - hsic_u^2)_+ + lambda), with
/// an optional gamma-approximated threshold term
///   - r_hat / (m_target * sigma)
/// whose gradients flow through the gamma shape and scale by implicit
/// differentiation. gamma_rng drives the in-batch permutations behind the
/// gamma moments (required for that variant).
Var j_hsic_from_grams(Tape& tape, Var gram_k, Var gram_l, const ObjectiveConfig& cfg,
                      numkit::Rng* gamma_rng = nullptr);
Var j_hsic(Tape& tape, const diffnet::ParamStore& params, const DeepKernelStructure& kernel_x,
           const DeepKernelStructure& kernel_y, const PairedSample& batch,
           const ObjectiveConfig& cfg, numkit::Rng* gamma_rng = nullptr);

/// Direct maximization targets for the contrastive bounds.
Var infonce_objective(Tape& tape, const diffnet::ParamStore& params,
                      const CriticStructure& critic, const PairedSample& batch);
Var nwj_objective(Tape& tape, const diffnet::ParamStore& params, const CriticStructure& critic,
                  const PairedSample& batch);

/// Graph forms of the HSIC estimators, shared by the objectives above.
Var hsic_biased_graph(Tape& tape, Var gram_k, Var gram_l);
Var hsic_unbiased_graph(Tape& tape, Var gram_k_tilde, Var gram_l_tilde);

// ---------------------------------------------------------------------------
// Gamma-approximated rejection threshold
// ---------------------------------------------------------------------------

struct GammaThreshold {
  double threshold = 0.0;  // approx (1-alpha) null quantile of m * hsic_b
  double shape = 0.0;
  double scale = 0.0;
};

/// Null moments estimated by averaging hsic_biased over n_perm in-batch
/// random shuffles of y; shape = mean^2/var, scale = m*var/mean. Throws
/// ThresholdUnavailable on degenerate moments.
GammaThreshold gamma_threshold(const GramPair& g, double alpha, numkit::Rng& rng, int n_perm = 20);

/// Definitional mapping from moments; exposed for diagnostics.
GammaThreshold gamma_threshold_from_moments(double mean, double var, int m, double alpha);

struct GammaThresholdGrad {
  double d_shape = 0.0;
  double d_scale = 0.0;
};

/// Implicit-differentiation gradients of the threshold: the scale partial uses
/// the closed-form cdf gradient, the shape partial central finite differences
/// of the cdf. Throws GradientUnavailable when the pdf vanishes at the
/// threshold.
GammaThresholdGrad gamma_threshold_grad(double threshold, double shape, double scale);

}  // namespace deptest::objectives
