#include "deptest/objectives.hpp"

#include <cmath>

#include "deptest/errors.hpp"

namespace deptest::objectives {

Var hsic_biased_graph(Tape& t, Var gram_k, Var gram_l) {
  const int m = t.value(gram_k).rows();
  const double md = m;
  Var t1 = t.sum(t.mul(gram_k, gram_l));
  Var rk = t.row_sum(gram_k);
  Var rl = t.row_sum(gram_l);
  Var t2 = t.sum(t.mul(rk, rl));
  Var cross = t.mul(t.sum(rk), t.sum(rl));
  return t.add(t.sub(t.scale(t1, 1.0 / (md * md)), t.scale(t2, 2.0 / (md * md * md))),
               t.scale(cross, 1.0 / (md * md * md * md)));
}

Var hsic_unbiased_graph(Tape& t, Var gram_k_tilde, Var gram_l_tilde) {
  const int m = t.value(gram_k_tilde).rows();
  if (m < 4) throw SampleSizeError("hsic_unbiased_graph: need m >= 4");
  const double md = m;
  Var t1 = t.sum(t.mul(gram_k_tilde, gram_l_tilde));
  Var rk = t.row_sum(gram_k_tilde);
  Var rl = t.row_sum(gram_l_tilde);
  Var t3 = t.sum(t.mul(rk, rl));
  Var cross = t.mul(t.sum(rk), t.sum(rl));
  Var inner = t.sub(t.add(t1, t.scale(cross, 1.0 / ((md - 1.0) * (md - 2.0)))),
                    t.scale(t3, 2.0 / (md - 2.0)));
  return t.scale(inner, 1.0 / (md * (md - 3.0)));
}

namespace {

// h-vector second-moment term R and the regularized variance
// 16 (R - eta^2)_+ + lambda, as graph nodes.
Var hsic_sigma2_graph(Tape& t, Var kt, Var lt, Var eta, double lambda) {
  const int m = t.value(kt).rows();
  const double n = m;
  Var kl = t.mul(kt, lt);
  Var kl1 = t.row_sum(kl);
  Var k1 = t.row_sum(kt);
  Var l1 = t.row_sum(lt);
  Var sk = t.sum(k1);
  Var sl = t.sum(l1);
  Var ktl1 = t.matmul(kt, l1);
  Var ltk1 = t.matmul(lt, k1);
  Var skl = t.sum(kl1);
  Var sktl = t.sum(ktl1);
  Var h = t.scale(kl1, (n - 2.0) * (n - 2.0));
  h = t.sub(h, t.scale(t.mul(k1, l1), n));
  h = t.add(h, t.mul(k1, sl));
  h = t.add(h, t.mul(l1, sk));
  h = t.sub(h, sktl);
  Var bracket = t.sub(t.sub(skl, ktl1), ltk1);
  h = t.add(h, t.scale(bracket, n - 2.0));
  const double pochhammer = (n - 1.0) * (n - 2.0) * (n - 3.0);
  Var r_term = t.scale(t.sum(t.square(h)), 1.0 / (4.0 * n * pochhammer * pochhammer));
  Var raw = t.scale(t.sub(r_term, t.square(eta)), 16.0);
  return t.add_const(t.relu(raw), lambda);
}

}  // namespace

Var j_hsic_from_grams(Tape& t, Var gram_k, Var gram_l, const ObjectiveConfig& cfg,
                      numkit::Rng* gamma_rng) {
  const int m = t.value(gram_k).rows();
  if (m < 5) throw SampleSizeError("j_hsic: need batch size >= 5");
  Var kt = t.zero_diag(gram_k);
  Var lt = t.zero_diag(gram_l);
  Var eta = hsic_unbiased_graph(t, kt, lt);
  Var sigma2 = hsic_sigma2_graph(t, kt, lt, eta, cfg.lambda);
  Var sigma = t.sqrt(sigma2);
  Var j = t.div(eta, sigma);
  if (cfg.variant != ObjectiveVariant::HsicWithGammaThreshold) return j;

  if (gamma_rng == nullptr)
    throw ConfigError("j_hsic: gamma threshold variant needs a permutation rng");
  const int p = cfg.gamma_perms;
  if (p < 2) throw ConfigError("j_hsic: gamma_perms must be >= 2");
  std::vector<Var> stats;
  stats.reserve(p);
  for (int q = 0; q < p; ++q) {
    Var lp = t.permute_sym(gram_l, gamma_rng->permutation(m));
    stats.push_back(hsic_biased_graph(t, gram_k, lp));
  }
  Var mu = stats[0];
  for (int q = 1; q < p; ++q) mu = t.add(mu, stats[q]);
  mu = t.scale(mu, 1.0 / p);
  Var ss = t.square(t.sub(stats[0], mu));
  for (int q = 1; q < p; ++q) ss = t.add(ss, t.square(t.sub(stats[q], mu)));
  Var var = t.scale(ss, 1.0 / p);
  if (!(t.scalar(mu) > 0.0) || !(t.scalar(var) > 0.0))
    throw ThresholdUnavailable("gamma threshold: degenerate null moments");
  Var shape = t.div(t.square(mu), var);
  Var scale = t.scale(t.div(var, mu), static_cast<double>(m));
  Var r_hat = t.gamma_quantile(shape, scale, 1.0 - cfg.alpha);
  const int mt = cfg.m_target > 0 ? cfg.m_target : m;
  return t.sub(j, t.div(r_hat, t.scale(sigma, static_cast<double>(mt))));
}

Var j_hsic(Tape& t, const diffnet::ParamStore& params, const DeepKernelStructure& kernel_x,
           const DeepKernelStructure& kernel_y, const PairedSample& batch,
           const ObjectiveConfig& cfg, numkit::Rng* gamma_rng) {
  Var gk = kernel_x.gram_graph(t, params, batch.x);
  Var gl = kernel_y.gram_graph(t, params, batch.y);
  return j_hsic_from_grams(t, gk, gl, cfg, gamma_rng);
}

Var j_nds_from_grid(Tape& t, Var fgrid, const ObjectiveConfig& cfg) {
  const int m = t.value(fgrid).rows();
  if (m < 2) throw SampleSizeError("j_nds: need batch size >= 2");
  Var diag = t.diag(fgrid);
  Var t_hat = t.mean(diag);
  Var t0_hat = t.mean(fgrid);
  Var tau1_sq = t.add_const(t.mean(t.square(t.sub(diag, t_hat))), cfg.lambda);
  Var tau1 = t.sqrt(tau1_sq);
  Var j = t.div(t.sub(t_hat, t0_hat), tau1);
  if (cfg.variant == ObjectiveVariant::NdsPlain) return j;
  Var tau0_sq = t.add_const(t.mean(t.square(t.sub(fgrid, t0_hat))), cfg.lambda);
  Var tau0 = t.sqrt(tau0_sq);
  const int mt = cfg.m_target > 0 ? cfg.m_target : m;
  const double z = numkit::normal_quantile(1.0 - cfg.alpha);
  return t.sub(j, t.scale(t.div(tau0, tau1), z / std::sqrt(static_cast<double>(mt))));
}

Var j_nds(Tape& t, const diffnet::ParamStore& params, const CriticStructure& critic,
          const PairedSample& batch, const ObjectiveConfig& cfg) {
  return j_nds_from_grid(t, critic.grid_graph(t, params, batch), cfg);
}

Var infonce_objective(Tape& t, const diffnet::ParamStore& params, const CriticStructure& critic,
                      const PairedSample& batch) {
  const int m = batch.m();
  if (m < 2) throw SampleSizeError("infonce: need batch size >= 2");
  Var grid = critic.grid_graph(t, params, batch);
  Var first = t.mean(t.diag(grid));
  Var second = t.add_const(t.mean(t.row_logsumexp(grid)), -std::log(static_cast<double>(m)));
  return t.sub(first, second);
}

Var nwj_objective(Tape& t, const diffnet::ParamStore& params, const CriticStructure& critic,
                  const PairedSample& batch) {
  const int m = batch.m();
  if (m < 2) throw SampleSizeError("nwj: need batch size >= 2");
  Var grid = critic.grid_graph(t, params, batch);
  Var first = t.mean(t.diag(grid));
  Var lse = t.row_logsumexp(t.reshape(grid, 1, m * m));
  Var second = t.exp(t.add_const(lse, -2.0 * std::log(static_cast<double>(m)) - 1.0));
  return t.sub(first, second);
}

// ---------------------------------------------------------------------------
// Gamma threshold
// ---------------------------------------------------------------------------

GammaThreshold gamma_threshold_from_moments(double mean, double var, int m, double alpha) {
  if (!(mean > 0.0) || !(var > 0.0))
    throw ThresholdUnavailable("gamma threshold: need positive null mean and variance");
  GammaThreshold out;
  out.shape = mean * mean / var;
  out.scale = static_cast<double>(m) * var / mean;
  out.threshold = numkit::gamma_quantile(1.0 - alpha, out.shape, out.scale);
  return out;
}

GammaThreshold gamma_threshold(const GramPair& g, double alpha, numkit::Rng& rng, int n_perm) {
  if (n_perm < 2) throw ConfigError("gamma_threshold: need at least 2 permutations");
  const int m = g.m();
  std::vector<double> vals(n_perm);
  for (int q = 0; q < n_perm; ++q) {
    const auto perm = rng.permutation(m);
    numkit::Matrix lp(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) lp(i, j) = g.l(perm[i], perm[j]);
    vals[q] = estimators::hsic_biased(kernels::gram_pair_from(g.k, std::move(lp))).value;
  }
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= n_perm;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= n_perm;
  return gamma_threshold_from_moments(mean, var, m, alpha);
}

GammaThresholdGrad gamma_threshold_grad(double threshold, double shape, double scale) {
  if (!std::isfinite(threshold)) throw GradientUnavailable("gamma threshold grad: non-finite threshold");
  const double dens = numkit::gamma_pdf(threshold, shape, scale);
  if (!(dens > 0.0)) throw GradientUnavailable("gamma threshold grad: pdf vanishes at threshold");
  // dF/dscale has the closed form -(1/(scale Gamma(shape))) (r/scale)^shape e^{-r/scale}.
  const double log_dF =
      shape * std::log(threshold / scale) - threshold / scale - std::lgamma(shape) - std::log(scale);
  const double dF_dscale = -std::exp(log_dF);
  GammaThresholdGrad out;
  out.d_scale = -dF_dscale / dens;
  const double h = 1e-5 * shape;
  const double dF_dshape = (numkit::gamma_cdf(threshold, shape + h, scale) -
                            numkit::gamma_cdf(threshold, shape - h, scale)) /
                           (2.0 * h);
  out.d_shape = -dF_dshape / dens;
  return out;
}

}  // namespace deptest::objectives
