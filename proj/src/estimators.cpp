#include "deptest/estimators.hpp"

#include <algorithm>
#include <cmath>

#include "deptest/errors.hpp"

namespace deptest::estimators {

namespace {

std::vector<double> row_sums(const Matrix& a) {
  std::vector<double> r(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += a(i, j);
    r[i] = s;
  }
  return r;
}

double frobenius_dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

double total(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

StatValue hsic_biased(const GramPair& g) {
  const int m = g.m();
  if (m < 2) throw SampleSizeError("hsic_biased: need m >= 2");
  const double t1 = frobenius_dot(g.k, g.l);
  const auto rk = row_sums(g.k);
  const auto rl = row_sums(g.l);
  double t2 = 0.0;
  for (int i = 0; i < m; ++i) t2 += rk[i] * rl[i];
  const double sk = total(rk);
  const double sl = total(rl);
  const double md = m;
  const double value = t1 / (md * md) - 2.0 * t2 / (md * md * md) + sk * sl / (md * md * md * md);
  return {value, StatKind::HsicBiased, m};
}

StatValue hsic_unbiased(const GramPair& g) {
  const int m = g.m();
  if (m < 4) throw SampleSizeError("hsic_unbiased: need m >= 4");
  const double t1 = frobenius_dot(g.kt, g.lt);
  const auto rk = row_sums(g.kt);
  const auto rl = row_sums(g.lt);
  double t3 = 0.0;
  for (int i = 0; i < m; ++i) t3 += rk[i] * rl[i];
  const double sk = total(rk);
  const double sl = total(rl);
  const double md = m;
  const double value =
      (t1 + sk * sl / ((md - 1.0) * (md - 2.0)) - 2.0 * t3 / (md - 2.0)) / (md * (md - 3.0));
  return {value, StatKind::HsicUnbiased, m};
}

VarianceEstimate hsic_variance(const GramPair& g, double lambda) {
  const int m = g.m();
  if (m < 5) throw SampleSizeError("hsic_variance: need m >= 5");
  if (lambda < 0.0) throw ConfigError("hsic_variance: lambda must be nonnegative");
  const double n = m;
  const auto rk = row_sums(g.kt);
  const auto rl = row_sums(g.lt);
  const double sk = total(rk);
  const double sl = total(rl);
  // (Kt o Lt) 1, Kt (Lt 1), Lt (Kt 1)
  std::vector<double> kl1(m, 0.0), ktl1(m, 0.0), ltk1(m, 0.0);
  for (int i = 0; i < m; ++i) {
    double a = 0.0, b = 0.0, c = 0.0;
    for (int j = 0; j < m; ++j) {
      a += g.kt(i, j) * g.lt(i, j);
      b += g.kt(i, j) * rl[j];
      c += g.lt(i, j) * rk[j];
    }
    kl1[i] = a;
    ktl1[i] = b;
    ltk1[i] = c;
  }
  const double skl = total(kl1);
  const double sktl = total(ktl1);
  double h_norm2 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double h = (n - 2.0) * (n - 2.0) * kl1[i] - n * rk[i] * rl[i] + sl * rk[i] +
                     sk * rl[i] - sktl + (n - 2.0) * (skl - ktl1[i] - ltk1[i]);
    h_norm2 += h * h;
  }
  const double pochhammer = (n - 1.0) * (n - 2.0) * (n - 3.0);
  const double r_term = h_norm2 / (4.0 * n * pochhammer * pochhammer);
  const double eta = hsic_unbiased(g).value;
  const double raw = 16.0 * (r_term - eta * eta);
  VarianceEstimate ve;
  ve.r_term = r_term;
  ve.lambda = lambda;
  ve.sigma2 = std::max(raw, 0.0) + lambda;
  return ve;
}

StatValue mmd2_biased_perm(const GramPair& g, const std::vector<std::vector<int>>& perms) {
  const int m = g.m();
  const int p = static_cast<int>(perms.size());
  if (p < 1) throw std::invalid_argument("mmd2_biased_perm: need at least one permutation");
  for (const auto& perm : perms) {
    if (static_cast<int>(perm.size()) != m)
      throw std::invalid_argument("mmd2_biased_perm: permutation length mismatch");
    std::vector<char> seen(m, 0);
    for (int v : perm) {
      if (v < 0 || v >= m || seen[v]) throw std::invalid_argument("mmd2_biased_perm: not a bijection");
      seen[v] = 1;
    }
  }
  const double md = m, pd = p;
  double term1 = 0.0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) term1 += g.k(i, j) * g.l(i, j);
  double term2 = 0.0;
  for (int q = 0; q < p; ++q)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) term2 += g.k(i, j) * g.l(i, perms[q][j]);
  double term3 = 0.0;
  for (int q = 0; q < p; ++q)
    for (int r = 0; r < p; ++r)
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) term3 += g.k(i, j) * g.l(perms[q][i], perms[r][j]);
  const double value =
      term1 / (md * md) - 2.0 * term2 / (md * md * pd) + term3 / (md * md * pd * pd);
  return {value, StatKind::Mmd2Perm, m};
}

// ---------------------------------------------------------------------------
// Critics
// ---------------------------------------------------------------------------

Matrix Critic::grid(const PairedSample& sample) const {
  const int m = sample.m();
  Matrix g(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) g(i, j) = eval(sample.x.row(i), sample.y.row(j));
  return g;
}

std::vector<double> Critic::paired_values(const PairedSample& sample) const {
  std::vector<double> v(sample.m());
  for (int i = 0; i < sample.m(); ++i) v[i] = eval(sample.x.row(i), sample.y.row(i));
  return v;
}

void CriticStructure::init_params(diffnet::ParamStore& params, numkit::Rng& rng) const {
  if (mlp.out_dim() != 1) throw ConfigError("critic mlp must have scalar output");
  diffnet::init_mlp_params(params, prefix, mlp, rng);
}

namespace {
Matrix pair_grid_inputs(const PairedSample& s) {
  const int m = s.m();
  Matrix in(m * m, s.dx() + s.dy());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const int r = i * m + j;
      for (int c = 0; c < s.dx(); ++c) in(r, c) = s.x(i, c);
      for (int c = 0; c < s.dy(); ++c) in(r, s.dx() + c) = s.y(j, c);
    }
  return in;
}
}  // namespace

Matrix CriticStructure::grid(const diffnet::ParamStore& params, const PairedSample& sample) const {
  const int m = sample.m();
  const Matrix out = diffnet::mlp_forward(params, prefix, mlp, pair_grid_inputs(sample));
  Matrix g(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) g(i, j) = out(i * m + j, 0);
  return g;
}

diffnet::Var CriticStructure::grid_graph(diffnet::Tape& tape, const diffnet::ParamStore& params,
                                         const PairedSample& sample) const {
  const int m = sample.m();
  diffnet::Var in = tape.input(pair_grid_inputs(sample), prefix + ".pairs");
  diffnet::Var out = tape.mlp_graph(params, prefix, mlp, in);
  return tape.reshape(out, m, m);
}

MlpCritic::MlpCritic(diffnet::ParamStore params, CriticStructure structure)
    : params_(std::move(params)), structure_(std::move(structure)) {}

double MlpCritic::eval(std::span<const double> x, std::span<const double> y) const {
  Matrix in(1, static_cast<int>(x.size() + y.size()));
  for (std::size_t c = 0; c < x.size(); ++c) in(0, static_cast<int>(c)) = x[c];
  for (std::size_t c = 0; c < y.size(); ++c) in(0, static_cast<int>(x.size() + c)) = y[c];
  return diffnet::mlp_forward(params_, structure_.prefix, structure_.mlp, in)(0, 0);
}

Matrix MlpCritic::grid(const PairedSample& sample) const {
  return structure_.grid(params_, sample);
}

std::vector<double> MlpCritic::paired_values(const PairedSample& sample) const {
  const int m = sample.m();
  Matrix in(m, sample.dx() + sample.dy());
  for (int i = 0; i < m; ++i) {
    for (int c = 0; c < sample.dx(); ++c) in(i, c) = sample.x(i, c);
    for (int c = 0; c < sample.dy(); ++c) in(i, sample.dx() + c) = sample.y(i, c);
  }
  const Matrix out = diffnet::mlp_forward(params_, structure_.prefix, structure_.mlp, in);
  std::vector<double> v(m);
  for (int i = 0; i < m; ++i) v[i] = out(i, 0);
  return v;
}

// ---------------------------------------------------------------------------
// Grid statistics
// ---------------------------------------------------------------------------

namespace {
void check_grid(const Matrix& fgrid, int min_m, const char* what) {
  if (fgrid.rows() != fgrid.cols()) throw ShapeError(std::string(what) + ": grid not square");
  if (fgrid.rows() < min_m) throw SampleSizeError(std::string(what) + ": sample too small");
  if (!fgrid.is_finite()) throw NumericError(std::string(what) + ": non-finite critic output");
}

double diag_mean(const Matrix& fgrid) {
  double s = 0.0;
  for (int i = 0; i < fgrid.rows(); ++i) s += fgrid(i, i);
  return s / fgrid.rows();
}

double grand_mean(const Matrix& fgrid) {
  double s = 0.0;
  for (int i = 0; i < fgrid.size(); ++i) s += fgrid.data()[i];
  return s / fgrid.size();
}

double logsumexp(const double* v, int n) {
  double mx = v[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}
}  // namespace

StatValue nds_stat(const Matrix& fgrid) {
  check_grid(fgrid, 1, "nds_stat");
  return {diag_mean(fgrid), StatKind::Nds, fgrid.rows()};
}

StatValue t0_vstat(const Matrix& fgrid) {
  check_grid(fgrid, 1, "t0_vstat");
  return {grand_mean(fgrid), StatKind::Nds, fgrid.rows()};
}

StatValue infonce(const Matrix& fgrid) {
  check_grid(fgrid, 2, "infonce");
  const int m = fgrid.rows();
  double second = 0.0;
  for (int i = 0; i < m; ++i)
    second += logsumexp(fgrid.data() + static_cast<std::size_t>(i) * m, m) - std::log(static_cast<double>(m));
  return {diag_mean(fgrid) - second / m, StatKind::InfoNce, m};
}

StatValue nwj(const Matrix& fgrid) {
  check_grid(fgrid, 2, "nwj");
  const int m = fgrid.rows();
  const double lse = logsumexp(fgrid.data(), m * m);
  // e^{-1} * (1/m^2) sum e^f, evaluated in log space
  const double second = std::exp(lse - 2.0 * std::log(static_cast<double>(m)) - 1.0);
  return {diag_mean(fgrid) - second, StatKind::Nwj, m};
}

std::pair<double, double> sample_variances(const Matrix& fgrid, double lambda) {
  check_grid(fgrid, 2, "sample_variances");
  const int m = fgrid.rows();
  const double t1 = diag_mean(fgrid);
  double v1 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double d = fgrid(i, i) - t1;
    v1 += d * d;
  }
  const double t0 = grand_mean(fgrid);
  double v0 = 0.0;
  for (int i = 0; i < fgrid.size(); ++i) {
    const double d = fgrid.data()[i] - t0;
    v0 += d * d;
  }
  return {v1 / m + lambda, v0 / (static_cast<double>(m) * m) + lambda};
}

StatValue nds_stat(const Critic& critic, const PairedSample& sample) {
  return nds_stat(critic.grid(sample));
}
StatValue t0_vstat(const Critic& critic, const PairedSample& sample) {
  return t0_vstat(critic.grid(sample));
}
StatValue infonce(const Critic& critic, const PairedSample& sample) {
  return infonce(critic.grid(sample));
}
StatValue nwj(const Critic& critic, const PairedSample& sample) {
  return nwj(critic.grid(sample));
}
std::pair<double, double> sample_variances(const Critic& critic, const PairedSample& sample,
                                           double lambda) {
  return sample_variances(critic.grid(sample), lambda);
}

}  // namespace deptest::estimators
