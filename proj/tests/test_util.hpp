#pragma once

// Shared helpers for the unit and acceptance suites.

#include <cmath>
#include <functional>
#include <vector>

#include "deptest/datasets.hpp"
#include "deptest/diffnet.hpp"
#include "deptest/kernels.hpp"

namespace testutil {

using deptest::diffnet::GradMap;
using deptest::diffnet::ParamStore;
using deptest::numkit::Matrix;

/// Central finite-difference gradient of a scalar objective over every
/// parameter entry.
inline GradMap fd_gradient(const ParamStore& params,
                           const std::function<double(const ParamStore&)>& objective,
                           double step = 1e-4) {
  GradMap out;
  ParamStore work = params;
  for (const auto& [name, tensor] : params.tensors()) {
    Matrix g(tensor.rows(), tensor.cols());
    for (int i = 0; i < tensor.size(); ++i) {
      const double saved = work.get(name).data()[i];
      work.get_mut(name).data()[i] = saved + step;
      const double fp = objective(work);
      work.get_mut(name).data()[i] = saved - step;
      const double fm = objective(work);
      work.get_mut(name).data()[i] = saved;
      g.data()[i] = (fp - fm) / (2.0 * step);
    }
    out[name] = std::move(g);
  }
  return out;
}

/// True when every entry agrees within `rel` relative or `abs` absolute.
inline bool grads_close(const GradMap& a, const GradMap& b, double rel = 1e-3, double abs = 1e-6,
                        double* worst = nullptr) {
  bool ok = true;
  double w = 0.0;
  for (const auto& [name, ga] : a) {
    const auto it = b.find(name);
    if (it == b.end()) return false;
    const Matrix& gb = it->second;
    for (int i = 0; i < ga.size(); ++i) {
      const double x = ga.data()[i], y = gb.data()[i];
      const double err = std::abs(x - y);
      const double scale = std::max(std::abs(x), std::abs(y));
      const double rel_err = scale > 0 ? err / scale : 0.0;
      w = std::max(w, std::min(rel_err, err));
      if (err > abs && rel_err > rel) ok = false;
    }
  }
  if (worst) *worst = w;
  return ok;
}

/// Random Gaussian-kernel gram pair over dependent data (y = x + noise).
inline deptest::kernels::GramPair random_gram_pair(int m, deptest::numkit::Rng& rng, int d = 2,
                                                   double dependence = 0.7) {
  Matrix x(m, d), y(m, d);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) {
      x(i, j) = rng.normal();
      y(i, j) = dependence * x(i, j) + std::sqrt(1 - dependence * dependence) * rng.normal();
    }
  deptest::kernels::GaussianKernel kx(1.0), ky(1.3);
  return deptest::kernels::gram_pair_from(kx.gram(x), ky.gram(y));
}

/// h(i,j,q,r) = (1/24) sum over the 24 assignments of {i,j,q,r} to (s,t,u,v)
/// of k_st (l_st + l_uv - 2 l_su); the U-statistic core.
inline double hsic_h_kernel(const Matrix& k, const Matrix& l, int i, int j, int q, int r) {
  const int idx[4] = {i, j, q, r};
  int perm[4] = {0, 1, 2, 3};
  double sum = 0.0;
  std::sort(perm, perm + 4);
  do {
    const int s = idx[perm[0]], t = idx[perm[1]], u = idx[perm[2]], v = idx[perm[3]];
    sum += k(s, t) * (l(s, t) + l(u, v) - 2.0 * l(s, u));
  } while (std::next_permutation(perm, perm + 4));
  return sum / 24.0;
}

/// Brute-force U-statistic: average of h over all ordered distinct 4-tuples.
inline double hsic_unbiased_bruteforce(const Matrix& k, const Matrix& l) {
  const int m = k.rows();
  double sum = 0.0;
  long long count = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      for (int q = 0; q < m; ++q) {
        if (q == i || q == j) continue;
        for (int r = 0; r < m; ++r) {
          if (r == i || r == j || r == q) continue;
          sum += hsic_h_kernel(k, l, i, j, q, r);
          ++count;
        }
      }
    }
  return sum / static_cast<double>(count);
}

/// Per-index second-moment term: R = (1/n) sum_i (mean over ordered (j,q,r)
/// distinct from i of h(i,j,q,r))^2.
inline double hsic_r_bruteforce(const Matrix& k, const Matrix& l) {
  const int m = k.rows();
  double r_sum = 0.0;
  for (int i = 0; i < m; ++i) {
    double inner = 0.0;
    long long count = 0;
    for (int j = 0; j < m; ++j) {
      if (j == i) continue;
      for (int q = 0; q < m; ++q) {
        if (q == i || q == j) continue;
        for (int r = 0; r < m; ++r) {
          if (r == i || r == j || r == q) continue;
          inner += hsic_h_kernel(k, l, i, j, q, r);
          ++count;
        }
      }
    }
    const double hi = inner / static_cast<double>(count);
    r_sum += hi * hi;
  }
  return r_sum / m;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double variance_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace testutil
