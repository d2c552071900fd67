#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deptest/errors.hpp"
#include "deptest/estimators.hpp"
#include "test_util.hpp"

using namespace deptest;
using kernels::GramPair;
using numkit::Matrix;
using numkit::Rng;

namespace {

GramPair constant_grams(int m) {
  return kernels::gram_pair_from(Matrix(m, m, 1.0), Matrix(m, m, 1.0));
}

std::vector<int> circular_shift(int m, int k) {
  std::vector<int> p(m);
  for (int i = 0; i < m; ++i) p[i] = (i + k) % m;
  return p;
}

}  // namespace

TEST_CASE("biased estimator") {
  SUBCASE("constant kernels give exactly zero") {
    CHECK(estimators::hsic_biased(constant_grams(6)).value == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("m=2 against explicit centering algebra") {
    Matrix k = Matrix::identity(2), l = Matrix::identity(2);
    k(0, 1) = k(1, 0) = 0.3;
    l(0, 1) = l(1, 0) = -0.6;
    const auto g = kernels::gram_pair_from(k, l);
    // dense H L H with H = I - (1/2) 11^T
    Matrix h(2, 2);
    h(0, 0) = h(1, 1) = 0.5;
    h(0, 1) = h(1, 0) = -0.5;
    const Matrix hlh = numkit::matmul(h, numkit::matmul(l, h));
    double dot = 0.0;
    for (int i = 0; i < 4; ++i) dot += k.data()[i] * hlh.data()[i];
    CHECK(estimators::hsic_biased(g).value == doctest::Approx(dot / 4.0).epsilon(1e-14));
  }
  SUBCASE("sample size guard") {
    CHECK_THROWS_AS(estimators::hsic_biased(constant_grams(1)), SampleSizeError);
  }
}

TEST_CASE("unbiased estimator against brute force") {
  Rng rng(71);
  SUBCASE("constant kernels vanish exactly") {
    CHECK(estimators::hsic_unbiased(constant_grams(6)).value == 0.0);
  }
  SUBCASE("m=4 minimal case") {
    const auto g = testutil::random_gram_pair(4, rng);
    CHECK(estimators::hsic_unbiased(g).value ==
          doctest::Approx(testutil::hsic_unbiased_bruteforce(g.k, g.l)).epsilon(1e-10));
  }
  SUBCASE("m=10 random data") {
    const auto g = testutil::random_gram_pair(10, rng);
    const double brute = testutil::hsic_unbiased_bruteforce(g.k, g.l);
    CHECK(std::abs(estimators::hsic_unbiased(g).value - brute) <= 1e-9);
  }
  SUBCASE("sample size guard") {
    CHECK_THROWS_AS(estimators::hsic_unbiased(constant_grams(3)), SampleSizeError);
  }
}

TEST_CASE("variance estimator") {
  Rng rng(73);
  SUBCASE("constant kernels reduce to lambda") {
    const auto v = estimators::hsic_variance(constant_grams(8), 0.5);
    CHECK(v.r_term == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(v.sigma2 == doctest::Approx(0.5).epsilon(1e-15));
  }
  SUBCASE("m=8 h-vector R against the per-index brute force") {
    const auto g = testutil::random_gram_pair(8, rng);
    const auto v = estimators::hsic_variance(g, 0.0);
    CHECK(std::abs(v.r_term - testutil::hsic_r_bruteforce(g.kt, g.lt)) <= 1e-10);
  }
  SUBCASE("clamped below at lambda") {
    // independent data at small m can push 16(R - eta^2) negative
    Rng r(79);
    for (int t = 0; t < 20; ++t) {
      const auto g = testutil::random_gram_pair(8, r, 1, 0.0);
      const auto v = estimators::hsic_variance(g, 1e-8);
      CHECK(v.sigma2 >= 1e-8);
    }
  }
  SUBCASE("sample size guard") {
    CHECK_THROWS_AS(estimators::hsic_variance(constant_grams(4), 0.0), SampleSizeError);
  }
}

TEST_CASE("nds and t0 statistics") {
  Matrix f(2, 2);
  f(0, 0) = 1;
  f(0, 1) = 2;
  f(1, 0) = 3;
  f(1, 1) = 4;
  CHECK(estimators::nds_stat(f).value == doctest::Approx(2.5));
  CHECK(estimators::t0_vstat(f).value == doctest::Approx(2.5));

  const Matrix c(5, 5, 3.25);
  CHECK(estimators::nds_stat(c).value == doctest::Approx(3.25));
  CHECK(estimators::t0_vstat(c).value == doctest::Approx(3.25));

  // separable critic: t0 factorizes into mean(g) * mean(h)
  Rng rng(83);
  const int m = 7;
  std::vector<double> gv(m), hv(m);
  for (int i = 0; i < m; ++i) {
    gv[i] = rng.normal();
    hv[i] = rng.normal();
  }
  Matrix sep(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) sep(i, j) = gv[i] * hv[j];
  CHECK(estimators::t0_vstat(sep).value ==
        doctest::Approx(testutil::mean_of(gv) * testutil::mean_of(hv)).epsilon(1e-12));
}

TEST_CASE("infonce") {
  CHECK(estimators::infonce(Matrix(4, 4, 0.0)).value == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(estimators::infonce(Matrix(4, 4, 2.7)).value == doctest::Approx(0.0).epsilon(1e-13));

  Matrix f = Matrix::identity(2);
  CHECK(estimators::infonce(f).value ==
        doctest::Approx(std::log(2 * std::exp(1.0) / (std::exp(1.0) + 1.0))).epsilon(1e-12));

  SUBCASE("second term is permutation invariant") {
    Rng rng(89);
    const int m = 9;
    Matrix g(m, m);
    for (int i = 0; i < g.size(); ++i) g.data()[i] = 2.0 * rng.normal();
    auto second_term = [m](const Matrix& grid) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) {
        double mx = grid(i, 0);
        for (int j = 1; j < m; ++j) mx = std::max(mx, grid(i, j));
        double e = 0.0;
        for (int j = 0; j < m; ++j) e += std::exp(grid(i, j) - mx);
        s += mx + std::log(e / m);
      }
      return s / m;
    };
    const double base = second_term(g);
    const auto perm = rng.permutation(m);
    Matrix gp(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) gp(i, j) = g(i, perm[j]);
    CHECK(std::abs(second_term(gp) - base) <= 1e-12);
  }
}

TEST_CASE("nwj") {
  CHECK(estimators::nwj(Matrix(3, 3, 1.0)).value == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(estimators::nwj(Matrix(3, 3, 0.0)).value ==
        doctest::Approx(-std::exp(-1.0)).epsilon(1e-13));
  Matrix f = Matrix::identity(2);
  CHECK(estimators::nwj(f).value ==
        doctest::Approx(1.0 - (std::exp(1.0) + 1.0) / (2.0 * std::exp(1.0))).epsilon(1e-12));
}

TEST_CASE("permuted mmd estimator") {
  Rng rng(97);
  SUBCASE("identity permutation gives zero") {
    const auto g = testutil::random_gram_pair(8, rng);
    std::vector<std::vector<int>> perms{circular_shift(8, 0)};
    CHECK(std::abs(estimators::mmd2_biased_perm(g, perms).value) <= 1e-14);
  }
  SUBCASE("all circular shifts reproduce the biased estimator") {
    const auto g = testutil::random_gram_pair(10, rng);
    std::vector<std::vector<int>> shifts;
    for (int k = 0; k < 10; ++k) shifts.push_back(circular_shift(10, k));
    CHECK(std::abs(estimators::mmd2_biased_perm(g, shifts).value -
                   estimators::hsic_biased(g).value) <= 1e-12);
  }
  SUBCASE("average over all permutations at m=5 is the biased estimator") {
    const auto g = testutil::random_gram_pair(5, rng);
    std::vector<int> p{0, 1, 2, 3, 4};
    double sum = 0.0;
    int count = 0;
    std::sort(p.begin(), p.end());
    do {
      sum += estimators::mmd2_biased_perm(g, {p}).value;
      ++count;
    } while (std::next_permutation(p.begin(), p.end()));
    CHECK(count == 120);
    CHECK(std::abs(sum / count - estimators::hsic_biased(g).value) <= 1e-12);
  }
  SUBCASE("non-bijection rejected") {
    const auto g = testutil::random_gram_pair(4, rng);
    CHECK_THROWS_AS(estimators::mmd2_biased_perm(g, {{0, 0, 1, 2}}), std::invalid_argument);
    CHECK_THROWS_AS(estimators::mmd2_biased_perm(g, {}), std::invalid_argument);
  }
}

TEST_CASE("regularized sample variances") {
  const double lambda = 1e-3;
  SUBCASE("constant critic") {
    const auto [t1, t0] = estimators::sample_variances(Matrix(4, 4, 2.0), lambda);
    CHECK(t1 == doctest::Approx(lambda).epsilon(1e-12));
    CHECK(t0 == doctest::Approx(lambda).epsilon(1e-12));
  }
  SUBCASE("two-point diagonal variance") {
    Matrix f(2, 2, 1.0);
    f(0, 0) = 0.0;
    f(1, 1) = 2.0;
    const auto [t1, t0] = estimators::sample_variances(f, lambda);
    CHECK(t1 == doctest::Approx(1.0 + lambda).epsilon(1e-12));
  }
  SUBCASE("grid variance about the grand mean") {
    Matrix f(2, 2, 0.0);
    f(0, 1) = 1.0;
    f(1, 0) = 1.0;
    const auto [t1, t0] = estimators::sample_variances(f, lambda);
    CHECK(t0 == doctest::Approx(0.25 + lambda).epsilon(1e-12));
  }
}

TEST_CASE("separable kernel bridge at rank one") {
  Rng rng(101);
  const int m = 9;
  std::vector<double> gv(m), hv(m);
  for (int i = 0; i < m; ++i) {
    gv[i] = 0.5 + rng.uniform();
    hv[i] = rng.normal();
  }
  Matrix k(m, m), l(m, m), grid(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      k(i, j) = gv[i] * gv[j];
      l(i, j) = hv[i] * hv[j];
      grid(i, j) = gv[i] * hv[j];
    }
  const double hsic_b = estimators::hsic_biased(kernels::gram_pair_from(k, l)).value;
  const double that = estimators::nds_stat(grid).value;
  const double t0 = estimators::t0_vstat(grid).value;
  CHECK(std::abs(hsic_b - (that - t0) * (that - t0)) <= 1e-10);
}

TEST_CASE("mlp critic grid matches per-pair evaluation") {
  Rng rng(103);
  estimators::CriticStructure st{{{3, 4, 1}}, "critic"};
  diffnet::ParamStore params;
  st.init_params(params, rng);
  estimators::MlpCritic critic(params, st);
  datasets::PairedSample s;
  s.x = Matrix(4, 2);
  s.y = Matrix(4, 1);
  for (int i = 0; i < s.x.size(); ++i) s.x.data()[i] = rng.normal();
  for (int i = 0; i < s.y.size(); ++i) s.y.data()[i] = rng.normal();
  const Matrix grid = critic.grid(s);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(grid(i, j) == doctest::Approx(critic.eval(s.x.row(i), s.y.row(j))).epsilon(1e-13));
  const auto paired = critic.paired_values(s);
  for (int i = 0; i < 4; ++i) CHECK(paired[i] == doctest::Approx(grid(i, i)).epsilon(1e-13));
}
