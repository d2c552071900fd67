#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "deptest/errors.hpp"
#include "deptest/kernels.hpp"
#include "test_util.hpp"

using namespace deptest;
using kernels::DeepKernel;
using kernels::DeepKernelStructure;
using kernels::GaussianKernel;
using numkit::Matrix;
using numkit::Rng;

namespace {

// Cholesky-with-jitter probe: succeeds iff the matrix is PSD up to `jitter`.
bool cholesky_psd(Matrix a, double jitter) {
  const int n = a.rows();
  for (int i = 0; i < n; ++i) a(i, i) += jitter;
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (d <= 0.0) return false;
    const double ljj = std::sqrt(d);
    a(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
      a(i, j) = s / ljj;
    }
  }
  return true;
}

Matrix random_points(int m, int d, Rng& rng) {
  Matrix pts(m, d);
  for (int i = 0; i < pts.size(); ++i) pts.data()[i] = rng.normal();
  return pts;
}

DeepKernel make_deep_kernel(int d, Rng& rng, double mixture_logit = std::log(0.01 / 0.99)) {
  auto st = DeepKernelStructure::deep({{d, 2 * d, d}}, "k");
  diffnet::ParamStore params;
  st.init_params(params, rng);
  params.set("k.mixture_logit", Matrix(1, 1, mixture_logit));
  return DeepKernel(params, st);
}

}  // namespace

TEST_CASE("gaussian kernel evaluation") {
  GaussianKernel k(1.0);
  std::vector<double> x{0.3, -0.7}, same{0.3, -0.7};
  CHECK(k.eval(x, same) == 1.0);

  // squared distance 2 sigma^2 -> e^{-1}
  GaussianKernel k2(0.5);
  std::vector<double> a{0.0}, b{std::sqrt(2.0) * 0.5};
  CHECK(k2.eval(a, b) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  GaussianKernel k5(5.0);
  std::vector<double> p{0.0, 0.0}, q{3.0, 4.0};
  CHECK(k5.eval(p, q) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

  std::vector<double> short_vec{1.0};
  CHECK_THROWS_AS(k.eval(p, short_vec), ShapeError);
  CHECK_THROWS_AS(GaussianKernel(0.0), ConfigError);
}

TEST_CASE("deep kernel evaluation") {
  Rng rng(41);
  SUBCASE("mixture endpoints") {
    // logit -> +inf: pure smoothing kernel; logit -> -inf: pure feature kernel
    DeepKernel all_q = make_deep_kernel(2, rng, 40.0);
    std::vector<double> a{0.2, 0.4}, b{-1.0, 0.3};
    const double bw_q = all_q.smooth_bandwidth();
    const double expect_q =
        std::exp(-numkit::squared_distance(std::span<const double>(a), std::span<const double>(b)) /
                 (2 * bw_q * bw_q));
    CHECK(all_q.eval(a, b) == doctest::Approx(expect_q).epsilon(1e-10));

    Rng rng2(41);
    DeepKernel all_f = make_deep_kernel(2, rng2, -40.0);
    const Matrix two = Matrix::from_rows({{0.2, 0.4}, {-1.0, 0.3}});
    const Matrix feat = diffnet::mlp_forward(all_f.params(), "k", all_f.structure().featurizer, two);
    const double bw_f = all_f.feature_bandwidth();
    const double expect_f =
        std::exp(-numkit::squared_distance(feat.row(0), feat.row(1)) / (2 * bw_f * bw_f));
    CHECK(all_f.eval(a, b) == doctest::Approx(expect_f).epsilon(1e-10));
  }
  SUBCASE("identity featurizer with even mixture") {
    // one linear layer with identity weights, eps = 0.5, both bandwidths 1
    DeepKernelStructure st = DeepKernelStructure::deep({{2, 2}}, "k");
    diffnet::ParamStore params;
    params.set("k.w0", Matrix::identity(2));
    params.set("k.b0", Matrix(1, 2));
    params.set("k.log_bw_feature", Matrix(1, 1, 0.0));
    params.set("k.log_bw_smooth", Matrix(1, 1, 0.0));
    params.set("k.mixture_logit", Matrix(1, 1, 0.0));  // eps = 0.5
    DeepKernel dk(params, st);
    std::vector<double> zero{0.0, 0.0}, e1{1.0, 0.0};
    CHECK(dk.eval(zero, e1) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  }
  SUBCASE("bounded in (0,1] with unit diagonal") {
    Rng r(43);
    DeepKernel dk = make_deep_kernel(3, r);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> a{r.normal(), r.normal(), r.normal()};
      std::vector<double> b{r.normal(), r.normal(), r.normal()};
      const double v = dk.eval(a, b);
      CHECK(v > 0.0);
      CHECK(v <= 1.0 + 1e-12);
      CHECK(std::abs(dk.eval(a, a) - 1.0) < 1e-12);
      CHECK(dk.eval(a, b) == doctest::Approx(dk.eval(b, a)).epsilon(1e-12));
    }
  }
}

TEST_CASE("gram pair construction") {
  Rng rng(47);
  SUBCASE("single point") {
    datasets::PairedSample s;
    s.x = Matrix(1, 2, 0.3);
    s.y = Matrix(1, 1, -1.0);
    GaussianKernel k(1.0), l(2.0);
    const auto g = kernels::gram_pair(k, l, s);
    CHECK(g.k(0, 0) == 1.0);
    CHECK(g.kt(0, 0) == 0.0);
    CHECK(g.lt(0, 0) == 0.0);
  }
  SUBCASE("duplicate points duplicate rows and columns") {
    datasets::PairedSample s;
    s.x = Matrix::from_rows({{1.0}, {1.0}, {2.0}});
    s.y = Matrix::from_rows({{0.0}, {0.0}, {5.0}});
    GaussianKernel k(1.0);
    const auto g = kernels::gram_pair(k, k, s);
    for (int j = 0; j < 3; ++j) CHECK(g.k(0, j) == g.k(1, j));
    CHECK(g.k(0, 1) == 1.0);
  }
  SUBCASE("entries match per-pair evaluation") {
    datasets::PairedSample s;
    s.x = random_points(3, 2, rng);
    s.y = random_points(3, 2, rng);
    const auto kx = kernels::median_heuristic_kernel(s.x);
    const auto ky = kernels::median_heuristic_kernel(s.y);
    const auto g = kernels::gram_pair(kx, ky, s);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        CHECK(g.k(i, j) == doctest::Approx(kx.eval(s.x.row(i), s.x.row(j))).epsilon(1e-14));
        CHECK(g.l(i, j) == doctest::Approx(ky.eval(s.y.row(i), s.y.row(j))).epsilon(1e-14));
        if (i != j) CHECK(g.kt(i, j) == g.k(i, j));
      }
  }
}

TEST_CASE("gram matrices are symmetric positive semidefinite") {
  Rng rng(53);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix pts = random_points(32, 3, rng);
    const Matrix g = GaussianKernel(1.0 + rng.uniform()).gram(pts);
    double asym = 0.0;
    for (int i = 0; i < 32; ++i)
      for (int j = 0; j < 32; ++j) asym = std::max(asym, std::abs(g(i, j) - g(j, i)));
    CHECK(asym <= 1e-12);
    CHECK(cholesky_psd(g, 1e-8));
  }
  Rng r2(59);
  DeepKernel dk = make_deep_kernel(3, r2);
  const Matrix pts = random_points(24, 3, r2);
  CHECK(cholesky_psd(dk.gram(pts), 1e-8));
}

TEST_CASE("median heuristic kernel") {
  SUBCASE("two points at distance d") {
    const Matrix pts = Matrix::from_rows({{0.0, 0.0}, {3.0, 4.0}});
    CHECK(kernels::median_heuristic_kernel(pts).bandwidth() == doctest::Approx(5.0));
  }
  SUBCASE("three collinear equidistant points") {
    const Matrix pts = Matrix::from_rows({{0.0}, {2.0}, {4.0}});
    // squared distances {4, 4, 16}; lower median 4 -> bandwidth 2
    CHECK(kernels::median_heuristic_kernel(pts).bandwidth() == doctest::Approx(2.0));
  }
  SUBCASE("identical points are degenerate") {
    const Matrix pts(5, 2, 1.0);
    CHECK_THROWS_AS(kernels::median_heuristic_kernel(pts), DegenerateDataError);
  }
}

TEST_CASE("deep kernel gram graph matches the plain gram") {
  Rng rng(61);
  auto st = DeepKernelStructure::deep({{2, 4, 2}}, "k");
  diffnet::ParamStore params;
  st.init_params(params, rng);
  const Matrix pts = random_points(12, 2, rng);
  const Matrix plain = st.gram(params, pts);
  diffnet::Tape tape;
  const Matrix& graph = tape.value(st.gram_graph(tape, params, pts));
  REQUIRE(graph.rows() == plain.rows());
  for (int i = 0; i < plain.size(); ++i)
    CHECK(graph.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-12));

  auto stp = DeepKernelStructure::plain("q");
  diffnet::ParamStore pp;
  stp.init_params(pp, rng);
  const Matrix plain2 = stp.gram(pp, pts);
  diffnet::Tape tape2;
  const Matrix& graph2 = tape2.value(stp.gram_graph(tape2, pp, pts));
  for (int i = 0; i < plain2.size(); ++i)
    CHECK(graph2.data()[i] == doctest::Approx(plain2.data()[i]).epsilon(1e-12));
}
