#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "deptest/errors.hpp"
#include "deptest/numkit.hpp"

using namespace deptest;
using numkit::Matrix;
using numkit::Rng;

namespace {

// Independent reference: erf by Taylor series, accurate to ~1e-15 for |x| <= 5.
double erf_series(double x) {
  const double two_over_sqrt_pi = 1.1283791670955126;
  double term = x, sum = x;
  for (int n = 1; n < 200; ++n) {
    term *= -x * x / n;
    const double add = term / (2 * n + 1);
    sum += add;
    if (std::abs(add) < 1e-18 * std::abs(sum)) break;
  }
  return two_over_sqrt_pi * sum;
}

double reference_normal_cdf(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

double bisect(double target, double lo, double hi, const std::function<double(double)>& f) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("normal cdf basics") {
  CHECK(numkit::normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  for (double x : {0.1, 0.7, 1.3, 2.9, 4.0}) {
    CHECK(numkit::normal_cdf(x) + numkit::normal_cdf(-x) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(numkit::normal_cdf(x) >= numkit::normal_cdf(x - 0.01));
  }
  CHECK(std::abs(numkit::normal_cdf(1.959964) - 0.975) < 1e-6);
}

TEST_CASE("normal cdf matches the series reference to 1e-12") {
  for (double x = -5.0; x <= 5.0; x += 0.25)
    CHECK(std::abs(numkit::normal_cdf(x) - reference_normal_cdf(x)) < 1e-12);
}

TEST_CASE("normal quantile") {
  CHECK(std::abs(numkit::normal_quantile(0.5)) < 1e-12);
  CHECK(numkit::normal_quantile(0.05) ==
        doctest::Approx(-numkit::normal_quantile(0.95)).epsilon(1e-10));
  const double via_bisection =
      bisect(0.975, 0.0, 10.0, [](double x) { return numkit::normal_cdf(x); });
  CHECK(std::abs(numkit::normal_quantile(0.975) - via_bisection) < 1e-9);
  CHECK(std::abs(numkit::normal_quantile(0.975) - 1.959964) < 1e-5);
  CHECK_THROWS_AS(numkit::normal_quantile(0.0), std::domain_error);
  CHECK_THROWS_AS(numkit::normal_quantile(1.0), std::domain_error);
  CHECK_THROWS_AS(numkit::normal_quantile(-0.3), std::domain_error);
}

TEST_CASE("normal quantile/cdf identity on a grid") {
  for (int i = 1; i <= 100; ++i) {
    const double p = i / 101.0;
    CHECK(std::abs(numkit::normal_cdf(numkit::normal_quantile(p)) - p) < 1e-9);
  }
}

TEST_CASE("gamma distribution") {
  CHECK(numkit::gamma_cdf(1.0, 1.0, 1.0) == doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));

  Rng rng(7);
  for (int t = 0; t < 50; ++t) {
    const double shape = 0.3 + 5.0 * rng.uniform();
    const double scale = 0.2 + 3.0 * rng.uniform();
    const double x = 6.0 * rng.uniform();
    CHECK(numkit::gamma_cdf(x, shape, scale) ==
          doctest::Approx(numkit::gamma_cdf(x / scale, shape, 1.0)).epsilon(1e-13));
  }

  const double q95 = numkit::gamma_quantile(0.95, 2.0, 3.0);
  const double via_bisection = bisect(0.95, 0.0, 100.0,
                                      [](double x) { return numkit::gamma_cdf(x, 2.0, 3.0); });
  CHECK(std::abs(q95 - via_bisection) < 1e-8);
  CHECK(std::abs(numkit::gamma_cdf(q95, 2.0, 3.0) - 0.95) < 1e-10);

  CHECK_THROWS_AS(numkit::gamma_cdf(1.0, -1.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(numkit::gamma_cdf(1.0, 1.0, 0.0), std::domain_error);
  CHECK_THROWS_AS(numkit::gamma_quantile(1.5, 1.0, 1.0), std::domain_error);
}

TEST_CASE("gamma quantile/cdf identity on a grid") {
  for (double shape : {0.7, 1.0, 2.3, 9.0}) {
    for (int i = 1; i <= 100; ++i) {
      const double p = i / 101.0;
      const double q = numkit::gamma_quantile(p, shape, 1.7);
      CHECK(std::abs(numkit::gamma_cdf(q, shape, 1.7) - p) < 1e-8);
    }
  }
}

TEST_CASE("gamma pdf differentiates the cdf") {
  for (double x : {0.4, 1.1, 2.5, 6.0}) {
    for (double shape : {0.9, 2.0, 4.5}) {
      const double h = 1e-6;
      const double fd =
          (numkit::gamma_cdf(x + h, shape, 1.3) - numkit::gamma_cdf(x - h, shape, 1.3)) / (2 * h);
      CHECK(numkit::gamma_pdf(x, shape, 1.3) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("median pairwise squared distance") {
  SUBCASE("two points") {
    Matrix pts(2, 2);
    pts(0, 0) = 0;
    pts(0, 1) = 0;
    pts(1, 0) = 3;
    pts(1, 1) = 4;
    CHECK(numkit::median_pairwise_sqdist(pts) == doctest::Approx(25.0));
  }
  SUBCASE("identical points") {
    Matrix pts(4, 3, 1.5);
    CHECK(numkit::median_pairwise_sqdist(pts) == 0.0);
  }
  SUBCASE("five random points against a full sort") {
    Rng rng(11);
    Matrix pts(5, 3);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 3; ++j) pts(i, j) = rng.normal();
    std::vector<double> d2;
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j)
        d2.push_back(numkit::squared_distance(pts.row(i), pts.row(j)));
    std::sort(d2.begin(), d2.end());
    CHECK(numkit::median_pairwise_sqdist(pts) == d2[4]);  // lower median of 10
  }
  SUBCASE("lower median with even pair count") {
    // 4 collinear points 0,1,2,4 -> sq distances {1,4,16,1,9,4} sorted
    // {1,1,4,4,9,16}; lower median is index 2.
    Matrix pts(4, 1);
    pts(0, 0) = 0;
    pts(1, 0) = 1;
    pts(2, 0) = 2;
    pts(3, 0) = 4;
    CHECK(numkit::median_pairwise_sqdist(pts) == doctest::Approx(4.0));
  }
  SUBCASE("needs two points") {
    Matrix pts(1, 3);
    CHECK_THROWS_AS(numkit::median_pairwise_sqdist(pts), std::domain_error);
  }
}

TEST_CASE("rng reproducibility and splitting") {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 10000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, 8);
  int same = 0;
  Rng a2(42, 7);
  for (int i = 0; i < 1000; ++i)
    if (a2.next_u64() == c.next_u64()) ++same;
  CHECK(same == 0);

  Rng base(5, 2);
  Rng s1 = base.split(3), s2 = base.split(3), s3 = base.split(4);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());
}

TEST_CASE("rng draws") {
  Rng rng(123);
  double mean = 0.0, var = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.normal();
    mean += z;
    var += z * z;
  }
  mean /= n;
  var = var / n - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);

  for (int i = 0; i < 1000; ++i) CHECK(rng.uniform_int(7) < 7);
  const auto perm = rng.permutation(50);
  std::vector<char> seen(50, 0);
  for (int v : perm) seen[v] = 1;
  CHECK(std::count(seen.begin(), seen.end(), 1) == 50);
}

TEST_CASE("matmul against a naive triple loop") {
  Rng rng(9);
  Matrix a(8, 8), b(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      a(i, j) = rng.normal();
      b(i, j) = rng.normal();
    }
  const Matrix c = numkit::matmul(a, b);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double s = 0.0;
      for (int t = 0; t < 8; ++t) s += a(i, t) * b(t, j);
      CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
    }
  Matrix bad(3, 8);
  CHECK_THROWS_AS(numkit::matmul(bad, bad), ShapeError);
}

TEST_CASE("transpose") {
  Matrix a(2, 3);
  a(0, 0) = 1;
  a(0, 1) = 2;
  a(0, 2) = 3;
  a(1, 0) = 4;
  a(1, 1) = 5;
  a(1, 2) = 6;
  const Matrix t = numkit::transpose(a);
  CHECK(t.rows() == 3);
  CHECK(t(2, 1) == 6);
  CHECK(t(0, 1) == 4);
}
