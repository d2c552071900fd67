#include "deptest/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "deptest/errors.hpp"

namespace deptest::numkit {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  std::uint64_t sm = seed;
  sm ^= 0xD1B54A32D192ED03ull * stream + 0x8CB92BA72F3D8DD7ull;
  for (auto& word : s_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  // xoshiro256++
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_cached_normal_) {
    have_cached_normal_ = false;
    return cached_normal_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  cached_normal_ = r * std::sin(a);
  have_cached_normal_ = true;
  return r * std::cos(a);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw std::domain_error("uniform_int: n must be positive");
  // Lemire's unbiased multiply-shift rejection.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
  auto lo = static_cast<std::uint64_t>(m);
  if (lo < n) {
    const std::uint64_t t = (0 - n) % n;
    while (lo < t) {
      m = static_cast<unsigned __int128>(next_u64()) * n;
      lo = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

Rng Rng::split(std::uint64_t substream) const {
  std::uint64_t mix = stream_;
  std::uint64_t h = splitmix64(mix);
  h ^= 0x2545F4914F6CDD1Dull * (substream + 1);
  return Rng(seed_, h);
}

std::vector<int> Rng::permutation(int m) {
  std::vector<int> p(m);
  for (int i = 0; i < m; ++i) p[i] = i;
  shuffle(p);
  return p;
}

// ---------------------------------------------------------------------------

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows < 0 || cols < 0) throw ShapeError("Matrix: negative dimension");
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < m.rows(); ++i) {
    if (static_cast<int>(rows[i].size()) != m.cols()) throw ShapeError("from_rows: ragged rows");
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

bool Matrix::is_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), p = b.cols();
  for (int i = 0; i < n; ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * p;
    for (int t = 0; t < k; ++t) {
      const double aval = a(i, t);
      if (aval == 0.0) continue;
      const double* bt = b.data() + static_cast<std::size_t>(t) * p;
      for (int j = 0; j < p; ++j) ci[j] += aval * bt[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------

double normal_cdf(double x) {
  if (!std::isfinite(x)) throw std::domain_error("normal_cdf: non-finite input");
  return 0.5 * std::erfc(-x / M_SQRT2);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0,1)");
  // Acklam's rational approximation, then two Halley refinements against the
  // erfc-based cdf.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  for (int it = 0; it < 2; ++it) {
    const double e = normal_cdf(x) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    x = x - u / (1 + x * u / 2);
  }
  return x;
}

namespace {

// Regularized lower incomplete gamma P(a, x), series form (x < a + 1).
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x), Lentz continued fraction
// (x >= a + 1).
double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-17) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

void check_gamma_params(double shape, double scale) {
  if (!(shape > 0.0) || !(scale > 0.0))
    throw std::domain_error("gamma: shape and scale must be positive");
}

}  // namespace

double gamma_cdf(double x, double shape, double scale) {
  check_gamma_params(shape, scale);
  if (!(x >= 0.0)) throw std::domain_error("gamma_cdf: x must be nonnegative");
  const double t = x / scale;
  if (t == 0.0) return 0.0;
  return t < shape + 1.0 ? gamma_p_series(shape, t) : 1.0 - gamma_q_contfrac(shape, t);
}

double gamma_pdf(double x, double shape, double scale) {
  check_gamma_params(shape, scale);
  if (!(x >= 0.0)) throw std::domain_error("gamma_pdf: x must be nonnegative");
  if (x == 0.0) {
    if (shape > 1.0) return 0.0;
    if (shape == 1.0) return 1.0 / scale;
    return std::numeric_limits<double>::infinity();
  }
  const double t = x / scale;
  return std::exp((shape - 1.0) * std::log(t) - t - std::lgamma(shape)) / scale;
}

double gamma_quantile(double p, double shape, double scale) {
  check_gamma_params(shape, scale);
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("gamma_quantile: p must lie in (0,1)");
  // Wilson-Hilferty start, then safeguarded Newton on the cdf.
  const double z = normal_quantile(p);
  const double g = 1.0 - 1.0 / (9.0 * shape) + z * std::sqrt(1.0 / (9.0 * shape));
  double x = shape * g * g * g;
  if (!(x > 0.0)) x = shape * std::exp(z / std::sqrt(shape));  // small-shape fallback
  if (!(x > 0.0) || !std::isfinite(x)) x = shape;

  double lo = 0.0;
  double hi = shape + 10.0 * std::sqrt(shape) + 10.0;
  while (gamma_cdf(hi, shape, 1.0) < p) {
    hi *= 2.0;
    if (hi > 1e300) break;
  }
  x = std::clamp(x, 1e-300, hi);
  for (int it = 0; it < 200; ++it) {
    const double f = gamma_cdf(x, shape, 1.0) - p;
    if (f > 0)
      hi = x;
    else
      lo = x;
    const double dens = gamma_pdf(x, shape, 1.0);
    double step = dens > 0 ? f / dens : 0.0;
    double next = x - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(f) < 1e-15 || std::abs(next - x) < 1e-14 * (1.0 + x)) {
      x = next;
      break;
    }
    x = next;
  }
  return x * scale;
}

// ---------------------------------------------------------------------------

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("squared_distance: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double median_pairwise_sqdist(const Matrix& points) {
  const int m = points.rows();
  if (m < 2) throw std::domain_error("median_pairwise_sqdist: need at least 2 points");
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(m) * (m - 1) / 2);
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) d2.push_back(squared_distance(points.row(i), points.row(j)));
  // Lower median: element at index (N-1)/2 of the sorted pair distances.
  const std::size_t k = (d2.size() - 1) / 2;
  std::nth_element(d2.begin(), d2.begin() + k, d2.end());
  return d2[k];
}

}  // namespace deptest::numkit
