#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace deptest::numkit {

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

/// Deterministic splittable generator: xoshiro256++ state derived from
/// (seed, stream) via splitmix64. Equal (seed, stream) pairs reproduce the
/// identical draw sequence bit-for-bit; distinct streams are independent.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  double uniform();                            // [0, 1), 53-bit
  double uniform(double lo, double hi);
  double normal();                             // standard normal (Box-Muller)
  std::uint64_t uniform_int(std::uint64_t n);  // unbiased in [0, n)

  /// Derive an independent stream; deterministic in (seed, stream, substream).
  Rng split(std::uint64_t substream) const;

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Uniformly random permutation of {0, ..., m-1}.
  std::vector<int> permutation(int m);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
  double cached_normal_ = 0.0;
  bool have_cached_normal_ = false;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);

  static Matrix identity(int n);
  static Matrix from_rows(const std::vector<std::vector<double>>& rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> row(int i) { return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int i) const { return {data_.data() + static_cast<std::size_t>(i) * cols_, static_cast<std::size_t>(cols_)}; }

  bool is_finite() const;
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool operator==(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Dense product A*B; throws ShapeError on inner-dimension mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

/// Standard normal cdf, absolute error below 1e-12.
double normal_cdf(double x);

/// Inverse of normal_cdf; throws std::domain_error unless p in (0,1).
double normal_quantile(double p);

/// Gamma distribution with shape nu > 0 and scale theta > 0.
double gamma_cdf(double x, double shape, double scale);
double gamma_pdf(double x, double shape, double scale);
double gamma_quantile(double p, double shape, double scale);

// ---------------------------------------------------------------------------
// Geometry helpers
// ---------------------------------------------------------------------------

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Lower median of squared Euclidean distances over all unordered distinct
/// pairs of rows. Throws std::domain_error with fewer than 2 points.
double median_pairwise_sqdist(const Matrix& points);

}  // namespace deptest::numkit
