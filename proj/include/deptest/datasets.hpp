#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deptest/numkit.hpp"

namespace deptest::datasets {

using numkit::Matrix;

struct Provenance {
  std::string generator;
  std::string params;
  std::uint64_t seed = 0;
};

/// m paired points drawn jointly: row i of x goes with row i of y.
struct PairedSample {
  Matrix x;
  Matrix y;
  Provenance prov;

  int m() const { return x.rows(); }
  int dx() const { return x.cols(); }
  int dy() const { return y.cols(); }

  /// Rows selected by index, pairing preserved.
  PairedSample take(const std::vector<int>& idx) const;
};

/// Bimodal Gaussian mixture in d total dimensions with a single dependent
/// coordinate pair; the correlation is +0.5 in one component and -0.5 in the
/// other, so the pooled covariance vanishes. d must be even and >= 4;
/// dx = dy = d/2.
PairedSample sample_hdgm(int d, int n, numkit::Rng& rng);

/// Same, also returning the mixture component (0 or 1) of each point.
PairedSample sample_hdgm_labeled(int d, int n, numkit::Rng& rng, std::vector<int>* components);

struct SinusoidInfo {
  long long proposals = 0;
  long long accepted = 0;
};

/// Rejection sampling from density proportional to 1 + sin(freq*x)sin(freq*y)
/// on [-pi, pi]^2; proposals are uniform, acceptance probability
/// (1 + sin sin)/2.
PairedSample sample_sinusoid(int freq, int n, numkit::Rng& rng, SinusoidInfo* info = nullptr);

/// Permute y rows uniformly at random; x untouched. Breaks any dependence.
PairedSample shuffle_to_null(const PairedSample& sample, numkit::Rng& rng);

struct CsvLoadResult {
  PairedSample sample;
  int dropped_rows = 0;
};

/// Comma-separated with a header row; rows with missing or non-numeric
/// selected fields are dropped and counted. Throws DataError when a named
/// column is absent or no usable rows remain.
CsvLoadResult load_paired_csv(const std::string& path, const std::vector<std::string>& x_columns,
                              const std::vector<std::string>& y_columns);

/// Header x0..x{dx-1},y0..y{dy-1}; values printed with enough digits to
/// round-trip through load_paired_csv.
void save_paired_csv(const PairedSample& sample, const std::string& path);

}  // namespace deptest::datasets
