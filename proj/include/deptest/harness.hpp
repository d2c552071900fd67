#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deptest/testing.hpp"

namespace deptest::harness {

using datasets::PairedSample;
using testing::Method;
using testing::RunConfig;
using testing::TestStatistic;

/// Draws a fresh dependent sample of the requested size.
using DatasetSampler = std::function<PairedSample(int m, numkit::Rng& rng)>;

/// Synthetic data source shared by the CLI and the sweep drivers.
struct DataSpec {
  std::string kind = "hdgm";  // hdgm | sinusoid | csv
  int d = 10;                 // hdgm total dimension
  int freq = 4;               // sinusoid frequency
  std::string csv_path;
  std::vector<std::string> x_columns, y_columns;

  std::string describe() const;
};

DatasetSampler make_sampler(const DataSpec& spec);
/// Same marginals with the pairing broken by shuffling.
DatasetSampler make_null_sampler(const DataSpec& spec);

// ---------------------------------------------------------------------------
// Power estimation
// ---------------------------------------------------------------------------

/// Rejection fraction of permutation tests on n_tests fresh size-m samples,
/// with the binomial standard error.
std::pair<double, double> empirical_power(TestStatistic& stat, const DatasetSampler& sampler,
                                          int m, int n_tests, int n_perm, double alpha,
                                          numkit::Rng& rng);

/// Phi(sqrt(m) (t1 - t0)/tau1 + (tau0/tau1) Phi^{-1}(alpha)).
double asymptotic_power_nds(double t1, double t0, double tau1, double tau0, int m, double alpha);

/// Phi(sqrt(m) hsic / sigma1 - psi_quantile / (sqrt(m) sigma1)).
double asymptotic_power_hsic(double hsic, double sigma1, double psi_quantile, int m);

// ---------------------------------------------------------------------------
// Power-vs-test-size sweep
// ---------------------------------------------------------------------------

struct PowerCurve {
  std::vector<int> test_sizes;
  std::vector<double> power;       // mean over training runs
  std::vector<double> stderr_run;  // std of per-run powers / sqrt(runs)
  int n_train_runs = 0;
  int n_tests_per_run = 0;
};

struct SweepConfig {
  std::vector<Method> methods;
  DataSpec data;
  std::vector<int> m_grid;
  int n_train_runs = 3;
  int n_tests = 50;
  int n_perm = 200;
  int n_train = 2000;
  int n_val = 0;
  RunConfig train;  // epochs, lr, batch, lambda, ... (method/seed overridden per run)
  std::uint64_t seed = 0;
  std::string out_csv;
};

struct SweepRow {
  std::string method;
  int m = 0;
  int run = 0;
  double power = 0.0;
  double stderr_binomial = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::map<std::string, PowerCurve> curves;
};

/// One row per (method, m, run); rows are deterministic in (seed, method, m,
/// run) so an interrupted sweep resumed against an existing CSV reproduces
/// exactly the missing rows. Per-run training failures are recorded and the
/// sweep continues.
SweepResult power_sweep(const SweepConfig& cfg);

extern const char* kSweepCsvHeader;
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

// ---------------------------------------------------------------------------
// Type-I error audit
// ---------------------------------------------------------------------------

struct TypeIAuditConfig {
  Method method = Method::HsicM;
  DataSpec data;
  int m = 512;
  int n_tests = 400;
  int n_perm = 500;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  // used only when the method trains
  RunConfig train;
  int n_train = 2000;
  int n_val = 0;
  std::string out_csv;
};

struct TypeIAuditResult {
  double rejection_rate = 0.0;
  double stderr_binomial = 0.0;
  int n_tests = 0;
  std::vector<double> p_values;
};

/// Runs the method on pre-shuffled (null) data; the statistic needs no
/// training for the median-heuristic baselines this audit targets.
TypeIAuditResult type_i_audit(const TypeIAuditConfig& cfg);

// ---------------------------------------------------------------------------
// Permutation-vs-asymptotics diagnostic
// ---------------------------------------------------------------------------

struct PermAsympRow {
  int m = 0;
  double asymptotic = 0.0;
  double simulated_threshold = 0.0;
  double permutation = 0.0;
};

struct PermAsympReport {
  std::vector<PermAsympRow> rows;
  // Correlation between the statistic and its permutation threshold over
  // fresh test sets at the largest m; undefined for degenerate statistics.
  std::optional<double> stat_threshold_correlation;
  double t1 = 0, t0 = 0, tau1 = 0, tau0 = 0;  // critic moments used
};

struct PermAsympConfig {
  std::vector<int> m_grid{64, 128, 256, 512};
  double alpha = 0.05;
  int n_estimate = 20000;  // sample size for the population-level moments
  int n_null_sims = 500;   // fresh null statistics per m for the threshold
  int n_alt_sims = 500;    // fresh alternative statistics per m
  int n_perm_tests = 100;  // permutation tests per m
  int n_perm = 200;
  int n_corr_sets = 200;   // fresh test sets for the statistic/threshold correlation
  std::uint64_t seed = 0;
};

/// Compares the asymptotic power formula, the simulated-threshold power, and
/// the permutation-test power of a frozen critic.
PermAsympReport perm_vs_asymptotics_report(const estimators::Critic& critic,
                                           const DatasetSampler& sampler,
                                           const PermAsympConfig& cfg);

extern const char* kDiagnoseCsvHeader;
void write_diagnose_csv(const PermAsympReport& report, const std::string& path);

}  // namespace deptest::harness
