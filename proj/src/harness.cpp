#include "deptest/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "deptest/errors.hpp"

namespace deptest::harness {

namespace {

std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0,
                         std::uint64_t d = 0) {
  std::uint64_t h = 0x100000001B3ull;
  for (std::uint64_t v : {a, b, c, d}) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h *= 0x100000001B3ull;
  }
  return h;
}

double empirical_quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const int n = static_cast<int>(v.size());
  int k = static_cast<int>(std::ceil(q * n));
  k = std::clamp(k, 1, n);
  return v[k - 1];
}

}  // namespace

std::string DataSpec::describe() const {
  if (kind == "hdgm") return "hdgm-" + std::to_string(d);
  if (kind == "sinusoid") return "sinusoid-l" + std::to_string(freq);
  return kind + ":" + csv_path;
}

DatasetSampler make_sampler(const DataSpec& spec) {
  if (spec.kind == "hdgm") {
    const int d = spec.d;
    return [d](int m, numkit::Rng& rng) { return datasets::sample_hdgm(d, m, rng); };
  }
  if (spec.kind == "sinusoid") {
    const int freq = spec.freq;
    return [freq](int m, numkit::Rng& rng) { return datasets::sample_sinusoid(freq, m, rng); };
  }
  if (spec.kind == "csv") {
    auto loaded = datasets::load_paired_csv(spec.csv_path, spec.x_columns, spec.y_columns);
    const PairedSample pool = loaded.sample;
    return [pool](int m, numkit::Rng& rng) {
      if (m > pool.m()) throw DataError("csv sampler: requested more rows than available");
      std::vector<int> idx = rng.permutation(pool.m());
      idx.resize(m);
      return pool.take(idx);
    };
  }
  throw ConfigError("unknown dataset kind: " + spec.kind);
}

DatasetSampler make_null_sampler(const DataSpec& spec) {
  DatasetSampler base = make_sampler(spec);
  return [base](int m, numkit::Rng& rng) {
    PairedSample s = base(m, rng);
    return datasets::shuffle_to_null(s, rng);
  };
}

// ---------------------------------------------------------------------------

std::pair<double, double> empirical_power(TestStatistic& stat, const DatasetSampler& sampler,
                                          int m, int n_tests, int n_perm, double alpha,
                                          numkit::Rng& rng) {
  if (n_tests < 1) throw ConfigError("empirical_power: need n_tests >= 1");
  int rejections = 0;
  for (int t = 0; t < n_tests; ++t) {
    const PairedSample sample = sampler(m, rng);
    const auto res = testing::permutation_test(stat, sample, n_perm, alpha, rng);
    if (res.reject) ++rejections;
  }
  const double p = static_cast<double>(rejections) / n_tests;
  return {p, std::sqrt(p * (1.0 - p) / n_tests)};
}

double asymptotic_power_nds(double t1, double t0, double tau1, double tau0, int m, double alpha) {
  if (!(tau1 > 0.0) || !(tau0 > 0.0))
    throw std::domain_error("asymptotic_power_nds: deviations must be positive");
  const double arg = std::sqrt(static_cast<double>(m)) * (t1 - t0) / tau1 +
                     (tau0 / tau1) * numkit::normal_quantile(alpha);
  return numkit::normal_cdf(arg);
}

double asymptotic_power_hsic(double hsic, double sigma1, double psi_quantile, int m) {
  if (!(sigma1 > 0.0)) throw std::domain_error("asymptotic_power_hsic: sigma1 must be positive");
  const double rm = std::sqrt(static_cast<double>(m));
  return numkit::normal_cdf(rm * hsic / sigma1 - psi_quantile / (rm * sigma1));
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

const char* kSweepCsvHeader = "method,m,run,power,stderr";

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write csv: " + path);
  out << kSweepCsvHeader << "\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.method << "," << r.m << "," << r.run << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.power);
    out << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.stderr_binomial);
    out << buf << "\n";
  }
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open csv: " + path);
  std::string line;
  if (!std::getline(in, line) || line != kSweepCsvHeader)
    throw DataError("unexpected sweep csv header in " + path);
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    SweepRow r;
    std::string cell;
    std::getline(ss, r.method, ',');
    std::getline(ss, cell, ',');
    r.m = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.run = std::stoi(cell);
    std::getline(ss, cell, ',');
    r.power = std::strtod(cell.c_str(), nullptr);
    std::getline(ss, cell, ',');
    r.stderr_binomial = std::strtod(cell.c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

SweepResult power_sweep(const SweepConfig& cfg) {
  if (cfg.methods.empty() || cfg.m_grid.empty())
    throw ConfigError("power_sweep: need at least one method and one test size");
  const DatasetSampler sampler = make_sampler(cfg.data);

  std::vector<SweepRow> existing;
  if (!cfg.out_csv.empty() && std::filesystem::exists(cfg.out_csv))
    existing = read_sweep_csv(cfg.out_csv);
  auto have_row = [&existing](const std::string& method, int m, int run) {
    for (const auto& r : existing)
      if (r.method == method && r.m == m && r.run == run) return true;
    return false;
  };

  SweepResult result;
  result.rows = existing;
  for (int run = 0; run < cfg.n_train_runs; ++run) {
    // training data shared by every method in this run
    numkit::Rng pool_rng(cfg.seed, mix_stream(0xDA7A, run));
    const PairedSample train_pool = sampler(cfg.n_train, pool_rng);
    const PairedSample val_pool =
        cfg.n_val > 0 ? sampler(cfg.n_val, pool_rng) : PairedSample{};

    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      const Method method = cfg.methods[mi];
      const std::string mname = testing::to_string(method);
      std::vector<int> needed;
      for (int m : cfg.m_grid)
        if (!have_row(mname, m, run)) needed.push_back(m);
      if (needed.empty()) continue;

      RunConfig rc = cfg.train;
      rc.method = method;
      rc.seed = mix_stream(cfg.seed, 0x7EA1, mi, run);
      rc.n_perm = cfg.n_perm;
      try {
        diffnet::ParamStore params;
        if (testing::method_trains(method)) {
          auto trained = testing::train_phase(rc, train_pool, val_pool);
          if (trained.diverged)
            std::cerr << "power_sweep: " << mname << " run " << run
                      << " diverged; using last finite checkpoint\n";
          params = trained.params;
        }
        auto stat = testing::make_statistic(rc, params, train_pool.dx(), train_pool.dy());
        for (int m : needed) {
          numkit::Rng eval_rng(cfg.seed, mix_stream(0xE7A1, mi, run, static_cast<std::uint64_t>(m)));
          const auto [power, se] =
              empirical_power(*stat, sampler, m, cfg.n_tests, cfg.n_perm, cfg.train.alpha, eval_rng);
          result.rows.push_back({mname, m, run, power, se});
        }
      } catch (const std::exception& e) {
        std::cerr << "power_sweep: " << mname << " run " << run << " failed: " << e.what() << "\n";
      }
    }
  }

  std::sort(result.rows.begin(), result.rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.method != b.method) return a.method < b.method;
    if (a.m != b.m) return a.m < b.m;
    return a.run < b.run;
  });
  if (!cfg.out_csv.empty()) write_sweep_csv(result.rows, cfg.out_csv);

  for (const Method method : cfg.methods) {
    const std::string mname = testing::to_string(method);
    PowerCurve curve;
    curve.n_train_runs = cfg.n_train_runs;
    curve.n_tests_per_run = cfg.n_tests;
    for (int m : cfg.m_grid) {
      std::vector<double> powers;
      for (const auto& r : result.rows)
        if (r.method == mname && r.m == m) powers.push_back(r.power);
      if (powers.empty()) continue;
      double mean = 0.0;
      for (double p : powers) mean += p;
      mean /= powers.size();
      double sd = 0.0;
      if (powers.size() > 1) {
        for (double p : powers) sd += (p - mean) * (p - mean);
        sd = std::sqrt(sd / (powers.size() - 1));
      }
      curve.test_sizes.push_back(m);
      curve.power.push_back(mean);
      curve.stderr_run.push_back(sd / std::sqrt(static_cast<double>(powers.size())));
    }
    result.curves[mname] = std::move(curve);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Type-I audit
// ---------------------------------------------------------------------------

TypeIAuditResult type_i_audit(const TypeIAuditConfig& cfg) {
  const DatasetSampler null_sampler = make_null_sampler(cfg.data);

  RunConfig rc = cfg.train;
  rc.method = cfg.method;
  rc.seed = mix_stream(cfg.seed, 0x7ea1, 0, 0);
  rc.n_perm = cfg.n_perm;
  rc.alpha = cfg.alpha;
  diffnet::ParamStore params;
  if (testing::method_trains(cfg.method)) {
    numkit::Rng pool_rng(cfg.seed, mix_stream(0xDA7A, 0));
    const DatasetSampler sampler = make_sampler(cfg.data);
    const PairedSample train_pool = sampler(cfg.n_train, pool_rng);
    const PairedSample val_pool = cfg.n_val > 0 ? sampler(cfg.n_val, pool_rng) : PairedSample{};
    params = testing::train_phase(rc, train_pool, val_pool).params;
  }
  auto stat = testing::make_statistic(rc, params, cfg.data.kind == "sinusoid" ? 1 : cfg.data.d / 2,
                                      cfg.data.kind == "sinusoid" ? 1 : cfg.data.d / 2);

  TypeIAuditResult out;
  out.n_tests = cfg.n_tests;
  numkit::Rng rng(cfg.seed, mix_stream(0xAAD1, 1));
  int rejections = 0;
  for (int t = 0; t < cfg.n_tests; ++t) {
    const PairedSample sample = null_sampler(cfg.m, rng);
    const auto res = testing::permutation_test(*stat, sample, cfg.n_perm, cfg.alpha, rng);
    out.p_values.push_back(res.p_value);
    if (res.reject) ++rejections;
  }
  out.rejection_rate = static_cast<double>(rejections) / cfg.n_tests;
  out.stderr_binomial = std::sqrt(out.rejection_rate * (1.0 - out.rejection_rate) / cfg.n_tests);

  if (!cfg.out_csv.empty()) {
    std::ofstream f(cfg.out_csv);
    if (!f) throw DataError("cannot write csv: " + cfg.out_csv);
    f << "test,p_value,reject\n";
    char buf[64];
    for (std::size_t i = 0; i < out.p_values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", out.p_values[i]);
      f << i << "," << buf << "," << (out.p_values[i] <= cfg.alpha ? 1 : 0) << "\n";
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Permutation vs asymptotics
// ---------------------------------------------------------------------------

const char* kDiagnoseCsvHeader = "m,asymptotic_power,simulated_threshold_power,permutation_power";

void write_diagnose_csv(const PermAsympReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write csv: " + path);
  f << kDiagnoseCsvHeader << "\n";
  char buf[64];
  for (const auto& r : report.rows) {
    f << r.m << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.asymptotic);
    f << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.simulated_threshold);
    f << buf << ",";
    std::snprintf(buf, sizeof buf, "%.17g", r.permutation);
    f << buf << "\n";
  }
}

namespace {
struct MeanVar {
  double mean = 0.0;
  double var = 0.0;
};

MeanVar mean_var(const std::vector<double>& v) {
  MeanVar mv;
  for (double x : v) mv.mean += x;
  mv.mean /= static_cast<double>(v.size());
  for (double x : v) mv.var += (x - mv.mean) * (x - mv.mean);
  mv.var /= static_cast<double>(v.size());
  return mv;
}

double vec_mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}
}  // namespace

PermAsympReport perm_vs_asymptotics_report(const estimators::Critic& critic,
                                           const DatasetSampler& sampler,
                                           const PermAsympConfig& cfg) {
  PermAsympReport report;
  numkit::Rng rng(cfg.seed, 0xD1A6);

  // Population-level moments from one large sample: the alternative uses the
  // true pairing, the null pools several re-pairings of the same sample.
  const PairedSample big = sampler(cfg.n_estimate, rng);
  const std::vector<double> alt_vals = critic.paired_values(big);
  const MeanVar alt = mean_var(alt_vals);
  std::vector<double> null_vals;
  null_vals.reserve(static_cast<std::size_t>(cfg.n_estimate) * 5);
  for (int s = 0; s < 5; ++s) {
    const PairedSample shuffled = datasets::shuffle_to_null(big, rng);
    for (double v : critic.paired_values(shuffled)) null_vals.push_back(v);
  }
  const MeanVar nul = mean_var(null_vals);
  report.t1 = alt.mean;
  report.tau1 = std::sqrt(alt.var);
  report.t0 = nul.mean;
  report.tau0 = std::sqrt(nul.var);

  auto nds_of = [&critic](const PairedSample& s) { return vec_mean(critic.paired_values(s)); };

  for (int m : cfg.m_grid) {
    PermAsympRow row;
    row.m = m;
    row.asymptotic = asymptotic_power_nds(report.t1, report.t0, report.tau1, report.tau0, m, cfg.alpha);

    std::vector<double> null_stats(cfg.n_null_sims);
    for (int s = 0; s < cfg.n_null_sims; ++s) {
      PairedSample ns = datasets::shuffle_to_null(sampler(m, rng), rng);
      null_stats[s] = nds_of(ns);
    }
    const double threshold = empirical_quantile(null_stats, 1.0 - cfg.alpha);
    int above = 0;
    for (int s = 0; s < cfg.n_alt_sims; ++s)
      if (nds_of(sampler(m, rng)) > threshold) ++above;
    row.simulated_threshold = static_cast<double>(above) / cfg.n_alt_sims;

    std::shared_ptr<const estimators::Critic> view(&critic, [](const estimators::Critic*) {});
    testing::CriticStat stat(view, testing::CriticStat::Kind::Nds);
    const auto [power, se] =
        empirical_power(stat, sampler, m, cfg.n_perm_tests, cfg.n_perm, cfg.alpha, rng);
    row.permutation = power;
    report.rows.push_back(row);
  }

  // Statistic vs permutation-threshold coupling at the largest m.
  const int m_corr = *std::max_element(cfg.m_grid.begin(), cfg.m_grid.end());
  std::vector<double> stats, thresholds;
  std::shared_ptr<const estimators::Critic> view(&critic, [](const estimators::Critic*) {});
  testing::CriticStat stat(view, testing::CriticStat::Kind::Nds);
  for (int t = 0; t < cfg.n_corr_sets; ++t) {
    const PairedSample s = sampler(m_corr, rng);
    stat.bind(s);
    std::vector<int> identity(m_corr);
    for (int i = 0; i < m_corr; ++i) identity[i] = i;
    stats.push_back(stat.eval(identity));
    std::vector<double> permv(cfg.n_perm);
    permv[0] = stats.back();
    for (int q = 1; q < cfg.n_perm; ++q) permv[q] = stat.eval(rng.permutation(m_corr));
    thresholds.push_back(empirical_quantile(permv, 1.0 - cfg.alpha));
  }
  const MeanVar ms = mean_var(stats);
  const MeanVar mt = mean_var(thresholds);
  if (ms.var > 1e-24 && mt.var > 1e-24) {
    double cov = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i)
      cov += (stats[i] - ms.mean) * (thresholds[i] - mt.mean);
    cov /= static_cast<double>(stats.size());
    report.stat_threshold_correlation = cov / std::sqrt(ms.var * mt.var);
  }
  return report;
}

}  // namespace deptest::harness
