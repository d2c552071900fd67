#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "deptest/config.hpp"
#include "deptest/errors.hpp"
#include "deptest/harness.hpp"

using namespace deptest;

namespace {

struct DataOptions {
  std::string kind = "hdgm";
  int d = 10;
  int freq = 4;
  int n = 1000;
  std::string csv;
  std::string x_cols, y_cols;  // comma separated column names

  void attach(CLI::App* cmd) {
    cmd->add_option("--kind", kind, "dataset kind: hdgm | sinusoid | csv");
    cmd->add_option("--d", d, "hdgm total dimension (even, >= 4)");
    cmd->add_option("--freq", freq, "sinusoid frequency");
    cmd->add_option("--n", n, "number of points");
    cmd->add_option("--csv", csv, "csv path (kind=csv)");
    cmd->add_option("--x-cols", x_cols, "comma-separated x column names");
    cmd->add_option("--y-cols", y_cols, "comma-separated y column names");
  }

  void from_config(const harness::Config& cfg) {
    kind = cfg.str("data.kind", kind);
    d = static_cast<int>(cfg.integer("data.d", d));
    freq = static_cast<int>(cfg.integer("data.freq", freq));
    n = static_cast<int>(cfg.integer("data.n", n));
    csv = cfg.str("data.csv", csv);
    x_cols = cfg.str("data.x_cols", x_cols);
    y_cols = cfg.str("data.y_cols", y_cols);
  }

  harness::DataSpec spec() const {
    harness::DataSpec s;
    s.kind = kind;
    s.d = d;
    s.freq = freq;
    s.csv_path = csv;
    auto split_names = [](const std::string& joined) {
      std::vector<std::string> out;
      std::string cell;
      std::stringstream ss(joined);
      while (std::getline(ss, cell, ','))
        if (!cell.empty()) out.push_back(cell);
      return out;
    };
    s.x_columns = split_names(x_cols);
    s.y_columns = split_names(y_cols);
    return s;
  }

  datasets::PairedSample draw(std::uint64_t seed) const {
    numkit::Rng rng(seed, 11);
    return harness::make_sampler(spec())(n, rng);
  }
};

struct TrainOptions {
  int epochs = 1000;
  double lr = 1e-4;
  int batch = 512;
  double lambda = 1e-8;
  double weight_decay = 0.01;
  int m_target = 0;
  int val_every = 10;
  bool hsic_gamma_threshold = false;
  bool nds_plain = false;
  int gamma_perms = 20;
  double split_train = 0.7, split_val = 0.2, split_test = 0.1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--lr", lr, "learning rate");
    cmd->add_option("--batch", batch, "minibatch size");
    cmd->add_option("--lambda", lambda, "variance regularizer");
    cmd->add_option("--weight-decay", weight_decay, "AdamW weight decay");
    cmd->add_option("--m-target", m_target, "planned test size for threshold terms (0: batch)");
    cmd->add_option("--val-every", val_every, "epochs between validation checkpoints");
    cmd->add_flag("--hsic-gamma-threshold", hsic_gamma_threshold,
                  "train HSIC with the gamma-approximated threshold term");
    cmd->add_flag("--nds-plain", nds_plain, "train NDS without the threshold term");
    cmd->add_option("--gamma-perms", gamma_perms, "permutations behind gamma moments");
    cmd->add_option("--split-train", split_train, "train fraction");
    cmd->add_option("--split-val", split_val, "validation fraction");
    cmd->add_option("--split-test", split_test, "test fraction");
  }

  void from_config(const harness::Config& cfg) {
    epochs = static_cast<int>(cfg.integer("train.epochs", epochs));
    lr = cfg.num("train.lr", lr);
    batch = static_cast<int>(cfg.integer("train.batch", batch));
    lambda = cfg.num("train.lambda", lambda);
    weight_decay = cfg.num("train.weight_decay", weight_decay);
    m_target = static_cast<int>(cfg.integer("train.m_target", m_target));
    val_every = static_cast<int>(cfg.integer("train.val_every", val_every));
    hsic_gamma_threshold = cfg.flag("train.hsic_gamma_threshold", hsic_gamma_threshold);
    nds_plain = cfg.flag("train.nds_plain", nds_plain);
    gamma_perms = static_cast<int>(cfg.integer("train.gamma_perms", gamma_perms));
    split_train = cfg.num("split.train", split_train);
    split_val = cfg.num("split.val", split_val);
    split_test = cfg.num("split.test", split_test);
  }

  void apply(testing::RunConfig* rc) const {
    rc->epochs = epochs;
    rc->lr = lr;
    rc->batch_size = batch;
    rc->lambda = lambda;
    rc->weight_decay = weight_decay;
    rc->m_target = m_target;
    rc->val_every = val_every;
    rc->hsic_with_gamma_threshold = hsic_gamma_threshold;
    rc->nds_with_threshold = !nds_plain;
    rc->gamma_perms = gamma_perms;
    rc->split = {split_train, split_val, split_test, 0};
  }
};

harness::Config load_config_if_any(const std::string& path) {
  return path.empty() ? harness::Config{} : harness::Config::load(path);
}

int run_generate(const std::string& config_path, DataOptions data, std::uint64_t seed,
                 bool make_null, const std::string& out) {
  const auto cfg = load_config_if_any(config_path);
  data.from_config(cfg);
  datasets::PairedSample s = data.draw(seed);
  if (make_null) {
    numkit::Rng rng(seed, 13);
    s = datasets::shuffle_to_null(s, rng);
  }
  datasets::save_paired_csv(s, out);
  std::printf("wrote %d rows (dx=%d, dy=%d) to %s\n", s.m(), s.dx(), s.dy(), out.c_str());
  return 0;
}

int run_test(const std::string& config_path, DataOptions data, TrainOptions train,
             std::string method, double alpha, int n_perm, std::uint64_t seed,
             const std::string& checkpoint_out, const std::string& manifest_out,
             bool randomized_ties, bool train_only) {
  const auto cfg = load_config_if_any(config_path);
  data.from_config(cfg);
  train.from_config(cfg);
  if (cfg.has("run.method") && method.empty()) method = cfg.str("run.method");
  if (method.empty()) method = "hsic-m";

  testing::RunConfig rc;
  rc.method = testing::method_from_string(method);
  train.apply(&rc);
  rc.alpha = alpha;
  rc.n_perm = n_perm;
  rc.seed = seed;
  rc.randomized_ties = randomized_ties;
  rc.checkpoint_out = checkpoint_out;
  rc.manifest_out = manifest_out;

  const datasets::PairedSample dataset = data.draw(seed);
  if (train_only) {
    testing::SplitSpec split = rc.split;
    split.seed = seed;
    const auto parts = testing::split_data(dataset, split);
    const auto trained = testing::train_phase(rc, parts.train, parts.val);
    if (rc.checkpoint_out.empty()) throw ConfigError("train: --checkpoint-out is required");
    diffnet::save_checkpoint(trained.params, rc.checkpoint_out);
    std::printf("method=%s epochs_run=%d diverged=%d checkpoint=%s\n", method.c_str(),
                trained.epochs_run, trained.diverged ? 1 : 0, rc.checkpoint_out.c_str());
    return 0;
  }
  const auto out = testing::run_algorithm1(rc, dataset);
  std::printf("method=%s statistic=%.10g p_value=%.10g reject=%d n_perm=%d alpha=%g\n",
              method.c_str(), out.result.statistic, out.result.p_value,
              out.result.reject ? 1 : 0, static_cast<int>(out.result.perm_values.size()), alpha);
  return 0;
}

int run_power_sweep(const std::string& config_path, DataOptions data, TrainOptions train,
                    std::string methods_joined, std::string m_grid_joined, int runs, int n_tests,
                    int n_perm, int n_train, int n_val, double alpha, std::uint64_t seed,
                    const std::string& out) {
  const auto cfg = load_config_if_any(config_path);
  data.from_config(cfg);
  train.from_config(cfg);
  if (methods_joined.empty()) methods_joined = cfg.str("sweep.methods", "hsic-m");
  if (m_grid_joined.empty()) m_grid_joined = cfg.str("sweep.m_grid", "128,256,512");
  runs = static_cast<int>(cfg.integer("sweep.runs", runs));
  n_tests = static_cast<int>(cfg.integer("sweep.n_tests", n_tests));
  n_perm = static_cast<int>(cfg.integer("sweep.n_perm", n_perm));
  n_train = static_cast<int>(cfg.integer("sweep.n_train", n_train));
  n_val = static_cast<int>(cfg.integer("sweep.n_val", n_val));

  harness::SweepConfig sc;
  sc.data = data.spec();
  {
    std::stringstream ss(methods_joined);
    std::string cell;
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) sc.methods.push_back(testing::method_from_string(cell));
  }
  {
    std::stringstream ss(m_grid_joined);
    std::string cell;
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) sc.m_grid.push_back(std::stoi(cell));
  }
  sc.n_train_runs = runs;
  sc.n_tests = n_tests;
  sc.n_perm = n_perm;
  sc.n_train = n_train;
  sc.n_val = n_val;
  sc.seed = seed;
  sc.out_csv = out;
  train.apply(&sc.train);
  sc.train.alpha = alpha;

  const auto result = harness::power_sweep(sc);
  for (const auto& [name, curve] : result.curves)
    for (std::size_t i = 0; i < curve.test_sizes.size(); ++i)
      std::printf("%s m=%d power=%.4f +- %.4f\n", name.c_str(), curve.test_sizes[i],
                  curve.power[i], curve.stderr_run[i]);
  if (!out.empty()) std::printf("rows written to %s\n", out.c_str());
  return 0;
}

int run_type_i_audit(const std::string& config_path, DataOptions data, TrainOptions train,
                     std::string method, int m, int n_tests, int n_perm, double alpha,
                     std::uint64_t seed, const std::string& out) {
  const auto cfg = load_config_if_any(config_path);
  data.from_config(cfg);
  train.from_config(cfg);
  if (method.empty()) method = cfg.str("audit.method", "hsic-m");

  harness::TypeIAuditConfig ac;
  ac.method = testing::method_from_string(method);
  ac.data = data.spec();
  ac.m = static_cast<int>(cfg.integer("audit.m", m));
  ac.n_tests = static_cast<int>(cfg.integer("audit.n_tests", n_tests));
  ac.n_perm = static_cast<int>(cfg.integer("audit.n_perm", n_perm));
  ac.alpha = alpha;
  ac.seed = seed;
  ac.out_csv = out;
  train.apply(&ac.train);
  ac.n_train = data.n;

  const auto res = harness::type_i_audit(ac);
  std::printf("method=%s m=%d n_tests=%d rejection_rate=%.4f stderr=%.4f alpha=%g\n",
              method.c_str(), ac.m, res.n_tests, res.rejection_rate, res.stderr_binomial, alpha);
  return 0;
}

int run_diagnose(const std::string& config_path, DataOptions data, TrainOptions train,
                 std::string method, std::string m_grid_joined, double alpha, int n_perm,
                 std::uint64_t seed, const std::string& out) {
  const auto cfg = load_config_if_any(config_path);
  data.from_config(cfg);
  train.from_config(cfg);
  if (method.empty()) method = cfg.str("diagnose.method", "nds");
  if (m_grid_joined.empty()) m_grid_joined = cfg.str("diagnose.m_grid", "64,128,256,512");

  const testing::Method mth = testing::method_from_string(method);
  if (mth != testing::Method::Nds && mth != testing::Method::InfoNce &&
      mth != testing::Method::Nwj)
    throw ConfigError("diagnose-perm expects a critic-based method (nds | infonce | nwj)");

  testing::RunConfig rc;
  rc.method = mth;
  train.apply(&rc);
  rc.seed = seed;

  const auto sampler = harness::make_sampler(data.spec());
  numkit::Rng pool_rng(seed, 11);
  const auto pool = sampler(data.n, pool_rng);
  testing::SplitSpec split = rc.split;
  split.seed = seed;
  const auto parts = testing::split_data(pool, split);
  const auto trained = testing::train_phase(rc, parts.train, parts.val);
  const auto st = testing::make_structures(rc, pool.dx(), pool.dy());
  const estimators::MlpCritic critic(trained.params, st.critic);

  harness::PermAsympConfig pc;
  {
    std::stringstream ss(m_grid_joined);
    std::string cell;
    pc.m_grid.clear();
    while (std::getline(ss, cell, ','))
      if (!cell.empty()) pc.m_grid.push_back(std::stoi(cell));
  }
  pc.alpha = alpha;
  pc.n_perm = n_perm;
  pc.seed = seed;
  pc.n_estimate = static_cast<int>(cfg.integer("diagnose.n_estimate", pc.n_estimate));
  pc.n_null_sims = static_cast<int>(cfg.integer("diagnose.n_null", pc.n_null_sims));
  pc.n_alt_sims = static_cast<int>(cfg.integer("diagnose.n_alt", pc.n_alt_sims));
  pc.n_perm_tests = static_cast<int>(cfg.integer("diagnose.n_perm_tests", pc.n_perm_tests));
  pc.n_corr_sets = static_cast<int>(cfg.integer("diagnose.n_corr", pc.n_corr_sets));

  const auto report = harness::perm_vs_asymptotics_report(critic, sampler, pc);
  std::printf("%s\n", harness::kDiagnoseCsvHeader);
  for (const auto& r : report.rows)
    std::printf("%d,%.4f,%.4f,%.4f\n", r.m, r.asymptotic, r.simulated_threshold, r.permutation);
  if (report.stat_threshold_correlation)
    std::printf("stat/threshold correlation: %.4f\n", *report.stat_threshold_correlation);
  else
    std::printf("stat/threshold correlation: undefined (degenerate statistic)\n");
  if (!out.empty()) harness::write_diagnose_csv(report, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Independence testing with learned kernels and critics"};
  app.require_subcommand(1);

  std::string config_path, method, out, checkpoint_out, manifest_out;
  std::string methods_joined, m_grid_joined;
  double alpha = 0.05;
  int n_perm = 500;
  std::uint64_t seed = 0;
  bool make_null = false, randomized_ties = false;
  int m = 512, n_tests = 400, runs = 3, sweep_n_tests = 50, sweep_n_perm = 200;
  int n_train = 2000, n_val = 0;

  DataOptions data;
  TrainOptions train;

  auto* generate = app.add_subcommand("generate", "sample a synthetic dataset to csv");
  data.attach(generate);
  generate->add_option("--config", config_path, "config file (key=value with [sections])");
  generate->add_option("--seed", seed, "rng seed");
  generate->add_flag("--null", make_null, "shuffle pairs to break dependence");
  generate->add_option("--out", out, "output csv path")->required();

  auto* test = app.add_subcommand("test", "split, train, and run one permutation test");
  data.attach(test);
  train.attach(test);
  test->add_option("--config", config_path, "config file");
  test->add_option("--method", method, "hsic-d|hsic-dx|hsic-o|hsic-m|nds|infonce|nwj|mmd-perm");
  test->add_option("--alpha", alpha, "significance level");
  test->add_option("--n-perm", n_perm, "permutations (incl. identity)");
  test->add_option("--seed", seed, "rng seed");
  test->add_flag("--randomized-ties", randomized_ties, "randomized tie-breaking p-value");
  test->add_option("--checkpoint-out", checkpoint_out, "write trained parameters here");
  test->add_option("--manifest-out", manifest_out, "write run manifest (json) here");

  auto* train_cmd = app.add_subcommand("train", "phase 1 only; writes a checkpoint");
  data.attach(train_cmd);
  train.attach(train_cmd);
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--method", method, "trainable method");
  train_cmd->add_option("--seed", seed, "rng seed");
  train_cmd->add_option("--checkpoint-out", checkpoint_out, "output checkpoint path")->required();

  auto* sweep = app.add_subcommand("power-sweep", "power vs test size over methods");
  data.attach(sweep);
  train.attach(sweep);
  sweep->add_option("--config", config_path, "config file");
  sweep->add_option("--methods", methods_joined, "comma-separated methods");
  sweep->add_option("--m-grid", m_grid_joined, "comma-separated test sizes");
  sweep->add_option("--runs", runs, "independent training runs");
  sweep->add_option("--n-tests", sweep_n_tests, "permutation tests per grid point");
  sweep->add_option("--n-perm", sweep_n_perm, "permutations per test");
  sweep->add_option("--n-train", n_train, "training pool size");
  sweep->add_option("--n-val", n_val, "validation pool size");
  sweep->add_option("--alpha", alpha, "significance level");
  sweep->add_option("--seed", seed, "rng seed");
  sweep->add_option("--out", out, "output csv (resumable)");

  auto* audit = app.add_subcommand("typeI-audit", "rejection rate on null data");
  data.attach(audit);
  train.attach(audit);
  audit->add_option("--config", config_path, "config file");
  audit->add_option("--method", method, "method to audit");
  audit->add_option("--m", m, "test size");
  audit->add_option("--n-tests", n_tests, "number of null datasets");
  audit->add_option("--n-perm", n_perm, "permutations per test");
  audit->add_option("--alpha", alpha, "significance level");
  audit->add_option("--seed", seed, "rng seed");
  audit->add_option("--out", out, "per-test csv output");

  auto* diagnose = app.add_subcommand("diagnose-perm",
                                      "asymptotic vs simulated vs permutation power");
  data.attach(diagnose);
  train.attach(diagnose);
  diagnose->add_option("--config", config_path, "config file");
  diagnose->add_option("--method", method, "critic-based method (nds|infonce|nwj)");
  diagnose->add_option("--m-grid", m_grid_joined, "comma-separated test sizes");
  diagnose->add_option("--alpha", alpha, "significance level");
  diagnose->add_option("--n-perm", n_perm, "permutations per test");
  diagnose->add_option("--seed", seed, "rng seed");
  diagnose->add_option("--out", out, "csv output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return run_generate(config_path, data, seed, make_null, out);
    if (test->parsed())
      return run_test(config_path, data, train, method, alpha, n_perm, seed, checkpoint_out,
                      manifest_out, randomized_ties, false);
    if (train_cmd->parsed())
      return run_test(config_path, data, train, method, alpha, n_perm, seed, checkpoint_out,
                      manifest_out, randomized_ties, true);
    if (sweep->parsed())
      return run_power_sweep(config_path, data, train, methods_joined, m_grid_joined, runs,
                             sweep_n_tests, sweep_n_perm, n_train, n_val, alpha, seed, out);
    if (audit->parsed())
      return run_type_i_audit(config_path, data, train, method, m, n_tests, n_perm, alpha, seed,
                              out);
    if (diagnose->parsed())
      return run_diagnose(config_path, data, train, method, m_grid_joined, alpha, n_perm, seed,
                          out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
