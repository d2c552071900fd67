#include "deptest/testing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "deptest/errors.hpp"

namespace deptest::testing {

using numkit::Matrix;

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

SplitResult split_data(const PairedSample& sample, const SplitSpec& spec) {
  const double fracs[3] = {spec.train_frac, spec.val_frac, spec.test_frac};
  for (double f : fracs)
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split: fractions must lie in [0,1]");
  if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  const int m = sample.m();
  const int n_val = static_cast<int>(std::llround(spec.val_frac * m));
  const int n_test = static_cast<int>(std::llround(spec.test_frac * m));
  const int n_train = m - n_val - n_test;
  if (n_test < 1) throw ConfigError("split: empty test split");
  if (n_train < 0) throw ConfigError("split: rounded sizes exceed sample");

  numkit::Rng rng(spec.seed, 17);
  std::vector<int> order = rng.permutation(m);
  SplitResult out;
  out.train_idx.assign(order.begin(), order.begin() + n_train);
  out.val_idx.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test_idx.assign(order.begin() + n_train + n_val, order.end());
  out.train = sample.take(out.train_idx);
  out.val = sample.take(out.val_idx);
  out.test = sample.take(out.test_idx);
  return out;
}

// ---------------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------------

TestResult permutation_test(TestStatistic& stat, const PairedSample& sample, int n_perm,
                            double alpha, numkit::Rng& rng, bool randomized_ties) {
  if (n_perm < 2) throw ConfigError("permutation_test: need n_perm >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("permutation_test: alpha must lie in (0,1)");
  stat.bind(sample);
  const int m = sample.m();
  std::vector<int> identity(m);
  for (int i = 0; i < m; ++i) identity[i] = i;

  TestResult res;
  res.alpha = alpha;
  res.seed = rng.seed();
  res.perm_values.resize(n_perm);
  res.perm_values[0] = stat.eval(identity);
  res.statistic = res.perm_values[0];
  for (int i = 1; i < n_perm; ++i) {
    const std::vector<int> perm = rng.permutation(m);
    try {
      res.perm_values[i] = stat.eval(perm);
    } catch (const std::exception& e) {
      throw NumericError("permutation_test: statistic failed at permutation " +
                         std::to_string(i) + ": " + e.what());
    }
  }
  int count_ge = 0, count_gt = 0;
  for (double v : res.perm_values) {
    if (v >= res.statistic) ++count_ge;
    if (v > res.statistic) ++count_gt;
  }
  if (randomized_ties) {
    const int ties = count_ge - count_gt;
    const double u = rng.uniform();
    res.p_value = (count_gt + u * ties) / n_perm;
    if (res.p_value <= 0.0) res.p_value = 1.0 / n_perm;
  } else {
    res.p_value = static_cast<double>(count_ge) / n_perm;
  }
  res.reject = res.p_value <= alpha;
  return res;
}

// ---------------------------------------------------------------------------
// HsicStat
// ---------------------------------------------------------------------------

HsicStat::HsicStat(std::shared_ptr<const Kernel> kernel_x, std::shared_ptr<const Kernel> kernel_y,
                   Estimator estimator)
    : kx_(std::move(kernel_x)), ky_(std::move(kernel_y)), estimator_(estimator) {}

HsicStat HsicStat::median_heuristic(Estimator estimator) {
  HsicStat s;
  s.median_ = true;
  s.estimator_ = estimator;
  return s;
}

std::string HsicStat::name() const {
  std::string n = estimator_ == Estimator::Unbiased ? "hsic-u" : "hsic-b";
  if (median_) n += "-median";
  return n;
}

namespace {
std::vector<double> matrix_row_sums(const Matrix& a) {
  std::vector<double> r(a.rows(), 0.0);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) r[i] += a(i, j);
  return r;
}
double vec_total(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s;
}
}  // namespace

void HsicStat::bind(const PairedSample& sample) {
  m_ = sample.m();
  const int need = estimator_ == Estimator::Unbiased ? 4 : 2;
  if (m_ < need) throw SampleSizeError("hsic statistic: sample too small");
  if (median_) {
    k_ = kernels::median_heuristic_kernel(sample.x).gram(sample.x);
    l_ = kernels::median_heuristic_kernel(sample.y).gram(sample.y);
  } else {
    k_ = kx_->gram(sample.x);
    l_ = ky_->gram(sample.y);
  }
  kt_ = k_;
  lt_ = l_;
  for (int i = 0; i < m_; ++i) {
    kt_(i, i) = 0.0;
    lt_(i, i) = 0.0;
  }
  rk_ = matrix_row_sums(k_);
  rl_ = matrix_row_sums(l_);
  rkt_ = matrix_row_sums(kt_);
  rlt_ = matrix_row_sums(lt_);
  sk_ = vec_total(rk_);
  sl_ = vec_total(rl_);
  skt_ = vec_total(rkt_);
  slt_ = vec_total(rlt_);
}

double HsicStat::eval(std::span<const int> perm) const {
  const double md = m_;
  if (estimator_ == Estimator::Biased) {
    double t1 = 0.0, t2 = 0.0;
    for (int i = 0; i < m_; ++i) {
      const double* ki = k_.data() + static_cast<std::size_t>(i) * m_;
      const double* lp = l_.data() + static_cast<std::size_t>(perm[i]) * m_;
      for (int j = 0; j < m_; ++j) t1 += ki[j] * lp[perm[j]];
      t2 += rk_[i] * rl_[perm[i]];
    }
    return t1 / (md * md) - 2.0 * t2 / (md * md * md) + sk_ * sl_ / (md * md * md * md);
  }
  double t1 = 0.0, t3 = 0.0;
  for (int i = 0; i < m_; ++i) {
    const double* ki = kt_.data() + static_cast<std::size_t>(i) * m_;
    const double* lp = lt_.data() + static_cast<std::size_t>(perm[i]) * m_;
    for (int j = 0; j < m_; ++j) t1 += ki[j] * lp[perm[j]];
    t3 += rkt_[i] * rlt_[perm[i]];
  }
  return (t1 + skt_ * slt_ / ((md - 1.0) * (md - 2.0)) - 2.0 * t3 / (md - 2.0)) /
         (md * (md - 3.0));
}

// ---------------------------------------------------------------------------
// CriticStat
// ---------------------------------------------------------------------------

CriticStat::CriticStat(std::shared_ptr<const Critic> critic, Kind kind)
    : critic_(std::move(critic)), kind_(kind) {}

std::string CriticStat::name() const {
  switch (kind_) {
    case Kind::Nds: return "nds";
    case Kind::InfoNce: return "infonce";
    case Kind::Nwj: return "nwj";
  }
  return "?";
}

void CriticStat::bind(const PairedSample& sample) {
  m_ = sample.m();
  if (m_ < 1) throw SampleSizeError("critic statistic: empty sample");
  fgrid_ = critic_->grid(sample);
  if (!fgrid_.is_finite()) throw NumericError("critic statistic: non-finite critic output");
  invariant_term_ = 0.0;
  if (kind_ == Kind::InfoNce) {
    // per-row log-mean-exp; invariant under re-pairing of y
    double s = 0.0;
    for (int i = 0; i < m_; ++i) {
      double mx = fgrid_(i, 0);
      for (int j = 1; j < m_; ++j) mx = std::max(mx, fgrid_(i, j));
      double e = 0.0;
      for (int j = 0; j < m_; ++j) e += std::exp(fgrid_(i, j) - mx);
      s += mx + std::log(e) - std::log(static_cast<double>(m_));
    }
    invariant_term_ = s / m_;
  } else if (kind_ == Kind::Nwj) {
    double mx = fgrid_(0, 0);
    for (int i = 0; i < fgrid_.size(); ++i) mx = std::max(mx, fgrid_.data()[i]);
    double e = 0.0;
    for (int i = 0; i < fgrid_.size(); ++i) e += std::exp(fgrid_.data()[i] - mx);
    invariant_term_ = std::exp(mx + std::log(e) - 2.0 * std::log(static_cast<double>(m_)) - 1.0);
  }
}

double CriticStat::eval(std::span<const int> perm) const {
  double t = 0.0;
  for (int i = 0; i < m_; ++i) t += fgrid_(i, perm[i]);
  t /= m_;
  return kind_ == Kind::Nds ? t : t - invariant_term_;
}

// ---------------------------------------------------------------------------
// MmdPermStat
// ---------------------------------------------------------------------------

MmdPermStat::MmdPermStat(std::shared_ptr<const Kernel> kernel_x,
                         std::shared_ptr<const Kernel> kernel_y, int n_shuffles,
                         std::uint64_t perm_seed)
    : kx_(std::move(kernel_x)), ky_(std::move(kernel_y)), n_shuffles_(n_shuffles),
      perm_seed_(perm_seed) {
  if (n_shuffles < 1) throw ConfigError("mmd statistic: need at least one shuffle");
}

MmdPermStat MmdPermStat::median_heuristic(int n_shuffles, std::uint64_t perm_seed) {
  MmdPermStat s;
  s.median_ = true;
  s.n_shuffles_ = n_shuffles;
  s.perm_seed_ = perm_seed;
  return s;
}

std::string MmdPermStat::name() const { return "mmd2-perm"; }

void MmdPermStat::bind(const PairedSample& sample) {
  m_ = sample.m();
  if (m_ < 2) throw SampleSizeError("mmd statistic: sample too small");
  if (median_) {
    k_ = kernels::median_heuristic_kernel(sample.x).gram(sample.x);
    l_ = kernels::median_heuristic_kernel(sample.y).gram(sample.y);
  } else {
    k_ = kx_->gram(sample.x);
    l_ = ky_->gram(sample.y);
  }
  numkit::Rng rng(perm_seed_, 29);
  shuffles_.clear();
  for (int q = 0; q < n_shuffles_; ++q) shuffles_.push_back(rng.permutation(m_));
}

double MmdPermStat::eval(std::span<const int> perm) const {
  const double md = m_, pd = n_shuffles_;
  double term1 = 0.0, term2 = 0.0, term3 = 0.0;
  for (int i = 0; i < m_; ++i) {
    const double* ki = k_.data() + static_cast<std::size_t>(i) * m_;
    const double* li = l_.data() + static_cast<std::size_t>(perm[i]) * m_;
    for (int j = 0; j < m_; ++j) term1 += ki[j] * li[perm[j]];
  }
  for (const auto& s : shuffles_)
    for (int i = 0; i < m_; ++i) {
      const double* ki = k_.data() + static_cast<std::size_t>(i) * m_;
      const double* li = l_.data() + static_cast<std::size_t>(perm[i]) * m_;
      for (int j = 0; j < m_; ++j) term2 += ki[j] * li[perm[s[j]]];
    }
  for (const auto& sq : shuffles_)
    for (const auto& sr : shuffles_)
      for (int i = 0; i < m_; ++i) {
        const double* ki = k_.data() + static_cast<std::size_t>(i) * m_;
        const double* li = l_.data() + static_cast<std::size_t>(perm[sq[i]]) * m_;
        for (int j = 0; j < m_; ++j) term3 += ki[j] * li[perm[sr[j]]];
      }
  return term1 / (md * md) - 2.0 * term2 / (md * md * pd) + term3 / (md * md * pd * pd);
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

Method method_from_string(const std::string& name) {
  if (name == "hsic-d") return Method::HsicD;
  if (name == "hsic-dx") return Method::HsicDx;
  if (name == "hsic-o") return Method::HsicO;
  if (name == "hsic-m") return Method::HsicM;
  if (name == "nds") return Method::Nds;
  if (name == "infonce") return Method::InfoNce;
  if (name == "nwj") return Method::Nwj;
  if (name == "mmd-perm") return Method::MmdPerm;
  throw ConfigError("unknown method: " + name);
}

std::string to_string(Method method) {
  switch (method) {
    case Method::HsicD: return "hsic-d";
    case Method::HsicDx: return "hsic-dx";
    case Method::HsicO: return "hsic-o";
    case Method::HsicM: return "hsic-m";
    case Method::Nds: return "nds";
    case Method::InfoNce: return "infonce";
    case Method::Nwj: return "nwj";
    case Method::MmdPerm: return "mmd-perm";
  }
  return "?";
}

bool method_trains(Method method) {
  return method != Method::HsicM && method != Method::MmdPerm;
}

namespace {
std::vector<int> default_featurizer_widths(int d) {
  if (d == 1) return {1, 8, 12, 8};
  return {d, 2 * d, 3 * d, 2 * d};
}

std::vector<int> default_critic_widths(int d) {
  if (d == 2) return {2, 8, 12, 8, 1};
  return {d, 2 * d, 3 * d, 2 * d, 1};
}
}  // namespace

ModelStructures make_structures(const RunConfig& cfg, int dx, int dy) {
  ModelStructures s;
  switch (cfg.method) {
    case Method::HsicD: {
      auto wx = cfg.featurizer_widths_x.empty() ? default_featurizer_widths(dx)
                                                : cfg.featurizer_widths_x;
      auto wy = cfg.featurizer_widths_y.empty() ? default_featurizer_widths(dy)
                                                : cfg.featurizer_widths_y;
      s.kernel_x = kernels::DeepKernelStructure::deep({std::move(wx)}, "kx");
      s.kernel_y = kernels::DeepKernelStructure::deep({std::move(wy)}, "ky");
      s.has_kernels = true;
      break;
    }
    case Method::HsicDx: {
      if (dx != dy) throw ConfigError("tied kernel needs dx == dy");
      auto w = cfg.featurizer_widths_x.empty() ? default_featurizer_widths(dx)
                                               : cfg.featurizer_widths_x;
      s.kernel_x = kernels::DeepKernelStructure::deep({w}, "kx");
      s.kernel_y = kernels::DeepKernelStructure::deep({std::move(w)}, "kx");
      s.has_kernels = true;
      break;
    }
    case Method::HsicO: {
      s.kernel_x = kernels::DeepKernelStructure::plain("kx");
      s.kernel_y = kernels::DeepKernelStructure::plain("ky");
      s.has_kernels = true;
      break;
    }
    case Method::Nds:
    case Method::InfoNce:
    case Method::Nwj: {
      auto w = cfg.critic_widths.empty() ? default_critic_widths(dx + dy) : cfg.critic_widths;
      s.critic = estimators::CriticStructure{{std::move(w)}, "critic"};
      s.has_critic = true;
      break;
    }
    case Method::HsicM:
    case Method::MmdPerm:
      break;
  }
  return s;
}

diffnet::ParamStore init_model(const ModelStructures& structures, numkit::Rng& rng) {
  diffnet::ParamStore params;
  if (structures.has_kernels) {
    structures.kernel_x.init_params(params, rng);
    if (structures.kernel_y.prefix != structures.kernel_x.prefix)
      structures.kernel_y.init_params(params, rng);
  }
  if (structures.has_critic) structures.critic.init_params(params, rng);
  return params;
}

namespace {
diffnet::Var build_objective(diffnet::Tape& tape, const RunConfig& cfg,
                             const ModelStructures& st, const diffnet::ParamStore& params,
                             const PairedSample& batch, numkit::Rng* gamma_rng) {
  using objectives::ObjectiveConfig;
  using objectives::ObjectiveVariant;
  switch (cfg.method) {
    case Method::HsicD:
    case Method::HsicDx:
    case Method::HsicO: {
      ObjectiveConfig oc;
      oc.lambda = cfg.lambda;
      oc.alpha = cfg.alpha;
      oc.m_target = cfg.m_target;
      oc.gamma_perms = cfg.gamma_perms;
      oc.variant = cfg.hsic_with_gamma_threshold ? ObjectiveVariant::HsicWithGammaThreshold
                                                 : ObjectiveVariant::HsicPlain;
      return objectives::j_hsic(tape, params, st.kernel_x, st.kernel_y, batch, oc, gamma_rng);
    }
    case Method::Nds: {
      ObjectiveConfig oc;
      oc.lambda = cfg.lambda;
      oc.alpha = cfg.alpha;
      oc.m_target = cfg.m_target;
      oc.variant = cfg.nds_with_threshold ? ObjectiveVariant::NdsWithThreshold
                                          : ObjectiveVariant::NdsPlain;
      return objectives::j_nds(tape, params, st.critic, batch, oc);
    }
    case Method::InfoNce:
      return objectives::infonce_objective(tape, params, st.critic, batch);
    case Method::Nwj:
      return objectives::nwj_objective(tape, params, st.critic, batch);
    case Method::HsicM:
    case Method::MmdPerm:
      break;
  }
  throw ConfigError("method has no training objective");
}

int min_batch_for(const RunConfig& cfg) {
  switch (cfg.method) {
    case Method::HsicD:
    case Method::HsicDx:
    case Method::HsicO:
      return 5;
    default:
      return 2;
  }
}
}  // namespace

double objective_value(const RunConfig& cfg, const ModelStructures& structures,
                       const diffnet::ParamStore& params, const PairedSample& batch,
                       numkit::Rng* gamma_rng) {
  diffnet::Tape tape;
  return tape.scalar(build_objective(tape, cfg, structures, params, batch, gamma_rng));
}

TrainOutput train_phase(const RunConfig& cfg, const PairedSample& train, const PairedSample& val) {
  TrainOutput out;
  if (!method_trains(cfg.method)) return out;
  const ModelStructures st = make_structures(cfg, train.dx(), train.dy());
  numkit::Rng rng_init(cfg.seed, 1);
  numkit::Rng rng_batch(cfg.seed, 2);
  numkit::Rng rng_gamma(cfg.seed, 4);
  diffnet::ParamStore params = init_model(st, rng_init);
  diffnet::AdamWConfig opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  diffnet::AdamWState opt_state;

  const int n = train.m();
  const int bsz = std::min(cfg.batch_size, n);
  const int min_batch = min_batch_for(cfg);
  diffnet::ParamStore snapshot = params;
  diffnet::ParamStore best = params;
  double best_val = -std::numeric_limits<double>::infinity();
  bool have_val = val.m() >= min_batch;

  for (int epoch = 1; epoch <= cfg.epochs && !out.diverged; ++epoch) {
    std::vector<int> order = rng_batch.permutation(n);
    for (int start = 0; start < n; start += bsz) {
      const int end = std::min(start + bsz, n);
      if (end - start < min_batch) continue;
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      const PairedSample batch = train.take(idx);
      try {
        diffnet::Tape tape;
        diffnet::Var obj = build_objective(tape, cfg, st, params, batch, &rng_gamma);
        diffnet::GradMap grads = diffnet::grad(tape, obj);
        for (auto& [name, g] : grads)
          for (int i = 0; i < g.size(); ++i) g.data()[i] = -g.data()[i];
        diffnet::adamw_step(params, grads, opt_state, opt);
      } catch (const NumericError&) {
        params = snapshot;
        out.diverged = true;
        break;
      }
    }
    if (out.diverged) break;
    snapshot = params;
    out.epochs_run = epoch;
    if (have_val && (epoch % cfg.val_every == 0 || epoch == cfg.epochs)) {
      try {
        const double v = objective_value(cfg, st, params, val, &rng_gamma);
        if (v > best_val) {
          best_val = v;
          best = params;
          out.used_val_checkpoint = true;
        }
      } catch (const NumericError&) {
        // skip this checkpoint
      }
    }
  }
  out.params = out.used_val_checkpoint ? best : params;
  out.best_val_objective = out.used_val_checkpoint ? best_val : 0.0;
  return out;
}

std::unique_ptr<TestStatistic> make_statistic(const RunConfig& cfg,
                                              const diffnet::ParamStore& params, int dx, int dy) {
  const ModelStructures st = make_structures(cfg, dx, dy);
  switch (cfg.method) {
    case Method::HsicD:
    case Method::HsicDx:
    case Method::HsicO: {
      auto kx = std::make_shared<kernels::DeepKernel>(params, st.kernel_x);
      auto ky = std::make_shared<kernels::DeepKernel>(params, st.kernel_y);
      return std::make_unique<HsicStat>(kx, ky, HsicStat::Estimator::Unbiased);
    }
    case Method::HsicM:
      return std::make_unique<HsicStat>(HsicStat::median_heuristic(HsicStat::Estimator::Unbiased));
    case Method::Nds:
    case Method::InfoNce:
    case Method::Nwj: {
      auto critic = std::make_shared<estimators::MlpCritic>(params, st.critic);
      const CriticStat::Kind kind = cfg.method == Method::Nds ? CriticStat::Kind::Nds
                                    : cfg.method == Method::InfoNce ? CriticStat::Kind::InfoNce
                                                                    : CriticStat::Kind::Nwj;
      return std::make_unique<CriticStat>(critic, kind);
    }
    case Method::MmdPerm:
      return std::make_unique<MmdPermStat>(
          MmdPermStat::median_heuristic(cfg.mmd_shuffles, cfg.seed ^ 0xA5A5A5A5ull));
  }
  throw ConfigError("make_statistic: unknown method");
}

namespace {
nlohmann::json config_json(const RunConfig& cfg) {
  return {
      {"method", to_string(cfg.method)},
      {"epochs", cfg.epochs},
      {"lr", cfg.lr},
      {"batch_size", cfg.batch_size},
      {"lambda", cfg.lambda},
      {"weight_decay", cfg.weight_decay},
      {"alpha", cfg.alpha},
      {"n_perm", cfg.n_perm},
      {"m_target", cfg.m_target},
      {"nds_with_threshold", cfg.nds_with_threshold},
      {"hsic_with_gamma_threshold", cfg.hsic_with_gamma_threshold},
      {"gamma_perms", cfg.gamma_perms},
      {"mmd_shuffles", cfg.mmd_shuffles},
      {"randomized_ties", cfg.randomized_ties},
      {"seed", cfg.seed},
      {"split", {{"train", cfg.split.train_frac}, {"val", cfg.split.val_frac},
                 {"test", cfg.split.test_frac}}},
  };
}
}  // namespace

RunOutput run_algorithm1(const RunConfig& cfg, const PairedSample& dataset) {
  RunOutput out;
  SplitSpec split_spec = cfg.split;
  split_spec.seed = cfg.seed;
  out.split = split_data(dataset, split_spec);

  if (method_trains(cfg.method)) {
    out.training = train_phase(cfg, out.split.train, out.split.val);
    out.params = out.training.params;
  }
  auto stat = make_statistic(cfg, out.params, dataset.dx(), dataset.dy());
  numkit::Rng rng_test(cfg.seed, 3);
  out.result =
      permutation_test(*stat, out.split.test, cfg.n_perm, cfg.alpha, rng_test, cfg.randomized_ties);

  if (!cfg.checkpoint_out.empty()) diffnet::save_checkpoint(out.params, cfg.checkpoint_out);
  if (!cfg.manifest_out.empty()) {
    nlohmann::json manifest;
    manifest["config"] = config_json(cfg);
    manifest["dataset"] = {{"generator", dataset.prov.generator},
                           {"params", dataset.prov.params},
                           {"seed", dataset.prov.seed},
                           {"m", dataset.m()}};
    manifest["split_indices"] = {{"train", out.split.train_idx},
                                 {"val", out.split.val_idx},
                                 {"test", out.split.test_idx}};
    manifest["training"] = {{"diverged", out.training.diverged},
                            {"epochs_run", out.training.epochs_run},
                            {"best_val_objective", out.training.best_val_objective},
                            {"used_val_checkpoint", out.training.used_val_checkpoint}};
    manifest["checkpoint"] = cfg.checkpoint_out;
    manifest["result"] = {{"statistic", out.result.statistic},
                          {"p_value", out.result.p_value},
                          {"reject", out.result.reject},
                          {"alpha", out.result.alpha},
                          {"n_perm", static_cast<int>(out.result.perm_values.size())}};
    std::ofstream f(cfg.manifest_out);
    if (!f) throw DataError("cannot write manifest: " + cfg.manifest_out);
    f << manifest.dump(2) << "\n";
  }
  return out;
}

}  // namespace deptest::testing
