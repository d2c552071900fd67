#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deptest/objectives.hpp"

namespace deptest::testing {

using datasets::PairedSample;
using estimators::Critic;
using kernels::Kernel;

// ---------------------------------------------------------------------------
// Data splitting
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.7;
  double val_frac = 0.2;
  double test_frac = 0.1;
  std::uint64_t seed = 0;
};

struct SplitResult {
  PairedSample train, val, test;
  std::vector<int> train_idx, val_idx, test_idx;
};

/// Disjoint, exhaustive, pairing-preserving partition after a deterministic
/// shuffle; val/test sizes are the rounded fractions, remainder goes to
/// train. Throws ConfigError on invalid fractions or an empty test split.
SplitResult split_data(const PairedSample& sample, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Permutation test
// ---------------------------------------------------------------------------

struct TestResult {
  double statistic = 0.0;
  std::vector<double> perm_values;  // [0] is the unpermuted statistic
  double p_value = 1.0;
  bool reject = false;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

/// A test statistic that can be evaluated under re-pairings (x_i, y_perm[i])
/// of a bound sample without recomputing its expensive parts.
class TestStatistic {
 public:
  virtual ~TestStatistic() = default;
  virtual std::string name() const = 0;
  virtual void bind(const PairedSample& sample) = 0;
  virtual double eval(std::span<const int> perm) const = 0;
};

/// Exactly valid permutation test: the unpermuted statistic is included among
/// the permutations, p = #{perm_i >= perm_1}/n_perm, reject iff p <= alpha.
/// Ties count as >= unless randomized_ties is set.
TestResult permutation_test(TestStatistic& stat, const PairedSample& sample, int n_perm,
                            double alpha, numkit::Rng& rng, bool randomized_ties = false);

// ---------------------------------------------------------------------------
// Statistic implementations
// ---------------------------------------------------------------------------

class HsicStat final : public TestStatistic {
 public:
  enum class Estimator { Biased, Unbiased };

  /// Fixed kernels for both spaces.
  HsicStat(std::shared_ptr<const Kernel> kernel_x, std::shared_ptr<const Kernel> kernel_y,
           Estimator estimator);
  /// Median-heuristic Gaussian kernels chosen per bound sample.
  static HsicStat median_heuristic(Estimator estimator);

  std::string name() const override;
  void bind(const PairedSample& sample) override;
  double eval(std::span<const int> perm) const override;

 private:
  HsicStat() = default;
  std::shared_ptr<const Kernel> kx_, ky_;
  bool median_ = false;
  Estimator estimator_ = Estimator::Unbiased;
  numkit::Matrix k_, l_, kt_, lt_;
  std::vector<double> rk_, rl_, rkt_, rlt_;
  double sk_ = 0, sl_ = 0, skt_ = 0, slt_ = 0;
  int m_ = 0;
};

class CriticStat final : public TestStatistic {
 public:
  enum class Kind { Nds, InfoNce, Nwj };
  CriticStat(std::shared_ptr<const Critic> critic, Kind kind);

  std::string name() const override;
  void bind(const PairedSample& sample) override;
  double eval(std::span<const int> perm) const override;

 private:
  std::shared_ptr<const Critic> critic_;
  Kind kind_;
  numkit::Matrix fgrid_;
  double invariant_term_ = 0.0;  // permutation-invariant part of the bound
  int m_ = 0;
};

/// MMD^2 between the bound pairing and p random shuffles of it, with
/// median-heuristic or fixed kernels; the shuffles are drawn once at bind
/// time from perm_seed.
class MmdPermStat final : public TestStatistic {
 public:
  MmdPermStat(std::shared_ptr<const Kernel> kernel_x, std::shared_ptr<const Kernel> kernel_y,
              int n_shuffles, std::uint64_t perm_seed);
  static MmdPermStat median_heuristic(int n_shuffles, std::uint64_t perm_seed);

  std::string name() const override;
  void bind(const PairedSample& sample) override;
  double eval(std::span<const int> perm) const override;

 private:
  MmdPermStat() = default;
  std::shared_ptr<const Kernel> kx_, ky_;
  bool median_ = false;
  int n_shuffles_ = 1;
  std::uint64_t perm_seed_ = 0;
  numkit::Matrix k_, l_;
  std::vector<std::vector<int>> shuffles_;
  int m_ = 0;
};

// ---------------------------------------------------------------------------
// End-to-end pipeline: split, train, permutation test
// ---------------------------------------------------------------------------

enum class Method { HsicD, HsicDx, HsicO, HsicM, Nds, InfoNce, Nwj, MmdPerm };

Method method_from_string(const std::string& name);
std::string to_string(Method method);
bool method_trains(Method method);

struct RunConfig {
  Method method = Method::HsicM;
  int epochs = 1000;
  double lr = 1e-4;
  int batch_size = 512;
  double lambda = 1e-8;
  double weight_decay = 0.01;
  double alpha = 0.05;
  int n_perm = 500;
  int m_target = 0;                      // 0: batch size
  bool nds_with_threshold = true;        // NDS trains with the threshold term
  bool hsic_with_gamma_threshold = false;
  int gamma_perms = 20;
  int mmd_shuffles = 1;
  bool randomized_ties = false;
  int val_every = 10;  // epochs between validation-objective checkpoints
  SplitSpec split;
  std::uint64_t seed = 0;
  // Optional architecture overrides; defaults derive from data dimensions.
  std::vector<int> featurizer_widths_x, featurizer_widths_y, critic_widths;
  std::string checkpoint_out;
  std::string manifest_out;
};

/// Trainable structures for a method at given data dimensions. For the tied
/// variant both kernel sides share one prefix, so gradients accumulate once.
struct ModelStructures {
  kernels::DeepKernelStructure kernel_x, kernel_y;
  estimators::CriticStructure critic;
  bool has_kernels = false;
  bool has_critic = false;
};

ModelStructures make_structures(const RunConfig& cfg, int dx, int dy);
diffnet::ParamStore init_model(const ModelStructures& structures, numkit::Rng& rng);

struct TrainOutput {
  diffnet::ParamStore params;
  double best_val_objective = 0.0;
  bool used_val_checkpoint = false;
  bool diverged = false;
  int epochs_run = 0;
};

/// Phase 1: maximize the method's objective by minibatch gradient ascent
/// (AdamW on the negated gradient); epochs draw minibatches without
/// replacement. When a validation sample is nonempty the best-objective
/// checkpoint is kept. Divergence aborts with the last finite checkpoint.
TrainOutput train_phase(const RunConfig& cfg, const PairedSample& train, const PairedSample& val);

/// The method's test statistic at frozen parameters.
std::unique_ptr<TestStatistic> make_statistic(const RunConfig& cfg,
                                              const diffnet::ParamStore& params, int dx, int dy);

struct RunOutput {
  diffnet::ParamStore params;
  TestResult result;
  SplitResult split;
  TrainOutput training;
};

RunOutput run_algorithm1(const RunConfig& cfg, const PairedSample& dataset);

/// Objective value at fixed parameters (no gradient); used for validation
/// checkpoints and diagnostics.
double objective_value(const RunConfig& cfg, const ModelStructures& structures,
                       const diffnet::ParamStore& params, const PairedSample& batch,
                       numkit::Rng* gamma_rng);

}  // namespace deptest::testing
