#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crl/category.hpp"
#include "crl/corpus.hpp"
#include "crl/random.hpp"

namespace crl {

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  int d = 16;
  int n_mor = 4;
  int k_neg = 5;
  double lr = 5e-3;
  /// Cosine decay from lr to lr * lr_floor over the run; 1 keeps lr constant.
  double lr_floor = 1.0;
  int steps = 1000;
  int batch = 128;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool hypersphere = true;
  /// Negatives are drawn from p(b)^neg_exponent; 1.0 is the marginal itself.
  double neg_exponent = 1.0;
  /// Redraw negatives equal to the anchor token. Self pairs never occur in
  /// the concurrence support, so without this every z(a, a) is pushed down.
  bool exclude_self_negatives = true;
  AggregatorKind aggregator = AggregatorKind::LogSumExp;
  int hidden = 8;
  std::optional<int> rank;

  void validate() const;
  CategoryInit category_init(std::size_t n_obj) const;
};

struct Batch {
  std::vector<std::pair<TokenId, TokenId>> positives;
  /// k_neg negatives per positive, stored contiguously.
  std::vector<TokenId> negatives;
  int k_neg = 0;

  std::span<const TokenId> negatives_of(std::size_t i) const {
    return {negatives.data() + i * static_cast<std::size_t>(k_neg), static_cast<std::size_t>(k_neg)};
  }
};

/// Precomputed inverse-CDF tables for positives (over the sorted pair list)
/// and negatives (p(b)^neg_exponent).
class BatchSampler {
 public:
  BatchSampler(const PairStats& stats, const TrainConfig& cfg);

  Batch sample(Rng& rng) const;

 private:
  std::vector<std::pair<TokenId, TokenId>> pairs_;
  std::vector<double> pair_cdf_;
  std::vector<double> neg_cdf_;
  int batch_;
  int k_neg_;
  bool exclude_self_;
};

Batch sample_batch(const PairStats& stats, const TrainConfig& cfg, Rng& rng);

/// Logits are clamped to this range when evaluating the loss.
inline constexpr double kLogitClamp = 30.0;

/// -(1/|P|) sum [log P(a->b) + sum_b' log(1 - P(a->b'))]
double nce_loss(const CategoryModel& model, const Batch& batch);

struct Gradients {
  Mat objects;
  std::vector<Mat> morphisms;  // dense mode
  std::vector<Mat> queries;    // rank mode
  std::vector<Mat> keys;       // rank mode
  MlpParams<double> mlp;
};

Gradients grad_nce(const CategoryModel& model, const Batch& batch);

/// Trainable parameters in a fixed order: objects, then morphisms (or
/// queries and keys in rank mode), then the mlp aggregator.
std::vector<double*> parameter_pointers(CategoryModel& model);
std::vector<double> flatten(const Gradients& grads, const CategoryModel& model);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  bool reliable = true;
  std::string warning;
};

/// Central differences against `analytic` on every coordinate, or on a
/// seeded random subset of `max_coords` coordinates for larger inputs.
/// Relative error uses max(1e-8, |analytic| + |numeric|) as denominator.
FdReport finite_diff_check(const std::function<long double(std::span<const double>)>& f,
                           std::span<const double> x, std::span<const double> analytic, double h,
                           std::uint64_t seed = 0, std::size_t max_coords = 10000);

/// The loss is evaluated in long double so the difference quotient is not
/// dominated by cancellation when a gradient entry is tiny.
FdReport finite_diff_check(const CategoryModel& model, const Batch& batch, double h,
                           std::uint64_t seed = 0);

struct GradCheckSummary {
  double max_rel_error = 0.0;
  std::size_t configs = 0;
  std::size_t coordinates = 0;
  std::size_t unreliable = 0;
};

/// Runs the model finite-difference check over `configs` seeded random
/// models and batches (d <= 8, n_mor <= 4, batch <= 16, alternating
/// aggregators and hypersphere modes).
GradCheckSummary grad_check_suite(int configs, double h, std::uint64_t seed);

/// Extra controls for train_category, used by the multi-scale bootstrap.
struct TrainHooks {
  /// Starting point instead of a fresh initialization; its row count must
  /// match the corpus vocabulary.
  std::optional<CategoryModel> init;
  /// Object rows that are never updated directly.
  std::vector<TokenId> frozen_rows;
  /// Runs after initialization and after every update.
  std::function<void(CategoryModel&)> after_update;
};

struct TrainResult {
  CategoryModel model;
  std::vector<double> loss_trace;
};

TrainResult train_category(const ConcurrenceCorpus& corpus, const TrainConfig& cfg,
                           const TrainHooks& hooks = {});

struct PmiFitReport {
  double pearson = 0.0;
  double mean_abs_err = 0.0;
  /// Against PMI - log(k_neg), the optimum for k negatives per positive.
  double pearson_shifted = 0.0;
  double mean_abs_err_shifted = 0.0;
  double shift = 0.0;
  std::size_t pairs = 0;
};

PmiFitReport pmi_fit_report(const std::function<double(TokenId, TokenId)>& logit,
                            const PairStats& stats, int k_neg = 1);
PmiFitReport pmi_fit_report(const CategoryModel& model, const PairStats& stats, int k_neg = 1);

double pearson(std::span<const double> x, std::span<const double> y);

/// Adam / SGD over a flat parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(std::span<double* const> params, std::span<const double> grads);
  void step(std::span<double> params, std::span<const double> grads);
  void set_lr(double lr) { lr_ = lr; }

 private:
  double update(std::size_t i, double g);

  OptimizerKind kind_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

}  // namespace crl
