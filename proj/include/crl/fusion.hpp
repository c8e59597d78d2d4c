#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crl/category.hpp"
#include "crl/corpus.hpp"
#include "crl/training.hpp"

namespace crl {

/// Tensor-bifunctor representation: maps the d^2 Kronecker space back to
/// R^d. Rows are kept orthonormal so that theta^T is a right inverse.
struct FusionOperator {
  Mat theta;  // d x d^2

  Eigen::Index dim() const { return theta.rows(); }
};

/// Row-orthonormal retraction of a seeded Gaussian d x d^2 matrix.
FusionOperator init_fusion(int d, std::uint64_t seed);

/// theta (va (x) vb), renormalized to unit length when `normalize` is set.
Vec fuse_objects(const FusionOperator& op, const Vec& va, const Vec& vb, bool normalize = true);

struct FusedMorphism {
  Mat m;            // theta (Mf (x) Mg) theta^T
  double residual;  // || m theta - theta (Mf (x) Mg) ||_F
};

FusedMorphism fuse_morphisms(const FusionOperator& op, const Mat& mf, const Mat& mg);

struct Triple {
  Vec u, v, w;
};

/// Mean of || theta(theta(u (x) v) (x) w) - theta(u (x) theta(v (x) w)) ||.
double associativity_residual(const FusionOperator& op, std::span<const Triple> triples);

/// Gradient of || theta(theta(u (x) v) (x) w) - theta(u (x) theta(v (x) w)) ||^2
/// with respect to theta.
Mat associativity_gradient(const FusionOperator& op, const Triple& t);

struct FusionConfig {
  int steps = 500;
  double lr = 1e-2;
  double mu = 1.0;
  int batch = 32;
  int k_neg = 5;
  double neg_exponent = 1.0;
  bool normalize = true;
  std::uint64_t seed = 0;
};

struct FusionFit {
  FusionOperator initial;
  FusionOperator op;
  std::vector<double> loss_trace;
  std::vector<double> concurrence_trace;
  std::vector<double> associativity_trace;
};

/// Scores composite/context pairs drawn from scopes with >= 3 distinct
/// tokens with the base model's link probability, plus mu times the squared
/// associativity residual of the same triples. Only theta is trained.
FusionFit train_fusion(const CategoryModel& model, const ConcurrenceCorpus& corpus, const FusionConfig& cfg);

/// Ordered triples of distinct tokens drawn from scopes with >= 3 distinct
/// tokens, as object vectors of `model`.
std::vector<Triple> sample_triples(const CategoryModel& model, const ConcurrenceCorpus& corpus, std::size_t n,
                                   std::uint64_t seed);

/// Concurrence part of the fusion objective for one sample and its gradient
/// with respect to theta (added into `grad` when non-null).
double composite_nce(const CategoryModel& model, const FusionOperator& op, const Vec& left, const Vec& right,
                     const Vec& context, std::span<const Vec> negatives, bool normalize, Mat* grad);

struct CompositeEntry {
  TokenId left;
  TokenId right;
  TokenId id;
  Vec vector;
};

struct CompositeVocab {
  std::vector<CompositeEntry> entries;

  /// Lines `composite_id = left_token ⊗ right_token`.
  std::string to_text(const std::vector<std::string>& vocab) const;
};

struct BootstrapRound {
  CompositeVocab composites;
  ConcurrenceCorpus corpus;  // rewritten; vocabulary extended with composites
  Mat objects;               // object table for the extended vocabulary
};

/// In each scope, the linked pair with the highest P(a -> b) >= tau (ties by
/// lowest (a, b)) is replaced by its composite token.
BootstrapRound bootstrap_round(const CategoryModel& model, const FusionOperator& op,
                               const ConcurrenceCorpus& corpus, double tau, bool normalize = true);

/// Recomputes composite rows of `model` from their parts, in entry order.
void refresh_composites(CategoryModel& model, const FusionOperator& op,
                        std::span<const CompositeEntry> entries, bool normalize = true);

struct MultiScaleConfig {
  int rounds = 2;
  double tau = 0.8;
  bool normalize = true;
  /// Training between rounds; composite rows are derived, never trained.
  TrainConfig retrain;
};

struct MultiScaleResult {
  std::vector<CompositeVocab> rounds;
  ConcurrenceCorpus corpus;
  CategoryModel model;
};

MultiScaleResult bootstrap(const CategoryModel& model, const FusionOperator& op, const ConcurrenceCorpus& corpus,
                           const MultiScaleConfig& cfg);

}  // namespace crl
