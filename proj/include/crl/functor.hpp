#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "crl/category.hpp"
#include "crl/corpus.hpp"

namespace crl {

/// matching[f] is the target head identified with source head f.
using HeadMatching = std::vector<int>;

struct AlignmentSet {
  std::vector<std::pair<TokenId, TokenId>> pairs;  // (source id, target id)

  void validate() const;
};

struct FunctorModel {
  Mat v;  // orthogonal d x d
  HeadMatching matching;
  double lambda = 1.0;
  AlignmentSet supervised;
};

/// sum_f || M_tgt[matching[f]] V - V M_src[f] ||_F^2
double structure_loss(const Mat& v, const CategoryModel& src, const CategoryModel& tgt,
                      const HeadMatching& matching);

/// sum_{(a,b)} || v_tgt[b] - V v_src[a] ||^2
double alignment_loss(const Mat& v, const CategoryModel& src, const CategoryModel& tgt,
                      const AlignmentSet& aligned);

/// Exhaustive search over head permutations for n_mor <= 6, greedy minimum
/// cost assignment above that. Ties resolve to the lexicographically first
/// permutation / lowest index.
HeadMatching match_morphisms(const CategoryModel& src, const CategoryModel& tgt, const Mat& v);

enum class FunctorInit {
  /// Least-squares solution of the linearized structure and alignment
  /// equations for every candidate head matching, projected onto O(d).
  Spectral,
  /// Seeded Haar-random orthogonal matrix.
  Random,
  Identity,
};

struct FunctorConfig {
  int steps = 1000;
  double lr = 1e-2;
  double lambda = 1.0;
  int refresh = 50;
  std::uint64_t seed = 0;
  FunctorInit init = FunctorInit::Spectral;
  /// Spectral initialization is skipped (falls back to Random) above this d.
  int spectral_max_dim = 32;
};

struct FunctorFit {
  FunctorModel model;
  std::vector<double> loss_trace;
  /// ||V^T V - I||_F after each retraction.
  std::vector<double> orthogonality_trace;
};

/// Riemannian gradient descent on L_struc + lambda L_align with a polar
/// retraction after each step and head re-matching every `refresh` steps.
FunctorFit train_functor(const CategoryModel& src, const CategoryModel& tgt, const AlignmentSet& aligned,
                         const FunctorConfig& cfg);

/// Ranked (target id, cosine score) pairs, best first, ties by lowest id.
std::vector<std::pair<TokenId, double>> translate(const FunctorModel& fm, const CategoryModel& src,
                                                  const CategoryModel& tgt, TokenId a, int topk);

struct AxiomResiduals {
  double id_residual = 0.0;
  double comp_residual = 0.0;
};

/// Checks that conjugation by V maps identity projectors to identity
/// projectors and preserves composition.
AxiomResiduals functor_axiom_check(const Mat& v, const CategoryModel& src, std::uint64_t seed = 0);

/// Haar-distributed orthogonal matrix.
Mat random_orthogonal(int d, std::uint64_t seed);

}  // namespace crl
