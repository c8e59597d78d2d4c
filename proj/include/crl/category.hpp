#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "crl/linalg.hpp"
#include "crl/random.hpp"

namespace crl {

enum class AggregatorKind { LogSumExp, Mlp };

/// One-hidden-layer aggregator F(s) = w2 . tanh(W1 s + b1) + b2 over the
/// per-morphism logits s.
template <typename Scalar>
struct MlpParams {
  MatrixX<Scalar> w1;  // hidden x n_mor
  VectorX<Scalar> b1;  // hidden
  VectorX<Scalar> w2;  // hidden
  Scalar b2 = 0;

  Eigen::Index hidden() const { return w1.rows(); }
};

/// Object vectors (rows of `objects`) and morphism matrices.
///
/// When `rank` is set, each morphism is stored factored as M_f = Q_f^T K_f
/// with Q_f, K_f of shape rank x d; `morphisms` then holds the materialized
/// products and must be refreshed with `materialize()` after editing factors.
template <typename Scalar>
struct BasicCategoryModel {
  MatrixX<Scalar> objects;                 // n_obj x d
  std::vector<MatrixX<Scalar>> morphisms;  // n_mor of d x d
  AggregatorKind aggregator = AggregatorKind::LogSumExp;
  MlpParams<Scalar> mlp;
  bool hypersphere = true;

  std::optional<int> rank;
  std::vector<MatrixX<Scalar>> queries;
  std::vector<MatrixX<Scalar>> keys;

  Eigen::Index dim() const { return objects.cols(); }
  std::size_t n_obj() const { return static_cast<std::size_t>(objects.rows()); }
  std::size_t n_mor() const { return morphisms.size(); }

  void materialize() {
    if (!rank) return;
    for (std::size_t f = 0; f < queries.size(); ++f) morphisms[f] = queries[f].transpose() * keys[f];
  }

  template <typename Other>
  BasicCategoryModel<Other> cast() const {
    BasicCategoryModel<Other> out;
    out.objects = objects.template cast<Other>();
    for (const auto& m : morphisms) out.morphisms.push_back(m.template cast<Other>());
    out.aggregator = aggregator;
    out.mlp.w1 = mlp.w1.template cast<Other>();
    out.mlp.b1 = mlp.b1.template cast<Other>();
    out.mlp.w2 = mlp.w2.template cast<Other>();
    out.mlp.b2 = static_cast<Other>(mlp.b2);
    out.hypersphere = hypersphere;
    out.rank = rank;
    for (const auto& q : queries) out.queries.push_back(q.template cast<Other>());
    for (const auto& k : keys) out.keys.push_back(k.template cast<Other>());
    return out;
  }

  void normalize_objects() {
    for (Eigen::Index r = 0; r < objects.rows(); ++r) {
      const Scalar n = objects.row(r).norm();
      if (n > 0) objects.row(r) /= n;
    }
  }
};

using CategoryModel = BasicCategoryModel<double>;

struct CategoryInit {
  std::size_t n_obj = 0;
  int dim = 16;
  int n_mor = 4;
  AggregatorKind aggregator = AggregatorKind::LogSumExp;
  int hidden = 8;
  bool hypersphere = true;
  std::optional<int> rank;
};

/// Gaussian objects normalized to unit rows; morphism entries with standard
/// deviation 1/sqrt(d) (rank mode: factor entries with (r d)^(-1/4), which
/// gives the product the same entry variance).
inline CategoryModel init_category(const CategoryInit& init, std::uint64_t seed) {
  if (init.dim < 1 || init.n_mor < 1) throw Error(Errc::InvalidArgument, "dim and n_mor must be >= 1");
  if (init.rank && (*init.rank < 1)) throw Error(Errc::InvalidArgument, "rank must be >= 1");
  Rng rng(seed);
  const Eigen::Index d = init.dim;
  CategoryModel m;
  m.hypersphere = init.hypersphere;
  m.aggregator = init.aggregator;
  m.objects.resize(static_cast<Eigen::Index>(init.n_obj), d);
  for (Eigen::Index r = 0; r < m.objects.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) m.objects(r, c) = rng.normal();
  m.normalize_objects();

  m.morphisms.resize(static_cast<std::size_t>(init.n_mor));
  if (init.rank) {
    m.rank = init.rank;
    const double sd = std::pow(static_cast<double>(*init.rank) * static_cast<double>(d), -0.25);
    m.queries.resize(m.morphisms.size());
    m.keys.resize(m.morphisms.size());
    for (std::size_t f = 0; f < m.morphisms.size(); ++f) {
      m.queries[f].resize(*init.rank, d);
      m.keys[f].resize(*init.rank, d);
      for (Eigen::Index i = 0; i < m.queries[f].size(); ++i) m.queries[f](i) = sd * rng.normal();
      for (Eigen::Index i = 0; i < m.keys[f].size(); ++i) m.keys[f](i) = sd * rng.normal();
    }
    m.materialize();
  } else {
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (auto& mf : m.morphisms) {
      mf.resize(d, d);
      for (Eigen::Index i = 0; i < mf.size(); ++i) mf(i) = sd * rng.normal();
    }
  }

  if (init.aggregator == AggregatorKind::Mlp) {
    if (init.hidden < 1) throw Error(Errc::InvalidArgument, "mlp hidden width must be >= 1");
    const Eigen::Index h = init.hidden;
    m.mlp.w1.resize(h, init.n_mor);
    for (Eigen::Index i = 0; i < m.mlp.w1.size(); ++i)
      m.mlp.w1(i) = rng.normal() / std::sqrt(static_cast<double>(init.n_mor));
    m.mlp.b1 = Vec::Zero(h);
    m.mlp.w2.resize(h);
    for (Eigen::Index i = 0; i < h; ++i) m.mlp.w2(i) = rng.normal() / std::sqrt(static_cast<double>(h));
    m.mlp.b2 = 0.0;
  }
  return m;
}

template <typename Scalar>
struct LogitBreakdown {
  VectorX<Scalar> per_morphism;  // z(a -f-> b)
  Scalar aggregate = 0;          // z(a -> b)
};

namespace detail {

template <typename Scalar>
void check_ids(const BasicCategoryModel<Scalar>& m, std::size_t a, std::size_t b) {
  if (a >= m.n_obj() || b >= m.n_obj()) throw Error(Errc::IndexOutOfRange, "object id out of range");
}

}  // namespace detail

/// z(a -f-> b) = v_b^T M_f v_a
template <typename Scalar>
Scalar morphism_logit(const BasicCategoryModel<Scalar>& m, std::size_t a, std::size_t f, std::size_t b) {
  detail::check_ids(m, a, b);
  if (f >= m.n_mor()) throw Error(Errc::IndexOutOfRange, "morphism id out of range");
  const auto ia = static_cast<Eigen::Index>(a);
  const auto ib = static_cast<Eigen::Index>(b);
  const VectorX<Scalar> image = m.morphisms[f] * m.objects.row(ia).transpose();
  return m.objects.row(ib).dot(image);
}

/// Per-morphism logits between arbitrary source/target vectors.
template <typename Scalar, typename DerivedA, typename DerivedB>
VectorX<Scalar> morphism_logits(const BasicCategoryModel<Scalar>& m, const Eigen::MatrixBase<DerivedA>& va,
                                const Eigen::MatrixBase<DerivedB>& vb) {
  VectorX<Scalar> s(static_cast<Eigen::Index>(m.n_mor()));
  for (std::size_t f = 0; f < m.n_mor(); ++f)
    s(static_cast<Eigen::Index>(f)) = vb.dot(m.morphisms[f] * va);
  return s;
}

/// Aggregate logit F(s) and its gradient dF/ds.
template <typename Scalar>
std::pair<Scalar, VectorX<Scalar>> aggregate_with_weights(const BasicCategoryModel<Scalar>& m,
                                                          const VectorX<Scalar>& s) {
  if (m.aggregator == AggregatorKind::LogSumExp) return {logsumexp(s), softmax(s)};
  const VectorX<Scalar> h = (m.mlp.w1 * s + m.mlp.b1).array().tanh().matrix();
  const Scalar z = m.mlp.w2.dot(h) + m.mlp.b2;
  const VectorX<Scalar> dh = (m.mlp.w2.array() * (1 - h.array().square())).matrix();
  return {z, m.mlp.w1.transpose() * dh};
}

template <typename Scalar>
Scalar aggregate(const BasicCategoryModel<Scalar>& m, const VectorX<Scalar>& s) {
  if (m.aggregator == AggregatorKind::LogSumExp) return logsumexp(s);
  const VectorX<Scalar> h = (m.mlp.w1 * s + m.mlp.b1).array().tanh().matrix();
  return m.mlp.w2.dot(h) + m.mlp.b2;
}

template <typename Scalar, typename DerivedA, typename DerivedB>
LogitBreakdown<Scalar> link_logit(const BasicCategoryModel<Scalar>& m, const Eigen::MatrixBase<DerivedA>& va,
                                  const Eigen::MatrixBase<DerivedB>& vb) {
  LogitBreakdown<Scalar> out;
  out.per_morphism = morphism_logits(m, va, vb);
  out.aggregate = aggregate(m, out.per_morphism);
  return out;
}

template <typename Scalar>
LogitBreakdown<Scalar> link_logit(const BasicCategoryModel<Scalar>& m, std::size_t a, std::size_t b) {
  detail::check_ids(m, a, b);
  return link_logit(m, m.objects.row(static_cast<Eigen::Index>(a)).transpose(),
                    m.objects.row(static_cast<Eigen::Index>(b)).transpose());
}

/// P(a -> b) = sigmoid(z(a -> b))
template <typename Scalar>
Scalar link_prob(const BasicCategoryModel<Scalar>& m, std::size_t a, std::size_t b) {
  return sigmoid(link_logit(m, a, b).aggregate);
}

template <typename Scalar, typename DerivedA, typename DerivedB>
Scalar link_prob(const BasicCategoryModel<Scalar>& m, const Eigen::MatrixBase<DerivedA>& va,
                 const Eigen::MatrixBase<DerivedB>& vb) {
  return sigmoid(link_logit(m, va, vb).aggregate);
}

/// Identity morphism of an object: the projector v v^T / |v|^2.
template <typename Derived>
MatrixX<typename Derived::Scalar> identity_morphism(const Eigen::MatrixBase<Derived>& v) {
  const auto norm2 = v.squaredNorm();
  if (!(norm2 > 0)) throw Error(Errc::ZeroVector, "identity_morphism of zero vector");
  return (v * v.transpose()) / norm2;
}

/// M_{g o f} = M_g M_f
template <typename DerivedG, typename DerivedF>
MatrixX<typename DerivedG::Scalar> compose(const Eigen::MatrixBase<DerivedG>& mg,
                                           const Eigen::MatrixBase<DerivedF>& mf) {
  if (mg.rows() != mg.cols() || mf.rows() != mf.cols() || mg.rows() != mf.rows())
    throw Error(Errc::ShapeMismatch, "compose needs square matrices of equal size");
  return mg * mf;
}

/// Attention form of a morphism: z = v_b^T Q^T K v_a with Q^T K = M. The
/// factorization chosen is Q = I, K = M.
template <typename Derived>
std::pair<MatrixX<typename Derived::Scalar>, MatrixX<typename Derived::Scalar>> as_query_key(
    const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  return {MatrixX<Scalar>::Identity(m.rows(), m.rows()), m.derived()};
}

}  // namespace crl
