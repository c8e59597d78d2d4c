#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "crl/error.hpp"

namespace crl {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec = VectorX<double>;
using Mat = MatrixX<double>;

/// Default element cap for kron results (64M entries, 512 MiB of doubles).
inline constexpr std::int64_t kKronElementCap = std::int64_t{1} << 26;

template <typename Derived>
typename Derived::Scalar logsumexp(const Eigen::DenseBase<Derived>& xs) {
  using Scalar = typename Derived::Scalar;
  if (xs.size() == 0) throw Error(Errc::InvalidArgument, "logsumexp of empty input");
  const Scalar shift = xs.maxCoeff();
  Scalar acc = 0;
  for (Eigen::Index i = 0; i < xs.size(); ++i) acc += std::exp(xs.derived().coeff(i) - shift);
  return shift + std::log(acc);
}

inline double logsumexp(std::span<const double> xs) {
  return logsumexp(Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size())));
}

/// Softmax weights of `xs`, i.e. the gradient of logsumexp.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::DenseBase<Derived>& xs) {
  using Scalar = typename Derived::Scalar;
  if (xs.size() == 0) throw Error(Errc::InvalidArgument, "softmax of empty input");
  const Scalar shift = xs.maxCoeff();
  VectorX<Scalar> w = (xs.derived().array() - shift).exp().matrix();
  return w / w.sum();
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(sigmoid(x)) without cancellation at either tail.
template <typename Scalar>
Scalar log_sigmoid(Scalar x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> kron(const Eigen::MatrixBase<DerivedA>& a,
                                        const Eigen::MatrixBase<DerivedB>& b,
                                        std::int64_t element_cap = kKronElementCap) {
  const std::int64_t rows = static_cast<std::int64_t>(a.rows()) * b.rows();
  const std::int64_t cols = static_cast<std::int64_t>(a.cols()) * b.cols();
  if (rows != 0 && cols > element_cap / rows)
    throw Error(Errc::CapacityExceeded, "kron result exceeds element cap");
  MatrixX<typename DerivedA::Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Kronecker product of two vectors: entry (i * b.size() + j) is a[i] * b[j].
template <typename DerivedA, typename DerivedB>
VectorX<typename DerivedA::Scalar> kron_vec(const Eigen::MatrixBase<DerivedA>& a,
                                            const Eigen::MatrixBase<DerivedB>& b) {
  VectorX<typename DerivedA::Scalar> out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

/// Nearest matrix with orthonormal rows (rows <= cols) or columns
/// (rows >= cols): U W^T from the thin SVD M = U S W^T.
template <typename Derived>
MatrixX<typename Derived::Scalar> polar_retract(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.size() == 0) throw Error(Errc::InvalidArgument, "polar_retract of empty matrix");
  if (!m.allFinite()) throw Error(Errc::InvalidArgument, "polar_retract of non-finite matrix");
  Eigen::JacobiSVD<MatrixX<Scalar>> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  const Scalar largest = s.maxCoeff();
  const Scalar smallest = s.minCoeff();
  if (!(largest > 0) || smallest <= largest * Scalar(1e-12))
    throw Error(Errc::SingularInput, "polar_retract of rank-deficient matrix");
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Projects rows of a symmetric matrix onto its k leading eigenvectors.
///
/// Directions are ordered by descending |eigenvalue|, positive before
/// negative on equal magnitude. Each direction is signed so that its largest-magnitude
/// entry (first such index on ties) is positive.
template <typename Derived>
MatrixX<typename Derived::Scalar> pca_project(const Eigen::MatrixBase<Derived>& m, Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index n = m.rows();
  if (m.cols() != n) throw Error(Errc::ShapeMismatch, "pca_project needs a square matrix");
  if (k < 1 || k > n) throw Error(Errc::InvalidArgument, "pca_project: k out of range");
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9))
    throw Error(Errc::InvalidArgument, "pca_project needs a symmetric matrix");

  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(m.derived().eval());
  if (solver.info() != Eigen::Success) throw Error(Errc::SingularInput, "eigensolver failed");
  const auto& values = solver.eigenvalues();

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std::abs(values(a)) != std::abs(values(b))) return std::abs(values(a)) > std::abs(values(b));
    return values(a) > values(b);
  });

  MatrixX<Scalar> directions(n, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    VectorX<Scalar> dir = solver.eigenvectors().col(order[static_cast<std::size_t>(c)]);
    Eigen::Index pivot = 0;
    for (Eigen::Index i = 1; i < n; ++i)
      if (std::abs(dir(i)) > std::abs(dir(pivot))) pivot = i;
    if (dir(pivot) < 0) dir = -dir;
    directions.col(c) = dir;
  }
  return m * directions;
}

/// Frobenius distance of M^T M (or M M^T for wide M) from the identity.
template <typename Derived>
typename Derived::Scalar orthogonality_residual(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (m.rows() <= m.cols())
    return (m * m.transpose() - MatrixX<Scalar>::Identity(m.rows(), m.rows())).norm();
  return (m.transpose() * m - MatrixX<Scalar>::Identity(m.cols(), m.cols())).norm();
}

}  // namespace crl
