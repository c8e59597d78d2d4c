#pragma once

#include <optional>

#include "crl/error.hpp"
#include "crl/linalg.hpp"
#include "crl/random.hpp"

namespace crl::test {

// Code of the crl::Error thrown by fn, or nullopt if it returned normally.
template <typename Fn>
std::optional<Errc> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal();
  return m;
}

inline Vec gaussian(Eigen::Index n, Rng& rng) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal();
  return v;
}

}  // namespace crl::test
