#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "crl/functor.hpp"
#include "support.hpp"

using namespace crl;
using crl::test::error_of;
using crl::test::gaussian;

namespace {

// Target category: v' = R v, M'_{perm[f]} = R M_f R^T.
CategoryModel conjugate(const CategoryModel& src, const Mat& r, const std::vector<int>& perm) {
  CategoryModel tgt = src;
  tgt.objects = src.objects * r.transpose();
  for (std::size_t f = 0; f < src.n_mor(); ++f) tgt.morphisms[perm[f]] = r * src.morphisms[f] * r.transpose();
  return tgt;
}

double naive_structure(const Mat& v, const CategoryModel& src, const CategoryModel& tgt, const HeadMatching& m) {
  const auto d = v.rows();
  double total = 0;
  for (std::size_t f = 0; f < m.size(); ++f) {
    const Mat& t = tgt.morphisms[m[f]];
    const Mat& s = src.morphisms[f];
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        double lhs = 0, rhs = 0;
        for (Eigen::Index k = 0; k < d; ++k) {
          lhs += t(i, k) * v(k, j);
          rhs += v(i, k) * s(k, j);
        }
        total += (lhs - rhs) * (lhs - rhs);
      }
  }
  return total;
}

HeadMatching identity_matching(std::size_t n) {
  HeadMatching m(n);
  std::iota(m.begin(), m.end(), 0);
  return m;
}

}  // namespace

TEST_CASE("structure_loss") {
  const CategoryModel src = init_category({.n_obj = 8, .dim = 4, .n_mor = 3}, 1);
  const Mat id = Mat::Identity(4, 4);
  CHECK(structure_loss(id, src, src, identity_matching(3)) == 0.0);

  const Mat r = random_orthogonal(4, 2);
  const CategoryModel tgt = conjugate(src, r, {0, 1, 2});
  CHECK(structure_loss(r, src, tgt, identity_matching(3)) < 1e-24);

  const CategoryModel other = init_category({.n_obj = 8, .dim = 4, .n_mor = 3}, 7);
  const HeadMatching m = {2, 0, 1};
  CHECK(std::abs(structure_loss(r, src, other, m) - naive_structure(r, src, other, m)) < 1e-12);

  // Conjugating the source by V moves V out of the loss.
  for (int t = 0; t < 5; ++t) {
    const Mat v = random_orthogonal(4, 10 + t);
    CategoryModel moved = src;
    for (auto& mf : moved.morphisms) mf = v * mf * v.transpose();
    CHECK(std::abs(structure_loss(v, src, other, m) - structure_loss(id, moved, other, m)) < 1e-10);
  }

  const CategoryModel small = init_category({.n_obj = 8, .dim = 3, .n_mor = 3}, 1);
  CHECK(error_of([&] { structure_loss(id, src, small, identity_matching(3)); }) == Errc::ShapeMismatch);
  CHECK(error_of([&] { structure_loss(id, src, src, {0, 1}); }) == Errc::UnmatchedHead);
  CHECK(error_of([&] { structure_loss(id, src, src, {0, 1, 5}); }) == Errc::UnmatchedHead);
}

TEST_CASE("alignment_loss") {
  CategoryModel src;
  src.objects = Mat::Identity(2, 2);
  src.morphisms = {Mat::Identity(2, 2)};
  const Mat id = Mat::Identity(2, 2);
  CHECK(alignment_loss(id, src, src, {}) == 0.0);
  CHECK(alignment_loss(id, src, src, {{{0, 0}, {1, 1}}}) == 0.0);
  CHECK(alignment_loss(id, src, src, {{{0, 1}}}) == 2.0);
  CHECK(error_of([&] { alignment_loss(id, src, src, {{{0, 2}}}); }) == Errc::IndexOutOfRange);
  CHECK(error_of([] { AlignmentSet{{{0, 1}, {0, 2}}}.validate(); }).has_value());
}

TEST_CASE("match_morphisms") {
  const CategoryModel src = init_category({.n_obj = 8, .dim = 4, .n_mor = 4}, 3);
  const std::vector<int> sigma = {2, 0, 3, 1};
  const CategoryModel permuted = conjugate(src, Mat::Identity(4, 4), sigma);
  CHECK(match_morphisms(src, permuted, Mat::Identity(4, 4)) == HeadMatching(sigma.begin(), sigma.end()));

  const Mat r = random_orthogonal(4, 5);
  const CategoryModel tgt = conjugate(src, r, sigma);
  const HeadMatching found = match_morphisms(src, tgt, r);
  CHECK(structure_loss(r, src, tgt, found) < 1e-10);

  const CategoryModel one = init_category({.n_obj = 4, .dim = 3, .n_mor = 1}, 1);
  const CategoryModel one_b = init_category({.n_obj = 4, .dim = 3, .n_mor = 1}, 2);
  CHECK(match_morphisms(one, one_b, random_orthogonal(3, 1)) == HeadMatching{0});

  // Greedy path above six heads.
  const CategoryModel wide = init_category({.n_obj = 4, .dim = 3, .n_mor = 8}, 4);
  const std::vector<int> rev = {7, 6, 5, 4, 3, 2, 1, 0};
  CHECK(match_morphisms(wide, conjugate(wide, Mat::Identity(3, 3), rev), Mat::Identity(3, 3)) ==
        HeadMatching(rev.begin(), rev.end()));

  CHECK(error_of([&] { match_morphisms(src, one, Mat::Identity(4, 4)); }).has_value());
  const CategoryModel three = init_category({.n_obj = 8, .dim = 4, .n_mor = 3}, 3);
  CHECK(error_of([&] { match_morphisms(src, three, Mat::Identity(4, 4)); }) == Errc::HeadCountMismatch);
}

TEST_CASE("train_functor") {
  const CategoryModel src = init_category({.n_obj = 20, .dim = 6, .n_mor = 2}, 11);

  AlignmentSet fifteen;
  for (TokenId i = 0; i < 15; ++i) fifteen.pairs.emplace_back(i, i);
  FunctorConfig cfg;
  cfg.steps = 300;
  cfg.seed = 1;
  const FunctorFit self = train_functor(src, src, fifteen, cfg);
  CHECK(self.loss_trace.back() < 1e-6);
  for (TokenId a = 0; a < 20; ++a) CHECK(translate(self.model, src, src, a, 1).front().first == a);
  for (double o : self.orthogonality_trace) CHECK(o < 1e-8);

  const Mat r = random_orthogonal(6, 9);
  const CategoryModel tgt = conjugate(src, r, {1, 0});
  FunctorConfig planted = cfg;
  planted.lambda = 0.0;
  planted.steps = 500;
  const FunctorFit fit = train_functor(src, tgt, {}, planted);
  CHECK(structure_loss(fit.model.v, src, tgt, fit.model.matching) < 1e-8);
  CHECK(fit.model.matching == HeadMatching{1, 0});

  FunctorConfig none = cfg;
  none.steps = 0;
  none.init = FunctorInit::Random;
  const FunctorFit zero = train_functor(src, tgt, fifteen, none);
  CHECK((zero.model.v - random_orthogonal(6, mix_seed(none.seed, 20))).norm() < 1e-12);
  CHECK(orthogonality_residual(zero.model.v) < 1e-12);

  const CategoryModel small = init_category({.n_obj = 20, .dim = 5, .n_mor = 2}, 1);
  CHECK(error_of([&] { train_functor(src, small, {}, cfg); }) == Errc::ShapeMismatch);
}

TEST_CASE("translate") {
  const CategoryModel src = init_category({.n_obj = 12, .dim = 5, .n_mor = 2}, 2);
  FunctorModel fm{Mat::Identity(5, 5), {0, 1}, 1.0, {}};
  for (TokenId a = 0; a < 12; ++a) {
    const auto ranked = translate(fm, src, src, a, 3);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[0].first == a);
    CHECK(ranked[0].second >= ranked[1].second);
    CHECK(ranked[1].second >= ranked[2].second);
  }

  fm.v = random_orthogonal(5, 3);
  CategoryModel scaled = src;
  Rng rng(4);
  for (Eigen::Index i = 0; i < scaled.objects.rows(); ++i) scaled.objects.row(i) *= 0.1 + 5 * rng.uniform();
  for (TokenId a = 0; a < 12; ++a) {
    const auto x = translate(fm, src, src, a, 12);
    const auto y = translate(fm, scaled, scaled, a, 12);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].first == y[i].first);
  }

  // Ties resolve to the lowest id.
  CategoryModel dup = src;
  dup.objects.row(7) = dup.objects.row(3);
  const auto tie = translate(FunctorModel{Mat::Identity(5, 5), {0, 1}, 1.0, {}}, dup, dup, 7, 2);
  CHECK(tie[0].first == 3);
  CHECK(tie[1].first == 7);

  CHECK(error_of([&] { translate(fm, src, src, 12, 3); }) == Errc::IndexOutOfRange);
  CHECK(error_of([&] { translate(fm, src, src, 0, 0); }).has_value());
}

TEST_CASE("functor_axiom_check") {
  for (int t = 0; t < 20; ++t) {
    const CategoryModel src = init_category({.n_obj = 10, .dim = 5, .n_mor = 3}, 40 + t);
    const AxiomResiduals r = functor_axiom_check(random_orthogonal(5, t), src, t);
    CHECK(r.id_residual < 1e-10);
    CHECK(r.comp_residual < 1e-10);
  }
  Rng rng(3);
  const CategoryModel src = init_category({.n_obj = 10, .dim = 4, .n_mor = 2}, 1);
  const AxiomResiduals p = functor_axiom_check(polar_retract(Mat(gaussian(4, 4, rng))), src);
  CHECK(p.id_residual < 1e-9);
  CHECK(p.comp_residual < 1e-9);
  CHECK(error_of([&] { functor_axiom_check(Mat(2 * Mat::Identity(4, 4)), src); }) == Errc::NotOrthogonal);

  for (int d : {1, 2, 7}) CHECK(orthogonality_residual(random_orthogonal(d, 5)) < 1e-13);
}
