#include "doctest.h"

#include <cmath>

#include "crl/fusion.hpp"
#include "support.hpp"

using namespace crl;
using crl::test::error_of;
using crl::test::gaussian;

namespace {

ConcurrenceCorpus tokens(std::string_view text) { return corpus_from_text(text, CorpusMode::Tokens, false); }

// Element-wise application of theta to the explicit Kronecker product.
Vec apply_naive(const Mat& theta, const Vec& a, const Vec& b) {
  const auto d = a.size();
  Vec out = Vec::Zero(theta.rows());
  for (Eigen::Index r = 0; r < theta.rows(); ++r)
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = 0; j < b.size(); ++j) out(r) += theta(r, i * b.size() + j) * a(i) * b(j);
  return out;
}

Vec unit(Vec v) { return v / v.norm(); }

}  // namespace

TEST_CASE("fuse_objects") {
  const FusionOperator scalar{Mat::Ones(1, 1)};
  Vec a(1), b(1);
  a << 3.0;
  b << -2.0;
  CHECK(fuse_objects(scalar, a, b, false)(0) == -6.0);

  Mat select = Mat::Zero(3, 9);
  for (int i = 0; i < 3; ++i) select(i, i) = 1;
  const Vec e1 = Vec::Unit(3, 0);
  CHECK((fuse_objects(FusionOperator{select}, e1, e1) - e1).norm() == 0.0);

  Rng rng(2);
  const FusionOperator op = init_fusion(4, 3);
  CHECK((op.theta * op.theta.transpose() - Mat::Identity(4, 4)).norm() < 1e-12);
  for (int t = 0; t < 20; ++t) {
    const Vec u = gaussian(4, rng), v = gaussian(4, rng);
    const Vec raw = fuse_objects(op, u, v, false);
    CHECK((raw - apply_naive(op.theta, u, v)).norm() < 1e-13);
    CHECK((fuse_objects(op, Vec(2.5 * u), v, false) - 2.5 * raw).norm() < 1e-12);
    CHECK(raw.norm() <= u.norm() * v.norm() + 1e-12);
    CHECK(std::abs(fuse_objects(op, u, v).norm() - 1.0) < 1e-12);
  }
  CHECK(error_of([&] { fuse_objects(op, Vec(Vec::Zero(3)), Vec(Vec::Zero(4))); }) == Errc::ShapeMismatch);
}

TEST_CASE("fuse_morphisms") {
  const FusionOperator op = init_fusion(3, 4);
  const FusedMorphism id = fuse_morphisms(op, Mat::Identity(3, 3), Mat::Identity(3, 3));
  CHECK((id.m - Mat::Identity(3, 3)).norm() < 1e-12);
  CHECK(id.residual < 1e-12);

  Mat two(1, 1), three(1, 1);
  two << 2;
  three << 3;
  const FusedMorphism s = fuse_morphisms(FusionOperator{Mat::Ones(1, 1)}, two, three);
  CHECK(s.m(0, 0) == 6.0);
  CHECK(s.residual == 0.0);

  // Kronecker-then-project with explicit index loops.
  Rng rng(5);
  const FusionOperator op2 = init_fusion(2, 6);
  const Mat mf = gaussian(2, 2, rng), mg = gaussian(2, 2, rng);
  Mat k(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) k(i * 2 + p, j * 2 + q) = mf(i, j) * mg(p, q);
  Mat expect = Mat::Zero(2, 2);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y) expect(r, c) += op2.theta(r, x) * k(x, y) * op2.theta(c, y);
  const FusedMorphism f = fuse_morphisms(op2, mf, mg);
  CHECK((f.m - expect).norm() < 1e-12);
  CHECK(std::abs(f.residual - (f.m * op2.theta - op2.theta * k).norm()) < 1e-12);

  CHECK(error_of([&] { fuse_morphisms(op2, Mat::Identity(3, 3), mg); }) == Errc::ShapeMismatch);
}

TEST_CASE("associativity_residual") {
  Rng rng(7);
  for (double sign : {1.0, -1.0}) {
    const FusionOperator op{Mat::Constant(1, 1, sign)};
    std::vector<Triple> ts;
    for (int i = 0; i < 8; ++i) {
      Vec u(1), v(1), w(1);
      u << (i & 1 ? 1.0 : -1.0);
      v << (i & 2 ? 1.0 : -1.0);
      w << (i & 4 ? 1.0 : -1.0);
      ts.push_back({u, v, w});
    }
    CHECK(associativity_residual(op, ts) == 0.0);
    std::vector<Triple> loose;
    for (int i = 0; i < 10; ++i) loose.push_back({gaussian(1, rng), gaussian(1, rng), gaussian(1, rng)});
    CHECK(associativity_residual(op, loose) < 1e-14);
  }

  // Theta symmetric under swapping the two tensor factors.
  const int d = 3;
  Mat sym(d, d * d);
  const Mat base = init_fusion(d, 8).theta;
  for (int r = 0; r < d; ++r)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) sym(r, i * d + j) = base(r, i * d + j) + base(r, j * d + i);
  const FusionOperator swap_op{polar_retract(sym)};
  const Vec u = unit(gaussian(d, rng));
  const Triple same{u, u, u};
  CHECK(associativity_residual(swap_op, std::span<const Triple>(&same, 1)) < 1e-15);

  const FusionOperator op = init_fusion(4, 9);
  std::vector<Triple> ts;
  double oracle = 0;
  for (int i = 0; i < 100; ++i) {
    Triple t{unit(gaussian(4, rng)), unit(gaussian(4, rng)), unit(gaussian(4, rng))};
    const Vec left = apply_naive(op.theta, apply_naive(op.theta, t.u, t.v), t.w);
    const Vec right = apply_naive(op.theta, t.u, apply_naive(op.theta, t.v, t.w));
    oracle += (left - right).norm();
    ts.push_back(std::move(t));
  }
  oracle /= 100;
  const double res = associativity_residual(op, ts);
  CHECK(res > 0.0);
  CHECK(std::abs(res - oracle) < 1e-12);
}

TEST_CASE("fusion gradients match finite differences") {
  Rng rng(13);
  const FusionOperator op = init_fusion(3, 1);
  const Triple t{unit(gaussian(3, rng)), unit(gaussian(3, rng)), unit(gaussian(3, rng))};
  auto assoc = [&](const Mat& theta) {
    const FusionOperator o{theta};
    return std::pow(associativity_residual(o, std::span<const Triple>(&t, 1)), 2);
  };
  const Mat g = associativity_gradient(op, t);
  double worst = 0;
  for (Eigen::Index i = 0; i < op.theta.size(); ++i) {
    Mat up = op.theta, down = op.theta;
    up(i) += 1e-6;
    down(i) -= 1e-6;
    const double numeric = (assoc(up) - assoc(down)) / 2e-6;
    worst = std::max(worst, std::abs(numeric - g(i)) / std::max(1e-8, std::abs(numeric) + std::abs(g(i))));
  }
  CHECK(worst < 1e-5);

  const CategoryModel model = init_category({.n_obj = 6, .dim = 3, .n_mor = 2}, 2);
  const Vec l = model.objects.row(0).transpose(), r = model.objects.row(1).transpose();
  const Vec ctx = model.objects.row(2).transpose();
  const std::vector<Vec> negs = {model.objects.row(3).transpose(), model.objects.row(4).transpose()};
  for (bool normalize : {true, false}) {
    Mat grad = Mat::Zero(3, 9);
    composite_nce(model, op, l, r, ctx, negs, normalize, &grad);
    double w = 0;
    for (Eigen::Index i = 0; i < op.theta.size(); ++i) {
      FusionOperator up = op, down = op;
      up.theta(i) += 1e-6;
      down.theta(i) -= 1e-6;
      const double numeric = (composite_nce(model, up, l, r, ctx, negs, normalize, nullptr) -
                              composite_nce(model, down, l, r, ctx, negs, normalize, nullptr)) /
                             2e-6;
      w = std::max(w, std::abs(numeric - grad(i)) / std::max(1e-8, std::abs(numeric) + std::abs(grad(i))));
    }
    CHECK(w < 1e-5);
  }
}

TEST_CASE("train_fusion") {
  const auto syn = gen_synthetic(standard_synthetic(20, 4, 400, 3));
  const CategoryModel model = init_category({.n_obj = 20, .dim = 4, .n_mor = 2}, 1);
  FusionConfig cfg;
  cfg.steps = 0;
  cfg.seed = 4;
  const FusionFit none = train_fusion(model, syn.source, cfg);
  CHECK(none.op.theta == init_fusion(4, mix_seed(4, 30)).theta);

  cfg.steps = 60;
  const FusionFit fit = train_fusion(model, syn.source, cfg);
  CHECK(fit.loss_trace.size() == 60);
  CHECK((fit.op.theta * fit.op.theta.transpose() - Mat::Identity(4, 4)).norm() < 1e-8);
  const FusionFit again = train_fusion(model, syn.source, cfg);
  CHECK(again.op.theta == fit.op.theta);

  CHECK(error_of([&] { train_fusion(model, tokens("A B\nA C\n"), cfg); }) == Errc::NoPairs);
}

TEST_CASE("bootstrap_round") {
  const auto corpus = tokens("A B C\nA B\nC D\n");
  CategoryModel model = init_category({.n_obj = 4, .dim = 3, .n_mor = 1}, 3);
  const FusionOperator op = init_fusion(3, 2);

  // tau above every link probability: nothing changes.
  const BootstrapRound none = bootstrap_round(model, op, corpus, 0.999999);
  CHECK(none.composites.entries.empty());
  CHECK(none.corpus.to_text() == corpus.to_text());

  // Make (A -> B) the only strong link.
  model.objects = Mat::Identity(4, 3);
  model.objects(3, 0) = 1;
  model.objects(3, 2) = 0;
  model.morphisms[0] = Mat::Zero(3, 3);
  model.morphisms[0](1, 0) = 5;
  const BootstrapRound r = bootstrap_round(model, op, corpus, 0.9);
  REQUIRE(r.composites.entries.size() == 1);
  const auto& e = r.composites.entries[0];
  CHECK(e.left == 0);
  CHECK(e.right == 1);
  CHECK(r.corpus.vocab()[e.id] == "[A⊗B]");
  CHECK((e.vector - fuse_objects(op, model.objects.row(0).transpose(), model.objects.row(1).transpose())).norm() <
        1e-12);
  CHECK(r.objects.rows() == 5);
  CHECK((r.objects.row(e.id).transpose() - e.vector).norm() == 0.0);
  CHECK(r.composites.to_text(r.corpus.vocab()) == "4 = A ⊗ B\n");
  CHECK(r.corpus.to_text() == "C [A⊗B]\n[A⊗B]\nC D\n");

  const BootstrapRound again = bootstrap_round(model, op, corpus, 0.9);
  CHECK(again.corpus.to_text() == r.corpus.to_text());
  CHECK(again.objects == r.objects);

  CHECK(error_of([&] { bootstrap_round(model, op, corpus, 0.0); }) == Errc::InvalidThreshold);
  CHECK(error_of([&] { bootstrap_round(model, op, corpus, 1.0); }) == Errc::InvalidThreshold);

  CategoryModel extended = model;
  extended.objects = r.objects;
  extended.objects.row(e.id).setZero();
  refresh_composites(extended, op, r.composites.entries);
  CHECK((extended.objects.row(e.id).transpose() - e.vector).norm() < 1e-12);
}
