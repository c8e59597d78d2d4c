#include "crl/functor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "crl/random.hpp"

namespace crl {

void AlignmentSet::validate() const {
  std::set<TokenId> seen;
  for (const auto& [a, b] : pairs)
    if (!seen.insert(a).second) throw Error(Errc::InvalidArgument, "duplicate source id in alignment set");
}

namespace {

void check_dims(const Mat& v, const CategoryModel& src, const CategoryModel& tgt) {
  if (src.dim() != tgt.dim() || v.rows() != src.dim() || v.cols() != src.dim())
    throw Error(Errc::ShapeMismatch, "functor needs equal dimensions on both sides");
}

double head_residual(const Mat& v, const Mat& m_src, const Mat& m_tgt) {
  return (m_tgt * v - v * m_src).squaredNorm();
}

Mat cost_matrix(const CategoryModel& src, const CategoryModel& tgt, const Mat& v) {
  const auto n = static_cast<Eigen::Index>(src.n_mor());
  Mat cost(n, n);
  for (Eigen::Index f = 0; f < n; ++f)
    for (Eigen::Index g = 0; g < n; ++g)
      cost(f, g) = head_residual(v, src.morphisms[static_cast<std::size_t>(f)], tgt.morphisms[static_cast<std::size_t>(g)]);
  return cost;
}

double total_loss(const Mat& v, const CategoryModel& src, const CategoryModel& tgt, const HeadMatching& matching,
                  const AlignmentSet& aligned, double lambda) {
  double loss = structure_loss(v, src, tgt, matching);
  if (lambda != 0.0 && !aligned.pairs.empty()) loss += lambda * alignment_loss(v, src, tgt, aligned);
  return loss;
}

Mat euclidean_gradient(const Mat& v, const CategoryModel& src, const CategoryModel& tgt,
                       const HeadMatching& matching, const AlignmentSet& aligned, double lambda) {
  Mat grad = Mat::Zero(v.rows(), v.cols());
  for (std::size_t f = 0; f < matching.size(); ++f) {
    const Mat& a = tgt.morphisms[static_cast<std::size_t>(matching[f])];
    const Mat& b = src.morphisms[f];
    const Mat r = a * v - v * b;
    grad.noalias() += 2.0 * (a.transpose() * r - r * b.transpose());
  }
  if (lambda != 0.0) {
    for (const auto& [s, t] : aligned.pairs) {
      const Vec vs = src.objects.row(s).transpose();
      const Vec vt = tgt.objects.row(t).transpose();
      grad.noalias() -= 2.0 * lambda * (vt - v * vs) * vs.transpose();
    }
  }
  return grad;
}

std::vector<HeadMatching> candidate_matchings(const CategoryModel& src, const CategoryModel& tgt) {
  const auto n = src.n_mor();
  std::vector<HeadMatching> out;
  if (n <= 5) {
    HeadMatching perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    do out.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    out.push_back(match_morphisms(src, tgt, Mat::Identity(src.dim(), src.dim())));
  }
  return out;
}

// Minimizes the structure and alignment losses over all d x d matrices (a
// linear least-squares problem in vec(V)), then projects onto O(d). Without
// alignment pairs the minimizer is the null vector of the structure system.
std::optional<Mat> linearized_solution(const CategoryModel& src, const CategoryModel& tgt,
                                       const HeadMatching& matching, const AlignmentSet& aligned,
                                       double lambda) {
  const Eigen::Index d = src.dim();
  const Eigen::Index n = d * d;
  const Mat eye = Mat::Identity(d, d);
  Mat h = Mat::Zero(n, n);
  for (std::size_t f = 0; f < matching.size(); ++f) {
    // vec(A V - V B) = (I (x) A - B^T (x) I) vec(V) for column-major vec.
    const Mat k = kron(eye, tgt.morphisms[static_cast<std::size_t>(matching[f])]) -
                  kron(src.morphisms[f].transpose(), eye);
    h.noalias() += k.transpose() * k;
  }

  Vec x;
  if (lambda > 0.0 && !aligned.pairs.empty()) {
    Mat s = Mat::Zero(d, d);
    Mat cross = Mat::Zero(d, d);
    for (const auto& [a, b] : aligned.pairs) {
      const Vec va = src.objects.row(a).transpose();
      const Vec vb = tgt.objects.row(b).transpose();
      s.noalias() += va * va.transpose();
      cross.noalias() += vb * va.transpose();
    }
    Mat system = h + lambda * kron(s, eye);
    const double ridge = 1e-10 * std::max(1.0, system.trace() / static_cast<double>(n));
    system.diagonal().array() += ridge;
    x = system.ldlt().solve(lambda * Eigen::Map<const Vec>(cross.data(), n));
  } else {
    Eigen::SelfAdjointEigenSolver<Mat> solver(h);
    if (solver.info() != Eigen::Success) return std::nullopt;
    x = solver.eigenvectors().col(0);
    Eigen::Index pivot = 0;
    x.cwiseAbs().maxCoeff(&pivot);
    if (x(pivot) < 0) x = -x;
  }
  if (!x.allFinite()) return std::nullopt;
  try {
    return polar_retract(Eigen::Map<const Mat>(x.data(), d, d));
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

double structure_loss(const Mat& v, const CategoryModel& src, const CategoryModel& tgt,
                      const HeadMatching& matching) {
  check_dims(v, src, tgt);
  if (matching.size() != src.n_mor()) throw Error(Errc::UnmatchedHead, "matching does not cover every source head");
  double loss = 0.0;
  for (std::size_t f = 0; f < matching.size(); ++f) {
    if (matching[f] < 0 || static_cast<std::size_t>(matching[f]) >= tgt.n_mor())
      throw Error(Errc::UnmatchedHead, "source head " + std::to_string(f) + " has no target head");
    loss += head_residual(v, src.morphisms[f], tgt.morphisms[static_cast<std::size_t>(matching[f])]);
  }
  return loss;
}

double alignment_loss(const Mat& v, const CategoryModel& src, const CategoryModel& tgt, const AlignmentSet& aligned) {
  check_dims(v, src, tgt);
  double loss = 0.0;
  for (const auto& [a, b] : aligned.pairs) {
    if (a >= src.n_obj() || b >= tgt.n_obj()) throw Error(Errc::IndexOutOfRange, "alignment id out of range");
    loss += (tgt.objects.row(b).transpose() - v * src.objects.row(a).transpose()).squaredNorm();
  }
  return loss;
}

HeadMatching match_morphisms(const CategoryModel& src, const CategoryModel& tgt, const Mat& v) {
  if (src.n_mor() != tgt.n_mor()) throw Error(Errc::HeadCountMismatch, "source and target head counts differ");
  check_dims(v, src, tgt);
  const auto n = src.n_mor();
  const Mat cost = cost_matrix(src, tgt, v);

  HeadMatching best(n);
  std::iota(best.begin(), best.end(), 0);
  if (n <= 6) {
    HeadMatching perm = best;
    double best_cost = std::numeric_limits<double>::infinity();
    do {
      double c = 0.0;
      for (std::size_t f = 0; f < n; ++f) c += cost(static_cast<Eigen::Index>(f), perm[f]);
      if (c < best_cost) {
        best_cost = c;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }

  std::vector<bool> src_used(n, false), tgt_used(n, false);
  for (std::size_t round = 0; round < n; ++round) {
    double best_cost = std::numeric_limits<double>::infinity();
    std::size_t bf = 0, bg = 0;
    for (std::size_t f = 0; f < n; ++f) {
      if (src_used[f]) continue;
      for (std::size_t g = 0; g < n; ++g) {
        if (tgt_used[g]) continue;
        const double c = cost(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(g));
        if (c < best_cost) {
          best_cost = c;
          bf = f;
          bg = g;
        }
      }
    }
    src_used[bf] = tgt_used[bg] = true;
    best[bf] = static_cast<int>(bg);
  }
  return best;
}

Mat random_orthogonal(int d, std::uint64_t seed) {
  Rng rng(seed);
  Mat g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < d; ++c)
    if (r(c, c) < 0) q.col(c) = -q.col(c);
  return q;
}

FunctorFit train_functor(const CategoryModel& src, const CategoryModel& tgt, const AlignmentSet& aligned,
                         const FunctorConfig& cfg) {
  const Eigen::Index d = src.dim();
  check_dims(Mat::Identity(d, d), src, tgt);
  if (src.n_mor() != tgt.n_mor()) throw Error(Errc::HeadCountMismatch, "source and target head counts differ");
  if (cfg.steps < 0 || !(cfg.lr > 0) || cfg.refresh < 1 || cfg.lambda < 0)
    throw Error(Errc::InvalidArgument, "invalid functor config");
  aligned.validate();
  for (const auto& [a, b] : aligned.pairs)
    if (a >= src.n_obj() || b >= tgt.n_obj()) throw Error(Errc::IndexOutOfRange, "alignment id out of range");

  FunctorFit fit;
  FunctorModel& fm = fit.model;
  fm.lambda = cfg.lambda;
  fm.supervised = aligned;

  Mat v = Mat::Identity(d, d);
  FunctorInit init = cfg.init;
  if (init == FunctorInit::Spectral && d > cfg.spectral_max_dim) init = FunctorInit::Random;
  if (init == FunctorInit::Spectral) {
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& matching : candidate_matchings(src, tgt)) {
      auto candidate = linearized_solution(src, tgt, matching, aligned, cfg.lambda);
      if (!candidate) continue;
      const HeadMatching refined = match_morphisms(src, tgt, *candidate);
      const double loss = total_loss(*candidate, src, tgt, refined, aligned, cfg.lambda);
      if (loss < best) {
        best = loss;
        v = *candidate;
        found = true;
      }
    }
    if (!found) init = FunctorInit::Random;
  }
  if (init == FunctorInit::Random) v = random_orthogonal(static_cast<int>(d), mix_seed(cfg.seed, 20));
  v = polar_retract(v);
  fm.matching = match_morphisms(src, tgt, v);

  double lr = cfg.lr;
  double loss = total_loss(v, src, tgt, fm.matching, aligned, cfg.lambda);
  if (!std::isfinite(loss)) throw Error(Errc::NonFiniteLoss, "non-finite functor loss at initialization");
  for (int step = 0; step < cfg.steps; ++step) {
    if (step > 0 && step % cfg.refresh == 0) {
      fm.matching = match_morphisms(src, tgt, v);
      loss = total_loss(v, src, tgt, fm.matching, aligned, cfg.lambda);
    }
    const Mat g = euclidean_gradient(v, src, tgt, fm.matching, aligned, cfg.lambda);
    const Mat vtg = v.transpose() * g;
    const Mat riemannian = g - v * (0.5 * (vtg + vtg.transpose()));

    // Backtracking: shrink the step until the loss does not increase.
    Mat next = v;
    double next_loss = loss;
    for (int attempt = 0; attempt < 40; ++attempt) {
      const Mat trial = polar_retract(v - lr * riemannian);
      const double trial_loss = total_loss(trial, src, tgt, fm.matching, aligned, cfg.lambda);
      if (!std::isfinite(trial_loss)) throw Error(Errc::NonFiniteLoss, "non-finite functor loss");
      if (trial_loss <= loss) {
        next = trial;
        next_loss = trial_loss;
        lr *= 1.2;
        break;
      }
      lr *= 0.5;
    }
    v = next;
    loss = next_loss;
    fit.loss_trace.push_back(loss);
    fit.orthogonality_trace.push_back(orthogonality_residual(v));
  }
  fm.matching = match_morphisms(src, tgt, v);
  fm.v = v;
  return fit;
}

std::vector<std::pair<TokenId, double>> translate(const FunctorModel& fm, const CategoryModel& src,
                                                  const CategoryModel& tgt, TokenId a, int topk) {
  if (topk < 1) throw Error(Errc::InvalidArgument, "topk must be >= 1");
  if (a >= src.n_obj()) throw Error(Errc::IndexOutOfRange, "source id out of range");
  check_dims(fm.v, src, tgt);
  const Vec image = fm.v * src.objects.row(a).transpose();
  const double image_norm = image.norm();
  std::vector<std::pair<TokenId, double>> scored;
  scored.reserve(tgt.n_obj());
  for (std::size_t b = 0; b < tgt.n_obj(); ++b) {
    const auto row = tgt.objects.row(static_cast<Eigen::Index>(b));
    const double denom = image_norm * row.norm();
    scored.emplace_back(static_cast<TokenId>(b), denom > 0 ? row.dot(image) / denom : 0.0);
  }
  const auto k = std::min(static_cast<std::size_t>(topk), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    [](const auto& x, const auto& y) {
                      return x.second != y.second ? x.second > y.second : x.first < y.first;
                    });
  scored.resize(k);
  return scored;
}

AxiomResiduals functor_axiom_check(const Mat& v, const CategoryModel& src, std::uint64_t seed) {
  if (v.rows() != v.cols() || v.rows() != src.dim()) throw Error(Errc::ShapeMismatch, "V shape");
  if (orthogonality_residual(v) > 1e-8) throw Error(Errc::NotOrthogonal, "V is not orthogonal");
  AxiomResiduals out;
  const Mat vt = v.transpose();
  for (Eigen::Index a = 0; a < src.objects.rows(); ++a) {
    const Vec va = src.objects.row(a).transpose();
    if (!(va.squaredNorm() > 0)) continue;
    const Vec image = v * va;
    const Mat mapped = identity_morphism(image);
    const Mat conjugated = v * identity_morphism(va) * vt;
    out.id_residual = std::max(out.id_residual, (mapped - conjugated).norm());
  }

  const auto n = src.n_mor();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (n * n <= 256) {
    for (std::size_t g = 0; g < n; ++g)
      for (std::size_t f = 0; f < n; ++f) pairs.emplace_back(g, f);
  } else {
    Rng rng(seed);
    for (int i = 0; i < 256; ++i) pairs.emplace_back(rng.below(n), rng.below(n));
  }
  for (const auto& [g, f] : pairs) {
    const Mat& mg = src.morphisms[g];
    const Mat& mf = src.morphisms[f];
    const Mat lhs = v * compose(mg, mf) * vt;
    const Mat rhs = compose(Mat(v * mg * vt), Mat(v * mf * vt));
    out.comp_residual = std::max(out.comp_residual, (lhs - rhs).norm());
  }
  return out;
}

}  // namespace crl
