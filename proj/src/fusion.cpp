#include "crl/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "crl/random.hpp"

namespace crl {

namespace {

void check_vec(const FusionOperator& op, const Vec& v) {
  if (v.size() != op.dim()) throw Error(Errc::ShapeMismatch, "vector length differs from fusion dimension");
}

// theta (u (x) I): column j is sum_i u_i theta(:, i d + j).
Mat left_contract(const Mat& theta, const Vec& u) {
  const Eigen::Index d = u.size();
  Mat out = Mat::Zero(theta.rows(), d);
  for (Eigen::Index i = 0; i < d; ++i) out.noalias() += u(i) * theta.middleCols(i * d, d);
  return out;
}

// theta (I (x) w): column i is theta(:, i d : i d + d) w.
Mat right_contract(const Mat& theta, const Vec& w) {
  const Eigen::Index d = w.size();
  Mat out(theta.rows(), d);
  for (Eigen::Index i = 0; i < d; ++i) out.col(i).noalias() = theta.middleCols(i * d, d) * w;
  return out;
}

Vec raw_fuse(const Mat& theta, const Vec& u, const Vec& v) { return left_contract(theta, u) * v; }

}  // namespace

FusionOperator init_fusion(int d, std::uint64_t seed) {
  if (d < 1) throw Error(Errc::InvalidArgument, "fusion dimension must be >= 1");
  Rng rng(seed);
  Mat g(d, static_cast<Eigen::Index>(d) * d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.normal();
  return {polar_retract(g)};
}

Vec fuse_objects(const FusionOperator& op, const Vec& va, const Vec& vb, bool normalize) {
  check_vec(op, va);
  check_vec(op, vb);
  Vec out = op.theta * kron_vec(va, vb);
  const double n = out.norm();
  if (normalize && n > 0) out /= n;
  return out;
}

FusedMorphism fuse_morphisms(const FusionOperator& op, const Mat& mf, const Mat& mg) {
  const Eigen::Index d = op.dim();
  if (mf.rows() != d || mf.cols() != d || mg.rows() != d || mg.cols() != d)
    throw Error(Errc::ShapeMismatch, "fuse_morphisms needs d x d inputs");
  const Mat lifted = op.theta * kron(mf, mg);
  FusedMorphism out;
  out.m = lifted * op.theta.transpose();
  out.residual = (out.m * op.theta - lifted).norm();
  return out;
}

double associativity_residual(const FusionOperator& op, std::span<const Triple> triples) {
  if (triples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& t : triples) {
    check_vec(op, t.u);
    check_vec(op, t.v);
    check_vec(op, t.w);
    const Vec left = raw_fuse(op.theta, raw_fuse(op.theta, t.u, t.v), t.w);
    const Vec right = raw_fuse(op.theta, t.u, raw_fuse(op.theta, t.v, t.w));
    total += (left - right).norm();
  }
  return total / static_cast<double>(triples.size());
}

Mat associativity_gradient(const FusionOperator& op, const Triple& t) {
  const Mat& theta = op.theta;
  const Vec uv = kron_vec(t.u, t.v);
  const Vec vw = kron_vec(t.v, t.w);
  const Vec p = theta * uv;
  const Vec q = theta * vw;
  const Vec pw = kron_vec(p, t.w);
  const Vec uq = kron_vec(t.u, q);
  const Vec r = theta * pw - theta * uq;

  Mat grad = r * pw.transpose() - r * uq.transpose();
  grad.noalias() += (right_contract(theta, t.w).transpose() * r) * uv.transpose();
  grad.noalias() -= (left_contract(theta, t.u).transpose() * r) * vw.transpose();
  return 2.0 * grad;
}

double composite_nce(const CategoryModel& model, const FusionOperator& op, const Vec& left, const Vec& right,
                     const Vec& context, std::span<const Vec> negatives, bool normalize, Mat* grad) {
  const Vec x = kron_vec(left, right);
  const Vec y = op.theta * x;
  const double norm = y.norm();
  const Vec c = normalize && norm > 0 ? Vec(y / norm) : y;

  double loss = 0.0;
  Vec dc = Vec::Zero(c.size());
  auto term = [&](const Vec& target, bool positive) {
    const Vec s = morphism_logits(model, c, target);
    const auto [z, w] = aggregate_with_weights(model, s);
    const double zc = std::clamp(z, -kLogitClamp, kLogitClamp);
    loss -= positive ? log_sigmoid(zc) : log_sigmoid(-zc);
    if (!grad) return;
    const double coef = positive ? sigmoid(z) - 1.0 : sigmoid(z);
    for (std::size_t f = 0; f < model.n_mor(); ++f)
      dc.noalias() += coef * w(static_cast<Eigen::Index>(f)) * (model.morphisms[f].transpose() * target);
  };
  term(context, true);
  for (const auto& neg : negatives) term(neg, false);

  if (grad) {
    Vec dy = dc;
    if (normalize && norm > 0) dy = (dc - c * c.dot(dc)) / norm;
    grad->noalias() += dy * x.transpose();
  }
  return loss;
}

FusionFit train_fusion(const CategoryModel& model, const ConcurrenceCorpus& corpus, const FusionConfig& cfg) {
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.k_neg < 0 || !(cfg.lr > 0) || cfg.mu < 0)
    throw Error(Errc::InvalidArgument, "invalid fusion config");
  if (model.n_obj() < corpus.vocab_size()) throw Error(Errc::ShapeMismatch, "model smaller than vocabulary");
  const PairStats stats = pair_distribution(corpus);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.scopes().size(); ++i)
    if (corpus.scopes()[i].distinct() >= 3) eligible.push_back(i);
  if (eligible.empty()) throw Error(Errc::NoPairs, "no scope with three distinct tokens");

  std::vector<double> neg_cdf;
  double acc = 0.0;
  for (std::size_t b = 0; b < stats.vocab_size; ++b) {
    acc += std::pow(stats.marginal(static_cast<Eigen::Index>(b)), cfg.neg_exponent);
    neg_cdf.push_back(acc);
  }

  const int d = static_cast<int>(model.dim());
  FusionFit fit;
  fit.op = init_fusion(d, mix_seed(cfg.seed, 30));
  fit.initial = fit.op;
  Rng rng(mix_seed(cfg.seed, 31));
  Optimizer opt(OptimizerKind::Adam, cfg.lr);
  auto row = [&](TokenId id) -> Vec { return model.objects.row(id).transpose(); };

  double initial = 0.0;
  int over_budget = 0;
  std::vector<Vec> negs(static_cast<std::size_t>(cfg.k_neg));
  for (int step = 0; step < cfg.steps; ++step) {
    Mat grad = Mat::Zero(fit.op.theta.rows(), fit.op.theta.cols());
    double concurrence = 0.0;
    double assoc = 0.0;
    for (int i = 0; i < cfg.batch; ++i) {
      const Scope& scope = corpus.scopes()[eligible[rng.below(eligible.size())]];
      std::vector<std::size_t> picks(scope.distinct());
      for (std::size_t k = 0; k < picks.size(); ++k) picks[k] = k;
      for (std::size_t k = 0; k < 3; ++k) std::swap(picks[k], picks[k + rng.below(picks.size() - k)]);
      const TokenId a = scope.items[picks[0]].first;
      const TokenId b = scope.items[picks[1]].first;
      const TokenId c = scope.items[picks[2]].first;
      for (auto& n : negs) {
        const double u = rng.uniform() * neg_cdf.back();
        const auto it = std::upper_bound(neg_cdf.begin(), neg_cdf.end(), u);
        n = row(static_cast<TokenId>(std::min<std::size_t>(static_cast<std::size_t>(it - neg_cdf.begin()),
                                                           neg_cdf.size() - 1)));
      }
      concurrence += composite_nce(model, fit.op, row(a), row(b), row(c), negs, cfg.normalize, &grad);
      if (cfg.mu > 0) {
        const Triple t{row(a), row(b), row(c)};
        const double r = associativity_residual(fit.op, std::span<const Triple>(&t, 1));
        assoc += r * r;
        grad.noalias() += cfg.mu * associativity_gradient(fit.op, t);
      }
    }
    const double n = static_cast<double>(cfg.batch);
    concurrence /= n;
    assoc /= n;
    grad /= n;
    const double loss = concurrence + cfg.mu * assoc;
    if (!std::isfinite(loss)) throw Error(Errc::NonFiniteLoss, "non-finite fusion loss at step " + std::to_string(step));
    if (step == 0) initial = loss;
    over_budget = loss > 10.0 * initial ? over_budget + 1 : 0;
    if (over_budget >= 100) throw Error(Errc::NonFiniteLoss, "fusion loss diverged");
    fit.loss_trace.push_back(loss);
    fit.concurrence_trace.push_back(concurrence);
    fit.associativity_trace.push_back(assoc);

    opt.step(std::span<double>(fit.op.theta.data(), static_cast<std::size_t>(fit.op.theta.size())),
             std::span<const double>(grad.data(), static_cast<std::size_t>(grad.size())));
    fit.op.theta = polar_retract(fit.op.theta);
  }
  return fit;
}

std::vector<Triple> sample_triples(const CategoryModel& model, const ConcurrenceCorpus& corpus, std::size_t n,
                                   std::uint64_t seed) {
  if (model.n_obj() < corpus.vocab_size()) throw Error(Errc::ShapeMismatch, "model smaller than vocabulary");
  std::vector<const Scope*> eligible;
  for (const auto& s : corpus.scopes())
    if (s.distinct() >= 3) eligible.push_back(&s);
  if (eligible.empty()) throw Error(Errc::NoPairs, "no scope with three distinct tokens");
  Rng rng(seed);
  std::vector<Triple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Scope& scope = *eligible[rng.below(eligible.size())];
    std::vector<std::size_t> picks(scope.distinct());
    for (std::size_t k = 0; k < picks.size(); ++k) picks[k] = k;
    for (std::size_t k = 0; k < 3; ++k) std::swap(picks[k], picks[k + rng.below(picks.size() - k)]);
    auto row = [&](std::size_t k) -> Vec { return model.objects.row(scope.items[picks[k]].first).transpose(); };
    out.push_back({row(0), row(1), row(2)});
  }
  return out;
}

std::string CompositeVocab::to_text(const std::vector<std::string>& vocab) const {
  std::string out;
  for (const auto& e : entries)
    out += std::to_string(e.id) + " = " + vocab.at(e.left) + " ⊗ " + vocab.at(e.right) + "\n";
  return out;
}

BootstrapRound bootstrap_round(const CategoryModel& model, const FusionOperator& op, const ConcurrenceCorpus& corpus,
                               double tau, bool normalize) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(Errc::InvalidThreshold, "tau must lie in (0, 1)");
  if (model.n_obj() < corpus.vocab_size()) throw Error(Errc::ShapeMismatch, "model smaller than vocabulary");
  if (model.dim() != op.dim()) throw Error(Errc::ShapeMismatch, "fusion dimension differs from model");

  BootstrapRound out;
  for (const auto& token : corpus.vocab()) out.corpus.intern(token);

  std::map<std::pair<TokenId, TokenId>, double> prob_cache;
  auto prob = [&](TokenId a, TokenId b) {
    auto [it, inserted] = prob_cache.try_emplace({a, b}, 0.0);
    if (inserted) it->second = link_prob(model, a, b);
    return it->second;
  };

  std::map<std::pair<TokenId, TokenId>, TokenId> composite_ids;
  std::vector<Vec> new_rows;
  for (const auto& scope : corpus.scopes()) {
    double best = -1.0;
    std::pair<TokenId, TokenId> pick{0, 0};
    for (const auto& [a, ca] : scope.items) {
      for (const auto& [b, cb] : scope.items) {
        if (a == b) continue;
        const double p = prob(a, b);
        if (p < tau) continue;
        if (p > best || (p == best && std::pair{a, b} < pick)) {
          best = p;
          pick = {a, b};
        }
      }
    }
    auto items = scope.items;
    if (best >= 0.0) {
      auto it = composite_ids.find(pick);
      if (it == composite_ids.end()) {
        const std::string name = "[" + corpus.vocab()[pick.first] + "⊗" + corpus.vocab()[pick.second] + "]";
        const bool existed = out.corpus.find(name).has_value();
        const TokenId id = out.corpus.intern(name);
        it = composite_ids.emplace(pick, id).first;
        if (!existed) {
          Vec v = fuse_objects(op, model.objects.row(pick.first).transpose(),
                               model.objects.row(pick.second).transpose(), normalize);
          out.composites.entries.push_back({pick.first, pick.second, id, v});
          new_rows.push_back(std::move(v));
        }
      }
      for (auto& [id, count] : items)
        if (id == pick.first || id == pick.second) --count;
      std::erase_if(items, [](const auto& e) { return e.second == 0; });
      items.emplace_back(it->second, 1u);
    }
    out.corpus.add_scope(items, true);
  }

  const auto old_rows = static_cast<Eigen::Index>(corpus.vocab_size());
  out.objects.resize(static_cast<Eigen::Index>(out.corpus.vocab_size()), model.dim());
  out.objects.topRows(old_rows) = model.objects.topRows(old_rows);
  for (std::size_t i = 0; i < new_rows.size(); ++i)
    out.objects.row(old_rows + static_cast<Eigen::Index>(i)) = new_rows[i].transpose();
  // Rows for composites that already existed in the vocabulary come from the model.
  for (Eigen::Index r = old_rows + static_cast<Eigen::Index>(new_rows.size()); r < out.objects.rows(); ++r)
    out.objects.row(r) = model.objects.row(r);
  return out;
}

void refresh_composites(CategoryModel& model, const FusionOperator& op, std::span<const CompositeEntry> entries,
                        bool normalize) {
  for (const auto& e : entries)
    model.objects.row(e.id) =
        fuse_objects(op, model.objects.row(e.left).transpose(), model.objects.row(e.right).transpose(), normalize)
            .transpose();
}

MultiScaleResult bootstrap(const CategoryModel& model, const FusionOperator& op, const ConcurrenceCorpus& corpus,
                           const MultiScaleConfig& cfg) {
  if (cfg.rounds < 1) throw Error(Errc::InvalidArgument, "rounds must be >= 1");
  MultiScaleResult out;
  out.model = model;
  out.corpus = corpus;
  std::vector<CompositeEntry> all;
  for (int round = 0; round < cfg.rounds; ++round) {
    BootstrapRound step = bootstrap_round(out.model, op, out.corpus, cfg.tau, cfg.normalize);
    all.insert(all.end(), step.composites.entries.begin(), step.composites.entries.end());
    out.model.objects = step.objects;
    out.corpus = std::move(step.corpus);
    out.rounds.push_back(std::move(step.composites));
    if (round + 1 == cfg.rounds || cfg.retrain.steps == 0) continue;

    TrainHooks hooks;
    hooks.init = out.model;
    for (const auto& e : all) hooks.frozen_rows.push_back(e.id);
    hooks.after_update = [&op, &all, normalize = cfg.normalize](CategoryModel& m) {
      refresh_composites(m, op, all, normalize);
    };
    TrainConfig retrain = cfg.retrain;
    retrain.seed = mix_seed(cfg.retrain.seed, static_cast<std::uint64_t>(round) + 100);
    out.model = train_category(out.corpus, retrain, hooks).model;
  }
  return out;
}

}  // namespace crl
