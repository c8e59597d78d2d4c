#include "crl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace crl {

void TrainConfig::validate() const {
  if (d < 1) throw Error(Errc::InvalidArgument, "d must be >= 1");
  if (n_mor < 1) throw Error(Errc::InvalidArgument, "n_mor must be >= 1");
  if (k_neg < 1) throw Error(Errc::InvalidArgument, "k_neg must be >= 1");
  if (!(lr > 0)) throw Error(Errc::InvalidArgument, "lr must be > 0");
  if (!(lr_floor > 0 && lr_floor <= 1)) throw Error(Errc::InvalidArgument, "lr_floor must lie in (0, 1]");
  if (steps < 0) throw Error(Errc::InvalidArgument, "steps must be >= 0");
  if (batch < 1) throw Error(Errc::InvalidArgument, "batch must be >= 1");
  if (!(neg_exponent >= 0)) throw Error(Errc::InvalidArgument, "neg_exponent must be >= 0");
}

CategoryInit TrainConfig::category_init(std::size_t n_obj) const {
  CategoryInit init;
  init.n_obj = n_obj;
  init.dim = d;
  init.n_mor = n_mor;
  init.aggregator = aggregator;
  init.hidden = hidden;
  init.hypersphere = hypersphere;
  init.rank = rank;
  return init;
}

namespace {

std::size_t draw(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

void check_batch(std::size_t n, const Batch& batch) {
  if (batch.negatives.size() != batch.positives.size() * static_cast<std::size_t>(batch.k_neg))
    throw Error(Errc::ShapeMismatch, "batch negatives do not match k_neg");
  for (const auto& [a, b] : batch.positives)
    if (a >= n || b >= n) throw Error(Errc::IndexOutOfRange, "batch id out of range");
  for (auto b : batch.negatives)
    if (b >= n) throw Error(Errc::IndexOutOfRange, "batch id out of range");
}

double clamped(double z) { return std::clamp(z, -kLogitClamp, kLogitClamp); }

}  // namespace

BatchSampler::BatchSampler(const PairStats& stats, const TrainConfig& cfg)
    : batch_(cfg.batch), k_neg_(cfg.k_neg), exclude_self_(cfg.exclude_self_negatives) {
  cfg.validate();
  if (stats.joint.empty()) throw Error(Errc::NoPairs, "pair table is empty");
  pairs_.reserve(stats.joint.size());
  pair_cdf_.reserve(stats.joint.size());
  double acc = 0.0;
  for (const auto& e : stats.joint) {
    pairs_.emplace_back(e.a, e.b);
    acc += e.p;
    pair_cdf_.push_back(acc);
  }
  acc = 0.0;
  neg_cdf_.reserve(stats.vocab_size);
  for (std::size_t b = 0; b < stats.vocab_size; ++b) {
    acc += std::pow(stats.marginal(static_cast<Eigen::Index>(b)), cfg.neg_exponent);
    neg_cdf_.push_back(acc);
  }
}

Batch BatchSampler::sample(Rng& rng) const {
  Batch out;
  out.k_neg = k_neg_;
  out.positives.reserve(static_cast<std::size_t>(batch_));
  out.negatives.reserve(static_cast<std::size_t>(batch_ * k_neg_));
  for (int i = 0; i < batch_; ++i) {
    const auto pos = pairs_[draw(pair_cdf_, rng)];
    out.positives.push_back(pos);
    for (int k = 0; k < k_neg_; ++k) {
      auto neg = static_cast<TokenId>(draw(neg_cdf_, rng));
      for (int tries = 0; exclude_self_ && neg == pos.first && tries < 64; ++tries)
        neg = static_cast<TokenId>(draw(neg_cdf_, rng));
      out.negatives.push_back(neg);
    }
  }
  return out;
}

Batch sample_batch(const PairStats& stats, const TrainConfig& cfg, Rng& rng) {
  return BatchSampler(stats, cfg).sample(rng);
}

namespace {

template <typename Scalar>
Scalar nce_loss_impl(const BasicCategoryModel<Scalar>& model, const Batch& batch) {
  check_batch(model.n_obj(), batch);
  if (batch.positives.empty()) return 0;
  const Scalar bound = static_cast<Scalar>(kLogitClamp);
  auto clamp = [bound](Scalar z) { return std::clamp(z, -bound, bound); };
  Scalar total = 0;
  for (std::size_t i = 0; i < batch.positives.size(); ++i) {
    const auto [a, b] = batch.positives[i];
    total -= log_sigmoid(clamp(link_logit(model, a, b).aggregate));
    for (auto neg : batch.negatives_of(i)) total -= log_sigmoid(-clamp(link_logit(model, a, neg).aggregate));
  }
  return total / static_cast<Scalar>(batch.positives.size());
}

}  // namespace

double nce_loss(const CategoryModel& model, const Batch& batch) { return nce_loss_impl(model, batch); }

namespace {

Gradients grad_impl(const CategoryModel& model, const Batch& batch, double* loss) {
  check_batch(model.n_obj(), batch);
  if (loss) *loss = 0.0;
  const Eigen::Index d = model.dim();
  const std::size_t n_mor = model.n_mor();
  const bool mlp = model.aggregator == AggregatorKind::Mlp;

  Gradients g;
  g.objects = Mat::Zero(model.objects.rows(), d);
  std::vector<Mat> gm(n_mor, Mat::Zero(d, d));
  if (mlp) {
    g.mlp.w1 = Mat::Zero(model.mlp.w1.rows(), model.mlp.w1.cols());
    g.mlp.b1 = Vec::Zero(model.mlp.b1.size());
    g.mlp.w2 = Vec::Zero(model.mlp.w2.size());
    g.mlp.b2 = 0.0;
  }
  if (batch.positives.empty()) {
    if (model.rank) {
      for (std::size_t f = 0; f < n_mor; ++f) {
        g.queries.push_back(Mat::Zero(model.queries[f].rows(), d));
        g.keys.push_back(Mat::Zero(model.keys[f].rows(), d));
      }
    } else {
      g.morphisms = std::move(gm);
    }
    return g;
  }
  const double scale = 1.0 / static_cast<double>(batch.positives.size());

  std::vector<Vec> images(n_mor, Vec(d));  // M_f v_a
  std::vector<Vec> pulled(n_mor, Vec(d));  // sum over targets of c w_f v_b
  Vec s(static_cast<Eigen::Index>(n_mor));

  // The positive and its negatives share the anchor a, so M_f v_a and the
  // anchor-side terms are formed once per positive.
  auto target = [&](TokenId b, bool positive) {
    const auto vb = model.objects.row(b).transpose();
    for (std::size_t f = 0; f < n_mor; ++f) s(static_cast<Eigen::Index>(f)) = vb.dot(images[f]);
    const auto [z, w] = aggregate_with_weights(model, s);
    const double p = sigmoid(z);
    const double c = scale * (positive ? p - 1.0 : p);
    if (loss) *loss -= scale * (positive ? log_sigmoid(clamped(z)) : log_sigmoid(-clamped(z)));
    for (std::size_t f = 0; f < n_mor; ++f) {
      const double cw = c * w(static_cast<Eigen::Index>(f));
      pulled[f].noalias() += cw * vb;
      g.objects.row(b).noalias() += cw * images[f].transpose();
    }
    if (mlp) {
      const Vec h = (model.mlp.w1 * s + model.mlp.b1).array().tanh().matrix();
      const Vec pre = (c * model.mlp.w2.array() * (1.0 - h.array().square())).matrix();
      g.mlp.b2 += c;
      g.mlp.w2 += c * h;
      g.mlp.b1 += pre;
      g.mlp.w1.noalias() += pre * s.transpose();
    }
  };

  for (std::size_t i = 0; i < batch.positives.size(); ++i) {
    const auto [a, b] = batch.positives[i];
    const auto va = model.objects.row(a).transpose();
    for (std::size_t f = 0; f < n_mor; ++f) {
      images[f].noalias() = model.morphisms[f] * va;
      pulled[f].setZero();
    }
    target(b, true);
    for (auto neg : batch.negatives_of(i)) target(neg, false);
    for (std::size_t f = 0; f < n_mor; ++f) {
      g.objects.row(a).noalias() += (model.morphisms[f].transpose() * pulled[f]).transpose();
      gm[f].noalias() += pulled[f] * va.transpose();
    }
  }

  if (model.rank) {
    // M = Q^T K: dL/dQ = K G^T, dL/dK = Q G.
    for (std::size_t f = 0; f < n_mor; ++f) {
      g.queries.push_back(model.keys[f] * gm[f].transpose());
      g.keys.push_back(model.queries[f] * gm[f]);
    }
  } else {
    g.morphisms = std::move(gm);
  }
  return g;
}

}  // namespace

Gradients grad_nce(const CategoryModel& model, const Batch& batch) { return grad_impl(model, batch, nullptr); }

std::vector<double*> parameter_pointers(CategoryModel& model) {
  std::vector<double*> out;
  auto add = [&out](auto& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(m.data() + i);
  };
  add(model.objects);
  if (model.rank) {
    for (auto& q : model.queries) add(q);
    for (auto& k : model.keys) add(k);
  } else {
    for (auto& m : model.morphisms) add(m);
  }
  if (model.aggregator == AggregatorKind::Mlp) {
    add(model.mlp.w1);
    add(model.mlp.b1);
    add(model.mlp.w2);
    out.push_back(&model.mlp.b2);
  }
  return out;
}

std::vector<double> flatten(const Gradients& grads, const CategoryModel& model) {
  std::vector<double> out;
  auto add = [&out](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  add(grads.objects);
  if (model.rank) {
    for (const auto& q : grads.queries) add(q);
    for (const auto& k : grads.keys) add(k);
  } else {
    for (const auto& m : grads.morphisms) add(m);
  }
  if (model.aggregator == AggregatorKind::Mlp) {
    add(grads.mlp.w1);
    add(grads.mlp.b1);
    add(grads.mlp.w2);
    out.push_back(grads.mlp.b2);
  }
  return out;
}

FdReport finite_diff_check(const std::function<long double(std::span<const double>)>& f,
                           std::span<const double> x, std::span<const double> analytic, double h,
                           std::uint64_t seed, std::size_t max_coords) {
  if (!(h > 0)) throw Error(Errc::InvalidArgument, "finite difference step must be > 0");
  if (analytic.size() != x.size()) throw Error(Errc::ShapeMismatch, "gradient size mismatch");

  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (coords.size() > max_coords) {
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i)
      std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
    coords.resize(max_coords);
    std::sort(coords.begin(), coords.end());
  }

  FdReport report;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i : coords) {
    const double x0 = probe[i];
    const double up = x0 + h;
    const double down = x0 - h;
    if (up == x0 || down == x0) {
      report.reliable = false;
      report.warning = "DegenerateStep: step " + std::to_string(h) + " vanishes at coordinate " +
                       std::to_string(i);
    }
    probe[i] = up;
    const long double f_up = f(probe);
    probe[i] = down;
    const long double f_down = f(probe);
    probe[i] = x0;
    const double numeric = static_cast<double>((f_up - f_down) / (up - down == 0 ? 2 * h : up - down));
    const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
    report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[i] - numeric) / denom);
    ++report.checked;
  }
  return report;
}

FdReport finite_diff_check(const CategoryModel& model, const Batch& batch, double h, std::uint64_t seed) {
  CategoryModel work = model;
  const std::vector<double*> ptrs = parameter_pointers(work);
  std::vector<double> x(ptrs.size());
  for (std::size_t i = 0; i < ptrs.size(); ++i) x[i] = *ptrs[i];
  const std::vector<double> analytic = flatten(grad_nce(model, batch), model);

  auto loss = [&](std::span<const double> params) {
    for (std::size_t i = 0; i < ptrs.size(); ++i) *ptrs[i] = params[i];
    auto wide = work.cast<long double>();
    wide.materialize();
    return nce_loss_impl(wide, batch);
  };
  return finite_diff_check(loss, x, analytic, h, seed);
}

GradCheckSummary grad_check_suite(int configs, double h, std::uint64_t seed) {
  if (configs < 0) throw Error(Errc::InvalidArgument, "configs must be >= 0");
  GradCheckSummary out;
  Rng rng(seed);
  for (int c = 0; c < configs; ++c) {
    CategoryInit init;
    init.n_obj = 3 + rng.below(10);
    init.dim = 1 + static_cast<int>(rng.below(8));
    init.n_mor = 1 + static_cast<int>(rng.below(4));
    init.aggregator = c % 2 == 0 ? AggregatorKind::LogSumExp : AggregatorKind::Mlp;
    init.hidden = 1 + static_cast<int>(rng.below(6));
    init.hypersphere = (c / 2) % 2 == 0;
    if (c % 3 == 2) init.rank = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(init.dim)));
    CategoryModel model = init_category(init, rng.next());
    if (!init.hypersphere)
      for (Eigen::Index i = 0; i < model.objects.size(); ++i) model.objects(i) *= 0.5 + rng.uniform();
    if (model.aggregator == AggregatorKind::Mlp) {
      for (Eigen::Index i = 0; i < model.mlp.b1.size(); ++i) model.mlp.b1(i) = 0.3 * rng.normal();
      model.mlp.b2 = 0.3 * rng.normal();
    }

    Batch batch;
    batch.k_neg = 1 + static_cast<int>(rng.below(5));
    const std::size_t n_pos = 1 + rng.below(16);
    for (std::size_t i = 0; i < n_pos; ++i) {
      batch.positives.emplace_back(static_cast<TokenId>(rng.below(init.n_obj)),
                                   static_cast<TokenId>(rng.below(init.n_obj)));
      for (int k = 0; k < batch.k_neg; ++k) batch.negatives.push_back(static_cast<TokenId>(rng.below(init.n_obj)));
    }

    const FdReport r = finite_diff_check(model, batch, h, rng.next());
    out.max_rel_error = std::max(out.max_rel_error, r.max_rel_error);
    out.coordinates += r.checked;
    if (!r.reliable) ++out.unreliable;
    ++out.configs;
  }
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

double Optimizer::update(std::size_t i, double g) {
  if (kind_ == OptimizerKind::Sgd) return -lr_ * g;
  m_[i] = beta1_ * m_[i] + (1 - beta1_) * g;
  v_[i] = beta2_ * v_[i] + (1 - beta2_) * g * g;
  const double mhat = m_[i] / (1 - std::pow(beta1_, static_cast<double>(t_)));
  const double vhat = v_[i] / (1 - std::pow(beta2_, static_cast<double>(t_)));
  return -lr_ * mhat / (std::sqrt(vhat) + eps_);
}

void Optimizer::step(std::span<double* const> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "optimizer size mismatch");
  if (kind_ == OptimizerKind::Adam && m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) *params[i] += update(i, grads[i]);
}

void Optimizer::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "optimizer size mismatch");
  if (kind_ == OptimizerKind::Adam && m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  ++t_;
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += update(i, grads[i]);
}

TrainResult train_category(const ConcurrenceCorpus& corpus, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const PairStats stats = pair_distribution(corpus);
  const BatchSampler sampler(stats, cfg);

  TrainResult result;
  if (hooks.init) {
    result.model = *hooks.init;
    if (result.model.n_obj() != corpus.vocab_size())
      throw Error(Errc::ShapeMismatch, "initial model does not match corpus vocabulary");
  } else {
    result.model = init_category(cfg.category_init(corpus.vocab_size()), mix_seed(cfg.seed, 10));
  }
  CategoryModel& model = result.model;
  if (hooks.after_update) hooks.after_update(model);

  Rng rng(mix_seed(cfg.seed, 11));
  Optimizer opt(cfg.optimizer, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  const std::vector<double*> params = parameter_pointers(model);
  const auto d = static_cast<std::size_t>(model.dim());

  double initial = 0.0;
  int over_budget = 0;
  result.loss_trace.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    if (cfg.lr_floor < 1.0 && cfg.steps > 1) {
      const double t = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
      opt.set_lr(cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(M_PI * t))));
    }
    const Batch batch = sampler.sample(rng);
    double loss = 0.0;
    Gradients g = grad_impl(model, batch, &loss);
    if (!std::isfinite(loss))
      throw Error(Errc::NonFiniteLoss, "non-finite loss at step " + std::to_string(step));
    if (step == 0) initial = loss;
    over_budget = loss > 10.0 * initial ? over_budget + 1 : 0;
    if (over_budget >= 100)
      throw Error(Errc::NonFiniteLoss, "loss above 10x its initial value for 100 steps at step " +
                                           std::to_string(step));
    result.loss_trace.push_back(loss);

    std::vector<double> grads = flatten(g, model);
    for (TokenId row : hooks.frozen_rows) {
      // Object storage is column-major: entry (row, c) sits at row + c * n_obj.
      for (std::size_t c = 0; c < d; ++c) grads[row + c * model.n_obj()] = 0.0;
    }
    opt.step(params, grads);
    model.materialize();
    if (model.hypersphere) model.normalize_objects();
    if (hooks.after_update) hooks.after_update(model);
  }
  return result;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) throw Error(Errc::InvalidArgument, "pearson needs equal, non-empty inputs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0 || syy <= 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

PmiFitReport pmi_fit_report(const std::function<double(TokenId, TokenId)>& logit, const PairStats& stats,
                            int k_neg) {
  if (k_neg < 1) throw Error(Errc::InvalidArgument, "k_neg must be >= 1");
  const PmiTable table = pmi(stats);
  if (table.entries().empty()) throw Error(Errc::NoPairs, "no observed pairs");
  std::vector<double> z, raw, shifted;
  PmiFitReport report;
  report.shift = std::log(static_cast<double>(k_neg));
  for (const auto& e : table.entries()) {
    z.push_back(logit(e.a, e.b));
    raw.push_back(e.value);
    shifted.push_back(e.value - report.shift);
  }
  report.pairs = z.size();
  report.pearson = pearson(z, raw);
  report.pearson_shifted = pearson(z, shifted);
  for (std::size_t i = 0; i < z.size(); ++i) {
    report.mean_abs_err += std::abs(z[i] - raw[i]);
    report.mean_abs_err_shifted += std::abs(z[i] - shifted[i]);
  }
  report.mean_abs_err /= static_cast<double>(z.size());
  report.mean_abs_err_shifted /= static_cast<double>(z.size());
  return report;
}

PmiFitReport pmi_fit_report(const CategoryModel& model, const PairStats& stats, int k_neg) {
  if (model.n_obj() < stats.vocab_size) throw Error(Errc::ShapeMismatch, "model smaller than vocabulary");
  return pmi_fit_report([&](TokenId a, TokenId b) { return link_logit(model, a, b).aggregate; }, stats, k_neg);
}

}  // namespace crl
