// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "crl/cli.hpp"
#include "crl/corpus.hpp"
#include "crl/functor.hpp"
#include "crl/fusion.hpp"
#include "crl/model_io.hpp"
#include "crl/training.hpp"

using namespace crl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... xs) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::UsageError;  // sentinel: nothing thrown
}

// 1
Outcome gradient_correctness() {
  const GradCheckSummary s = grad_check_suite(100, 1e-5, 2024);
  return {s.configs == 100 && s.max_rel_error < 1e-4,
          fmt("configs=%zu coords=%zu max_rel_err=%.3g (< 1e-4)", s.configs, s.coordinates, s.max_rel_error)};
}

// 2
Outcome pmi_recovery() {
  const SyntheticCorpus syn = gen_synthetic(standard_synthetic(30, 5, 5000, 42));
  TrainConfig cfg;
  cfg.d = 16;
  cfg.n_mor = 4;
  cfg.lr = 5e-3;
  cfg.steps = 20000;
  cfg.batch = 1024;
  cfg.optimizer = OptimizerKind::Adam;
  cfg.seed = 7;
  const TrainResult res = train_category(syn.source, cfg);
  const PmiFitReport r = pmi_fit_report(res.model, pair_distribution(syn.source), cfg.k_neg);
  const double best = std::max(r.pearson, r.pearson_shifted);
  return {best >= 0.90, fmt("pairs=%zu pearson_raw=%.4f pearson_shifted(log %d)=%.4f best=%.4f (>= 0.90)", r.pairs,
                            r.pearson, cfg.k_neg, r.pearson_shifted, best)};
}

CategoryModel random_category(Rng& rng, int d, int n_mor, std::size_t n_obj) {
  CategoryInit init;
  init.n_obj = n_obj;
  init.dim = d;
  init.n_mor = n_mor;
  return init_category(init, rng.next());
}

// 3
Outcome functor_axioms() {
  Rng rng(33);
  double id_max = 0.0, comp_max = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int d = 1 + static_cast<int>(rng.below(16));
    const CategoryModel c = random_category(rng, d, 1 + static_cast<int>(rng.below(6)), 2 + rng.below(30));
    const AxiomResiduals r = functor_axiom_check(random_orthogonal(d, rng.next()), c, rng.next());
    id_max = std::max(id_max, r.id_residual);
    comp_max = std::max(comp_max, r.comp_residual);
  }
  return {id_max < 1e-9 && comp_max < 1e-9,
          fmt("100 instances: max id_residual=%.3g max comp_residual=%.3g (< 1e-9)", id_max, comp_max)};
}

struct Planted {
  CategoryModel src, tgt;
  Mat r;
  HeadMatching perm;
};

Planted planted_pair(std::uint64_t seed, int d, int n_mor, std::size_t n_obj) {
  Rng rng(seed);
  Planted p;
  p.src = random_category(rng, d, n_mor, n_obj);
  p.r = random_orthogonal(d, rng.next());
  p.perm.resize(static_cast<std::size_t>(n_mor));
  for (int f = 0; f < n_mor; ++f) p.perm[static_cast<std::size_t>(f)] = f;
  for (std::size_t i = p.perm.size(); i > 1; --i) std::swap(p.perm[i - 1], p.perm[rng.below(i)]);
  p.tgt = p.src;
  p.tgt.objects = p.src.objects * p.r.transpose();
  for (std::size_t f = 0; f < p.perm.size(); ++f)
    p.tgt.morphisms[static_cast<std::size_t>(p.perm[f])] = p.r * p.src.morphisms[f] * p.r.transpose();
  return p;
}

// 4
Outcome planted_functor() {
  int ok = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Planted p = planted_pair(400 + s, 8, 4, 20);
    FunctorConfig cfg;
    cfg.lambda = 0.0;
    cfg.seed = s;
    const FunctorFit fit = train_functor(p.src, p.tgt, {}, cfg);
    const double loss = structure_loss(fit.model.v, p.src, p.tgt, fit.model.matching);
    const bool matched = match_morphisms(p.src, p.tgt, fit.model.v) == p.perm;
    worst = std::max(worst, loss);
    if (loss < 1e-6 && matched) ++ok;
  }
  return {ok == 5, fmt("5 planted instances (d=8, n_mor=4): recovered=%d/5 worst structure_loss=%.3g (< 1e-6)", ok, worst)};
}

// 5
Outcome translation() {
  const SyntheticCorpus syn = gen_synthetic(standard_synthetic(60, 6, 4000, 42));
  std::vector<double> top1s, top3s;
  std::string per_seed;
  for (std::uint64_t s = 0; s < 5; ++s) {
    TrainConfig cfg;
    cfg.d = 16;
    cfg.n_mor = 1;
    cfg.steps = 8000;
    cfg.batch = 1024;
    cfg.seed = 100 + s;
    const CategoryModel a = train_category(syn.source, cfg).model;
    cfg.seed = 200 + s;
    const CategoryModel b = train_category(syn.twin, cfg).model;

    std::vector<std::pair<TokenId, TokenId>> gold;
    for (TokenId i = 0; i < syn.alignment.size(); ++i) gold.emplace_back(i, syn.alignment[i]);
    Rng rng(mix_seed(s, 40));
    for (std::size_t i = 0; i < 15; ++i) std::swap(gold[i], gold[i + rng.below(gold.size() - i)]);
    AlignmentSet sup;
    sup.pairs.assign(gold.begin(), gold.begin() + 15);

    FunctorConfig fc;
    fc.lambda = 1.0;
    fc.seed = s;
    const FunctorFit fit = train_functor(a, b, sup, fc);
    int hit1 = 0, hit3 = 0;
    for (std::size_t i = 15; i < gold.size(); ++i) {
      const auto ranked = translate(fit.model, a, b, gold[i].first, 3);
      if (ranked[0].first == gold[i].second) ++hit1;
      for (const auto& [t, score] : ranked)
        if (t == gold[i].second) ++hit3;
    }
    const double n = static_cast<double>(gold.size() - 15);
    top1s.push_back(hit1 / n);
    top3s.push_back(hit3 / n);
    per_seed += fmt(" %.3f/%.3f", hit1 / n, hit3 / n);
  }
  const double t1 = median(top1s), t3 = median(top3s);
  return {t1 >= 0.70 && t3 >= 0.85,
          fmt("45 held-out, 15 supervised; per-seed top1/top3:%s; median top1=%.3f (>= 0.70) top3=%.3f (>= 0.85)",
              per_seed.c_str(), t1, t3)};
}

// 6
Outcome orthogonality() {
  const Planted p = planted_pair(600, 12, 4, 40);
  AlignmentSet sup;
  for (TokenId i = 0; i < 10; ++i) sup.pairs.emplace_back(i, i);
  FunctorConfig cfg;
  cfg.steps = 1000;
  cfg.init = FunctorInit::Random;
  cfg.seed = 6;
  const FunctorFit fit = train_functor(p.src, p.tgt, sup, cfg);
  const double worst = *std::max_element(fit.orthogonality_trace.begin(), fit.orthogonality_trace.end());
  return {fit.orthogonality_trace.size() >= 1000 && worst < 1e-8,
          fmt("retractions=%zu max ||V^T V - I||_F=%.3g (< 1e-8)", fit.orthogonality_trace.size(), worst)};
}

// 7
Outcome associativity() {
  const SyntheticCorpus syn = gen_synthetic(standard_synthetic(30, 5, 5000, 42));
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch = 1024;
  cfg.seed = 7;
  const CategoryModel m = train_category(syn.source, cfg).model;
  FusionConfig fc;
  fc.steps = 1500;
  fc.lr = 3e-3;
  fc.mu = 1000.0;
  fc.seed = 3;
  const FusionFit fit = train_fusion(m, syn.source, fc);
  const auto triples = sample_triples(m, syn.source, 500, 99);
  const double r0 = associativity_residual(fit.initial, triples);
  const double r1 = associativity_residual(fit.op, triples);

  TrainConfig c1 = cfg;
  c1.d = 1;
  c1.steps = 200;
  const CategoryModel m1 = train_category(syn.source, c1).model;
  FusionConfig f1 = fc;
  f1.steps = 50;
  const FusionFit fit1 = train_fusion(m1, syn.source, f1);
  const double scalar = associativity_residual(fit1.op, sample_triples(m1, syn.source, 500, 99));
  return {r1 <= r0 / 10.0 && scalar == 0.0,
          fmt("500 held-out triples: init=%.4g trained=%.4g ratio=%.4f (<= 0.1); d=1 residual=%g (== 0)", r0, r1,
              r1 / r0, scalar)};
}

// 8
Outcome bootstrap_hierarchy() {
  std::string text;
  Rng rng(5);
  auto noise = [&rng] { return "n" + std::to_string(rng.below(20)); };
  for (int i = 0; i < 200; ++i) text += "A B C\n";
  for (int i = 0; i < 600; ++i) {
    const std::string x = noise();
    const std::string y = noise();
    text += "C " + x + " " + y + "\n";
  }
  for (int i = 0; i < 3000; ++i) {
    const std::size_t len = 2 + rng.below(3);
    for (std::size_t j = 0; j < len; ++j) text += (j ? " " : "") + noise();
    text += "\n";
  }
  const ConcurrenceCorpus corpus = corpus_from_text(text, CorpusMode::Tokens, false);
  const TokenId a = *corpus.find("A"), b = *corpus.find("B"), c = *corpus.find("C");

  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.batch = 1024;
  cfg.k_neg = 1;
  cfg.seed = 1;
  const CategoryModel m = train_category(corpus, cfg).model;
  FusionConfig fc;
  fc.steps = 300;
  fc.lr = 3e-3;
  fc.mu = 1000.0;
  fc.seed = 2;
  const FusionOperator op = train_fusion(m, corpus, fc).op;

  const BootstrapRound r1 = bootstrap_round(m, op, corpus, 0.8);
  std::size_t eligible = 0, formed = 0;
  std::optional<TokenId> ab;
  for (const auto& e : r1.composites.entries)
    if ((e.left == a && e.right == b) || (e.left == b && e.right == a)) ab = e.id;
  for (std::size_t i = 0; i < corpus.scopes().size(); ++i) {
    if (!corpus.scopes()[i].contains(a) || !corpus.scopes()[i].contains(b)) continue;
    ++eligible;
    const Scope& out = r1.corpus.scopes()[i];
    if (ab && out.contains(*ab) && !out.contains(a) && !out.contains(b)) ++formed;
  }
  const bool round1 = ab && r1.composites.entries.size() == 1 && formed == eligible;

  MultiScaleConfig mc;
  mc.rounds = 2;
  mc.tau = 0.8;
  mc.retrain = cfg;
  const MultiScaleResult ms = bootstrap(m, op, corpus, mc);
  bool depth2 = false;
  if (ms.rounds.size() == 2)
    for (const auto& e : ms.rounds[1].entries)
      if ((e.left == *ab && e.right == c) || (e.left == c && e.right == *ab)) depth2 = true;
  return {round1 && depth2,
          fmt("round 1: A/B composite in %zu/%zu eligible scopes, %zu composite(s) total; round 2 depth-2 composite %s",
              formed, eligible, r1.composites.entries.size(), depth2 ? "formed" : "missing")};
}

// 9
Outcome formula_parser() {
  const std::vector<std::pair<std::string, std::map<std::string, std::uint64_t>>> cases = {
      {"NaCl", {{"Na", 1}, {"Cl", 1}}},
      {"Ca(OH)2", {{"Ca", 1}, {"O", 2}, {"H", 2}}},
      {"H2SO4", {{"H", 2}, {"S", 1}, {"O", 4}}},
      {"K4(Fe(CN)6)", {{"K", 4}, {"Fe", 1}, {"C", 6}, {"N", 6}}},
  };
  int ok = 0;
  for (const auto& [text, want] : cases)
    if (as_multiset(parse_formula(text)) == want) ++ok;
  const std::vector<std::pair<std::string, Errc>> bad = {
      {"xq", Errc::UnknownToken},  {"Mg(", Errc::UnbalancedParens}, {"Ca(OH", Errc::UnbalancedParens},
      {"CaOH)2", Errc::UnbalancedParens}, {"H0", Errc::ZeroCount},  {"", Errc::ParseError},
      {"()", Errc::ParseError},    {"Na Cl", Errc::UnknownToken},
  };
  int rejected = 0;
  for (const auto& [text, code] : bad)
    if (error_of([&] { parse_formula(text); }) == code) ++rejected;
  return {ok == static_cast<int>(cases.size()) && rejected == static_cast<int>(bad.size()),
          fmt("well-formed %d/%zu, malformed rejected with expected error %d/%zu", ok, cases.size(), rejected,
              bad.size())};
}

// 10
Outcome determinism_persistence() {
  const fs::path root = fs::temp_directory_path() / ("crl_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  std::ostringstream sink;
  // Same relative paths in both runs, since the manifest records them.
  const fs::path home = fs::current_path();
  auto pipeline = [&](const fs::path& dir) {
    fs::create_directories(dir);
    fs::current_path(dir);
    const std::string p;
    const int gen = run_command({"gen-synth", "--seed", "42", "--objects", "30", "--scopes", "1000", "--out", p + "a.txt",
                                 "--twin", p + "b.txt", "--align", p + "gold.csv"},
                                sink, sink);
    const int tr = run_command({"train", "--corpus", p + "a.txt", "--d", "8", "--heads", "2", "--steps", "300",
                                "--batch", "64", "--seed", "7", "--out", p + "a.model"},
                               sink, sink);
    fs::current_path(home);
    return gen == 0 && tr == 0;
  };
  const bool ran = pipeline(root / "run1") && pipeline(root / "run2");
  bool identical = ran;
  for (const char* f : {"a.txt", "b.txt", "gold.csv", "a.model", "a.model.trace.csv", "a.model.manifest.json"})
    identical = identical && slurp(root / "run1" / f) == slurp(root / "run2" / f);

  const std::string bytes = ran ? slurp(root / "run1" / "a.model") : std::string();
  bool roundtrip = false;
  if (ran) {
    const ModelBundle m = load_model(root / "run1" / "a.model");
    roundtrip = serialize_model(m) == bytes;
  }

  std::string bad_magic = bytes;
  if (!bad_magic.empty()) bad_magic.replace(0, 4, "XXXX");
  const std::string truncated = bytes.substr(0, bytes.size() >= 8 ? bytes.size() - 8 : 0);
  const std::string extended = bytes + std::string(8, '\0');
  std::string bad_shape = bytes;
  if (const auto at = bad_shape.find("\"n_obj\":30"); at != std::string::npos) bad_shape.replace(at, 10, "\"n_obj\":31");
  const int rejected = (error_of([&] { deserialize_model(bad_magic); }) == Errc::BadMagic) +
                       (error_of([&] { deserialize_model(truncated); }) == Errc::TruncatedPayload) +
                       (error_of([&] { deserialize_model(extended); }) == Errc::ShapeMismatch) +
                       (error_of([&] { deserialize_model(bad_shape); }) == Errc::ShapeMismatch);
  fs::remove_all(root);
  return {identical && roundtrip && rejected == 4,
          fmt("byte-identical reruns=%s, bit-exact round-trip=%s, corruptions rejected=%d/4", identical ? "yes" : "no",
              roundtrip ? "yes" : "no", rejected)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 30, gradient_correctness},
      {2, "PMI recovery", 300, pmi_recovery},
      {3, "functor axioms", 10, functor_axioms},
      {4, "planted functor recovery", 120, planted_functor},
      {5, "semi-supervised translation", 600, translation},
      {6, "orthogonality invariant", 60, orthogonality},
      {7, "associativity", 300, associativity},
      {8, "bootstrap coarse-graining", 180, bootstrap_hierarchy},
      {9, "formula parser", 1, formula_parser},
      {10, "determinism and persistence", 60, determinism_persistence},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.budget_s;
    failed += !pass;
    std::printf("[%s] %d. %s: %s; runtime %.1fs (< %.0fs)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                secs, c.budget_s);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
