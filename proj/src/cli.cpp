#include "crl/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "CLI11.hpp"
#include "crl/corpus.hpp"
#include "crl/evaluation.hpp"
#include "crl/functor.hpp"
#include "crl/fusion.hpp"
#include "crl/model_io.hpp"
#include "crl/training.hpp"
#include "json.hpp"

namespace crl {

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw Error(Errc::IoError, "write to '" + path.string() + "' failed");
}

std::string with_suffix(const std::string& path, const std::string& suffix) { return path + suffix; }

CorpusMode parse_mode(const std::string& s) { return s == "formula" ? CorpusMode::Formula : CorpusMode::Tokens; }

// Option values after parsing, defaults included, as sorted name=value pairs.
std::map<std::string, std::string> option_values(const CLI::App& sub) {
  std::map<std::string, std::string> values;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name == "--help" || name == "--config" || name.empty()) continue;
    std::string v;
    if (opt->count() > 0) {
      for (const auto& r : opt->reduced_results()) v += (v.empty() ? "" : ";") + r;
    } else {
      v = opt->get_default_str();
    }
    values[name] = v;
  }
  return values;
}

void write_manifest(const CLI::App& sub, std::uint64_t seed, const std::string& anchor,
                    const std::vector<std::string>& outputs) {
  const auto values = option_values(sub);
  std::string canon = sub.get_name() + "\n";
  for (const auto& [k, v] : values) canon += k + "=" + v + "\n";
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  json j;
  j["command"] = sub.get_name();
  j["config"] = values;
  j["config_hash"] = hash;
  j["seed"] = seed;
  j["versions"] = {{"crl", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"format", kModelVersion}};
  j["outputs"] = outputs;
  write_file(anchor + ".manifest.json", j.dump(2) + "\n");
}

NamedCategory first_category(const ModelBundle& b, const std::string& path) {
  if (b.categories.empty()) throw Error(Errc::InvalidArgument, "'" + path + "' holds no category");
  return b.categories.front();
}

std::map<std::string, std::string> gold_map(const std::string& path) {
  std::map<std::string, std::string> m;
  for (const auto& [a, b] : load_alignment(path)) m.emplace(a, b);
  return m;
}

struct TrainFlags {
  int d = 16;
  int heads = 4;
  int k_neg = 5;
  double lr = 5e-3;
  int steps = 1000;
  int batch = 128;
  std::string optimizer = "adam";
  std::string aggregator = "logsumexp";
  int hidden = 8;
  int rank = 0;
  bool euclidean = false;
  double neg_exponent = 1.0;

  void add(CLI::App* app) {
    app->add_option("--d", d, "Embedding dimension");
    app->add_option("--heads", heads, "Number of morphism heads");
    app->add_option("--k-neg", k_neg, "Negatives per positive");
    app->add_option("--lr", lr, "Learning rate");
    app->add_option("--steps", steps, "Optimizer steps");
    app->add_option("--batch", batch, "Positive pairs per step");
    app->add_option("--optimizer", optimizer)->check(CLI::IsMember({"adam", "sgd"}));
    app->add_option("--aggregator", aggregator)->check(CLI::IsMember({"logsumexp", "mlp"}));
    app->add_option("--hidden", hidden, "MLP aggregator width");
    app->add_option("--rank", rank, "Low-rank morphisms (0 = dense)");
    app->add_flag("--euclidean", euclidean, "Unconstrained object vectors");
    app->add_option("--neg-exponent", neg_exponent, "Noise distribution exponent");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    c.d = d;
    c.n_mor = heads;
    c.k_neg = k_neg;
    c.lr = lr;
    c.steps = steps;
    c.batch = batch;
    c.seed = seed;
    c.optimizer = optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    c.aggregator = aggregator == "mlp" ? AggregatorKind::Mlp : AggregatorKind::LogSumExp;
    c.hidden = hidden;
    if (rank > 0) c.rank = rank;
    c.hypersphere = !euclidean;
    c.neg_exponent = neg_exponent;
    return c;
  }
};

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Categorical representation learning toolkit", "crl"};
  app.set_config("--config", "", "Structured-text config file (TOML/INI); flags override it");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::uint64_t seed = 0;
  std::string corpus_path, mode = "tokens", out_path;
  bool weighted = false;
  auto corpus_opts = [&](CLI::App* s) {
    s->add_option("--corpus", corpus_path, "Corpus file, one scope per line")->required();
    s->add_option("--mode", mode, "tokens | formula")->check(CLI::IsMember({"tokens", "formula"}));
    s->add_flag("--weighted", weighted, "Keep token multiplicities");
  };

  // pmi
  auto* pmi_cmd = app.add_subcommand("pmi", "Dense PMI table of a corpus");
  corpus_opts(pmi_cmd);
  pmi_cmd->add_option("--out", out_path, "Output CSV")->required();

  // pmi-embed
  int embed_k = 2;
  auto* embed_cmd = app.add_subcommand("pmi-embed", "PCA coordinates of the PMI matrix");
  corpus_opts(embed_cmd);
  embed_cmd->add_option("--k", embed_k, "Number of components");
  embed_cmd->add_option("--out", out_path, "Output CSV")->required();

  // train
  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a category on a corpus");
  corpus_opts(train_cmd);
  tf.add(train_cmd);
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--out", out_path, "Model file")->required();

  // align
  std::string src_path, tgt_path, gold_path, init = "spectral";
  int n_pairs = 15, f_steps = 1000, refresh = 50;
  double f_lambda = 1.0, f_lr = 1e-2;
  auto* align_cmd = app.add_subcommand("align", "Fit an orthogonal functor between two categories");
  align_cmd->add_option("--src", src_path, "Source model")->required();
  align_cmd->add_option("--tgt", tgt_path, "Target model")->required();
  align_cmd->add_option("--gold", gold_path, "Gold alignment CSV used to draw supervised pairs");
  align_cmd->add_option("--pairs", n_pairs, "Number of supervised pairs");
  align_cmd->add_option("--lambda", f_lambda, "Alignment loss weight");
  align_cmd->add_option("--steps", f_steps);
  align_cmd->add_option("--lr", f_lr);
  align_cmd->add_option("--refresh", refresh, "Head re-matching period");
  align_cmd->add_option("--init", init)->check(CLI::IsMember({"spectral", "random", "identity"}));
  align_cmd->add_option("--seed", seed);
  align_cmd->add_option("--out", out_path, "Functor model file")->required();

  // translate
  std::string functor_path, eval_path, report_path, token;
  int topk = 3;
  auto* translate_cmd = app.add_subcommand("translate", "Rank target translations through a functor");
  translate_cmd->add_option("--functor", functor_path, "Model file written by align")->required();
  translate_cmd->add_option("--k", topk, "Predictions per token");
  translate_cmd->add_option("--token", token, "Translate a single source token");
  translate_cmd->add_option("--out", out_path, "Predictions CSV (stdout if omitted)");
  translate_cmd->add_option("--eval", eval_path, "Gold alignment CSV; writes an evaluation report");
  translate_cmd->add_option("--report", report_path, "Evaluation report CSV");

  // fuse
  double mu = 1.0;
  int fu_steps = 500, fu_batch = 32, fu_k = 5;
  double fu_lr = 1e-2;
  bool raw = false;
  std::string model_path;
  auto* fuse_cmd = app.add_subcommand("fuse", "Train the fusion operator on a trained category");
  fuse_cmd->add_option("--model", model_path, "Trained category model")->required();
  corpus_opts(fuse_cmd);
  fuse_cmd->add_option("--steps", fu_steps);
  fuse_cmd->add_option("--lr", fu_lr);
  fuse_cmd->add_option("--mu", mu, "Associativity penalty weight");
  fuse_cmd->add_option("--batch", fu_batch);
  fuse_cmd->add_option("--k-neg", fu_k);
  fuse_cmd->add_flag("--raw", raw, "Do not renormalize fused vectors");
  fuse_cmd->add_option("--seed", seed);
  fuse_cmd->add_option("--out", out_path, "Model file with fusion operator")->required();

  // bootstrap
  double tau = 0.8;
  int rounds = 2;
  TrainFlags bf;
  bf.steps = 0;
  auto* boot_cmd = app.add_subcommand("bootstrap", "Multi-scale coarse-graining with composites");
  boot_cmd->add_option("--model", model_path, "Model file with a fusion operator")->required();
  corpus_opts(boot_cmd);
  boot_cmd->add_option("--tau", tau, "Link probability threshold");
  boot_cmd->add_option("--rounds", rounds);
  boot_cmd->add_option("--retrain-steps", bf.steps, "Training steps between rounds");
  boot_cmd->add_option("--lr", bf.lr);
  boot_cmd->add_option("--batch", bf.batch);
  boot_cmd->add_option("--k-neg", bf.k_neg);
  boot_cmd->add_flag("--raw", raw, "Do not renormalize fused vectors");
  boot_cmd->add_option("--seed", seed);
  boot_cmd->add_option("--out", out_path, "Output model; composites and corpus are written beside it")->required();

  // gen-synth
  int g_objects = 60, g_roles = 6, g_scopes = 4000, g_min = 2, g_max = 6;
  std::string twin_path, align_path;
  bool no_permute = false;
  std::uint64_t gen_seed = 42;
  auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic twin corpus pair");
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_option("--objects", g_objects);
  gen_cmd->add_option("--roles", g_roles);
  gen_cmd->add_option("--scopes", g_scopes);
  gen_cmd->add_option("--min-scope", g_min);
  gen_cmd->add_option("--max-scope", g_max);
  gen_cmd->add_flag("--no-permute", no_permute, "Twin labels follow source order");
  gen_cmd->add_option("--out", out_path, "Source corpus")->required();
  gen_cmd->add_option("--twin", twin_path, "Twin corpus")->required();
  gen_cmd->add_option("--align", align_path, "Gold alignment CSV")->required();

  // eval
  std::string pred_path;
  auto* eval_cmd = app.add_subcommand("eval", "Score a predictions CSV against a gold alignment");
  eval_cmd->add_option("--predictions", pred_path)->required();
  eval_cmd->add_option("--gold", gold_path)->required();
  eval_cmd->add_option("--k", topk);
  eval_cmd->add_option("--out", out_path, "Report CSV")->required();

  // grad-check
  int gc_configs = 100;
  double gc_h = 1e-5, gc_tol = 1e-4;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite-difference check of the analytic gradient");
  gc_cmd->add_option("--configs", gc_configs);
  gc_cmd->add_option("--step-size", gc_h, "Central-difference step");
  gc_cmd->add_option("--tol", gc_tol);
  gc_cmd->add_option("--seed", seed);

  // count-params
  std::vector<int> cp_objects;
  int cp_d = 16, cp_heads = 4, cp_rank = 0, cp_hidden = 0;
  bool cp_functor = false, cp_fusion = false;
  long long search_target = 0;
  auto* cp_cmd = app.add_subcommand("count-params", "Closed-form parameter count");
  cp_cmd->add_option("--model", model_path, "Count a model file");
  cp_cmd->add_option("--objects", cp_objects, "Object count per category (repeatable)");
  cp_cmd->add_option("--d", cp_d);
  cp_cmd->add_option("--heads", cp_heads);
  cp_cmd->add_option("--rank", cp_rank);
  cp_cmd->add_option("--hidden", cp_hidden, "MLP aggregator width (0 = logsumexp)");
  cp_cmd->add_flag("--functor", cp_functor);
  cp_cmd->add_flag("--fusion", cp_fusion);
  cp_cmd->add_option("--search", search_target, "List configurations closest to this total");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (pmi_cmd->parsed()) {
      const auto corpus = load_corpus(corpus_path, parse_mode(mode), weighted);
      const PmiTable table = pmi(pair_distribution(corpus));
      Mat dense = table.dense();
      for (Eigen::Index a = 0; a < dense.rows(); ++a)
        for (Eigen::Index b = 0; b < dense.cols(); ++b)
          if (!table.at(static_cast<TokenId>(a), static_cast<TokenId>(b))) dense(a, b) = std::nan("");
      write_file(out_path, coordinates_csv(corpus.vocab(), dense));
      write_manifest(*pmi_cmd, 0, out_path, {out_path});
    } else if (embed_cmd->parsed()) {
      const auto corpus = load_corpus(corpus_path, parse_mode(mode), weighted);
      write_file(out_path, coordinates_csv(corpus.vocab(), pmi_embed(corpus, embed_k)));
      write_manifest(*embed_cmd, 0, out_path, {out_path});
    } else if (train_cmd->parsed()) {
      const auto corpus = load_corpus(corpus_path, parse_mode(mode), weighted);
      const TrainConfig cfg = tf.config(seed);
      const TrainResult res = train_category(corpus, cfg);
      ModelBundle bundle;
      bundle.seed = seed;
      bundle.categories.push_back({fs::path(corpus_path).stem().string(), corpus.vocab(), res.model});
      save_model(bundle, out_path);
      std::string trace = "step,loss\n";
      for (std::size_t i = 0; i < res.loss_trace.size(); ++i)
        trace += std::to_string(i) + "," + g17(res.loss_trace[i]) + "\n";
      const std::string trace_path = with_suffix(out_path, ".trace.csv");
      write_file(trace_path, trace);
      const PmiFitReport fit = pmi_fit_report(res.model, pair_distribution(corpus), cfg.k_neg);
      out << "final_loss " << (res.loss_trace.empty() ? 0.0 : res.loss_trace.back()) << "\n"
          << "pmi_pearson " << fit.pearson << " shifted " << fit.pearson_shifted << " pairs " << fit.pairs << "\n";
      write_manifest(*train_cmd, seed, out_path, {out_path, trace_path});
    } else if (align_cmd->parsed()) {
      const NamedCategory src = first_category(load_model(src_path), src_path);
      const NamedCategory tgt = first_category(load_model(tgt_path), tgt_path);
      std::map<std::string, TokenId> src_ids, tgt_ids;
      for (TokenId i = 0; i < src.vocab.size(); ++i) src_ids.emplace(src.vocab[i], i);
      for (TokenId i = 0; i < tgt.vocab.size(); ++i) tgt_ids.emplace(tgt.vocab[i], i);

      std::vector<std::pair<TokenId, TokenId>> candidates;
      if (!gold_path.empty()) {
        for (const auto& [a, b] : load_alignment(gold_path)) {
          const auto ia = src_ids.find(a);
          const auto ib = tgt_ids.find(b);
          if (ia != src_ids.end() && ib != tgt_ids.end()) candidates.emplace_back(ia->second, ib->second);
        }
      } else {
        for (const auto& [name, id] : src_ids)
          if (const auto it = tgt_ids.find(name); it != tgt_ids.end()) candidates.emplace_back(id, it->second);
      }
      std::sort(candidates.begin(), candidates.end());
      if (n_pairs < 0 || candidates.size() < static_cast<std::size_t>(n_pairs))
        throw Error(Errc::UsageError, "only " + std::to_string(candidates.size()) +
                                          " alignable pairs available; pass --gold or lower --pairs");
      Rng rng(mix_seed(seed, 40));
      for (std::size_t i = 0; i < static_cast<std::size_t>(n_pairs); ++i)
        std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
      candidates.resize(static_cast<std::size_t>(n_pairs));
      std::sort(candidates.begin(), candidates.end());

      AlignmentSet aligned{candidates};
      FunctorConfig fc;
      fc.steps = f_steps;
      fc.lr = f_lr;
      fc.lambda = f_lambda;
      fc.refresh = refresh;
      fc.seed = seed;
      fc.init = init == "random" ? FunctorInit::Random : init == "identity" ? FunctorInit::Identity : FunctorInit::Spectral;
      const FunctorFit fit = train_functor(src.model, tgt.model, aligned, fc);

      ModelBundle bundle;
      bundle.seed = seed;
      bundle.categories = {src, tgt};
      bundle.functor = fit.model;
      save_model(bundle, out_path);
      std::string trace = "step,loss,orthogonality\n";
      for (std::size_t i = 0; i < fit.loss_trace.size(); ++i)
        trace += std::to_string(i) + "," + g17(fit.loss_trace[i]) + "," +
                 g17(i < fit.orthogonality_trace.size() ? fit.orthogonality_trace[i] : 0.0) + "\n";
      const std::string trace_path = with_suffix(out_path, ".trace.csv");
      write_file(trace_path, trace);
      out << "structure_loss " << structure_loss(fit.model.v, src.model, tgt.model, fit.model.matching) << "\n"
          << "alignment_loss " << alignment_loss(fit.model.v, src.model, tgt.model, aligned) << "\n";
      write_manifest(*align_cmd, seed, out_path, {out_path, trace_path});
    } else if (translate_cmd->parsed()) {
      const ModelBundle bundle = load_model(functor_path);
      if (!token.empty()) {
        if (!bundle.functor || bundle.categories.size() < 2)
          throw Error(Errc::InvalidArgument, "model file holds no functor");
        const auto& src = bundle.categories[0];
        const auto& tgt = bundle.categories[1];
        const auto it = std::find(src.vocab.begin(), src.vocab.end(), token);
        if (it == src.vocab.end()) throw Error(Errc::UnknownToken, "unknown source token '" + token + "'");
        const auto id = static_cast<TokenId>(it - src.vocab.begin());
        for (const auto& [b, score] : translate(*bundle.functor, src.model, tgt.model, id, topk))
          out << tgt.vocab[b] << "," << g17(score) << "\n";
        return 0;
      }
      const auto preds = predict_translations(bundle);
      std::vector<std::string> outputs;
      if (out_path.empty()) {
        out << predictions_csv(preds, topk);
      } else {
        write_file(out_path, predictions_csv(preds, topk));
        outputs.push_back(out_path);
      }
      if (!eval_path.empty()) {
        const EvalReport rep = eval_translation(preds, gold_map(eval_path), topk);
        if (report_path.empty()) report_path = out_path.empty() ? "translation_report.csv" : out_path + ".report.csv";
        write_file(report_path, rep.rows_csv());
        write_file(with_suffix(report_path, ".summary.csv"), rep.summary_csv());
        outputs.push_back(report_path);
        outputs.push_back(with_suffix(report_path, ".summary.csv"));
        out << rep.summary_csv();
      }
      if (!outputs.empty()) write_manifest(*translate_cmd, bundle.seed, outputs.front(), outputs);
    } else if (fuse_cmd->parsed()) {
      ModelBundle bundle = load_model(model_path);
      const NamedCategory cat = first_category(bundle, model_path);
      const auto corpus = load_corpus(corpus_path, parse_mode(mode), weighted);
      if (corpus.vocab() != cat.vocab) throw Error(Errc::ShapeMismatch, "corpus vocabulary differs from the model's");
      FusionConfig fc;
      fc.steps = fu_steps;
      fc.lr = fu_lr;
      fc.mu = mu;
      fc.batch = fu_batch;
      fc.k_neg = fu_k;
      fc.normalize = !raw;
      fc.seed = seed;
      const FusionFit fit = train_fusion(cat.model, corpus, fc);
      bundle.fusion = fit.op;
      bundle.seed = seed;
      save_model(bundle, out_path);
      std::string trace = "step,loss,concurrence,associativity\n";
      for (std::size_t i = 0; i < fit.loss_trace.size(); ++i)
        trace += std::to_string(i) + "," + g17(fit.loss_trace[i]) + "," + g17(fit.concurrence_trace[i]) + "," +
                 g17(fit.associativity_trace[i]) + "\n";
      const std::string trace_path = with_suffix(out_path, ".trace.csv");
      write_file(trace_path, trace);
      write_manifest(*fuse_cmd, seed, out_path, {out_path, trace_path});
    } else if (boot_cmd->parsed()) {
      const ModelBundle bundle = load_model(model_path);
      const NamedCategory cat = first_category(bundle, model_path);
      if (!bundle.fusion) throw Error(Errc::InvalidArgument, "'" + model_path + "' holds no fusion operator; run fuse");
      const auto corpus = load_corpus(corpus_path, parse_mode(mode), weighted);
      if (corpus.vocab() != cat.vocab) throw Error(Errc::ShapeMismatch, "corpus vocabulary differs from the model's");
      MultiScaleConfig mc;
      mc.rounds = rounds;
      mc.tau = tau;
      mc.normalize = !raw;
      mc.retrain = bf.config(seed);
      mc.retrain.d = static_cast<int>(cat.model.dim());
      mc.retrain.n_mor = static_cast<int>(cat.model.n_mor());
      mc.retrain.aggregator = cat.model.aggregator;
      mc.retrain.hypersphere = cat.model.hypersphere;
      mc.retrain.rank = cat.model.rank;
      if (cat.model.aggregator == AggregatorKind::Mlp) mc.retrain.hidden = static_cast<int>(cat.model.mlp.hidden());
      const MultiScaleResult res = bootstrap(cat.model, *bundle.fusion, corpus, mc);

      ModelBundle outb;
      outb.seed = seed;
      outb.categories.push_back({cat.name, res.corpus.vocab(), res.model});
      outb.fusion = bundle.fusion;
      save_model(outb, out_path);
      std::string composites;
      for (std::size_t r = 0; r < res.rounds.size(); ++r) {
        composites += res.rounds[r].to_text(res.corpus.vocab());
        out << "round " << (r + 1) << " composites " << res.rounds[r].entries.size() << "\n";
      }
      const std::string comp_path = with_suffix(out_path, ".composites.txt");
      const std::string corpus_out = with_suffix(out_path, ".corpus.txt");
      write_file(comp_path, composites);
      save_corpus(res.corpus, corpus_out);
      write_manifest(*boot_cmd, seed, out_path, {out_path, comp_path, corpus_out});
    } else if (gen_cmd->parsed()) {
      SyntheticSpec spec = standard_synthetic(g_objects, g_roles, g_scopes, gen_seed);
      spec.min_scope = g_min;
      spec.max_scope = g_max;
      spec.permute_twin = !no_permute;
      const SyntheticCorpus syn = gen_synthetic(spec);
      save_corpus(syn.source, out_path);
      save_corpus(syn.twin, twin_path);
      write_file(align_path, alignment_csv(syn));
      write_manifest(*gen_cmd, gen_seed, out_path, {out_path, twin_path, align_path});
    } else if (eval_cmd->parsed()) {
      const EvalReport rep = eval_translation(load_predictions(pred_path), gold_map(gold_path), topk);
      write_file(out_path, rep.rows_csv());
      write_file(with_suffix(out_path, ".summary.csv"), rep.summary_csv());
      out << rep.summary_csv();
      write_manifest(*eval_cmd, 0, out_path, {out_path, with_suffix(out_path, ".summary.csv")});
    } else if (gc_cmd->parsed()) {
      const GradCheckSummary s = grad_check_suite(gc_configs, gc_h, seed);
      out << "configs " << s.configs << " coordinates " << s.coordinates << " unreliable " << s.unreliable
          << " max_rel_error " << g17(s.max_rel_error) << "\n";
      if (!(s.max_rel_error < gc_tol)) {
        err << "gradient check failed: " << s.max_rel_error << " >= " << gc_tol << "\n";
        return 2;
      }
    } else if (cp_cmd->parsed()) {
      if (search_target > 0) {
        // Two 89-object categories plus a functor, the shape of the
        // bilingual setting; dense and low-rank heads.
        struct Cand {
          long long total;
          int d, heads, rank;
        };
        std::vector<Cand> cands;
        const int n_obj = cp_objects.empty() ? 89 : cp_objects.front();
        for (int d = 1; d <= 64; ++d)
          for (int h = 1; h <= 16; ++h)
            for (int r = 0; r <= d; ++r) {
              const long long per = static_cast<long long>(n_obj) * d +
                                    (r == 0 ? static_cast<long long>(h) * d * d : 2LL * h * r * d);
              cands.push_back({2 * per + static_cast<long long>(d) * d, d, h, r});
            }
        std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
          const long long da = std::llabs(a.total - search_target), db = std::llabs(b.total - search_target);
          if (da != db) return da < db;
          return std::tie(a.d, a.heads, a.rank) < std::tie(b.d, b.heads, b.rank);
        });
        out << "total,d,heads,rank,objects_per_category,categories,functor\n";
        for (std::size_t i = 0; i < std::min<std::size_t>(10, cands.size()); ++i)
          out << cands[i].total << "," << cands[i].d << "," << cands[i].heads << "," << cands[i].rank << "," << n_obj
              << ",2,1\n";
        return 0;
      }
      if (!model_path.empty()) {
        out << count_params(load_model(model_path)) << "\n";
        return 0;
      }
      ModelBundle b;
      for (int n : cp_objects) {
        CategoryModel m;
        m.objects.resize(n, cp_d);
        m.morphisms.assign(static_cast<std::size_t>(cp_heads), Mat(0, 0));
        if (cp_rank > 0) m.rank = cp_rank;
        if (cp_hidden > 0) {
          m.aggregator = AggregatorKind::Mlp;
          m.mlp.w1.resize(cp_hidden, cp_heads);
        }
        b.categories.push_back({"", {}, std::move(m)});
      }
      if (cp_functor) b.functor = FunctorModel{Mat(cp_d, cp_d), {}, 1.0, {}};
      if (cp_fusion) b.fusion = FusionOperator{Mat(cp_d, cp_d * cp_d)};
      out << count_params(b) << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == Errc::UsageError) {
      err << app.help();
      return 1;
    }
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run_command(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_command(args, std::cout, std::cerr);
}

}  // namespace crl
