#include "crl/evaluation.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace crl {

namespace {

const char* status_name(RowStatus s) {
  switch (s) {
    case RowStatus::Green: return "green";
    case RowStatus::Yellow: return "yellow";
    case RowStatus::Red: return "red";
    case RowStatus::Supervised: return "supervised";
  }
  return "red";
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

}  // namespace

EvalReport eval_translation(const std::vector<Prediction>& predictions,
                            const std::map<std::string, std::string>& truth, int k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  EvalReport rep;
  rep.k = k;
  std::size_t hit3 = 0;
  for (const auto& p : predictions) {
    EvalRow row;
    row.token = p.source;
    for (std::size_t i = 0; i < p.ranked.size() && i < static_cast<std::size_t>(k); ++i) row.top.push_back(p.ranked[i]);
    const auto it = truth.find(p.source);
    if (it == truth.end()) {
      if (!p.supervised) throw Error(Errc::MissingTruth, "no gold target for '" + p.source + "'");
    } else {
      for (std::size_t i = 0; i < p.ranked.size(); ++i)
        if (p.ranked[i] == it->second) {
          row.correct_rank = static_cast<int>(i) + 1;
          break;
        }
    }
    if (p.supervised) {
      row.status = RowStatus::Supervised;
      ++rep.supervised;
    } else {
      ++rep.evaluated;
      if (row.correct_rank == 1) {
        row.status = RowStatus::Green;
        ++rep.green;
      } else if (row.correct_rank > 1 && row.correct_rank <= k) {
        row.status = RowStatus::Yellow;
        ++rep.yellow;
      } else {
        ++rep.red;
      }
      if (row.correct_rank >= 1 && row.correct_rank <= 3) ++hit3;
    }
    rep.rows.push_back(std::move(row));
  }
  if (rep.evaluated > 0) {
    rep.top1 = static_cast<double>(rep.green) / static_cast<double>(rep.evaluated);
    rep.top3 = static_cast<double>(hit3) / static_cast<double>(rep.evaluated);
  }
  return rep;
}

std::string EvalReport::rows_csv() const {
  std::string out = "source_token";
  for (int i = 1; i <= k; ++i) out += ",rank" + std::to_string(i);
  out += ",correct_rank,status\n";
  for (const auto& r : rows) {
    out += r.token;
    for (int i = 0; i < k; ++i) out += "," + (static_cast<std::size_t>(i) < r.top.size() ? r.top[i] : std::string());
    out += "," + std::to_string(r.correct_rank) + "," + status_name(r.status) + "\n";
  }
  return out;
}

std::string EvalReport::summary_csv() const {
  return "top1,top3,green,yellow,red,evaluated,supervised\n" + fmt(top1) + "," + fmt(top3) + "," +
         std::to_string(green) + "," + std::to_string(yellow) + "," + std::to_string(red) + "," +
         std::to_string(evaluated) + "," + std::to_string(supervised) + "\n";
}

std::vector<Prediction> predict_translations(const ModelBundle& bundle) {
  if (!bundle.functor || bundle.categories.size() < 2)
    throw Error(Errc::InvalidArgument, "model file holds no functor");
  const auto& src = bundle.categories[0];
  const auto& tgt = bundle.categories[1];
  std::set<TokenId> supervised;
  for (const auto& [a, b] : bundle.functor->supervised.pairs) supervised.insert(a);
  const int n_tgt = static_cast<int>(tgt.model.n_obj());

  std::vector<Prediction> out;
  for (TokenId a = 0; a < src.model.n_obj(); ++a) {
    Prediction p;
    p.source = src.vocab.at(a);
    p.supervised = supervised.contains(a);
    for (const auto& [b, score] : translate(*bundle.functor, src.model, tgt.model, a, n_tgt))
      p.ranked.push_back(tgt.vocab.at(b));
    out.push_back(std::move(p));
  }
  return out;
}

std::string predictions_csv(const std::vector<Prediction>& predictions, int k) {
  std::string out = "source_token";
  for (int i = 1; i <= k; ++i) out += ",rank" + std::to_string(i);
  out += ",supervised\n";
  for (const auto& p : predictions) {
    out += p.source;
    for (int i = 0; i < k; ++i)
      out += "," + (static_cast<std::size_t>(i) < p.ranked.size() ? p.ranked[i] : std::string());
    out += p.supervised ? ",1\n" : ",0\n";
  }
  return out;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path.string() + "'");
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line_no == 1) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() < 3) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": too few columns");
    Prediction p;
    p.source = cells.front();
    p.supervised = cells.back() == "1";
    for (std::size_t i = 1; i + 1 < cells.size(); ++i)
      if (!cells[i].empty()) p.ranked.push_back(cells[i]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace crl
