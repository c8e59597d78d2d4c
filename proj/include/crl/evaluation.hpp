#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "crl/model_io.hpp"

namespace crl {

struct Prediction {
  std::string source;
  std::vector<std::string> ranked;  // best first
  bool supervised = false;
};

enum class RowStatus { Green, Yellow, Red, Supervised };

struct EvalRow {
  std::string token;
  std::vector<std::string> top;  // first k predictions
  /// 1-based position of the true target in the ranking, 0 if absent.
  int correct_rank = 0;
  RowStatus status = RowStatus::Red;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::size_t evaluated = 0;
  std::size_t supervised = 0;
  std::size_t green = 0;
  std::size_t yellow = 0;
  std::size_t red = 0;
  double top1 = 0.0;
  double top3 = 0.0;
  int k = 3;

  /// `source_token,rank1..rankk,correct_rank,status`
  std::string rows_csv() const;
  std::string summary_csv() const;
};

/// Green: truth at rank 1. Yellow: truth within ranks 2..k. Red otherwise.
/// Supervised rows are reported but excluded from every count and rate.
EvalReport eval_translation(const std::vector<Prediction>& predictions,
                            const std::map<std::string, std::string>& truth, int k = 3);

/// Full rankings of every object of categories[0] through the bundle's functor.
std::vector<Prediction> predict_translations(const ModelBundle& bundle);

std::string predictions_csv(const std::vector<Prediction>& predictions, int k);
std::vector<Prediction> load_predictions(const std::filesystem::path& path);

}  // namespace crl
