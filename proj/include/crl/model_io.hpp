#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "crl/category.hpp"
#include "crl/functor.hpp"
#include "crl/fusion.hpp"

namespace crl {

struct NamedCategory {
  std::string name;
  std::vector<std::string> vocab;  // vocab[i] labels objects row i
  CategoryModel model;
};

/// Everything one model file holds. A functor maps categories[0] to
/// categories[1].
struct ModelBundle {
  std::vector<NamedCategory> categories;
  std::optional<FunctorModel> functor;
  std::optional<FusionOperator> fusion;
  std::uint64_t seed = 0;
};

inline constexpr char kModelMagic[4] = {'C', 'R', 'L', '1'};
inline constexpr int kModelVersion = 1;

/// "CRL1", u32 LE header length, JSON header, row-major f64 LE payload.
std::string serialize_model(const ModelBundle& bundle);
ModelBundle deserialize_model(std::string_view bytes);

void save_model(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_model(const std::filesystem::path& path);

std::int64_t count_params(const CategoryModel& model);
std::int64_t count_params(const ModelBundle& bundle);

}  // namespace crl
