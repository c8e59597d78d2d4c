#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crl/linalg.hpp"

namespace crl {

using TokenId = std::uint32_t;

/// Element symbol -> count, in order of first appearance in the formula.
using ElementCounts = std::vector<std::pair<std::string, std::uint64_t>>;

/// formula := term+ ; term := element count? | '(' formula ')' count?
/// element := [A-Z][a-z]? ; count := integer >= 1
ElementCounts parse_formula(std::string_view text);

/// Serializes counts in alphabetical element order ("ClNa", "H2O4S").
std::string canonical_formula(const ElementCounts& counts);

std::map<std::string, std::uint64_t> as_multiset(const ElementCounts& counts);

/// One concurrence scope: distinct token ids with positive multiplicities.
struct Scope {
  std::vector<std::pair<TokenId, std::uint32_t>> items;

  std::size_t distinct() const { return items.size(); }
  bool contains(TokenId id) const;
};

class ConcurrenceCorpus {
 public:
  ConcurrenceCorpus() = default;

  /// Returns the id of `token`, appending it to the vocabulary if new.
  TokenId intern(const std::string& token);
  std::optional<TokenId> find(const std::string& token) const;

  /// Adds a scope from (token, count) pairs. Repeated tokens accumulate. With
  /// `weighted == false` every multiplicity collapses to 1. Empty scopes are
  /// ignored.
  void add_scope(const std::vector<std::pair<TokenId, std::uint32_t>>& items, bool weighted);

  const std::vector<std::string>& vocab() const { return vocab_; }
  const std::vector<Scope>& scopes() const { return scopes_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  /// One line per scope, tokens separated by single spaces, repeated
  /// `count` times.
  std::string to_text() const;

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<Scope> scopes_;
};

enum class CorpusMode { Tokens, Formula };

ConcurrenceCorpus load_corpus(const std::filesystem::path& path, CorpusMode mode, bool weighted);
ConcurrenceCorpus corpus_from_text(std::string_view text, CorpusMode mode, bool weighted);
void save_corpus(const ConcurrenceCorpus& corpus, const std::filesystem::path& path);

struct PairEntry {
  TokenId a;
  TokenId b;
  double p;
};

/// Joint distribution over ordered pairs of distinct concurrent tokens.
struct PairStats {
  std::size_t vocab_size = 0;
  std::vector<PairEntry> joint;  // sorted by (a, b); observed support only
  Vec marginal;                  // p(a) = sum_b p(a, b)

  /// p(a, b), zero off the support.
  double p(TokenId a, TokenId b) const;
  bool observed(TokenId a, TokenId b) const;
};

PairStats pair_distribution(const ConcurrenceCorpus& corpus);

struct PmiEntry {
  TokenId a;
  TokenId b;
  double value;
};

/// PMI on the observed support; unobserved pairs are simply absent.
class PmiTable {
 public:
  explicit PmiTable(std::vector<PmiEntry> entries, std::size_t vocab_size);

  std::optional<double> at(TokenId a, TokenId b) const;
  const std::vector<PmiEntry>& entries() const { return entries_; }
  std::size_t vocab_size() const { return vocab_size_; }

  /// Dense symmetric matrix with unobserved cells set to 0.
  Mat dense() const;

 private:
  std::vector<PmiEntry> entries_;
  std::size_t vocab_size_;
};

PmiTable pmi(const PairStats& stats);

/// k leading principal coordinates of the dense PMI matrix (n_vocab x k).
Mat pmi_embed(const ConcurrenceCorpus& corpus, int k);

/// CSV with header `token,c1..ck`, 17 significant digits, empty cells for
/// missing values (NaN entries in `values`).
std::string coordinates_csv(const std::vector<std::string>& tokens, const Mat& values);

struct SyntheticSpec {
  int n_obj = 60;
  int n_roles = 6;
  std::vector<std::vector<bool>> role_compatibility;  // n_roles x n_roles, symmetric
  int min_scope = 2;
  int max_scope = 6;
  int n_scopes = 4000;
  std::uint64_t seed = 42;
  bool permute_twin = true;  // false: twin labels follow source order
  std::string source_prefix = "x";
  std::string twin_prefix = "y";
};

/// Ring compatibility: every role is compatible with itself and its two
/// ring neighbours.
std::vector<std::vector<bool>> ring_compatibility(int n_roles);

/// Standard synthetic spec with ring compatibility.
SyntheticSpec standard_synthetic(int n_obj, int n_roles, int n_scopes, std::uint64_t seed);

struct SyntheticCorpus {
  ConcurrenceCorpus source;
  ConcurrenceCorpus twin;
  /// alignment[i] = twin token id of source token id i.
  std::vector<TokenId> alignment;
  /// Role memberships of each source object.
  std::vector<std::vector<int>> object_roles;
  /// Role visited at each walk step, per scope.
  std::vector<std::vector<int>> walks;
};

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

/// Comma-separated `source_token,target_token` lines.
std::string alignment_csv(const SyntheticCorpus& synthetic);
std::vector<std::pair<std::string, std::string>> load_alignment(const std::filesystem::path& path);

}  // namespace crl
