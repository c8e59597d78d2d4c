#include "crl/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "crl/random.hpp"

namespace crl {

namespace {

class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : text_(text) {}

  ElementCounts parse() {
    ElementCounts out;
    parse_sequence(out, 0);
    if (pos_ != text_.size()) {
      if (text_[pos_] == ')') throw Error(Errc::UnbalancedParens, "unmatched ')' at " + where());
      throw Error(Errc::UnknownToken, "unexpected character at " + where());
    }
    return out;
  }

 private:
  // formula := term+ ; stops at ')' or end of input.
  void parse_sequence(ElementCounts& out, int depth) {
    std::size_t terms = 0;
    while (pos_ < text_.size() && text_[pos_] != ')') {
      parse_term(out, depth);
      ++terms;
    }
    if (terms == 0) {
      if (depth > 0 && pos_ >= text_.size()) throw Error(Errc::UnbalancedParens, "missing ')'");
      if (depth > 0) throw Error(Errc::ParseError, "empty group at " + where());
      throw Error(Errc::ParseError, "empty formula");
    }
  }

  void parse_term(ElementCounts& out, int depth) {
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      ElementCounts group;
      parse_sequence(group, depth + 1);
      if (pos_ >= text_.size()) throw Error(Errc::UnbalancedParens, "missing ')'");
      ++pos_;  // ')'
      const std::uint64_t mult = parse_count();
      for (auto& [symbol, count] : group) add(out, symbol, count * mult);
      return;
    }
    if (std::isupper(static_cast<unsigned char>(c))) {
      std::string symbol(1, c);
      ++pos_;
      if (pos_ < text_.size() && std::islower(static_cast<unsigned char>(text_[pos_])))
        symbol.push_back(text_[pos_++]);
      add(out, symbol, parse_count());
      return;
    }
    throw Error(Errc::UnknownToken, "unexpected character at " + where());
  }

  std::uint64_t parse_count() {
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) return 1;
    std::uint64_t value = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + static_cast<std::uint64_t>(text_[pos_] - '0');
      if (value > (std::uint64_t{1} << 40)) throw Error(Errc::ParseError, "count too large");
      ++pos_;
    }
    if (value == 0) throw Error(Errc::ZeroCount, "zero count at " + where());
    return value;
  }

  static void add(ElementCounts& out, const std::string& symbol, std::uint64_t count) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == symbol; });
    if (it == out.end())
      out.emplace_back(symbol, count);
    else
      it->second += count;
  }

  std::string where() const { return "position " + std::to_string(pos_); }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ElementCounts parse_formula(std::string_view text) { return FormulaParser(text).parse(); }

std::string canonical_formula(const ElementCounts& counts) {
  std::string out;
  for (const auto& [symbol, count] : as_multiset(counts)) {
    out += symbol;
    if (count != 1) out += std::to_string(count);
  }
  return out;
}

std::map<std::string, std::uint64_t> as_multiset(const ElementCounts& counts) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [symbol, count] : counts) out[symbol] += count;
  return out;
}

bool Scope::contains(TokenId id) const {
  return std::any_of(items.begin(), items.end(), [&](const auto& it) { return it.first == id; });
}

TokenId ConcurrenceCorpus::intern(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(vocab_.size());
  vocab_.push_back(token);
  index_.emplace(token, id);
  return id;
}

std::optional<TokenId> ConcurrenceCorpus::find(const std::string& token) const {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  return std::nullopt;
}

void ConcurrenceCorpus::add_scope(const std::vector<std::pair<TokenId, std::uint32_t>>& items,
                                  bool weighted) {
  Scope scope;
  for (const auto& [id, count] : items) {
    if (id >= vocab_.size()) throw Error(Errc::IndexOutOfRange, "scope token id out of range");
    if (count == 0) continue;
    auto it = std::find_if(scope.items.begin(), scope.items.end(),
                           [&](const auto& e) { return e.first == id; });
    if (it == scope.items.end())
      scope.items.emplace_back(id, weighted ? count : 1u);
    else if (weighted)
      it->second += count;
  }
  if (!scope.items.empty()) scopes_.push_back(std::move(scope));
}

std::string ConcurrenceCorpus::to_text() const {
  std::string out;
  for (const auto& scope : scopes_) {
    bool first = true;
    for (const auto& [id, count] : scope.items) {
      for (std::uint32_t c = 0; c < count; ++c) {
        if (!first) out += ' ';
        out += vocab_[id];
        first = false;
      }
    }
    out += '\n';
  }
  return out;
}

ConcurrenceCorpus corpus_from_text(std::string_view text, CorpusMode mode, bool weighted) {
  ConcurrenceCorpus corpus;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) continue;

    std::vector<std::pair<TokenId, std::uint32_t>> items;
    if (mode == CorpusMode::Tokens) {
      std::istringstream in{std::string(line)};
      std::string token;
      while (in >> token) items.emplace_back(corpus.intern(token), 1u);
    } else {
      ElementCounts counts;
      try {
        counts = parse_formula(line);
      } catch (const Error& e) {
        throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
      }
      for (const auto& [symbol, count] : counts) {
        if (count > 0xFFFFFFFFull)
          throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": count too large");
        items.emplace_back(corpus.intern(symbol), static_cast<std::uint32_t>(count));
      }
    }
    corpus.add_scope(items, weighted);
  }
  return corpus;
}

ConcurrenceCorpus load_corpus(const std::filesystem::path& path, CorpusMode mode, bool weighted) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return corpus_from_text(buf.str(), mode, weighted);
}

void save_corpus(const ConcurrenceCorpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << corpus.to_text();
  if (!out) throw Error(Errc::IoError, "write failed: " + path.string());
}

double PairStats::p(TokenId a, TokenId b) const {
  auto it = std::lower_bound(joint.begin(), joint.end(), std::pair{a, b},
                             [](const PairEntry& e, const std::pair<TokenId, TokenId>& key) {
                               return std::pair{e.a, e.b} < key;
                             });
  if (it != joint.end() && it->a == a && it->b == b) return it->p;
  return 0.0;
}

bool PairStats::observed(TokenId a, TokenId b) const { return p(a, b) > 0.0; }

PairStats pair_distribution(const ConcurrenceCorpus& corpus) {
  std::map<std::pair<TokenId, TokenId>, double> weights;
  double total = 0.0;
  for (const auto& scope : corpus.scopes()) {
    for (const auto& [a, ca] : scope.items) {
      for (const auto& [b, cb] : scope.items) {
        if (a == b) continue;
        const double w = static_cast<double>(ca) * static_cast<double>(cb);
        weights[{a, b}] += w;
        total += w;
      }
    }
  }
  if (total <= 0.0) throw Error(Errc::NoPairs, "no scope has two distinct tokens");

  PairStats stats;
  stats.vocab_size = corpus.vocab_size();
  stats.marginal = Vec::Zero(static_cast<Eigen::Index>(stats.vocab_size));
  stats.joint.reserve(weights.size());
  for (const auto& [key, w] : weights) {
    const double p = w / total;
    stats.joint.push_back({key.first, key.second, p});
    stats.marginal(key.first) += p;
  }
  return stats;
}

PmiTable::PmiTable(std::vector<PmiEntry> entries, std::size_t vocab_size)
    : entries_(std::move(entries)), vocab_size_(vocab_size) {}

std::optional<double> PmiTable::at(TokenId a, TokenId b) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), std::pair{a, b},
                             [](const PmiEntry& e, const std::pair<TokenId, TokenId>& key) {
                               return std::pair{e.a, e.b} < key;
                             });
  if (it != entries_.end() && it->a == a && it->b == b) return it->value;
  return std::nullopt;
}

Mat PmiTable::dense() const {
  const auto n = static_cast<Eigen::Index>(vocab_size_);
  Mat out = Mat::Zero(n, n);
  for (const auto& e : entries_) out(e.a, e.b) = e.value;
  return out;
}

PmiTable pmi(const PairStats& stats) {
  std::vector<PmiEntry> entries;
  entries.reserve(stats.joint.size());
  for (const auto& e : stats.joint) {
    // log p(a) + log p(b) is commutative, so PMI(a,b) == PMI(b,a) bitwise.
    const double value =
        std::log(e.p) - (std::log(stats.marginal(e.a)) + std::log(stats.marginal(e.b)));
    entries.push_back({e.a, e.b, value});
  }
  return PmiTable(std::move(entries), stats.vocab_size);
}

Mat pmi_embed(const ConcurrenceCorpus& corpus, int k) {
  const PmiTable table = pmi(pair_distribution(corpus));
  return pca_project(table.dense(), k);
}

std::string coordinates_csv(const std::vector<std::string>& tokens, const Mat& values) {
  std::string out = "token";
  for (Eigen::Index c = 0; c < values.cols(); ++c) out += ",c" + std::to_string(c + 1);
  out += '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out += tokens.at(static_cast<std::size_t>(r));
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out += ',';
      if (!std::isnan(values(r, c))) out += format_double(values(r, c));
    }
    out += '\n';
  }
  return out;
}

std::vector<std::vector<bool>> ring_compatibility(int n_roles) {
  std::vector<std::vector<bool>> compat(static_cast<std::size_t>(n_roles),
                                        std::vector<bool>(static_cast<std::size_t>(n_roles)));
  for (int r = 0; r < n_roles; ++r) {
    for (int step : {-1, 0, 1}) {
      const int s = ((r + step) % n_roles + n_roles) % n_roles;
      compat[static_cast<std::size_t>(r)][static_cast<std::size_t>(s)] = true;
    }
  }
  return compat;
}

SyntheticSpec standard_synthetic(int n_obj, int n_roles, int n_scopes, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_obj = n_obj;
  spec.n_roles = n_roles;
  spec.role_compatibility = ring_compatibility(n_roles);
  spec.n_scopes = n_scopes;
  spec.seed = seed;
  return spec;
}

namespace {

void validate(const SyntheticSpec& spec) {
  if (spec.n_roles < 1 || spec.n_obj < spec.n_roles)
    throw Error(Errc::InvalidSpec, "need 1 <= n_roles <= n_obj");
  if (spec.n_roles > 30) throw Error(Errc::InvalidSpec, "at most 30 roles supported");
  if (spec.min_scope < 2 || spec.max_scope < spec.min_scope)
    throw Error(Errc::InvalidSpec, "scope sizes must satisfy 2 <= min <= max");
  if (spec.n_scopes < 1) throw Error(Errc::InvalidSpec, "n_scopes must be positive");
  if (spec.source_prefix == spec.twin_prefix)
    throw Error(Errc::InvalidSpec, "source and twin prefixes must differ");
  const auto n = static_cast<std::size_t>(spec.n_roles);
  if (spec.role_compatibility.size() != n) throw Error(Errc::InvalidSpec, "compatibility shape");
  for (std::size_t r = 0; r < n; ++r) {
    if (spec.role_compatibility[r].size() != n) throw Error(Errc::InvalidSpec, "compatibility shape");
    bool linked = false;
    for (std::size_t s = 0; s < n; ++s) {
      if (spec.role_compatibility[r][s] != spec.role_compatibility[s][r])
        throw Error(Errc::InvalidSpec, "compatibility must be symmetric");
      if (spec.role_compatibility[r][s] && (s != r || n == 1)) linked = true;
    }
    if (!linked) throw Error(Errc::InvalidSpec, "role " + std::to_string(r) + " is isolated");
  }
}

template <typename T>
void shuffle(std::vector<T>& xs, Rng& rng) {
  for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[rng.below(i)]);
}

// Distinct role subsets, smallest subsets first, each size tier in seeded
// order. Cycles when n_obj exceeds the number of non-empty subsets.
std::vector<std::vector<int>> assign_roles(int n_obj, int n_roles, Rng& rng) {
  std::vector<std::vector<std::uint32_t>> tiers(static_cast<std::size_t>(n_roles) + 1);
  std::size_t needed = static_cast<std::size_t>(n_obj);
  std::vector<std::uint32_t> chosen;
  for (int size = 1; size <= n_roles && chosen.size() < needed; ++size) {
    std::vector<std::uint32_t> tier;
    // Gosper's hack over masks with `size` bits set.
    std::uint32_t mask = (1u << size) - 1;
    const std::uint32_t limit = 1u << n_roles;
    while (mask < limit) {
      tier.push_back(mask);
      const std::uint32_t c = mask & (0u - mask);
      const std::uint32_t r = mask + c;
      mask = (((r ^ mask) >> 2) / c) | r;
    }
    shuffle(tier, rng);
    for (auto m : tier) {
      if (chosen.size() == needed) break;
      chosen.push_back(m);
    }
  }
  const std::size_t distinct = chosen.size();
  for (std::size_t i = distinct; i < needed; ++i) chosen.push_back(chosen[i % distinct]);
  shuffle(chosen, rng);

  std::vector<std::vector<int>> roles(needed);
  for (std::size_t i = 0; i < needed; ++i)
    for (int r = 0; r < n_roles; ++r)
      if (chosen[i] & (1u << r)) roles[i].push_back(r);
  return roles;
}

std::string label(const std::string& prefix, std::size_t index, std::size_t count) {
  std::string digits = std::to_string(index);
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  if (digits.size() < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

}  // namespace

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const auto n_obj = static_cast<std::size_t>(spec.n_obj);
  const auto n_roles = static_cast<std::size_t>(spec.n_roles);

  Rng role_rng(mix_seed(spec.seed, 1));
  Rng walk_rng(mix_seed(spec.seed, 2));
  Rng perm_rng(mix_seed(spec.seed, 3));

  SyntheticCorpus out;
  out.object_roles = assign_roles(spec.n_obj, spec.n_roles, role_rng);

  std::vector<std::vector<int>> members(n_roles);
  for (std::size_t i = 0; i < n_obj; ++i)
    for (int r : out.object_roles[i]) members[static_cast<std::size_t>(r)].push_back(static_cast<int>(i));
  std::vector<std::vector<int>> neighbours(n_roles);
  for (std::size_t r = 0; r < n_roles; ++r)
    for (std::size_t s = 0; s < n_roles; ++s)
      if (spec.role_compatibility[r][s]) neighbours[r].push_back(static_cast<int>(s));

  std::vector<std::size_t> perm(n_obj);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (spec.permute_twin) shuffle(perm, perm_rng);

  const auto span = static_cast<std::uint64_t>(spec.max_scope - spec.min_scope + 1);
  std::vector<std::vector<std::size_t>> object_scopes;
  object_scopes.reserve(static_cast<std::size_t>(spec.n_scopes));
  for (int s = 0; s < spec.n_scopes; ++s) {
    const auto length = static_cast<std::size_t>(spec.min_scope) + walk_rng.below(span);
    std::vector<int> walk;
    std::vector<std::size_t> objects;
    auto role = static_cast<std::size_t>(walk_rng.below(n_roles));
    for (std::size_t step = 0; step < length; ++step) {
      if (step > 0) {
        const auto& nb = neighbours[role];
        role = static_cast<std::size_t>(nb[walk_rng.below(nb.size())]);
      }
      walk.push_back(static_cast<int>(role));
      const auto& pool = members[role];
      objects.push_back(static_cast<std::size_t>(pool[walk_rng.below(pool.size())]));
    }
    out.walks.push_back(std::move(walk));
    object_scopes.push_back(std::move(objects));
  }

  std::vector<TokenId> twin_of_object(n_obj, 0);
  std::vector<bool> seen(n_obj, false);
  std::vector<TokenId> source_of_object(n_obj, 0);
  for (const auto& objects : object_scopes) {
    std::vector<std::pair<TokenId, std::uint32_t>> src_items;
    std::vector<std::pair<TokenId, std::uint32_t>> twin_items;
    for (std::size_t obj : objects) {
      if (!seen[obj]) {
        seen[obj] = true;
        source_of_object[obj] = out.source.intern(label(spec.source_prefix, obj, n_obj));
        twin_of_object[obj] = out.twin.intern(label(spec.twin_prefix, perm[obj], n_obj));
      }
      src_items.emplace_back(source_of_object[obj], 1u);
      twin_items.emplace_back(twin_of_object[obj], 1u);
    }
    out.source.add_scope(src_items, false);
    out.twin.add_scope(twin_items, false);
  }

  out.alignment.assign(out.source.vocab_size(), 0);
  for (std::size_t obj = 0; obj < n_obj; ++obj)
    if (seen[obj]) out.alignment[source_of_object[obj]] = twin_of_object[obj];
  return out;
}

std::string alignment_csv(const SyntheticCorpus& synthetic) {
  std::string out;
  for (std::size_t i = 0; i < synthetic.alignment.size(); ++i)
    out += synthetic.source.vocab()[i] + "," + synthetic.twin.vocab()[synthetic.alignment[i]] + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> load_alignment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected source,target");
    pairs.emplace_back(std::string(trim(line.substr(0, comma))),
                       std::string(trim(line.substr(comma + 1))));
  }
  return pairs;
}

}  // namespace crl
