#include "crl/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace crl {

namespace {

using nlohmann::json;

struct Section {
  std::string name;
  Eigen::Index rows;
  Eigen::Index cols;
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

double get_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

template <typename Derived>
void put_matrix(std::string& out, const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
}

const char* aggregator_name(AggregatorKind k) { return k == AggregatorKind::Mlp ? "mlp" : "logsumexp"; }

AggregatorKind parse_aggregator(const std::string& s) {
  if (s == "logsumexp") return AggregatorKind::LogSumExp;
  if (s == "mlp") return AggregatorKind::Mlp;
  throw Error(Errc::ShapeMismatch, "unknown aggregator '" + s + "'");
}

// Payload layout, shared by writer and reader so the two cannot drift.
std::vector<Section> layout(const ModelBundle& b) {
  std::vector<Section> s;
  for (std::size_t i = 0; i < b.categories.size(); ++i) {
    const auto& m = b.categories[i].model;
    const std::string p = "c" + std::to_string(i) + ".";
    const Eigen::Index d = m.dim();
    s.push_back({p + "objects", static_cast<Eigen::Index>(m.n_obj()), d});
    for (std::size_t f = 0; f < m.n_mor(); ++f) {
      if (m.rank) {
        s.push_back({p + "query" + std::to_string(f), *m.rank, d});
        s.push_back({p + "key" + std::to_string(f), *m.rank, d});
      } else {
        s.push_back({p + "morphism" + std::to_string(f), d, d});
      }
    }
    if (m.aggregator == AggregatorKind::Mlp) {
      const Eigen::Index h = m.mlp.hidden();
      s.push_back({p + "mlp.w1", h, static_cast<Eigen::Index>(m.n_mor())});
      s.push_back({p + "mlp.b1", h, 1});
      s.push_back({p + "mlp.w2", h, 1});
      s.push_back({p + "mlp.b2", 1, 1});
    }
  }
  if (b.functor) s.push_back({"functor.v", b.functor->v.rows(), b.functor->v.cols()});
  if (b.fusion) s.push_back({"fusion.theta", b.fusion->theta.rows(), b.fusion->theta.cols()});
  return s;
}

json header_of(const ModelBundle& b) {
  json h;
  h["format"] = "CRL";
  h["version"] = kModelVersion;
  h["seed"] = b.seed;
  const Eigen::Index d = b.categories.empty() ? 0 : b.categories.front().model.dim();
  h["dim"] = d;
  h["n_obj"] = b.categories.empty() ? 0 : b.categories.front().model.n_obj();
  h["n_mor"] = b.categories.empty() ? 0 : b.categories.front().model.n_mor();
  json cats = json::array();
  for (const auto& c : b.categories) {
    const auto& m = c.model;
    json j;
    j["name"] = c.name;
    j["dim"] = m.dim();
    j["n_obj"] = m.n_obj();
    j["n_mor"] = m.n_mor();
    j["aggregator"] = aggregator_name(m.aggregator);
    j["hidden"] = m.aggregator == AggregatorKind::Mlp ? m.mlp.hidden() : 0;
    j["hypersphere"] = m.hypersphere;
    j["rank"] = m.rank ? json(*m.rank) : json(nullptr);
    j["vocab"] = c.vocab;
    cats.push_back(std::move(j));
  }
  h["categories"] = std::move(cats);
  if (b.functor) {
    json f;
    f["matching"] = b.functor->matching;
    f["lambda"] = b.functor->lambda;
    json pairs = json::array();
    for (const auto& [a, t] : b.functor->supervised.pairs) pairs.push_back({a, t});
    f["supervised"] = std::move(pairs);
    h["functor"] = std::move(f);
  }
  h["fusion"] = static_cast<bool>(b.fusion);
  json sections = json::array();
  std::size_t offset = 0;
  for (const auto& s : layout(b)) {
    sections.push_back({{"name", s.name}, {"offset", offset}, {"rows", s.rows}, {"cols", s.cols}});
    offset += static_cast<std::size_t>(s.rows * s.cols) * 8;
  }
  h["sections"] = std::move(sections);
  return h;
}

void check_category(const NamedCategory& c) {
  const auto& m = c.model;
  if (!c.vocab.empty() && c.vocab.size() != m.n_obj())
    throw Error(Errc::ShapeMismatch, "vocabulary size differs from object count");
  for (const auto& mf : m.morphisms)
    if (mf.rows() != m.dim() || mf.cols() != m.dim()) throw Error(Errc::ShapeMismatch, "morphism is not d x d");
}

}  // namespace

std::string serialize_model(const ModelBundle& bundle) {
  for (const auto& c : bundle.categories) check_category(c);
  const std::string header = header_of(bundle).dump();
  std::string out(kModelMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto& c : bundle.categories) {
    const auto& m = c.model;
    put_matrix(out, m.objects);
    for (std::size_t f = 0; f < m.n_mor(); ++f) {
      if (m.rank) {
        put_matrix(out, m.queries[f]);
        put_matrix(out, m.keys[f]);
      } else {
        put_matrix(out, m.morphisms[f]);
      }
    }
    if (m.aggregator == AggregatorKind::Mlp) {
      put_matrix(out, m.mlp.w1);
      put_matrix(out, m.mlp.b1);
      put_matrix(out, m.mlp.w2);
      put_f64(out, m.mlp.b2);
    }
  }
  if (bundle.functor) put_matrix(out, bundle.functor->v);
  if (bundle.fusion) put_matrix(out, bundle.fusion->theta);
  return out;
}

ModelBundle deserialize_model(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kModelMagic, 4) != 0)
    throw Error(Errc::BadMagic, "not a CRL1 model file");
  if (bytes.size() < 8) throw Error(Errc::TruncatedPayload, "file ends inside the header length");
  const std::uint32_t header_len = get_u32(bytes.substr(4, 4));
  if (bytes.size() - 8 < header_len) throw Error(Errc::TruncatedPayload, "file ends inside the header");

  json h;
  try {
    h = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw Error(Errc::ShapeMismatch, std::string("malformed header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(8 + header_len);

  ModelBundle b;
  std::vector<json> declared;
  try {
    if (h.at("format") != "CRL" || h.at("version") != kModelVersion)
      throw Error(Errc::BadMagic, "unsupported format version");
    b.seed = h.at("seed").get<std::uint64_t>();
    for (const auto& j : h.at("categories")) {
      NamedCategory c;
      c.name = j.at("name").get<std::string>();
      c.vocab = j.at("vocab").get<std::vector<std::string>>();
      auto& m = c.model;
      const auto d = j.at("dim").get<Eigen::Index>();
      const auto n_obj = j.at("n_obj").get<Eigen::Index>();
      const auto n_mor = j.at("n_mor").get<std::size_t>();
      if (d < 0 || n_obj < 0) throw Error(Errc::ShapeMismatch, "negative shape");
      m.aggregator = parse_aggregator(j.at("aggregator").get<std::string>());
      m.hypersphere = j.at("hypersphere").get<bool>();
      if (!j.at("rank").is_null()) m.rank = j.at("rank").get<int>();
      m.objects.resize(n_obj, d);
      m.morphisms.assign(n_mor, Mat::Zero(d, d));
      if (m.rank) {
        m.queries.assign(n_mor, Mat(*m.rank, d));
        m.keys.assign(n_mor, Mat(*m.rank, d));
      }
      if (m.aggregator == AggregatorKind::Mlp) {
        const auto hidden = j.at("hidden").get<Eigen::Index>();
        m.mlp.w1.resize(hidden, static_cast<Eigen::Index>(n_mor));
        m.mlp.b1.resize(hidden);
        m.mlp.w2.resize(hidden);
      }
      if (!c.vocab.empty() && c.vocab.size() != static_cast<std::size_t>(n_obj))
        throw Error(Errc::ShapeMismatch, "vocabulary size differs from object count");
      b.categories.push_back(std::move(c));
    }
    if (h.contains("functor")) {
      const auto& f = h.at("functor");
      FunctorModel fm;
      fm.matching = f.at("matching").get<HeadMatching>();
      fm.lambda = f.at("lambda").get<double>();
      for (const auto& p : f.at("supervised"))
        fm.supervised.pairs.emplace_back(p.at(0).get<TokenId>(), p.at(1).get<TokenId>());
      if (b.categories.size() < 2) throw Error(Errc::ShapeMismatch, "functor needs two categories");
      const auto d = b.categories[0].model.dim();
      fm.v.resize(d, d);
      b.functor = std::move(fm);
    }
    if (h.at("fusion").get<bool>()) {
      if (b.categories.empty()) throw Error(Errc::ShapeMismatch, "fusion needs a category");
      const auto d = b.categories[0].model.dim();
      b.fusion = FusionOperator{Mat(d, d * d)};
    }
    declared = h.at("sections").get<std::vector<json>>();
  } catch (const json::exception& e) {
    throw Error(Errc::ShapeMismatch, std::string("malformed header: ") + e.what());
  }

  const auto expected = layout(b);
  if (declared.size() != expected.size()) throw Error(Errc::ShapeMismatch, "section count differs from shapes");
  std::size_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& s = expected[i];
    try {
      if (declared[i].at("name") != s.name || declared[i].at("rows") != s.rows || declared[i].at("cols") != s.cols ||
          declared[i].at("offset") != offset)
        throw Error(Errc::ShapeMismatch, "section '" + s.name + "' does not match declared shapes");
    } catch (const json::exception& e) {
      throw Error(Errc::ShapeMismatch, std::string("malformed section: ") + e.what());
    }
    offset += static_cast<std::size_t>(s.rows * s.cols) * 8;
  }
  if (payload.size() < offset) throw Error(Errc::TruncatedPayload, "payload shorter than declared shapes");
  if (payload.size() > offset) throw Error(Errc::ShapeMismatch, "payload longer than declared shapes");

  const char* p = payload.data();
  auto read = [&p](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        m(r, c) = get_f64(p);
        p += 8;
      }
  };
  for (auto& c : b.categories) {
    auto& m = c.model;
    read(m.objects);
    for (std::size_t f = 0; f < m.n_mor(); ++f) {
      if (m.rank) {
        read(m.queries[f]);
        read(m.keys[f]);
      } else {
        read(m.morphisms[f]);
      }
    }
    m.materialize();
    if (m.aggregator == AggregatorKind::Mlp) {
      read(m.mlp.w1);
      read(m.mlp.b1);
      read(m.mlp.w2);
      m.mlp.b2 = get_f64(p);
      p += 8;
    }
  }
  if (b.functor) read(b.functor->v);
  if (b.fusion) read(b.fusion->theta);
  return b;
}

void save_model(const ModelBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(bundle);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "write to '" + path.string() + "' failed");
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_model(ss.str());
}

std::int64_t count_params(const CategoryModel& m) {
  const std::int64_t d = m.dim();
  const auto n_mor = static_cast<std::int64_t>(m.n_mor());
  std::int64_t n = static_cast<std::int64_t>(m.n_obj()) * d;
  n += m.rank ? 2 * n_mor * *m.rank * d : n_mor * d * d;
  if (m.aggregator == AggregatorKind::Mlp) {
    const std::int64_t h = m.mlp.hidden();
    n += h * n_mor + 2 * h + 1;
  }
  return n;
}

std::int64_t count_params(const ModelBundle& b) {
  std::int64_t n = 0;
  for (const auto& c : b.categories) n += count_params(c.model);
  if (b.functor) n += b.functor->v.size();
  if (b.fusion) n += b.fusion->theta.size();
  return n;
}

}  // namespace crl
