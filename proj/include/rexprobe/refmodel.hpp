#ifndef REXPROBE_REFMODEL_HPP
#define REXPROBE_REFMODEL_HPP

// Reference relation scorer: per-relation logistic regression over pooled
// word embeddings, with analytic input gradients.
//
//   phi = [ mean(head mention words) | mean(tail mention words) | mean(all words) ]
//   F   = sigmoid(w_r . phi + b_r)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "rexprobe/common.hpp"
#include "rexprobe/corpus.hpp"
#include "rexprobe/prediction.hpp"

namespace rexprobe {

/// Row-major matrix of per-word embedding vectors.
struct Embedding {
  std::size_t words = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  Embedding() = default;
  Embedding(std::size_t n, std::size_t d) : words(n), dim(d), data(n * d, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  bool operator==(const Embedding&) const = default;
};

/// Deterministic word vectors in [-1, 1]^dim.
///
/// vector(word): state = FNV-1a-64(fold_case(word)) XOR seed; a SplitMix64
/// generator started from that state yields u_0, u_1, ... as (next() >> 11) *
/// 2^-53, and component d is 2 * u_d - 1.
class EmbeddingTable {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x72657870726f6265ULL;

  explicit EmbeddingTable(std::size_t dim = 16, std::uint64_t seed = kDefaultSeed)
      : dim_(dim), seed_(seed) {}

  std::size_t dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  void fill(std::string_view word, std::span<double> out) const {
    SplitMix64 rng(fnv1a64(fold_case(word)) ^ seed_);
    for (double& v : out) v = 2.0 * rng.next_unit() - 1.0;
  }

  std::vector<double> vector(std::string_view word) const {
    std::vector<double> v(dim_);
    fill(word, v);
    return v;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

inline Embedding embed_document(const Document& doc, const EmbeddingTable& table) {
  const FlatView view(doc);
  Embedding x(view.size(), table.dim());
  for (std::size_t i = 0; i < view.size(); ++i) table.fill(view.words()[i], x.row(i));
  return x;
}

struct RelationWeights {
  std::vector<double> w;  // 3 * dim: head block, tail block, context block
  double b = 0.0;

  bool operator==(const RelationWeights&) const = default;
};

struct RefModelParams {
  std::size_t dim = 16;
  double tau = 0.5;
  std::map<std::string, RelationWeights> relations;

  static RefModelParams zeros(std::size_t dim, const std::set<std::string>& vocab,
                              double tau = 0.5) {
    RefModelParams p;
    p.dim = dim;
    p.tau = tau;
    for (const auto& r : vocab) p.relations[r] = {std::vector<double>(3 * dim, 0.0), 0.0};
    return p;
  }

  const RelationWeights& at(const std::string& relation) const {
    auto it = relations.find(relation);
    if (it == relations.end()) throw UnknownRelationError(relation);
    return it->second;
  }

  bool operator==(const RefModelParams&) const = default;
};

inline Json to_json(const RefModelParams& p) {
  Json rel = Json::object();
  for (const auto& [name, rw] : p.relations) rel[name] = {{"w", rw.w}, {"b", rw.b}};
  return {{"dim", p.dim}, {"tau", p.tau}, {"relations", std::move(rel)}};
}

inline RefModelParams params_from_json(const Json& j) {
  using detail::get_as;
  using detail::require;
  RefModelParams p;
  p.dim = get_as<std::size_t>(require(j, "dim", "params"), "params.dim");
  p.tau = get_as<double>(require(j, "tau", "params"), "params.tau");
  if (!(p.tau > 0.0 && p.tau < 1.0)) throw SchemaError("params.tau", "must lie in (0, 1)");
  const Json& rel = require(j, "relations", "params");
  if (!rel.is_object()) throw SchemaError("params.relations", "expected an object");
  for (const auto& [name, value] : rel.items()) {
    const std::string path = "params.relations." + name;
    RelationWeights rw;
    rw.w = get_as<std::vector<double>>(require(value, "w", path), path + ".w");
    rw.b = get_as<double>(require(value, "b", path), path + ".b");
    if (rw.w.size() != 3 * p.dim) {
      throw SchemaError(path + ".w", "expected " + std::to_string(3 * p.dim) + " weights");
    }
    p.relations.emplace(name, std::move(rw));
  }
  return p;
}

inline RefModelParams load_params(const std::filesystem::path& path) {
  return params_from_json(detail::parse_json_text(detail::read_file(path), path.string()));
}

/// Numerically stable logistic function.
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Flat token positions pooled for the head and the tail of a pair. A token
/// covered by two mentions of the same entity appears twice.
struct PairTokens {
  std::vector<std::size_t> head;
  std::vector<std::size_t> tail;
};

inline std::vector<std::size_t> entity_tokens(const Document& doc, const FlatView& view,
                                              int entity) {
  if (entity < 0 || static_cast<std::size_t>(entity) >= doc.entities.size()) {
    throw Error("entity index " + std::to_string(entity) + " out of range in '" + doc.doc_id + "'");
  }
  std::vector<std::size_t> out;
  for (const auto& m : doc.entities[static_cast<std::size_t>(entity)].mentions) {
    if (!mention_in_bounds(doc, m)) continue;
    auto [b, e] = view.mention_range(m);
    for (std::size_t i = b; i < e; ++i) out.push_back(i);
  }
  if (out.empty()) {
    throw Error("entity " + std::to_string(entity) + " in '" + doc.doc_id +
                "' has no resolvable mention");
  }
  return out;
}

inline PairTokens pair_tokens(const Document& doc, int head, int tail) {
  const FlatView view(doc);
  return {entity_tokens(doc, view, head), entity_tokens(doc, view, tail)};
}

/// phi for one pair at embedded point x.
inline std::vector<double> pair_features(const Embedding& x, const PairTokens& pair) {
  const std::size_t d = x.dim;
  std::vector<double> phi(3 * d, 0.0);
  auto pool = [&](const std::vector<std::size_t>& tokens, std::size_t block) {
    for (std::size_t t : tokens) {
      auto r = x.row(t);
      for (std::size_t k = 0; k < d; ++k) phi[block * d + k] += r[k];
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (std::size_t k = 0; k < d; ++k) phi[block * d + k] *= inv;
  };
  pool(pair.head, 0);
  pool(pair.tail, 1);
  if (x.words > 0) {
    for (std::size_t t = 0; t < x.words; ++t) {
      auto r = x.row(t);
      for (std::size_t k = 0; k < d; ++k) phi[2 * d + k] += r[k];
    }
    const double inv = 1.0 / static_cast<double>(x.words);
    for (std::size_t k = 0; k < d; ++k) phi[2 * d + k] *= inv;
  }
  return phi;
}

inline double logit(const std::vector<double>& phi, const RelationWeights& rw) {
  double z = rw.b;
  for (std::size_t k = 0; k < phi.size(); ++k) z += rw.w[k] * phi[k];
  return z;
}

inline double score(const Embedding& x, const PairTokens& pair, const RelationWeights& rw) {
  return sigmoid(logit(pair_features(x, pair), rw));
}

/// dF/dx at x: sigmoid'(z) * (w_ctx / N + w_head / |head| per head occurrence
/// + w_tail / |tail| per tail occurrence).
inline Embedding gradient(const Embedding& x, const PairTokens& pair, const RelationWeights& rw) {
  const std::size_t d = x.dim;
  const double s = sigmoid(logit(pair_features(x, pair), rw));
  const double ds = s * (1.0 - s);
  Embedding g(x.words, d);
  if (ds == 0.0) return g;
  const double ctx = ds / static_cast<double>(x.words);
  for (std::size_t t = 0; t < x.words; ++t) {
    auto r = g.row(t);
    for (std::size_t k = 0; k < d; ++k) r[k] = ctx * rw.w[2 * d + k];
  }
  const double hs = ds / static_cast<double>(pair.head.size());
  for (std::size_t t : pair.head) {
    auto r = g.row(t);
    for (std::size_t k = 0; k < d; ++k) r[k] += hs * rw.w[k];
  }
  const double ts = ds / static_cast<double>(pair.tail.size());
  for (std::size_t t : pair.tail) {
    auto r = g.row(t);
    for (std::size_t k = 0; k < d; ++k) r[k] += ts * rw.w[d + k];
  }
  return g;
}

/// Parameters plus embedding table: the complete reference model.
class RefModel {
 public:
  RefModel(RefModelParams params, EmbeddingTable table)
      : params_(std::move(params)), table_(table) {
    if (table_.dim() != params_.dim) throw Error("embedding dim does not match params dim");
  }
  explicit RefModel(RefModelParams params)
      : RefModel(params, EmbeddingTable(params.dim)) {}

  const RefModelParams& params() const { return params_; }
  const EmbeddingTable& table() const { return table_; }

  Embedding embed(const Document& doc) const { return embed_document(doc, table_); }

  double score(const Document& doc, const FactKey& fact) const {
    const auto& rw = params_.at(fact.relation);
    return rexprobe::score(embed(doc), pair_tokens(doc, fact.head, fact.tail), rw);
  }

  /// Every ordered pair x relation whose score is strictly above tau.
  PredictionSet predict_document(const Document& doc) const {
    PredictionSet out;
    const Embedding x = embed(doc);
    const FlatView view(doc);
    const int n = static_cast<int>(doc.entities.size());
    std::vector<std::vector<std::size_t>> tokens(doc.entities.size());
    for (int e = 0; e < n; ++e) tokens[e] = entity_tokens(doc, view, e);
    for (int h = 0; h < n; ++h) {
      for (int t = 0; t < n; ++t) {
        if (h == t) continue;
        const PairTokens pair{tokens[h], tokens[t]};
        const auto phi = pair_features(x, pair);
        for (const auto& [r, rw] : params_.relations) {
          const double s = sigmoid(logit(phi, rw));
          if (s > params_.tau) out.insert({doc.doc_id, h, t, r}, s);
        }
      }
    }
    return out;
  }

 private:
  RefModelParams params_;
  EmbeddingTable table_;
};

/// The reference model bound to one (document, fact): the scalar function
/// integrated by the attribution engine.
class RefFactScorer {
 public:
  RefFactScorer(const RefModel& model, const Document& doc, const FactKey& fact)
      : weights_(&model.params().at(fact.relation)),
        pair_(pair_tokens(doc, fact.head, fact.tail)),
        input_(model.embed(doc)) {}

  const Embedding& input() const { return input_; }
  double value(const Embedding& x) const { return score(x, pair_, *weights_); }
  Embedding gradient(const Embedding& x) const { return rexprobe::gradient(x, pair_, *weights_); }

 private:
  const RelationWeights* weights_;
  PairTokens pair_;
  Embedding input_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  int epochs = 50;
  double lr = 0.1;
  double negative_ratio = 1.0;
  std::uint64_t seed = 7;
  std::size_t dim = 16;
  double tau = 0.5;
};

struct TrainResult {
  RefModelParams params;
  /// Mean binary cross-entropy over relations, before each epoch and after
  /// the last one (epochs + 1 entries).
  std::vector<double> loss_history;
};

namespace detail {

struct TrainingExample {
  std::vector<double> phi;
  std::set<std::string> relations;  // empty for sampled NA pairs
};

inline std::vector<TrainingExample> build_examples(const Corpus& corpus,
                                                   const EmbeddingTable& table,
                                                   double negative_ratio, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingExample> out;
  for (const auto& doc : corpus.documents) {
    std::map<std::pair<int, int>, std::set<std::string>> gold;
    for (const auto& f : doc.facts) {
      if (!is_na_relation(f.relation)) gold[{f.head, f.tail}].insert(f.relation);
    }
    const Embedding x = embed_document(doc, table);
    const FlatView view(doc);
    auto features = [&](int h, int t) {
      return pair_features(x, {entity_tokens(doc, view, h), entity_tokens(doc, view, t)});
    };
    for (const auto& [pair, rels] : gold) out.push_back({features(pair.first, pair.second), rels});

    std::vector<std::pair<int, int>> unrelated;
    const int n = static_cast<int>(doc.entities.size());
    for (int h = 0; h < n; ++h) {
      for (int t = 0; t < n; ++t) {
        if (h != t && !gold.contains({h, t})) unrelated.emplace_back(h, t);
      }
    }
    seeded_shuffle(unrelated, rng);
    const auto want = static_cast<std::size_t>(
        std::llround(negative_ratio * static_cast<double>(gold.size())));
    unrelated.resize(std::min(want, unrelated.size()));
    for (const auto& [h, t] : unrelated) out.push_back({features(h, t), {}});
  }
  return out;
}

inline double bce(double p, double y) {
  constexpr double eps = 1e-15;
  p = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

}  // namespace detail

/// One-vs-rest logistic regression per relation by full-batch gradient
/// descent. Gold pairs are positives for their relations and negatives for the
/// rest; a seeded sample of unrelated pairs is negative for every relation.
inline TrainResult train(const Corpus& corpus, const TrainOptions& opt,
                         const EmbeddingTable& table) {
  std::size_t n_facts = 0;
  for (const auto& d : corpus.documents) n_facts += d.facts.size();
  if (n_facts == 0) throw Error("cannot train on a corpus without facts");
  if (table.dim() != opt.dim) throw Error("embedding dim does not match training dim");

  TrainResult result;
  result.params = RefModelParams::zeros(opt.dim, corpus.relations, opt.tau);
  const auto examples = detail::build_examples(corpus, table, opt.negative_ratio, opt.seed);
  const double inv_n = 1.0 / static_cast<double>(examples.size());
  const std::size_t width = 3 * opt.dim;

  auto total_loss = [&] {
    double sum = 0.0;
    for (const auto& [r, rw] : result.params.relations) {
      double l = 0.0;
      for (const auto& ex : examples) {
        l += detail::bce(sigmoid(logit(ex.phi, rw)), ex.relations.contains(r) ? 1.0 : 0.0);
      }
      sum += l * inv_n;
    }
    return sum / static_cast<double>(result.params.relations.size());
  };

  result.loss_history.push_back(total_loss());
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (auto& [r, rw] : result.params.relations) {
      std::vector<double> gw(width, 0.0);
      double gb = 0.0;
      for (const auto& ex : examples) {
        const double err =
            sigmoid(logit(ex.phi, rw)) - (ex.relations.contains(r) ? 1.0 : 0.0);
        for (std::size_t k = 0; k < width; ++k) gw[k] += err * ex.phi[k];
        gb += err;
      }
      for (std::size_t k = 0; k < width; ++k) rw.w[k] -= opt.lr * gw[k] * inv_n;
      rw.b -= opt.lr * gb * inv_n;
    }
    result.loss_history.push_back(total_loss());
  }
  return result;
}

inline TrainResult train(const Corpus& corpus, const TrainOptions& opt) {
  return train(corpus, opt, EmbeddingTable(opt.dim));
}

}  // namespace rexprobe

#endif  // REXPROBE_REFMODEL_HPP
