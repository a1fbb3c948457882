#ifndef REXPROBE_METRICS_HPP
#define REXPROBE_METRICS_HPP

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <vector>

#include "rexprobe/prediction.hpp"

namespace rexprobe {

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
};

inline F1Result f1_from_counts(std::size_t tp, std::size_t predicted, std::size_t gold) {
  F1Result r;
  r.true_positives = tp;
  r.predicted = predicted;
  r.gold = gold;
  r.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  r.recall = gold == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold);
  const double denom = r.precision + r.recall;
  r.f1 = denom == 0.0 ? 0.0 : 2.0 * r.precision * r.recall / denom;
  return r;
}

/// Micro-averaged precision, recall and F1 over triples.
inline F1Result micro_f1(const PredictionSet& pred, const std::set<TripleKey>& gold) {
  std::size_t tp = 0;
  for (const auto& [key, score] : pred) tp += gold.contains(key) ? 1 : 0;
  return f1_from_counts(tp, pred.size(), gold.size());
}

/// Outcome of an attack over the facts that were predicted before it.
struct FlipRates {
  std::size_t p2n_count = 0;       // pair has no relation afterwards
  std::size_t up_count = 0;        // exact triple still predicted
  std::size_t residual_count = 0;  // pair kept some other relation
  std::size_t attacked_count = 0;  // original positives in scope

  bool defined() const { return attacked_count > 0; }
  double p2n() const { return ratio(p2n_count); }
  double up() const { return ratio(up_count); }
  double residual() const { return ratio(residual_count); }

  FlipRates& operator+=(const FlipRates& o) {
    p2n_count += o.p2n_count;
    up_count += o.up_count;
    residual_count += o.residual_count;
    attacked_count += o.attacked_count;
    return *this;
  }

 private:
  double ratio(std::size_t n) const {
    return attacked_count == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(attacked_count);
  }
};

/// Classifies each scoped fact that `before` predicted. `before` comes from
/// the original documents and `after` from the perturbed ones, under the same
/// doc ids.
inline FlipRates flip_rates(const PredictionSet& before, const PredictionSet& after,
                            const std::set<TripleKey>& scope) {
  FlipRates out;
  for (const auto& fact : scope) {
    if (!before.contains(fact)) continue;
    ++out.attacked_count;
    if (after.contains(fact)) {
      ++out.up_count;
    } else if (!after.has_pair(fact.doc_id, fact.head, fact.tail)) {
      ++out.p2n_count;
    } else {
      ++out.residual_count;
    }
  }
  return out;
}

/// AP(k) with denominator k:
///   AP(k) = (1/k) * sum_{i=1..k} P(i) * rel(i),  P(i) = hits in top i / i.
/// Lists shorter than k count as padded with irrelevant items.
template <typename Relevance>
  requires requires(const Relevance& r, std::size_t i) {
    { r.size() } -> std::convertible_to<std::size_t>;
    { r[i] } -> std::convertible_to<bool>;
  }
double average_precision(const Relevance& relevance, std::size_t k) {
  if (k < 1) throw Error("average_precision: k must be >= 1");
  double sum = 0.0;
  std::size_t hits = 0;
  const std::size_t n = std::min<std::size_t>(k, relevance.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (relevance[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(k);
}

struct MapResult {
  std::optional<double> value;  // empty when no fact had gold evidence
  std::size_t included = 0;
  std::size_t excluded = 0;  // facts without gold evidence
};

/// Mean of per-fact AP(k); relevance(i) = ranked word i is gold evidence.
inline MapResult map_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                          const std::vector<std::set<std::size_t>>& gold, std::size_t k) {
  if (rankings.size() != gold.size()) throw Error("map_at_k: rankings and gold sets differ in count");
  MapResult r;
  double sum = 0.0;
  std::vector<bool> relevance;
  for (std::size_t t = 0; t < rankings.size(); ++t) {
    if (gold[t].empty()) {
      ++r.excluded;
      continue;
    }
    relevance.assign(std::min(k, rankings[t].size()), false);
    for (std::size_t i = 0; i < relevance.size(); ++i) relevance[i] = gold[t].contains(rankings[t][i]);
    sum += average_precision(relevance, k);
    ++r.included;
  }
  if (r.included > 0) r.value = sum / static_cast<double>(r.included);
  return r;
}

struct MapCurve {
  std::vector<double> values;  // values[K-1] = MAP(K)
  double auc = 0.0;            // mean of MAP(1..k_max)
  std::size_t included = 0;
  std::size_t excluded = 0;
};

inline std::optional<MapCurve> map_curve(const std::vector<std::vector<std::size_t>>& rankings,
                                         const std::vector<std::set<std::size_t>>& gold, std::size_t k_max) {
  if (k_max < 1) throw Error("map_curve: k_max must be >= 1");
  MapCurve curve;
  for (std::size_t k = 1; k <= k_max; ++k) {
    const MapResult r = map_at_k(rankings, gold, k);
    if (!r.value) return std::nullopt;
    curve.values.push_back(*r.value);
    curve.included = r.included;
    curve.excluded = r.excluded;
  }
  double sum = 0.0;
  for (double v : curve.values) sum += v;
  curve.auc = sum / static_cast<double>(k_max);
  return curve;
}

/// `K,MAP` rows followed by a `#auc=` line.
inline void write_map_csv(std::ostream& out, const MapCurve& curve) {
  out << "K,MAP\n";
  out.precision(17);
  for (std::size_t k = 0; k < curve.values.size(); ++k) out << (k + 1) << ',' << curve.values[k] << '\n';
  out << "#auc=" << curve.auc << '\n';
}

}  // namespace rexprobe

#endif  // REXPROBE_METRICS_HPP
