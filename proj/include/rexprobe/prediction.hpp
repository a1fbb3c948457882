#ifndef REXPROBE_PREDICTION_HPP
#define REXPROBE_PREDICTION_HPP

#include <cmath>
#include <compare>
#include <map>
#include <string>

#include "rexprobe/common.hpp"

namespace rexprobe {

/// A (document, head, tail, relation) triple.
struct TripleKey {
  std::string doc_id;
  int head = 0;
  int tail = 0;
  std::string relation;

  auto operator<=>(const TripleKey&) const = default;
};

/// Scored triples. Keys are unique by construction; scores must be finite
/// probabilities.
class PredictionSet {
 public:
  using Map = std::map<TripleKey, double>;

  void insert(const TripleKey& key, double score) {
    if (!std::isfinite(score) || score < 0.0 || score > 1.0) {
      throw Error("prediction score outside [0, 1]: " + std::to_string(score));
    }
    if (!triples_.emplace(key, score).second) {
      throw Error("duplicate prediction (" + key.doc_id + ", " + std::to_string(key.head) + ", " +
                  std::to_string(key.tail) + ", " + key.relation + ")");
    }
  }

  void merge(const PredictionSet& other) {
    for (const auto& [k, v] : other.triples_) insert(k, v);
  }

  bool contains(const TripleKey& key) const { return triples_.contains(key); }
  std::size_t size() const { return triples_.size(); }
  bool empty() const { return triples_.empty(); }
  const Map& triples() const { return triples_; }
  Map::const_iterator begin() const { return triples_.begin(); }
  Map::const_iterator end() const { return triples_.end(); }

  /// True iff any relation is predicted for the ordered pair.
  bool has_pair(const std::string& doc_id, int head, int tail) const {
    auto it = triples_.lower_bound(TripleKey{doc_id, head, tail, ""});
    return it != triples_.end() && it->first.doc_id == doc_id && it->first.head == head &&
           it->first.tail == tail;
  }

  bool operator==(const PredictionSet&) const = default;

 private:
  Map triples_;
};

}  // namespace rexprobe

#endif  // REXPROBE_PREDICTION_HPP
