#ifndef REXPROBE_ATTRIBUTION_HPP
#define REXPROBE_ATTRIBUTION_HPP

// Integrated Gradients with a zero baseline, word ranking, and the analyses
// built on top of it (position profile, top-k statistics, template probes).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rexprobe/corpus.hpp"
#include "rexprobe/refmodel.hpp"

namespace rexprobe {

/// A differentiable scalar function of an embedded document, together with
/// the embedded input it should be attributed at.
template <typename S>
concept GradientSource = requires(const S& s, const Embedding& x) {
  { s.input() } -> std::convertible_to<const Embedding&>;
  { s.value(x) } -> std::convertible_to<double>;
  { s.gradient(x) } -> std::convertible_to<Embedding>;
};

struct AttributionMap {
  std::string doc_id;
  FactKey fact;
  std::vector<double> word_scores;
  double f_input = 0.0;
  double f_baseline = 0.0;
  int steps = 1;

  bool operator==(const AttributionMap&) const = default;
};

class AttributionError : public Error {
 public:
  AttributionError(const std::string& doc_id, const FactKey& fact, const std::string& cause)
      : Error("attribution of (" + doc_id + ", " + std::to_string(fact.head) + ", " +
              std::to_string(fact.tail) + ", " + fact.relation + ") failed: " + cause),
        doc_id_(doc_id),
        fact_(fact) {}
  const std::string& doc_id() const { return doc_id_; }
  const FactKey& fact() const { return fact_; }

 private:
  std::string doc_id_;
  FactKey fact_;
};

/// Midpoint Riemann sum of the path integral from the zero baseline:
///   g = x * (1/steps) * sum_{k=1..steps} dF(((k - 0.5)/steps) * x)/dx
/// Word score = sum of g over that word's embedding dimensions.
template <GradientSource S>
AttributionMap integrated_gradients(const S& source, int steps, const std::string& doc_id,
                                    const FactKey& fact) {
  if (steps < 1) throw Error("integrated_gradients: steps must be >= 1");
  try {
    const Embedding& x = source.input();
    Embedding point(x.words, x.dim);
    std::vector<double> accum(x.data.size(), 0.0);
    for (int k = 1; k <= steps; ++k) {
      const double alpha = (static_cast<double>(k) - 0.5) / static_cast<double>(steps);
      for (std::size_t i = 0; i < x.data.size(); ++i) point.data[i] = alpha * x.data[i];
      const Embedding g = source.gradient(point);
      if (g.data.size() != accum.size()) throw Error("gradient shape mismatch");
      for (std::size_t i = 0; i < accum.size(); ++i) accum[i] += g.data[i];
    }
    AttributionMap map;
    map.doc_id = doc_id;
    map.fact = fact;
    map.steps = steps;
    map.word_scores.assign(x.words, 0.0);
    const double inv = 1.0 / static_cast<double>(steps);
    for (std::size_t w = 0; w < x.words; ++w) {
      double s = 0.0;
      for (std::size_t d = 0; d < x.dim; ++d) {
        const std::size_t i = w * x.dim + d;
        s += x.data[i] * (accum[i] * inv);
      }
      map.word_scores[w] = s;
    }
    map.f_input = source.value(x);
    map.f_baseline = source.value(Embedding(x.words, x.dim));
    return map;
  } catch (const AttributionError&) {
    throw;
  } catch (const std::exception& e) {
    throw AttributionError(doc_id, fact, e.what());
  }
}

inline AttributionMap integrated_gradients(const RefModel& model, const Document& doc,
                                           const FactKey& fact, int steps) {
  std::optional<RefFactScorer> scorer;
  try {
    scorer.emplace(model, doc, fact);
  } catch (const std::exception& e) {
    throw AttributionError(doc.doc_id, fact, e.what());
  }
  return integrated_gradients(*scorer, steps, doc.doc_id, fact);
}

inline double completeness_gap(const AttributionMap& map) {
  double sum = 0.0;
  for (double s : map.word_scores) sum += s;
  return std::abs(sum - (map.f_input - map.f_baseline));
}

/// Flat word indices by descending score; ties by ascending index.
inline std::vector<std::size_t> rank_words(const AttributionMap& map) {
  std::vector<std::size_t> order(map.word_scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return map.word_scores[a] > map.word_scores[b];
  });
  return order;
}

struct PositionStat {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::size_t count = 0;
};

/// Per-position aggregate of word scores over every map long enough to reach
/// that position. Positions at or beyond max_len are dropped.
inline std::vector<PositionStat> position_profile(const std::vector<AttributionMap>& maps,
                                                  std::size_t max_len = 512,
                                                  bool absolute = false) {
  if (max_len < 1) throw Error("position_profile: max_len must be >= 1");
  std::size_t longest = 0;
  for (const auto& m : maps) longest = std::max(longest, m.word_scores.size());
  std::vector<PositionStat> profile(std::min(longest, max_len));
  std::vector<double> m2(profile.size(), 0.0);
  for (const auto& m : maps) {
    const std::size_t n = std::min(m.word_scores.size(), profile.size());
    for (std::size_t p = 0; p < n; ++p) {
      const double v = absolute ? std::abs(m.word_scores[p]) : m.word_scores[p];
      PositionStat& st = profile[p];
      ++st.count;
      const double delta = v - st.mean;
      st.mean += delta / static_cast<double>(st.count);
      m2[p] += delta * (v - st.mean);
    }
  }
  for (std::size_t p = 0; p < profile.size(); ++p) {
    if (profile[p].count > 0) profile[p].variance = m2[p] / static_cast<double>(profile[p].count);
  }
  return profile;
}

struct TopKRow {
  std::string word;  // case-folded
  std::size_t count = 0;
  bool is_entity = false;

  bool operator==(const TopKRow&) const = default;
};

/// Frequency of case-folded words among each map's top-k. A word occurring
/// both inside and outside mention spans gets one row per flag.
inline std::vector<TopKRow> top_k_stats(const std::vector<AttributionMap>& maps,
                                        const Corpus& corpus, std::size_t k = 5) {
  if (k < 1) throw Error("top_k_stats: k must be >= 1");
  std::map<std::pair<std::string, bool>, std::size_t> counts;
  for (const auto& map : maps) {
    const Document* doc = corpus.find(map.doc_id);
    if (doc == nullptr) throw Error("top_k_stats: unknown document '" + map.doc_id + "'");
    const FlatView view(*doc);
    if (view.size() != map.word_scores.size()) {
      throw Error("top_k_stats: attribution length does not match '" + map.doc_id + "'");
    }
    const auto in_mention = mention_mask(*doc, view);
    const auto ranked = rank_words(map);
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
      const std::size_t pos = ranked[i];
      ++counts[{fold_case(view.words()[pos]), in_mention[pos]}];
    }
  }
  std::vector<TopKRow> rows;
  for (const auto& [key, n] : counts) rows.push_back({key.first, n, key.second});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const TopKRow& a, const TopKRow& b) { return a.count > b.count; });
  return rows;
}

/// "A X B" probe: head name, then the top-k ranked words that fall outside the
/// head and tail mentions in original order, then the tail name. The probe
/// carries every gold relation of the pair (either direction).
inline Document build_template_input(const Document& doc, const FactKey& fact,
                                     const std::vector<std::size_t>& ranked, std::size_t k) {
  const int n = static_cast<int>(doc.entities.size());
  if (fact.head < 0 || fact.head >= n || fact.tail < 0 || fact.tail >= n) {
    throw Error("build_template_input: fact entities missing in '" + doc.doc_id + "'");
  }
  const FlatView view(doc);
  std::vector<bool> excluded(view.size(), false);
  for (int e : {fact.head, fact.tail}) {
    for (const auto& m : doc.entities[static_cast<std::size_t>(e)].mentions) {
      if (!mention_in_bounds(doc, m)) continue;
      auto [b, en] = view.mention_range(m);
      for (std::size_t i = b; i < en; ++i) excluded[i] = true;
    }
  }
  std::vector<std::size_t> middle;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (ranked[i] < view.size() && !excluded[ranked[i]]) middle.push_back(ranked[i]);
  }
  std::sort(middle.begin(), middle.end());

  const auto& head = doc.entities[static_cast<std::size_t>(fact.head)];
  const auto& tail = doc.entities[static_cast<std::size_t>(fact.tail)];
  const auto head_name = canonical_name(head);
  const auto tail_name = canonical_name(tail);

  std::vector<std::string> words(head_name);
  for (std::size_t pos : middle) words.push_back(view.words()[pos]);
  const int tail_start = static_cast<int>(words.size());
  words.insert(words.end(), tail_name.begin(), tail_name.end());

  Document probe;
  probe.doc_id = doc.doc_id + "::probe(" + std::to_string(fact.head) + "," +
                 std::to_string(fact.tail) + "," + fact.relation + ",k=" + std::to_string(k) + ")";
  probe.title = probe.doc_id;
  probe.sentences.push_back(words);
  probe.entities.push_back(
      {0, head.type, {{0, 0, static_cast<int>(head_name.size()), join_words(head_name, 0, head_name.size())}}});
  probe.entities.push_back(
      {1, tail.type,
       {{0, tail_start, static_cast<int>(words.size()), join_words(tail_name, 0, tail_name.size())}}});
  for (const auto& f : doc.facts) {
    if (f.head == fact.head && f.tail == fact.tail) {
      probe.facts.push_back({0, 1, f.relation, {}, {}, 1});
    } else if (f.head == fact.tail && f.tail == fact.head) {
      probe.facts.push_back({1, 0, f.relation, {}, {}, 1});
    }
  }
  return probe;
}

// ---------------------------------------------------------------------------
// Attribution dump (JSON lines)

inline Json to_json(const AttributionMap& map) {
  return {{"doc_id", map.doc_id},     {"h", map.fact.head},
          {"t", map.fact.tail},       {"r", map.fact.relation},
          {"steps", map.steps},       {"f_input", map.f_input},
          {"f_baseline", map.f_baseline}, {"scores", map.word_scores}};
}

inline AttributionMap attribution_from_json(const Json& j, const std::string& path = "attribution") {
  using detail::get_as;
  using detail::require;
  AttributionMap m;
  m.doc_id = get_as<std::string>(require(j, "doc_id", path), path + ".doc_id");
  m.fact.head = get_as<int>(require(j, "h", path), path + ".h");
  m.fact.tail = get_as<int>(require(j, "t", path), path + ".t");
  m.fact.relation = get_as<std::string>(require(j, "r", path), path + ".r");
  m.steps = get_as<int>(require(j, "steps", path), path + ".steps");
  m.f_input = get_as<double>(require(j, "f_input", path), path + ".f_input");
  m.f_baseline = get_as<double>(require(j, "f_baseline", path), path + ".f_baseline");
  m.word_scores = get_as<std::vector<double>>(require(j, "scores", path), path + ".scores");
  return m;
}

inline std::vector<AttributionMap> load_attributions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<AttributionMap> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    out.push_back(attribution_from_json(j, path.string() + ":" + std::to_string(line_no)));
  }
  return out;
}

}  // namespace rexprobe

#endif  // REXPROBE_ATTRIBUTION_HPP
