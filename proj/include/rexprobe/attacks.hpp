#ifndef REXPROBE_ATTACKS_HPP
#define REXPROBE_ATTACKS_HPP

// Evidence-targeted and entity-targeted perturbations. Every attack returns a
// document that still satisfies the corpus invariants, plus a provenance map
// from original to perturbed flat positions.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "rexprobe/common.hpp"
#include "rexprobe/corpus.hpp"

namespace rexprobe {

// ---------------------------------------------------------------------------
// Lexicon

class Lexicon {
 public:
  static const std::set<std::string>& be_forms() {
    static const std::set<std::string> forms{"be", "am", "is", "are", "was", "were", "been", "being"};
    return forms;
  }

  static bool is_be_form(std::string_view word) { return be_forms().contains(fold_case(word)); }

  /// Adds one relation; duplicates are ignored. Returns false on a self
  /// reference.
  bool add(std::string_view word, std::string_view relation, std::string_view target) {
    std::string w = fold_case(word);
    std::string t = fold_case(target);
    if (w == t) return false;
    auto& list = (relation == "ANT" ? antonyms_ : synonyms_)[w];
    if (std::find(list.begin(), list.end(), t) == list.end()) list.push_back(std::move(t));
    return true;
  }

  const std::vector<std::string>& antonyms(std::string_view word) const { return lookup(antonyms_, word); }
  const std::vector<std::string>& synonyms(std::string_view word) const { return lookup(synonyms_, word); }

 private:
  static const std::vector<std::string>& lookup(const std::map<std::string, std::vector<std::string>>& m,
                                                std::string_view word) {
    static const std::vector<std::string> kEmpty;
    auto it = m.find(fold_case(word));
    return it == m.end() ? kEmpty : it->second;
  }

  std::map<std::string, std::vector<std::string>> antonyms_;
  std::map<std::string, std::vector<std::string>> synonyms_;
};

/// TSV rows `word<TAB>SYN|ANT<TAB>target`; blank lines and '#' comments are
/// skipped.
inline Lexicon parse_lexicon(std::istream& in, const std::string& source = "lexicon") {
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string field;
    while (std::getline(row, field, '\t')) fields.push_back(field);
    auto where = [&] { return source + ":" + std::to_string(line_no) + ": "; };
    if (fields.size() != 3 || fields[0].empty() || fields[2].empty()) {
      throw ParseError(where() + "expected word<TAB>SYN|ANT<TAB>target", line_no);
    }
    std::string rel = fields[1];
    std::transform(rel.begin(), rel.end(), rel.begin(), [](char c) { return static_cast<char>(std::toupper(c)); });
    if (rel != "SYN" && rel != "ANT") throw ParseError(where() + "unknown relation '" + fields[1] + "'", line_no);
    if (!lex.add(fields[0], rel, fields[2])) {
      throw ParseError(where() + "self-reference for '" + fields[0] + "'", line_no);
    }
  }
  return lex;
}

inline Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_lexicon(in, path.string());
}

// ---------------------------------------------------------------------------
// Name pool for out-of-distribution entity substitution

struct PoolName {
  std::vector<std::string> tokens;
  std::optional<std::string> type;
};

struct NamePool {
  std::vector<PoolName> names;

  bool typed() const {
    return std::any_of(names.begin(), names.end(), [](const PoolName& n) { return n.type.has_value(); });
  }
};

/// One name per line with an optional `<TAB>type`. Names that appear in
/// `training_names` (case-insensitive) are rejected.
inline NamePool parse_name_pool(std::istream& in, const std::set<std::string>& training_names,
                                const std::string& source = "pool") {
  std::set<std::string> banned;
  for (const auto& n : training_names) banned.insert(fold_case(n));
  NamePool pool;
  std::vector<std::string> offenders;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    PoolName entry;
    const auto tab = line.find('\t');
    const std::string name = line.substr(0, tab);
    entry.tokens = split_whitespace(name);
    if (entry.tokens.empty()) throw ParseError(source + ":" + std::to_string(line_no) + ": empty name", line_no);
    if (tab != std::string::npos && tab + 1 < line.size()) entry.type = line.substr(tab + 1);
    const std::string joined = join_words(entry.tokens, 0, entry.tokens.size());
    if (banned.contains(fold_case(joined))) offenders.push_back(joined);
    pool.names.push_back(std::move(entry));
  }
  if (!offenders.empty()) {
    const std::string message = source + ": pool contains training-set name '" + offenders.front() + "'";
    throw ReferentialError(message, std::move(offenders));
  }
  if (pool.names.empty()) throw Error(source + ": name pool is empty");
  return pool;
}

inline NamePool load_name_pool(const std::filesystem::path& path,
                               const std::set<std::string>& training_names = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_name_pool(in, training_names, path.string());
}

// ---------------------------------------------------------------------------
// Perturbed documents

enum class AttackKind { kMaskEvidence, kAsa, kSsa, kEntityMask, kEntityShuffle, kEntityOod };

inline std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kMaskEvidence: return "mask_evidence";
    case AttackKind::kAsa: return "asa";
    case AttackKind::kSsa: return "ssa";
    case AttackKind::kEntityMask: return "entity_mask";
    case AttackKind::kEntityShuffle: return "entity_shuffle";
    case AttackKind::kEntityOod: return "entity_ood";
  }
  return "unknown";
}

/// Accepts both `mask_evidence` and `mask-evidence` spellings.
inline std::optional<AttackKind> parse_attack_kind(std::string name) {
  std::replace(name.begin(), name.end(), '-', '_');
  for (auto k : {AttackKind::kMaskEvidence, AttackKind::kAsa, AttackKind::kSsa, AttackKind::kEntityMask,
                 AttackKind::kEntityShuffle, AttackKind::kEntityOod}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

struct PerturbedDocument {
  Document document;
  AttackKind kind = AttackKind::kMaskEvidence;
  std::optional<FactKey> fact_scope;
  /// Original flat index -> perturbed flat index; empty where a word was
  /// rewritten as part of a longer span.
  std::vector<std::optional<std::size_t>> provenance;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> warnings;
};

inline Json to_json(const PerturbedDocument& p) {
  Json j = document_to_json(p.document);
  j["attack"] = to_string(p.kind);
  j["fact"] = p.fact_scope ? Json{{"h", p.fact_scope->head}, {"t", p.fact_scope->tail}, {"r", p.fact_scope->relation}}
                           : Json(nullptr);
  j["seed"] = p.seed ? Json(*p.seed) : Json(nullptr);
  Json prov = Json::array();
  for (const auto& v : p.provenance) prov.push_back(v ? Json(*v) : Json(nullptr));
  j["provenance"] = std::move(prov);
  return j;
}

inline PerturbedDocument perturbed_from_json(const Json& j, const std::string& path = "perturbed") {
  using detail::get_as;
  using detail::require;
  PerturbedDocument p;
  p.document = document_from_json(j, path);
  const auto kind = parse_attack_kind(get_as<std::string>(require(j, "attack", path), path + ".attack"));
  if (!kind) throw SchemaError(path + ".attack", "unknown attack kind");
  p.kind = *kind;
  if (j.contains("fact") && !j["fact"].is_null()) {
    const Json& f = j["fact"];
    p.fact_scope = FactKey{get_as<int>(require(f, "h", path + ".fact"), path + ".fact.h"),
                           get_as<int>(require(f, "t", path + ".fact"), path + ".fact.t"),
                           get_as<std::string>(require(f, "r", path + ".fact"), path + ".fact.r")};
  }
  if (j.contains("seed") && !j["seed"].is_null()) p.seed = get_as<std::uint64_t>(j["seed"], path + ".seed");
  if (j.contains("provenance")) {
    for (const auto& v : j["provenance"]) {
      p.provenance.push_back(v.is_null() ? std::nullopt : std::optional<std::size_t>(v.get<std::size_t>()));
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Span rewriting

/// Replace words [start, end) of one sentence with `tokens`. start == end is
/// an insertion before word `start`. In-place edits keep their length and
/// their provenance; other edits are opaque rewrites.
struct SpanEdit {
  int sentence = 0;
  int start = 0;
  int end = 0;
  std::vector<std::string> tokens;
  bool in_place = false;
};

struct RewriteResult {
  Document document;
  std::vector<std::optional<std::size_t>> provenance;
};

/// Applies non-overlapping edits and re-derives mention spans, mention
/// surfaces, and word evidence. A mention boundary inside a rewritten span
/// snaps to the span's edge; an insertion at a mention boundary stays outside
/// the mention.
inline RewriteResult apply_edits(const Document& doc, std::vector<SpanEdit> edits) {
  constexpr std::size_t kUnset = std::numeric_limits<std::size_t>::max();
  std::sort(edits.begin(), edits.end(), [](const SpanEdit& a, const SpanEdit& b) {
    return std::tie(a.sentence, a.start, a.end) < std::tie(b.sentence, b.start, b.end);
  });

  const std::size_t n_sent = doc.sentences.size();
  Document out = doc;
  std::vector<std::vector<std::size_t>> start_bound(n_sent), end_bound(n_sent);
  std::vector<std::vector<std::optional<std::size_t>>> word_map(n_sent);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> region(n_sent);

  auto edit_it = edits.begin();
  for (std::size_t s = 0; s < n_sent; ++s) {
    const auto& words = doc.sentences[s];
    const std::size_t len = words.size();
    std::vector<std::string> rebuilt;
    auto& sb = start_bound[s];
    auto& eb = end_bound[s];
    sb.assign(len + 1, kUnset);
    eb.assign(len + 1, kUnset);
    word_map[s].assign(len, std::nullopt);
    region[s].assign(len, {kUnset, kUnset});
    std::size_t i = 0;
    auto mark = [&](std::size_t b) {
      if (sb[b] == kUnset) sb[b] = rebuilt.size();
      if (eb[b] == kUnset) eb[b] = rebuilt.size();
    };
    auto copy_until = [&](std::size_t stop) {
      for (; i < stop; ++i) {
        mark(i);
        word_map[s][i] = rebuilt.size();
        rebuilt.push_back(words[i]);
      }
    };
    for (; edit_it != edits.end() && edit_it->sentence == static_cast<int>(s); ++edit_it) {
      const SpanEdit& e = *edit_it;
      if (e.start < 0 || e.end < e.start || static_cast<std::size_t>(e.end) > len ||
          static_cast<std::size_t>(e.start) < i) {
        throw Error("apply_edits: invalid or overlapping edit in sentence " + std::to_string(s));
      }
      const auto a = static_cast<std::size_t>(e.start);
      const auto c = static_cast<std::size_t>(e.end);
      copy_until(a);
      if (e.in_place) {
        if (e.tokens.size() != c - a) throw Error("apply_edits: in-place edit changes length");
        for (const auto& t : e.tokens) {
          mark(i);
          word_map[s][i] = rebuilt.size();
          rebuilt.push_back(t);
          ++i;
        }
      } else if (a == c) {
        if (eb[a] == kUnset) eb[a] = rebuilt.size();
        rebuilt.insert(rebuilt.end(), e.tokens.begin(), e.tokens.end());
        if (sb[a] == kUnset) sb[a] = rebuilt.size();
      } else {
        const std::size_t rb = rebuilt.size();
        rebuilt.insert(rebuilt.end(), e.tokens.begin(), e.tokens.end());
        const std::size_t re = rebuilt.size();
        if (sb[a] == kUnset) sb[a] = rb;
        if (eb[a] == kUnset) eb[a] = rb;
        for (std::size_t b = a + 1; b < c; ++b) {
          sb[b] = rb;
          eb[b] = re;
        }
        for (std::size_t w = a; w < c; ++w) region[s][w] = {rb, re};
        i = c;
      }
    }
    copy_until(len);
    mark(len);
    out.sentences[s] = std::move(rebuilt);
  }
  if (edit_it != edits.end()) throw Error("apply_edits: edit targets a missing sentence");

  for (auto& entity : out.entities) {
    for (auto& m : entity.mentions) {
      if (!mention_in_bounds(doc, m)) continue;
      const auto s = static_cast<std::size_t>(m.sentence);
      m.start = static_cast<int>(start_bound[s][static_cast<std::size_t>(m.start)]);
      m.end = static_cast<int>(end_bound[s][static_cast<std::size_t>(m.end)]);
      m.surface = mention_text(out, m);
    }
  }
  const FlatView before(doc);
  for (auto& fact : out.facts) {
    std::set<WordRef> moved;
    for (const auto& ref : fact.word_evidence) {
      if (!before.contains(ref)) {
        moved.insert(ref);
        continue;
      }
      const auto s = static_cast<std::size_t>(ref.sentence);
      const auto w = static_cast<std::size_t>(ref.word);
      if (word_map[s][w]) {
        moved.insert({ref.sentence, static_cast<int>(*word_map[s][w])});
      } else {
        for (std::size_t k = region[s][w].first; k < region[s][w].second; ++k) {
          moved.insert({ref.sentence, static_cast<int>(k)});
        }
      }
    }
    fact.word_evidence = std::move(moved);
  }

  RewriteResult result;
  const FlatView after(out);
  result.provenance.reserve(before.size());
  for (std::size_t f = 0; f < before.size(); ++f) {
    const WordRef ref = before.to_pair(f);
    const auto& mapped = word_map[static_cast<std::size_t>(ref.sentence)][static_cast<std::size_t>(ref.word)];
    result.provenance.push_back(mapped ? std::optional<std::size_t>(after.to_flat({ref.sentence, static_cast<int>(*mapped)}))
                                       : std::nullopt);
  }
  result.document = std::move(out);
  return result;
}

namespace detail {

inline PerturbedDocument make_perturbed(RewriteResult r, AttackKind kind, std::optional<FactKey> scope,
                                        std::optional<std::uint64_t> seed) {
  PerturbedDocument p;
  p.document = std::move(r.document);
  p.provenance = std::move(r.provenance);
  p.kind = kind;
  p.fact_scope = std::move(scope);
  p.seed = seed;
  return p;
}

inline const RelationFact& require_fact(const Document& doc, const FactKey& key) {
  const RelationFact* f = doc.find_fact(key);
  if (f == nullptr) {
    throw Error("no fact (" + std::to_string(key.head) + ", " + std::to_string(key.tail) + ", " +
                key.relation + ") in '" + doc.doc_id + "'");
  }
  return *f;
}

/// Keeps a leading capital when the original word had one.
inline std::string match_case(const std::string& original, std::string replacement) {
  if (!original.empty() && !replacement.empty() && original[0] >= 'A' && original[0] <= 'Z' &&
      replacement[0] >= 'a' && replacement[0] <= 'z') {
    replacement[0] = static_cast<char>(replacement[0] - 'a' + 'A');
  }
  return replacement;
}

inline const std::string& word_at(const Document& doc, const WordRef& ref) {
  return doc.sentences.at(static_cast<std::size_t>(ref.sentence)).at(static_cast<std::size_t>(ref.word));
}

inline PerturbedDocument replace_word(const Document& doc, const WordRef& ref, std::string token, AttackKind kind,
                                      const FactKey& fact) {
  SpanEdit e{ref.sentence, ref.word, ref.word + 1, {std::move(token)}, true};
  return make_perturbed(apply_edits(doc, {e}), kind, fact, std::nullopt);
}

/// Rewrites every in-bounds mention of entity e to names[e]. Overlapping
/// mentions within a sentence form one cluster; the cluster's union is
/// rewritten to the name of its earliest (then longest) mention.
inline RewriteResult rewrite_entities(const Document& doc, const std::vector<std::vector<std::string>>& names) {
  struct Span {
    int sentence, start, end;
    std::size_t entity;
  };
  std::vector<Span> spans;
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    for (const auto& m : doc.entities[e].mentions) {
      if (mention_in_bounds(doc, m)) spans.push_back({m.sentence, m.start, m.end, e});
    }
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
    return std::tuple(a.sentence, a.start, -a.end, a.entity) < std::tuple(b.sentence, b.start, -b.end, b.entity);
  });
  std::vector<SpanEdit> edits;
  for (std::size_t i = 0; i < spans.size();) {
    const Span& primary = spans[i];
    int end = primary.end;
    std::size_t j = i + 1;
    while (j < spans.size() && spans[j].sentence == primary.sentence && spans[j].start < end) {
      end = std::max(end, spans[j].end);
      ++j;
    }
    edits.push_back({primary.sentence, primary.start, end, names[primary.entity], false});
    i = j;
  }
  return apply_edits(doc, std::move(edits));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evidence attacks

/// Masks every evidence word of `fact`. Returns nullopt when the fact has no
/// word evidence (unattackable).
inline std::optional<PerturbedDocument> mask_evidence(const Document& doc, const FactKey& fact,
                                                      const std::string& mask_token = "[MASK]") {
  const RelationFact& f = detail::require_fact(doc, fact);
  if (f.word_evidence.empty()) return std::nullopt;
  std::vector<SpanEdit> edits;
  for (const auto& ref : f.word_evidence) edits.push_back({ref.sentence, ref.word, ref.word + 1, {mask_token}, true});
  return detail::make_perturbed(apply_edits(doc, std::move(edits)), AttackKind::kMaskEvidence, fact, std::nullopt);
}

/// Masks the union of all facts' evidence at once.
inline PerturbedDocument mask_all_evidence(const Document& doc, const std::string& mask_token = "[MASK]") {
  std::set<WordRef> all;
  for (const auto& f : doc.facts) all.insert(f.word_evidence.begin(), f.word_evidence.end());
  std::vector<SpanEdit> edits;
  for (const auto& ref : all) edits.push_back({ref.sentence, ref.word, ref.word + 1, {mask_token}, true});
  return detail::make_perturbed(apply_edits(doc, std::move(edits)), AttackKind::kMaskEvidence, std::nullopt,
                                std::nullopt);
}

/// Antonym substitution. Takes the first evidence word (flat order) that is a
/// form of "be" or has an antonym: a be-form gets "not" inserted after it,
/// otherwise the word becomes its first listed antonym. Facts with more than
/// one reasoning path are skipped.
inline std::optional<PerturbedDocument> antonym_substitution(const Document& doc, const FactKey& fact,
                                                             const Lexicon& lexicon) {
  const RelationFact& f = detail::require_fact(doc, fact);
  if (f.reasoning_paths != 1) return std::nullopt;
  for (const auto& ref : f.word_evidence) {
    const std::string& word = detail::word_at(doc, ref);
    if (Lexicon::is_be_form(word)) {
      SpanEdit insert{ref.sentence, ref.word + 1, ref.word + 1, {"not"}, false};
      return detail::make_perturbed(apply_edits(doc, {insert}), AttackKind::kAsa, fact, std::nullopt);
    }
    const auto& ants = lexicon.antonyms(word);
    if (!ants.empty()) {
      return detail::replace_word(doc, ref, detail::match_case(word, ants.front()), AttackKind::kAsa, fact);
    }
  }
  return std::nullopt;
}

/// Synonym substitution of the first evidence word that has a synonym.
inline std::optional<PerturbedDocument> synonym_substitution(const Document& doc, const FactKey& fact,
                                                             const Lexicon& lexicon) {
  const RelationFact& f = detail::require_fact(doc, fact);
  if (f.reasoning_paths != 1) return std::nullopt;
  for (const auto& ref : f.word_evidence) {
    const std::string& word = detail::word_at(doc, ref);
    const auto& syns = lexicon.synonyms(word);
    if (!syns.empty()) {
      return detail::replace_word(doc, ref, detail::match_case(word, syns.front()), AttackKind::kSsa, fact);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Entity attacks

inline PerturbedDocument mask_entities(const Document& doc, const std::string& mask_token = "[MASK]") {
  const FlatView view(doc);
  const auto mask = mention_mask(doc, view);
  std::vector<SpanEdit> edits;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const WordRef ref = view.to_pair(i);
    edits.push_back({ref.sentence, ref.word, ref.word + 1, {mask_token}, true});
  }
  return detail::make_perturbed(apply_edits(doc, std::move(edits)), AttackKind::kEntityMask, std::nullopt,
                                std::nullopt);
}

/// Seeded uniform derangement of [0, n), by rejection from uniform shuffles.
inline std::vector<std::size_t> sample_derangement(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw Error("no derangement exists for fewer than two elements");
  std::vector<std::size_t> perm(n);
  for (;;) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    seeded_shuffle(perm, rng);
    bool fixed_point = false;
    for (std::size_t i = 0; i < n && !fixed_point; ++i) fixed_point = perm[i] == i;
    if (!fixed_point) return perm;
  }
}

/// Every mention of entity e becomes the canonical name of entity pi(e), for a
/// seeded derangement pi.
inline PerturbedDocument shuffle_entities(const Document& doc, std::uint64_t seed) {
  const std::size_t n = doc.entities.size();
  if (n < 2) {
    auto p = detail::make_perturbed(apply_edits(doc, {}), AttackKind::kEntityShuffle, std::nullopt, seed);
    p.warnings.push_back("'" + doc.doc_id + "' has fewer than two entities; shuffle is the identity");
    return p;
  }
  std::mt19937_64 rng(seed);
  const auto perm = sample_derangement(n, rng);
  std::vector<std::vector<std::string>> names(n);
  for (std::size_t e = 0; e < n; ++e) names[e] = canonical_name(doc.entities[perm[e]]);
  return detail::make_perturbed(detail::rewrite_entities(doc, names), AttackKind::kEntityShuffle, std::nullopt,
                                seed);
}

/// Every entity gets a pool name (seeded; without replacement while the pool
/// lasts; type-matched when the pool is typed) and all its mentions take it.
inline PerturbedDocument substitute_ood_entities(const Document& doc, const NamePool& pool, std::uint64_t seed) {
  if (pool.names.empty()) throw Error("substitute_ood_entities: empty name pool");
  std::mt19937_64 rng(seed);
  const bool typed = pool.typed();
  std::vector<bool> used(pool.names.size(), false);
  std::vector<std::vector<std::string>> names(doc.entities.size());
  std::vector<std::string> warnings;
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    const std::string& type = doc.entities[e].type;
    auto matches = [&](std::size_t i) { return !typed || pool.names[i].type == type; };
    bool any_type = false;
    for (std::size_t i = 0; i < pool.names.size() && !any_type; ++i) any_type = matches(i);
    if (!any_type) {
      warnings.push_back("no pool name of type '" + type + "' for entity " + std::to_string(e) +
                         ", sampling untyped");
    }
    auto eligible = [&](std::size_t i) { return !any_type || matches(i); };
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < pool.names.size(); ++i) {
      if (eligible(i) && !used[i]) candidates.push_back(i);
    }
    if (candidates.empty()) {
      warnings.push_back("name pool exhausted at entity " + std::to_string(e) + ", sampling with replacement");
      for (std::size_t i = 0; i < pool.names.size(); ++i) {
        if (eligible(i)) candidates.push_back(i);
      }
    }
    const std::size_t pick = candidates[uniform_index(rng, candidates.size())];
    used[pick] = true;
    names[e] = pool.names[pick].tokens;
  }
  auto p = detail::make_perturbed(detail::rewrite_entities(doc, names), AttackKind::kEntityOod, std::nullopt, seed);
  p.warnings = std::move(warnings);
  return p;
}

}  // namespace rexprobe

#endif  // REXPROBE_ATTACKS_HPP
