#ifndef REXPROBE_CORPUS_HPP
#define REXPROBE_CORPUS_HPP

// DocRED-shaped documents plus the word-level evidence overlay.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rexprobe/common.hpp"

namespace rexprobe {

using Json = nlohmann::json;

/// JSON that parsed but does not have the expected shape.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct Mention {
  int sentence = 0;
  int start = 0;
  int end = 0;  // exclusive
  std::string surface;
  bool is_pronoun = false;

  bool operator==(const Mention&) const = default;
};

struct Entity {
  int entity_id = 0;
  std::string type;
  std::vector<Mention> mentions;

  bool operator==(const Entity&) const = default;
};

struct WordRef {
  int sentence = 0;
  int word = 0;

  auto operator<=>(const WordRef&) const = default;
};

/// Identity of a relational fact inside one document.
struct FactKey {
  int head = 0;
  int tail = 0;
  std::string relation;

  auto operator<=>(const FactKey&) const = default;
};

struct RelationFact {
  int head = 0;
  int tail = 0;
  std::string relation;
  std::set<int> sentence_evidence;
  std::set<WordRef> word_evidence;
  int reasoning_paths = 1;

  FactKey key() const { return {head, tail, relation}; }
  bool operator==(const RelationFact&) const = default;
};

inline bool is_na_relation(const std::string& code) {
  return code == "NA" || code == "Na" || code == "na";
}

struct Document {
  std::string doc_id;
  std::string title;
  std::vector<std::vector<std::string>> sentences;
  std::vector<Entity> entities;
  std::vector<RelationFact> facts;

  std::size_t word_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.size();
    return n;
  }

  const RelationFact* find_fact(const FactKey& key) const {
    for (const auto& f : facts) {
      if (f.key() == key) return &f;
    }
    return nullptr;
  }

  bool operator==(const Document&) const = default;
};

/// Flat token view of a document with a bijection between flat indices and
/// (sentence, word) pairs.
class FlatView {
 public:
  FlatView() = default;
  explicit FlatView(const Document& doc) {
    sentence_starts_.reserve(doc.sentences.size());
    for (const auto& sentence : doc.sentences) {
      sentence_starts_.push_back(words_.size());
      words_.insert(words_.end(), sentence.begin(), sentence.end());
    }
  }

  const std::vector<std::string>& words() const { return words_; }
  std::size_t size() const { return words_.size(); }

  bool contains(const WordRef& ref) const {
    if (ref.sentence < 0 || ref.word < 0) return false;
    const auto s = static_cast<std::size_t>(ref.sentence);
    if (s >= sentence_starts_.size()) return false;
    return static_cast<std::size_t>(ref.word) < sentence_length(s);
  }

  std::size_t to_flat(const WordRef& ref) const {
    return sentence_starts_.at(static_cast<std::size_t>(ref.sentence)) +
           static_cast<std::size_t>(ref.word);
  }

  WordRef to_pair(std::size_t flat) const {
    // Empty sentences share a start offset; upper_bound lands past all of
    // them so the owning sentence is the last one starting at or before flat.
    auto it = std::upper_bound(sentence_starts_.begin(), sentence_starts_.end(), flat);
    const auto s = static_cast<std::size_t>(it - sentence_starts_.begin()) - 1;
    return {static_cast<int>(s), static_cast<int>(flat - sentence_starts_[s])};
  }

  std::size_t sentence_start(std::size_t sentence) const {
    return sentence_starts_.at(sentence);
  }

  std::size_t sentence_length(std::size_t sentence) const {
    const std::size_t next = sentence + 1 < sentence_starts_.size()
                                 ? sentence_starts_[sentence + 1]
                                 : words_.size();
    return next - sentence_starts_[sentence];
  }

  /// Half-open flat range of a mention. Assumes the mention is in bounds.
  std::pair<std::size_t, std::size_t> mention_range(const Mention& m) const {
    const std::size_t base = sentence_start(static_cast<std::size_t>(m.sentence));
    return {base + static_cast<std::size_t>(m.start),
            base + static_cast<std::size_t>(m.end)};
  }

 private:
  std::vector<std::string> words_;
  std::vector<std::size_t> sentence_starts_;
};

inline FlatView flat_view(const Document& doc) { return FlatView(doc); }

/// True iff the mention's span lies inside its sentence.
inline bool mention_in_bounds(const Document& doc, const Mention& m) {
  if (m.sentence < 0 || static_cast<std::size_t>(m.sentence) >= doc.sentences.size()) {
    return false;
  }
  const auto& s = doc.sentences[static_cast<std::size_t>(m.sentence)];
  return m.start >= 0 && m.start < m.end && static_cast<std::size_t>(m.end) <= s.size();
}

inline std::string mention_text(const Document& doc, const Mention& m) {
  const auto& s = doc.sentences.at(static_cast<std::size_t>(m.sentence));
  return join_words(s, static_cast<std::size_t>(m.start), static_cast<std::size_t>(m.end));
}

/// Tokens of the entity's first non-pronoun mention in document order
/// (sentence, then start). Falls back to pronoun mentions when the entity has
/// nothing else.
inline std::vector<std::string> canonical_name(const Entity& entity) {
  const Mention* best = nullptr;
  for (int pass = 0; pass < 2 && best == nullptr; ++pass) {
    for (const auto& m : entity.mentions) {
      if (pass == 0 && m.is_pronoun) continue;
      if (best == nullptr ||
          std::pair(m.sentence, m.start) < std::pair(best->sentence, best->start)) {
        best = &m;
      }
    }
  }
  if (best == nullptr) return {};
  return split_whitespace(best->surface);
}

/// Flat positions covered by any mention of any entity.
inline std::vector<bool> mention_mask(const Document& doc, const FlatView& view) {
  std::vector<bool> mask(view.size(), false);
  for (const auto& e : doc.entities) {
    for (const auto& m : e.mentions) {
      if (!mention_in_bounds(doc, m)) continue;
      auto [b, en] = view.mention_range(m);
      for (std::size_t i = b; i < en; ++i) mask[i] = true;
    }
  }
  return mask;
}

struct Corpus {
  std::vector<Document> documents;
  std::set<std::string> relations;
  std::vector<std::string> warnings;

  const Document* find(const std::string& doc_id) const {
    for (const auto& d : documents) {
      if (d.doc_id == doc_id) return &d;
    }
    return nullptr;
  }
};

inline std::set<std::string> relation_vocabulary(const std::vector<Document>& docs) {
  std::set<std::string> vocab;
  for (const auto& d : docs) {
    for (const auto& f : d.facts) {
      if (!is_na_relation(f.relation)) vocab.insert(f.relation);
    }
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// JSON (corpus schema)

namespace detail {

inline const Json& require(const Json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw SchemaError(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(path, std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T get_as(const Json& value, const std::string& path) {
  try {
    return value.get<T>();
  } catch (const Json::exception& e) {
    throw SchemaError(path, e.what());
  }
}

inline std::pair<int, int> get_span(const Json& pos, const std::string& path) {
  if (!pos.is_array() || pos.size() != 2) throw SchemaError(path, "expected [start, end]");
  return {get_as<int>(pos[0], path + "[0]"), get_as<int>(pos[1], path + "[1]")};
}

inline Json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(source + ": malformed JSON at byte " + std::to_string(e.byte) + ": " +
                         e.what(),
                     e.byte);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace detail

/// Builds a Document from one corpus-schema object. Mention surfaces are
/// re-derived from the tokens when the span is in bounds.
inline Document document_from_json(const Json& obj, const std::string& path,
                                   std::vector<std::string>* warnings = nullptr) {
  using detail::get_as;
  using detail::require;
  Document doc;
  doc.title = get_as<std::string>(require(obj, "title", path), path + ".title");
  doc.doc_id = obj.contains("doc_id") ? get_as<std::string>(obj["doc_id"], path + ".doc_id")
                                      : doc.title;
  doc.sentences = get_as<std::vector<std::vector<std::string>>>(require(obj, "sents", path),
                                                                path + ".sents");
  const Json& vertex = require(obj, "vertexSet", path);
  if (!vertex.is_array()) throw SchemaError(path + ".vertexSet", "expected an array");
  for (std::size_t e = 0; e < vertex.size(); ++e) {
    const std::string epath = path + ".vertexSet[" + std::to_string(e) + "]";
    if (!vertex[e].is_array()) throw SchemaError(epath, "expected an array of mentions");
    Entity entity;
    entity.entity_id = static_cast<int>(e);
    for (std::size_t j = 0; j < vertex[e].size(); ++j) {
      const Json& m = vertex[e][j];
      const std::string mpath = epath + "[" + std::to_string(j) + "]";
      Mention mention;
      mention.sentence = get_as<int>(require(m, "sent_id", mpath), mpath + ".sent_id");
      std::tie(mention.start, mention.end) = detail::get_span(require(m, "pos", mpath), mpath + ".pos");
      mention.surface = m.contains("name") ? get_as<std::string>(m["name"], mpath + ".name") : "";
      mention.is_pronoun = m.value("is_pronoun", false);
      if (entity.type.empty() && m.contains("type")) {
        entity.type = get_as<std::string>(m["type"], mpath + ".type");
      }
      if (mention_in_bounds(doc, mention)) {
        std::string text = mention_text(doc, mention);
        if (warnings != nullptr && !mention.surface.empty() && text != mention.surface) {
          warnings->push_back(mpath + ": name '" + mention.surface +
                              "' differs from spanned tokens '" + text + "', using tokens");
        }
        mention.surface = std::move(text);
      }
      entity.mentions.push_back(std::move(mention));
    }
    doc.entities.push_back(std::move(entity));
  }
  if (obj.contains("labels")) {
    const Json& labels = obj["labels"];
    if (!labels.is_array()) throw SchemaError(path + ".labels", "expected an array");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const Json& l = labels[i];
      const std::string lpath = path + ".labels[" + std::to_string(i) + "]";
      RelationFact fact;
      fact.head = get_as<int>(require(l, "h", lpath), lpath + ".h");
      fact.tail = get_as<int>(require(l, "t", lpath), lpath + ".t");
      fact.relation = get_as<std::string>(require(l, "r", lpath), lpath + ".r");
      if (l.contains("evidence")) {
        for (int s : get_as<std::vector<int>>(l["evidence"], lpath + ".evidence")) {
          fact.sentence_evidence.insert(s);
        }
      }
      if (l.contains("word_evidence")) {
        for (const auto& ref : l["word_evidence"]) {
          auto [s, w] = detail::get_span(ref, lpath + ".word_evidence");
          fact.word_evidence.insert({s, w});
        }
      }
      fact.reasoning_paths = l.value("reasoning_paths", 1);
      doc.facts.push_back(std::move(fact));
    }
  }
  return doc;
}

/// Corpus-schema object for a document. Evidence overlay fields ride along as
/// extra keys on labels and mentions so the round trip is lossless.
inline Json document_to_json(const Document& doc) {
  Json obj;
  obj["title"] = doc.title;
  if (doc.doc_id != doc.title) obj["doc_id"] = doc.doc_id;
  obj["sents"] = doc.sentences;
  Json vertex = Json::array();
  for (const auto& e : doc.entities) {
    Json mentions = Json::array();
    for (const auto& m : e.mentions) {
      Json jm = {{"name", m.surface}, {"sent_id", m.sentence}, {"pos", {m.start, m.end}},
                 {"type", e.type}};
      if (m.is_pronoun) jm["is_pronoun"] = true;
      mentions.push_back(std::move(jm));
    }
    vertex.push_back(std::move(mentions));
  }
  obj["vertexSet"] = std::move(vertex);
  Json labels = Json::array();
  for (const auto& f : doc.facts) {
    Json l = {{"h", f.head}, {"t", f.tail}, {"r", f.relation},
              {"evidence", std::vector<int>(f.sentence_evidence.begin(), f.sentence_evidence.end())}};
    Json refs = Json::array();
    for (const auto& ref : f.word_evidence) refs.push_back({ref.sentence, ref.word});
    l["word_evidence"] = std::move(refs);
    l["reasoning_paths"] = f.reasoning_paths;
    labels.push_back(std::move(l));
  }
  obj["labels"] = std::move(labels);
  return obj;
}

/// Merges a word-level evidence overlay into already-parsed documents.
inline void apply_overlay(std::vector<Document>& docs, const Json& overlay,
                          std::vector<std::string>& warnings) {
  using detail::get_as;
  using detail::require;
  if (!overlay.is_array()) throw SchemaError("overlay", "expected an array");
  std::map<std::string, std::size_t> by_title;
  for (std::size_t i = 0; i < docs.size(); ++i) by_title.emplace(docs[i].title, i);

  std::vector<std::string> offenders;
  for (std::size_t i = 0; i < overlay.size(); ++i) {
    const Json& entry = overlay[i];
    const std::string path = "overlay[" + std::to_string(i) + "]";
    const auto title = get_as<std::string>(require(entry, "title", path), path + ".title");
    auto found = by_title.find(title);
    if (found == by_title.end()) {
      offenders.push_back(path + ": unknown document '" + title + "'");
      continue;
    }
    Document& doc = docs[found->second];
    if (entry.contains("facts")) {
      for (std::size_t j = 0; j < entry["facts"].size(); ++j) {
        const Json& f = entry["facts"][j];
        const std::string fpath = path + ".facts[" + std::to_string(j) + "]";
        FactKey key{get_as<int>(require(f, "h", fpath), fpath + ".h"),
                    get_as<int>(require(f, "t", fpath), fpath + ".t"),
                    get_as<std::string>(require(f, "r", fpath), fpath + ".r")};
        auto it = std::find_if(doc.facts.begin(), doc.facts.end(),
                               [&](const RelationFact& rf) { return rf.key() == key; });
        if (it == doc.facts.end()) {
          offenders.push_back(fpath + ": no fact (" + std::to_string(key.head) + ", " +
                              std::to_string(key.tail) + ", " + key.relation + ") in '" +
                              title + "'");
          continue;
        }
        it->word_evidence.clear();
        if (f.contains("word_evidence")) {
          for (const auto& ref : f["word_evidence"]) {
            auto [s, w] = detail::get_span(ref, fpath + ".word_evidence");
            it->word_evidence.insert({s, w});
          }
        }
        if (f.contains("reasoning_paths")) {
          it->reasoning_paths = get_as<int>(f["reasoning_paths"], fpath + ".reasoning_paths");
        } else {
          it->reasoning_paths = 1;
          warnings.push_back(fpath + ": reasoning_paths absent, assuming 1");
        }
      }
    }
    if (entry.contains("pronouns")) {
      for (std::size_t j = 0; j < entry["pronouns"].size(); ++j) {
        const Json& p = entry["pronouns"][j];
        const std::string ppath = path + ".pronouns[" + std::to_string(j) + "]";
        const int e = get_as<int>(require(p, "entity", ppath), ppath + ".entity");
        if (e < 0 || static_cast<std::size_t>(e) >= doc.entities.size()) {
          offenders.push_back(ppath + ": unknown entity " + std::to_string(e) + " in '" +
                              title + "'");
          continue;
        }
        Mention m;
        m.sentence = get_as<int>(require(p, "sent_id", ppath), ppath + ".sent_id");
        std::tie(m.start, m.end) = detail::get_span(require(p, "pos", ppath), ppath + ".pos");
        m.is_pronoun = true;
        if (mention_in_bounds(doc, m)) m.surface = mention_text(doc, m);
        doc.entities[static_cast<std::size_t>(e)].mentions.push_back(std::move(m));
      }
    }
  }
  if (!offenders.empty()) {
    std::string msg = "overlay references " + std::to_string(offenders.size()) +
                      " unknown item(s): " + offenders.front();
    throw ReferentialError(msg, std::move(offenders));
  }
}

/// Parses corpus text (and optionally overlay text). Schema problems throw;
/// data invariants are left to validate_corpus.
inline Corpus parse_corpus(const std::string& corpus_text,
                           const std::optional<std::string>& overlay_text = std::nullopt) {
  Corpus corpus;
  const Json root = detail::parse_json_text(corpus_text, "corpus");
  if (!root.is_array()) throw SchemaError("corpus", "expected an array of documents");
  std::map<std::string, int> seen_ids;
  for (std::size_t i = 0; i < root.size(); ++i) {
    Document doc = document_from_json(root[i], "corpus[" + std::to_string(i) + "]",
                                      &corpus.warnings);
    if (int n = seen_ids[doc.doc_id]++; n > 0) {
      corpus.warnings.push_back("duplicate document id '" + doc.doc_id + "', renamed");
      doc.doc_id += "#" + std::to_string(n);
    }
    corpus.documents.push_back(std::move(doc));
  }
  if (overlay_text) {
    const Json overlay = detail::parse_json_text(*overlay_text, "overlay");
    apply_overlay(corpus.documents, overlay, corpus.warnings);
  }
  corpus.relations = relation_vocabulary(corpus.documents);
  return corpus;
}

inline Corpus load_corpus(const std::filesystem::path& corpus_path,
                          const std::optional<std::filesystem::path>& overlay_path = std::nullopt) {
  std::optional<std::string> overlay_text;
  if (overlay_path) overlay_text = detail::read_file(*overlay_path);
  return parse_corpus(detail::read_file(corpus_path), overlay_text);
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
  std::string kind;
  std::string doc_id;
  std::string path;
  std::string message;
};

struct CorpusSummary {
  std::size_t documents = 0;
  std::size_t entities = 0;
  std::size_t facts = 0;
  std::size_t evidence_words = 0;
  std::size_t pronoun_mentions = 0;
  std::size_t words = 0;

  bool operator==(const CorpusSummary&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;
  CorpusSummary summary;

  bool ok() const { return violations.empty(); }
};

/// Appends every invariant violation of `doc` to `out`.
inline void validate_document(const Document& doc, const std::set<std::string>& relations,
                              std::vector<Violation>& out) {
  auto add = [&](std::string kind, std::string path, std::string message) {
    out.push_back({std::move(kind), doc.doc_id, std::move(path), std::move(message)});
  };
  const FlatView view(doc);
  for (std::size_t e = 0; e < doc.entities.size(); ++e) {
    const Entity& entity = doc.entities[e];
    const std::string epath = "entities[" + std::to_string(e) + "]";
    if (entity.mentions.empty()) add("no_mentions", epath, "entity has no mentions");
    for (std::size_t j = 0; j < entity.mentions.size(); ++j) {
      const Mention& m = entity.mentions[j];
      const std::string mpath = epath + ".mentions[" + std::to_string(j) + "]";
      if (m.sentence < 0 || static_cast<std::size_t>(m.sentence) >= doc.sentences.size()) {
        add("bad_sentence_index", mpath, "sentence " + std::to_string(m.sentence) + " does not exist");
        continue;
      }
      if (m.start >= m.end) {
        add("empty_span", mpath, "span [" + std::to_string(m.start) + ", " + std::to_string(m.end) + ") is empty");
        continue;
      }
      if (!mention_in_bounds(doc, m)) {
        add("span_out_of_bounds", mpath,
            "span [" + std::to_string(m.start) + ", " + std::to_string(m.end) +
                ") exceeds sentence length " +
                std::to_string(doc.sentences[static_cast<std::size_t>(m.sentence)].size()));
        continue;
      }
      if (mention_text(doc, m) != m.surface) {
        add("surface_mismatch", mpath, "surface '" + m.surface + "' != '" + mention_text(doc, m) + "'");
      }
    }
  }
  std::set<FactKey> seen;
  const int n_entities = static_cast<int>(doc.entities.size());
  for (std::size_t i = 0; i < doc.facts.size(); ++i) {
    const RelationFact& f = doc.facts[i];
    const std::string fpath = "facts[" + std::to_string(i) + "]";
    if (f.head < 0 || f.head >= n_entities || f.tail < 0 || f.tail >= n_entities) {
      add("fact_index_out_of_range", fpath, "entity index out of range");
    } else if (f.head == f.tail) {
      add("self_relation", fpath, "head equals tail");
    }
    if (!seen.insert(f.key()).second) add("duplicate_fact", fpath, "duplicate triple");
    if (is_na_relation(f.relation)) {
      add("na_fact", fpath, "NA stored as a fact");
    } else if (!relations.contains(f.relation)) {
      add("unknown_relation", fpath, "relation '" + f.relation + "' not in vocabulary");
    }
    for (int s : f.sentence_evidence) {
      if (s < 0 || static_cast<std::size_t>(s) >= doc.sentences.size()) {
        add("sentence_evidence_out_of_bounds", fpath, "sentence " + std::to_string(s));
      }
    }
    for (const auto& ref : f.word_evidence) {
      if (!view.contains(ref)) {
        add("word_evidence_out_of_bounds", fpath,
            "word (" + std::to_string(ref.sentence) + ", " + std::to_string(ref.word) + ")");
      }
    }
    if (f.reasoning_paths < 1) add("bad_reasoning_paths", fpath, "reasoning_paths < 1");
  }
}

inline CorpusSummary summarize(const std::vector<Document>& docs) {
  CorpusSummary s;
  s.documents = docs.size();
  for (const auto& d : docs) {
    s.entities += d.entities.size();
    s.facts += d.facts.size();
    s.words += d.word_count();
    for (const auto& f : d.facts) s.evidence_words += f.word_evidence.size();
    for (const auto& e : d.entities) {
      for (const auto& m : e.mentions) s.pronoun_mentions += m.is_pronoun ? 1 : 0;
    }
  }
  return s;
}

inline ValidationReport validate_corpus(const Corpus& corpus) {
  ValidationReport report;
  for (const auto& doc : corpus.documents) {
    validate_document(doc, corpus.relations, report.violations);
  }
  report.summary = summarize(corpus.documents);
  return report;
}

inline Json to_json(const CorpusSummary& s) {
  return {{"documents", s.documents},
          {"entities", s.entities},
          {"facts", s.facts},
          {"evidence_words", s.evidence_words},
          {"pronoun_mentions", s.pronoun_mentions},
          {"words", s.words}};
}

inline Json to_json(const ValidationReport& report) {
  Json violations = Json::array();
  for (const auto& v : report.violations) {
    violations.push_back({{"kind", v.kind}, {"doc_id", v.doc_id}, {"path", v.path},
                          {"message", v.message}});
  }
  return {{"violations", std::move(violations)}, {"summary", to_json(report.summary)}};
}

}  // namespace rexprobe

#endif  // REXPROBE_CORPUS_HPP
