#ifndef REXPROBE_TESTS_SUPPORT_HPP
#define REXPROBE_TESTS_SUPPORT_HPP

// Shared by the unit tests and the acceptance runner. No test framework here.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rexprobe/attacks.hpp"
#include "rexprobe/corpus.hpp"
#include "rexprobe/refmodel.hpp"

namespace rexprobe::testing {

namespace fs = std::filesystem;

inline fs::path data_dir() { return REXPROBE_DATA_DIR; }
inline fs::path fixture(const std::string& name) { return data_dir() / "fixture" / name; }
inline fs::path trigger(const std::string& name) { return data_dir() / "trigger" / name; }
inline std::string cli_path() { return REXPROBE_CLI; }

inline Corpus fixture_corpus() { return load_corpus(fixture("corpus.json"), fixture("overlay.json")); }
inline Corpus trigger_corpus() { return load_corpus(trigger("corpus.json"), trigger("overlay.json")); }

inline Lexicon fixture_lexicon() { return load_lexicon(fixture("lexicon.tsv")); }

inline std::set<std::string> fixture_training_names() {
  std::set<std::string> out;
  std::ifstream in(fixture("training_names.txt"));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.insert(line);
  }
  return out;
}

inline NamePool fixture_pool() { return load_name_pool(fixture("names.tsv"), fixture_training_names()); }

/// Fresh empty directory, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("rexprobe-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string read_text(const fs::path& p) { return detail::read_file(p); }

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

/// Runs the rexprobe executable with `args` (already quoted as needed) and
/// returns its exit status. stderr is kept out of test logs unless asked for.
inline int run_cli(const std::string& args, bool quiet = true) {
  std::string cmd = shell_quote(cli_path()) + " " + args;
  if (quiet) cmd += " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (status == -1 || !WIFEXITED(status)) return -1;
  return WEXITSTATUS(status);
}

inline RefModelParams trained_fixture_params() {
  static const RefModelParams params = train(fixture_corpus(), TrainOptions{}).params;
  return params;
}

/// Random weights in [-scale, scale] for every relation in `vocab`.
inline RefModelParams random_params(const std::set<std::string>& vocab, std::mt19937_64& rng, double scale = 3.0,
                                    std::size_t dim = 16) {
  std::uniform_real_distribution<double> u(-scale, scale);
  RefModelParams p = RefModelParams::zeros(dim, vocab);
  for (auto& [r, rw] : p.relations) {
    for (double& w : rw.w) w = u(rng);
    rw.b = u(rng) / scale;
  }
  return p;
}

struct SampledFact {
  const Document* doc;
  FactKey fact;
};

/// Random (document, ordered pair, relation) triples over a corpus.
inline std::vector<SampledFact> sample_facts(const Corpus& corpus, const RefModelParams& params, std::size_t n,
                                             std::mt19937_64& rng) {
  std::vector<std::string> relations;
  for (const auto& [r, rw] : params.relations) relations.push_back(r);
  std::vector<SampledFact> out;
  while (out.size() < n) {
    const Document& doc = corpus.documents[uniform_index(rng, corpus.documents.size())];
    const std::size_t m = doc.entities.size();
    if (m < 2) continue;
    const int h = static_cast<int>(uniform_index(rng, m));
    const int t = static_cast<int>(uniform_index(rng, m));
    if (h == t) continue;
    out.push_back({&doc, {h, t, relations[uniform_index(rng, relations.size())]}});
  }
  return out;
}

/// Parameters under which every pair of the trigger document is predicted
/// as P26 and nothing is predicted once "married" is masked. Only the
/// context block is nonzero: w_ctx = lambda * d with d = e(married) - e(mask),
/// and b sits halfway between the two logits.
inline RefModelParams trigger_params(const std::string& mask = "[MASK]", double lambda = 40.0) {
  const Corpus corpus = trigger_corpus();
  const Document& doc = corpus.documents.front();
  const EmbeddingTable table(16);
  RefModelParams p = RefModelParams::zeros(16, {"P26"});
  const auto married = table.vector("married");
  const auto masked = table.vector(mask);
  std::vector<double> d(16);
  for (std::size_t k = 0; k < 16; ++k) d[k] = married[k] - masked[k];

  auto context_mean = [&](const Document& x) {
    const Embedding e = embed_document(x, table);
    std::vector<double> m(16, 0.0);
    for (std::size_t t = 0; t < e.words; ++t) {
      for (std::size_t k = 0; k < 16; ++k) m[k] += e.row(t)[k] / static_cast<double>(e.words);
    }
    return m;
  };
  const auto before = context_mean(doc);
  const auto after = context_mean(mask_evidence(doc, doc.facts.front().key(), mask)->document);
  double db = 0.0, da = 0.0;
  for (std::size_t k = 0; k < 16; ++k) {
    db += d[k] * before[k];
    da += d[k] * after[k];
  }
  auto& rw = p.relations["P26"];
  for (std::size_t k = 0; k < 16; ++k) rw.w[32 + k] = lambda * d[k];
  rw.b = -lambda * (db + da) / 2.0;
  return p;
}

// ---------------------------------------------------------------------------
// Fuzzed documents

inline const std::vector<std::string>& fuzz_vocabulary() {
  static const std::vector<std::string> words{
      "the", "The", "was", "is", "were", "born", "northern", "North", "won", "held", "later", "city", "of",
      "in", ".", ",", "Alpha", "Beta", "Gamma", "Delta", "Omega", "not", "[MASK]", "capital", "died", "Věra"};
  return words;
}

inline std::string fuzz_relation(std::mt19937_64& rng) {
  static const std::vector<std::string> rels{"P17", "P19", "P27", "P131", "P569"};
  return rels[uniform_index(rng, rels.size())];
}

/// A random document that satisfies every corpus invariant.
inline Document random_document(std::mt19937_64& rng, const std::string& doc_id) {
  static const std::vector<std::string> types{"PER", "LOC", "ORG", "TIME", "MISC", "NUM"};
  const auto& vocab = fuzz_vocabulary();
  Document doc;
  doc.doc_id = doc_id;
  doc.title = doc_id;
  const std::size_t n_sent = 1 + uniform_index(rng, 4);
  for (std::size_t s = 0; s < n_sent; ++s) {
    std::vector<std::string> words(1 + uniform_index(rng, 12));
    for (auto& w : words) w = vocab[uniform_index(rng, vocab.size())];
    doc.sentences.push_back(std::move(words));
  }
  const std::size_t n_ent = uniform_index(rng, 6);
  for (std::size_t e = 0; e < n_ent; ++e) {
    Entity entity;
    entity.entity_id = static_cast<int>(e);
    entity.type = types[uniform_index(rng, types.size())];
    const std::size_t n_mentions = 1 + uniform_index(rng, 3);
    for (std::size_t j = 0; j < n_mentions; ++j) {
      Mention m;
      m.sentence = static_cast<int>(uniform_index(rng, n_sent));
      const std::size_t len = doc.sentences[static_cast<std::size_t>(m.sentence)].size();
      m.start = static_cast<int>(uniform_index(rng, len));
      m.end = m.start + 1 + static_cast<int>(uniform_index(rng, std::min<std::size_t>(3, len - static_cast<std::size_t>(m.start))));
      m.is_pronoun = uniform_index(rng, 6) == 0;
      m.surface = mention_text(doc, m);
      entity.mentions.push_back(std::move(m));
    }
    doc.entities.push_back(std::move(entity));
  }
  if (n_ent >= 2) {
    const std::size_t n_facts = uniform_index(rng, 5);
    const FlatView view(doc);
    std::set<FactKey> seen;
    for (std::size_t i = 0; i < n_facts; ++i) {
      RelationFact f;
      f.head = static_cast<int>(uniform_index(rng, n_ent));
      f.tail = static_cast<int>(uniform_index(rng, n_ent));
      if (f.head == f.tail) continue;
      f.relation = fuzz_relation(rng);
      if (!seen.insert(f.key()).second) continue;
      const std::size_t n_ev = uniform_index(rng, 5);
      for (std::size_t k = 0; k < n_ev; ++k) f.word_evidence.insert(view.to_pair(uniform_index(rng, view.size())));
      for (const auto& ref : f.word_evidence) f.sentence_evidence.insert(ref.sentence);
      f.reasoning_paths = uniform_index(rng, 4) == 0 ? 2 : 1;
      doc.facts.push_back(std::move(f));
    }
  }
  return doc;
}

/// A fixture document with its evidence sets redrawn at random.
inline Document reshuffled_fixture_document(const Document& base, std::mt19937_64& rng) {
  Document doc = base;
  const FlatView view(doc);
  for (auto& f : doc.facts) {
    f.word_evidence.clear();
    const std::size_t n_ev = uniform_index(rng, 6);
    for (std::size_t k = 0; k < n_ev; ++k) f.word_evidence.insert(view.to_pair(uniform_index(rng, view.size())));
    f.reasoning_paths = uniform_index(rng, 4) == 0 ? 2 : 1;
  }
  return doc;
}

/// Every attack output for one document (per-fact attacks once per fact).
inline std::vector<PerturbedDocument> all_attacks(const Document& doc, const Lexicon& lexicon, const NamePool& pool,
                                                  std::uint64_t seed) {
  std::vector<PerturbedDocument> out;
  for (const auto& f : doc.facts) {
    if (auto p = mask_evidence(doc, f.key())) out.push_back(std::move(*p));
    if (auto p = antonym_substitution(doc, f.key(), lexicon)) out.push_back(std::move(*p));
    if (auto p = synonym_substitution(doc, f.key(), lexicon)) out.push_back(std::move(*p));
  }
  out.push_back(mask_all_evidence(doc));
  out.push_back(mask_entities(doc));
  out.push_back(shuffle_entities(doc, seed));
  out.push_back(substitute_ood_entities(doc, pool, seed));
  return out;
}

/// Empty string when `p` is a well-formed perturbation of `original`,
/// otherwise a description of the first problem.
inline std::string check_perturbation(const Document& original, const PerturbedDocument& p) {
  std::vector<Violation> violations;
  std::set<std::string> vocab = relation_vocabulary({original});
  validate_document(p.document, vocab, violations);
  if (!violations.empty()) return violations.front().kind + " at " + violations.front().path + ": " + violations.front().message;
  if (p.document.facts.size() != original.facts.size()) return "fact count changed";
  if (p.document.entities.size() != original.entities.size()) return "entity count changed";
  if (p.provenance.size() != original.word_count()) return "provenance length differs from original word count";
  std::set<std::size_t> targets;
  for (const auto& v : p.provenance) {
    if (!v) continue;
    if (*v >= p.document.word_count()) return "provenance target out of range";
    if (!targets.insert(*v).second) return "provenance not injective";
  }
  return {};
}

}  // namespace rexprobe::testing

#endif  // REXPROBE_TESTS_SUPPORT_HPP
