#ifndef REXPROBE_COMMANDS_HPP
#define REXPROBE_COMMANDS_HPP

// Subcommand implementations shared by the rexprobe executable and the tests.
// Each command reads a RunConfig, writes its artifacts under config.out, and
// returns an exit code: 0 success, 1 domain findings, 2 environment or usage
// problems.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rexprobe/adapter.hpp"
#include "rexprobe/attacks.hpp"
#include "rexprobe/attribution.hpp"
#include "rexprobe/corpus.hpp"
#include "rexprobe/metrics.hpp"
#include "rexprobe/refmodel.hpp"
#include "rexprobe/report.hpp"

namespace rexprobe {

enum class LogLevel { kDebug, kInfo, kWarn, kError };
using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Raised for bad flags or environment problems; maps to exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kFindings = 1;
inline constexpr int kEnvironment = 2;
}  // namespace exit_code

struct RunConfig {
  std::string corpus;
  std::string overlay;
  std::string adapter = "builtin:refmodel";
  std::string params;
  std::uint64_t seed = 13;
  std::string out = "rexprobe-out";
  bool force = false;
  int jobs = 1;
  int timeout_ms = 30000;

  // train-ref
  int epochs = 50;
  double lr = 0.1;
  double negative_ratio = 1.0;
  std::size_t dim = 16;
  double tau = 0.5;

  // attack
  std::string kind;
  std::string lexicon;
  std::string pool;
  std::string training_names;
  std::string mask_token = "[MASK]";
  bool joint = false;

  // evaluate
  std::string perturbed;
  std::string before;
  std::string after;

  // attribute / map / probe / profile
  int steps = 128;
  bool resume = false;
  std::string attributions;
  std::size_t k_max = 100;
  bool svg = false;
  std::vector<std::size_t> k_list{0, 1, 2, 5, 10, 20, 50};
  std::size_t k = 5;
  std::size_t max_len = 512;
  bool absolute = false;

  // serve-ref
  std::string tcp;
};

inline Json to_json(const RunConfig& c) {
  return {{"corpus", c.corpus},
          {"overlay", c.overlay},
          {"adapter", c.adapter},
          {"params", c.params},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"negative_ratio", c.negative_ratio},
          {"dim", c.dim},
          {"tau", c.tau},
          {"kind", c.kind},
          {"lexicon", c.lexicon},
          {"pool", c.pool},
          {"training_names", c.training_names},
          {"mask_token", c.mask_token},
          {"joint", c.joint},
          {"perturbed", c.perturbed},
          {"before", c.before},
          {"after", c.after},
          {"steps", c.steps},
          {"attributions", c.attributions},
          {"k_max", c.k_max},
          {"k_list", c.k_list},
          {"k", c.k},
          {"max_len", c.max_len},
          {"absolute", c.absolute}};
}

/// Hex FNV-1a of the canonical config JSON. Output location and overwrite
/// flags are excluded so the hash identifies the computation only.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json(c).dump())));
  return buf;
}

namespace detail {

inline void log(const LogSink& sink, LogLevel level, const std::string& msg) {
  if (sink) sink(level, msg);
}

inline std::filesystem::path output_path(const RunConfig& c, const std::string& name) {
  return std::filesystem::path(c.out) / name;
}

/// Refuses to clobber existing outputs unless --force.
inline void claim_outputs(const RunConfig& c, const std::vector<std::string>& names) {
  std::filesystem::create_directories(c.out);
  if (c.force) return;
  for (const auto& n : names) {
    const auto p = output_path(c, n);
    if (std::filesystem::exists(p)) throw UsageError(p.string() + " exists (use --force to overwrite)");
  }
}

inline std::ofstream open_output(const std::filesystem::path& p, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(p, std::ios::out | std::ios::binary | mode);
  if (!out) throw UsageError("cannot write " + p.string());
  return out;
}

inline void write_json_file(const std::filesystem::path& p, const Json& j) {
  auto out = open_output(p);
  out << j.dump(2) << '\n';
}

inline Json manifest_base(const std::string& command, const RunConfig& c) {
  return {{"command", command}, {"seed", c.seed}, {"config_hash", config_hash(c)}};
}

inline Corpus load_configured_corpus(const RunConfig& c, const LogSink& sink) {
  if (c.corpus.empty()) throw UsageError("--corpus is required");
  std::optional<std::filesystem::path> overlay;
  if (!c.overlay.empty()) overlay = c.overlay;
  if (!std::filesystem::exists(c.corpus)) throw UsageError("corpus file not found: " + c.corpus);
  if (overlay && !std::filesystem::exists(*overlay)) throw UsageError("overlay file not found: " + c.overlay);
  Corpus corpus = load_corpus(c.corpus, overlay);
  for (const auto& w : corpus.warnings) log(sink, LogLevel::kWarn, w);
  return corpus;
}

inline std::optional<RefModelParams> configured_params(const RunConfig& c) {
  if (c.params.empty()) return std::nullopt;
  if (!std::filesystem::exists(c.params)) throw UsageError("params file not found: " + c.params);
  return load_params(c.params);
}

/// One model per job slot. The in-process model is shared-nothing, so each
/// slot gets its own copy.
inline std::vector<std::unique_ptr<Model>> make_pool(const RunConfig& c) {
  const auto params = configured_params(c);
  WireOptions options;
  options.timeout = std::chrono::milliseconds(c.timeout_ms);
  std::vector<std::unique_ptr<Model>> pool;
  for (int i = 0; i < std::max(1, c.jobs); ++i) pool.push_back(make_model(c.adapter, params, options));
  return pool;
}

inline Json triples_json(const PredictionSet& p) {
  Json arr = Json::array();
  for (const auto& [k, s] : p) arr.push_back({{"h", k.head}, {"t", k.tail}, {"r", k.relation}, {"score", s}});
  return arr;
}

inline PredictionSet predictions_from_line(const Json& line, const std::string& doc_id, const std::string& where) {
  PredictionSet out;
  if (!line.contains("triples") || !line["triples"].is_array()) throw SchemaError(where, "missing 'triples'");
  for (const auto& t : line["triples"]) {
    out.insert({doc_id, t.at("h").get<int>(), t.at("t").get<int>(), t.at("r").get<std::string>()},
               t.at("score").get<double>());
  }
  return out;
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw UsageError("cannot open " + p.string());
  std::vector<Json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw ParseError(p.string() + ":" + std::to_string(n) + ": " + e.what(), n);
    }
  }
  return out;
}

inline std::set<TripleKey> gold_triples(const Document& doc) {
  std::set<TripleKey> out;
  for (const auto& f : doc.facts) out.insert({doc.doc_id, f.head, f.tail, f.relation});
  return out;
}

inline std::uint64_t document_seed(std::uint64_t seed, const std::string& doc_id) {
  return SplitMix64(seed ^ fnv1a64(doc_id)).next();
}

/// Attribution maps checked against the corpus: document, fact and length.
inline std::vector<std::pair<const Document*, AttributionMap>> resolve_attributions(const RunConfig& c,
                                                                                    const Corpus& corpus) {
  if (c.attributions.empty()) throw UsageError("--attributions is required");
  if (!std::filesystem::exists(c.attributions)) throw UsageError("attribution file not found: " + c.attributions);
  std::vector<std::pair<const Document*, AttributionMap>> out;
  for (auto& map : load_attributions(c.attributions)) {
    const Document* doc = corpus.find(map.doc_id);
    if (doc == nullptr) throw Error("attribution refers to unknown document '" + map.doc_id + "'");
    if (doc->find_fact(map.fact) == nullptr) {
      throw Error("attribution refers to unknown fact (" + std::to_string(map.fact.head) + ", " +
                  std::to_string(map.fact.tail) + ", " + map.fact.relation + ") in '" + map.doc_id + "'");
    }
    if (map.word_scores.size() != doc->word_count()) {
      throw Error("attribution for '" + map.doc_id + "' has " + std::to_string(map.word_scores.size()) +
                  " scores, document has " + std::to_string(doc->word_count()) + " words");
    }
    out.emplace_back(doc, std::move(map));
  }
  return out;
}

/// Writes results in job order as soon as every earlier job has finished, so
/// output is deterministic and an interrupted run leaves a clean prefix.
class OrderedWriter {
 public:
  OrderedWriter(std::ostream& out, std::size_t n) : out_(out), lines_(n), done_(n, false) {}

  void complete(std::size_t i, std::optional<std::string> line) {
    std::lock_guard lock(mu_);
    lines_[i] = std::move(line);
    done_[i] = true;
    while (next_ < done_.size() && done_[next_]) {
      if (lines_[next_]) out_ << *lines_[next_] << '\n' << std::flush;
      lines_[next_].reset();
      ++next_;
    }
  }

 private:
  std::mutex mu_;
  std::ostream& out_;
  std::vector<std::optional<std::string>> lines_;
  std::vector<bool> done_;
  std::size_t next_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_validate(const RunConfig& c, const LogSink& sink = {}) {
  detail::claim_outputs(c, {"validation_report.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  const ValidationReport report = validate_corpus(corpus);
  Json j = to_json(report);
  j["seed"] = c.seed;
  j["config_hash"] = config_hash(c);
  detail::write_json_file(detail::output_path(c, "validation_report.json"), j);
  for (const auto& v : report.violations) {
    detail::log(sink, LogLevel::kWarn, v.kind + " in '" + v.doc_id + "' at " + v.path + ": " + v.message);
  }
  detail::log(sink, LogLevel::kInfo, std::to_string(report.violations.size()) + " violation(s)");
  return report.ok() ? exit_code::kOk : exit_code::kFindings;
}

inline int cmd_train_ref(const RunConfig& c, const LogSink& sink = {}) {
  detail::claim_outputs(c, {"params.json", "train_manifest.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  TrainOptions opt;
  opt.epochs = c.epochs;
  opt.lr = c.lr;
  opt.negative_ratio = c.negative_ratio;
  opt.seed = c.seed;
  opt.dim = c.dim;
  opt.tau = c.tau;
  const TrainResult result = train(corpus, opt);
  detail::write_json_file(detail::output_path(c, "params.json"), to_json(result.params));
  Json manifest = detail::manifest_base("train-ref", c);
  manifest["loss_history"] = result.loss_history;
  detail::write_json_file(detail::output_path(c, "train_manifest.json"), manifest);
  detail::log(sink, LogLevel::kInfo,
              "trained " + std::to_string(result.params.relations.size()) + " relation(s), final loss " +
                  format_real(result.loss_history.back()));
  return exit_code::kOk;
}

struct AttackSummary {
  std::size_t attacked = 0;
  std::size_t skipped = 0;
  std::vector<PerturbedDocument> outputs;
};

/// Runs one attack kind over a corpus without touching the filesystem.
inline AttackSummary run_attack(const Corpus& corpus, AttackKind kind, const RunConfig& c, const Lexicon* lexicon,
                                const NamePool* pool, const LogSink& sink = {}) {
  AttackSummary s;
  for (const auto& doc : corpus.documents) {
    switch (kind) {
      case AttackKind::kMaskEvidence:
        if (c.joint) {
          s.outputs.push_back(mask_all_evidence(doc, c.mask_token));
          for (const auto& f : doc.facts) (f.word_evidence.empty() ? s.skipped : s.attacked)++;
          break;
        }
        [[fallthrough]];
      case AttackKind::kAsa:
      case AttackKind::kSsa:
        for (const auto& f : doc.facts) {
          std::optional<PerturbedDocument> p;
          if (kind == AttackKind::kMaskEvidence) p = mask_evidence(doc, f.key(), c.mask_token);
          if (kind == AttackKind::kAsa) p = antonym_substitution(doc, f.key(), *lexicon);
          if (kind == AttackKind::kSsa) p = synonym_substitution(doc, f.key(), *lexicon);
          if (p) {
            ++s.attacked;
            s.outputs.push_back(std::move(*p));
          } else {
            ++s.skipped;
          }
        }
        break;
      case AttackKind::kEntityMask:
        s.outputs.push_back(mask_entities(doc, c.mask_token));
        s.attacked += doc.facts.size();
        break;
      case AttackKind::kEntityShuffle:
        s.outputs.push_back(shuffle_entities(doc, detail::document_seed(c.seed, doc.doc_id)));
        s.attacked += doc.facts.size();
        break;
      case AttackKind::kEntityOod:
        s.outputs.push_back(substitute_ood_entities(doc, *pool, detail::document_seed(c.seed, doc.doc_id)));
        s.attacked += doc.facts.size();
        break;
    }
  }
  for (const auto& p : s.outputs) {
    for (const auto& w : p.warnings) detail::log(sink, LogLevel::kWarn, w);
  }
  return s;
}

inline int cmd_attack(const RunConfig& c, const LogSink& sink = {}) {
  const auto kind = parse_attack_kind(c.kind);
  if (!kind) throw UsageError("unknown attack kind '" + c.kind + "'");
  std::optional<Lexicon> lexicon;
  std::optional<NamePool> pool;
  if (*kind == AttackKind::kAsa || *kind == AttackKind::kSsa) {
    if (c.lexicon.empty()) throw UsageError(c.kind + " needs --lexicon");
    if (!std::filesystem::exists(c.lexicon)) throw UsageError("lexicon not found: " + c.lexicon);
    lexicon = load_lexicon(c.lexicon);
  }
  if (*kind == AttackKind::kEntityOod) {
    if (c.pool.empty()) throw UsageError(c.kind + " needs --pool");
    std::set<std::string> training;
    if (!c.training_names.empty()) {
      std::ifstream in(c.training_names);
      if (!in) throw UsageError("cannot open " + c.training_names);
      for (std::string line; std::getline(in, line);) {
        if (!line.empty()) training.insert(line);
      }
    }
    pool = load_name_pool(c.pool, training);
  }
  detail::claim_outputs(c, {"perturbed.jsonl", "attack_manifest.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  const AttackSummary s = run_attack(corpus, *kind, c, lexicon ? &*lexicon : nullptr, pool ? &*pool : nullptr, sink);

  auto out = detail::open_output(detail::output_path(c, "perturbed.jsonl"));
  for (const auto& p : s.outputs) {
    Json j = to_json(p);
    if (!p.seed) j["seed"] = c.seed;
    out << j.dump() << '\n';
  }
  Json manifest = detail::manifest_base("attack", c);
  manifest["kind"] = to_string(*kind);
  manifest["attacked_fact_count"] = s.attacked;
  manifest["skipped_count"] = s.skipped;
  manifest["documents"] = s.outputs.size();
  detail::write_json_file(detail::output_path(c, "attack_manifest.json"), manifest);
  detail::log(sink, LogLevel::kInfo,
              to_string(*kind) + ": " + std::to_string(s.attacked) + " attacked, " + std::to_string(s.skipped) + " skipped");
  return exit_code::kOk;
}

struct EvaluationResult {
  F1Result f1_before;
  F1Result f1_after;
  FlipRates flips;
};

inline Json to_json(const EvaluationResult& r, const RunConfig& c) {
  auto f1 = [](const F1Result& f) { return Json{{"p", f.precision}, {"r", f.recall}, {"f1", f.f1}}; };
  Json j = detail::manifest_base("evaluate", c);
  j["f1_before"] = r.f1_before.f1;
  j["f1_after"] = r.f1_after.f1;
  j["n"] = r.flips.attacked_count;
  if (r.flips.defined()) {
    j["p2n"] = r.flips.p2n();
    j["up"] = r.flips.up();
    j["residual"] = r.flips.residual();
  } else {
    j["p2n"] = nullptr;
    j["up"] = nullptr;
    j["residual"] = nullptr;
  }
  j["counts"] = {{"p2n", r.flips.p2n_count},
                 {"up", r.flips.up_count},
                 {"residual", r.flips.residual_count},
                 {"n", r.flips.attacked_count}};
  j["f1_before_detail"] = f1(r.f1_before);
  j["f1_after_detail"] = f1(r.f1_after);
  return j;
}

/// F1 before/after and flip rates from per-document predictions. `before`
/// is keyed by original doc id, `after` holds one set per perturbed instance.
inline EvaluationResult evaluate_predictions(const Corpus& corpus, const std::vector<PerturbedDocument>& perturbed,
                                             const std::map<std::string, PredictionSet>& before,
                                             const std::vector<PredictionSet>& after) {
  EvaluationResult r;
  std::size_t tp = 0, npred = 0, ngold = 0;
  std::set<std::string> seen;
  for (const auto& p : perturbed) {
    if (!seen.insert(p.document.doc_id).second) continue;
    const Document* doc = corpus.find(p.document.doc_id);
    const auto gold = detail::gold_triples(*doc);
    const auto f = micro_f1(before.at(doc->doc_id), gold);
    tp += f.true_positives;
    npred += f.predicted;
    ngold += f.gold;
  }
  r.f1_before = f1_from_counts(tp, npred, ngold);
  tp = npred = ngold = 0;
  for (std::size_t i = 0; i < perturbed.size(); ++i) {
    const auto& p = perturbed[i];
    const auto f = micro_f1(after[i], detail::gold_triples(p.document));
    tp += f.true_positives;
    npred += f.predicted;
    ngold += f.gold;
    const Document* doc = corpus.find(p.document.doc_id);
    std::set<TripleKey> scope;
    if (p.fact_scope) {
      scope.insert({doc->doc_id, p.fact_scope->head, p.fact_scope->tail, p.fact_scope->relation});
    } else {
      scope = detail::gold_triples(*doc);
    }
    r.flips += flip_rates(before.at(doc->doc_id), after[i], scope);
  }
  r.f1_after = f1_from_counts(tp, npred, ngold);
  return r;
}

inline int cmd_evaluate(const RunConfig& c, const LogSink& sink = {}) {
  if (c.perturbed.empty()) throw UsageError("--perturbed is required");
  const bool file_mode = !c.before.empty() || !c.after.empty();
  if (file_mode && (c.before.empty() || c.after.empty())) throw UsageError("--before and --after go together");
  std::vector<std::string> outputs{"evaluation.json"};
  if (!file_mode) {
    outputs.push_back("before_predictions.jsonl");
    outputs.push_back("after_predictions.jsonl");
  }
  detail::claim_outputs(c, outputs);
  const Corpus corpus = detail::load_configured_corpus(c, sink);

  std::vector<PerturbedDocument> perturbed;
  {
    const auto lines = detail::read_jsonl(c.perturbed);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      perturbed.push_back(perturbed_from_json(lines[i], c.perturbed + ":" + std::to_string(i + 1)));
      if (corpus.find(perturbed.back().document.doc_id) == nullptr) {
        throw Error("perturbed line " + std::to_string(i + 1) + " refers to unknown document '" +
                    perturbed.back().document.doc_id + "'");
      }
    }
  }

  std::map<std::string, PredictionSet> before;
  std::vector<PredictionSet> after(perturbed.size());
  if (file_mode) {
    for (const auto& j : detail::read_jsonl(c.before)) {
      const auto id = j.at("doc_id").get<std::string>();
      before[id] = detail::predictions_from_line(j, id, c.before);
    }
    const auto lines = detail::read_jsonl(c.after);
    if (lines.size() != perturbed.size()) {
      throw Error(c.after + " has " + std::to_string(lines.size()) + " lines, perturbed file has " +
                  std::to_string(perturbed.size()));
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto id = lines[i].at("doc_id").get<std::string>();
      if (id != perturbed[i].document.doc_id) {
        throw Error("doc id mismatch at line " + std::to_string(i + 1) + ": '" + id + "' vs '" +
                    perturbed[i].document.doc_id + "'");
      }
      after[i] = detail::predictions_from_line(lines[i], id, c.after);
    }
    for (const auto& p : perturbed) {
      if (!before.contains(p.document.doc_id)) {
        throw Error("no before-predictions for document '" + p.document.doc_id + "'");
      }
    }
  } else {
    // Distinct documents to query, keyed by their serialized form.
    std::vector<const Document*> queries;
    std::map<std::string, std::size_t> by_content;
    std::vector<std::size_t> before_slot;
    std::vector<std::size_t> after_slot(perturbed.size());
    auto enqueue = [&](const Document& d) {
      auto [it, inserted] = by_content.emplace(document_to_json(d).dump(), queries.size());
      if (inserted) queries.push_back(&d);
      return it->second;
    };
    std::map<std::string, std::size_t> original_slot;
    for (const auto& p : perturbed) {
      const Document* doc = corpus.find(p.document.doc_id);
      if (!original_slot.contains(doc->doc_id)) original_slot[doc->doc_id] = enqueue(*doc);
    }
    for (std::size_t i = 0; i < perturbed.size(); ++i) after_slot[i] = enqueue(perturbed[i].document);

    auto pool = detail::make_pool(c);
    std::vector<PredictionSet> results(queries.size());
    const auto errors = run_on_pool(pool, queries.size(), [&](Model& m, std::size_t i) { results[i] = m.predict(*queries[i]); });
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    auto before_out = detail::open_output(detail::output_path(c, "before_predictions.jsonl"));
    for (const auto& [id, slot] : original_slot) {
      before[id] = results[slot];
      before_out << Json{{"doc_id", id}, {"triples", detail::triples_json(results[slot])}}.dump() << '\n';
    }
    auto after_out = detail::open_output(detail::output_path(c, "after_predictions.jsonl"));
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
      after[i] = results[after_slot[i]];
      after_out << Json{{"index", i}, {"doc_id", perturbed[i].document.doc_id},
                        {"triples", detail::triples_json(after[i])}}
                       .dump()
                << '\n';
    }
    detail::log(sink, LogLevel::kInfo,
                std::to_string(queries.size()) + " distinct documents queried for " +
                    std::to_string(perturbed.size() + original_slot.size()) + " lookups");
  }

  const EvaluationResult r = evaluate_predictions(corpus, perturbed, before, after);
  Json report = to_json(r, c);
  if (!perturbed.empty()) report["attack"] = to_string(perturbed.front().kind);
  detail::write_json_file(detail::output_path(c, "evaluation.json"), report);
  if (!r.flips.defined()) detail::log(sink, LogLevel::kWarn, "no original positive predictions in scope");
  return exit_code::kOk;
}

inline int cmd_attribute(const RunConfig& c, const LogSink& sink = {}) {
  if (c.steps < 1) throw UsageError("--steps must be >= 1");
  const auto out_path = detail::output_path(c, "attributions.jsonl");
  std::filesystem::create_directories(c.out);
  if (!c.resume) detail::claim_outputs(c, {"attributions.jsonl", "attribute_manifest.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);

  std::set<std::tuple<std::string, int, int, std::string>> done;
  if (c.resume && std::filesystem::exists(out_path)) {
    for (const auto& m : load_attributions(out_path)) done.insert({m.doc_id, m.fact.head, m.fact.tail, m.fact.relation});
  }
  std::vector<std::pair<const Document*, FactKey>> jobs;
  for (const auto& doc : corpus.documents) {
    for (const auto& f : doc.facts) {
      if (!done.contains({doc.doc_id, f.head, f.tail, f.relation})) jobs.emplace_back(&doc, f.key());
    }
  }

  auto pool = detail::make_pool(c);
  auto out = detail::open_output(out_path, c.resume ? std::ios::app : std::ios::trunc);
  detail::OrderedWriter writer(out, jobs.size());
  std::atomic<std::size_t> skipped{0}, warnings{0};
  const bool in_process = dynamic_cast<RefModelBinding*>(pool.front().get()) != nullptr;
  const auto errors = run_on_pool(pool, jobs.size(), [&](Model& m, std::size_t i) {
    std::optional<std::string> line;
    try {
      auto map = m.attribute(*jobs[i].first, jobs[i].second, c.steps);
      if (map) {
        if (in_process && completeness_suspicious(*map)) ++warnings;
        line = to_json(*map).dump();
      } else {
        ++skipped;
      }
    } catch (...) {
      writer.complete(i, std::nullopt);
      throw;
    }
    writer.complete(i, std::move(line));
  });
  std::size_t failed = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    ++failed;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      detail::log(sink, LogLevel::kError, e.what());
    }
  }
  for (const auto& m : pool) warnings += m->completeness_warnings();

  Json manifest = detail::manifest_base("attribute", c);
  manifest["steps"] = c.steps;
  manifest["attributed"] = jobs.size() - skipped - failed;
  manifest["resumed_past"] = done.size();
  manifest["skipped"] = skipped.load();
  manifest["failed"] = failed;
  manifest["completeness_warnings"] = warnings.load();
  detail::write_json_file(detail::output_path(c, "attribute_manifest.json"), manifest);
  detail::log(sink, LogLevel::kInfo,
              std::to_string(jobs.size() - skipped - failed) + " attributed, " + std::to_string(skipped.load()) +
                  " skipped, " + std::to_string(failed) + " failed, " + std::to_string(warnings.load()) +
                  " completeness warning(s)");
  return failed > 0 ? exit_code::kEnvironment : exit_code::kOk;
}

/// Rankings and gold evidence (as flat positions) for every attribution.
inline std::pair<std::vector<std::vector<std::size_t>>, std::vector<std::set<std::size_t>>> rankings_and_gold(
    const std::vector<std::pair<const Document*, AttributionMap>>& maps) {
  std::vector<std::vector<std::size_t>> rankings;
  std::vector<std::set<std::size_t>> gold;
  for (const auto& [doc, map] : maps) {
    rankings.push_back(rank_words(map));
    const FlatView view(*doc);
    std::set<std::size_t> g;
    for (const auto& ref : doc->find_fact(map.fact)->word_evidence) {
      if (view.contains(ref)) g.insert(view.to_flat(ref));
    }
    gold.push_back(std::move(g));
  }
  return {std::move(rankings), std::move(gold)};
}

inline int cmd_map(const RunConfig& c, const LogSink& sink = {}) {
  std::vector<std::string> outputs{"map_curve.csv", "map_manifest.json"};
  if (c.svg) outputs.push_back("map_curve.svg");
  detail::claim_outputs(c, outputs);
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  const auto maps = detail::resolve_attributions(c, corpus);
  const auto [rankings, gold] = rankings_and_gold(maps);
  const auto curve = map_curve(rankings, gold, c.k_max);
  if (!curve) {
    detail::log(sink, LogLevel::kError, "no attributed fact has gold word evidence");
    return exit_code::kFindings;
  }
  {
    auto out = detail::open_output(detail::output_path(c, "map_curve.csv"));
    write_map_csv(out, *curve);
  }
  if (c.svg) {
    auto out = detail::open_output(detail::output_path(c, "map_curve.svg"));
    write_map_svg(out, *curve);
  }
  Json manifest = detail::manifest_base("map", c);
  manifest["auc"] = curve->auc;
  manifest["included"] = curve->included;
  manifest["excluded"] = curve->excluded;
  detail::write_json_file(detail::output_path(c, "map_manifest.json"), manifest);
  if (curve->excluded > 0) {
    detail::log(sink, LogLevel::kWarn, std::to_string(curve->excluded) + " fact(s) without gold evidence excluded");
  }
  return exit_code::kOk;
}

/// Template-probe F1 per K.
inline std::vector<std::pair<std::size_t, F1Result>> run_probe(
    const std::vector<std::pair<const Document*, AttributionMap>>& maps, const std::vector<std::size_t>& k_list,
    std::vector<std::unique_ptr<Model>>& pool) {
  std::vector<Document> probes;
  for (std::size_t k : k_list) {
    for (const auto& [doc, map] : maps) probes.push_back(build_template_input(*doc, map.fact, rank_words(map), k));
  }
  std::vector<PredictionSet> predicted(probes.size());
  const auto errors = run_on_pool(pool, probes.size(), [&](Model& m, std::size_t i) { predicted[i] = m.predict(probes[i]); });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<std::pair<std::size_t, F1Result>> out;
  for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
    std::size_t tp = 0, np = 0, ng = 0;
    for (std::size_t j = 0; j < maps.size(); ++j) {
      const std::size_t i = ki * maps.size() + j;
      const auto f = micro_f1(predicted[i], detail::gold_triples(probes[i]));
      tp += f.true_positives;
      np += f.predicted;
      ng += f.gold;
    }
    out.emplace_back(k_list[ki], f1_from_counts(tp, np, ng));
  }
  return out;
}

inline int cmd_probe(const RunConfig& c, const LogSink& sink = {}) {
  detail::claim_outputs(c, {"probe.csv", "probe_manifest.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  const auto maps = detail::resolve_attributions(c, corpus);
  auto pool = detail::make_pool(c);
  const auto rows = run_probe(maps, c.k_list, pool);
  {
    auto out = detail::open_output(detail::output_path(c, "probe.csv"));
    out << "K,F1\n";
    for (const auto& [k, f] : rows) out << k << ',' << format_real(f.f1) << '\n';
  }
  Json manifest = detail::manifest_base("probe", c);
  manifest["facts"] = maps.size();
  detail::write_json_file(detail::output_path(c, "probe_manifest.json"), manifest);
  return exit_code::kOk;
}

inline int cmd_profile(const RunConfig& c, const LogSink& sink = {}) {
  detail::claim_outputs(c, {"position_profile.csv", "topk.csv", "profile_manifest.json"});
  const Corpus corpus = detail::load_configured_corpus(c, sink);
  std::vector<AttributionMap> maps;
  for (auto& [doc, map] : detail::resolve_attributions(c, corpus)) maps.push_back(std::move(map));
  {
    auto out = detail::open_output(detail::output_path(c, "position_profile.csv"));
    write_profile_csv(out, position_profile(maps, c.max_len, c.absolute));
  }
  {
    auto out = detail::open_output(detail::output_path(c, "topk.csv"));
    write_topk_csv(out, top_k_stats(maps, corpus, c.k));
  }
  Json manifest = detail::manifest_base("profile", c);
  manifest["maps"] = maps.size();
  manifest["absolute"] = c.absolute;
  detail::write_json_file(detail::output_path(c, "profile_manifest.json"), manifest);
  return exit_code::kOk;
}

/// Serves the reference model over stdin/stdout, or over TCP with --tcp.
inline int cmd_serve_ref(const RunConfig& c, const LogSink& sink = {}) {
  const auto params = detail::configured_params(c);
  if (!params) throw UsageError("serve-ref needs --params");
  RefModelBinding binding{RefModel(*params)};
  ModelServer server(binding);
  if (c.tcp.empty()) {
    server.serve(std::cin, std::cout);
    return exit_code::kOk;
  }
  TcpListener listener(c.tcp);
  detail::log(sink, LogLevel::kInfo, "listening on port " + std::to_string(listener.port()));
  for (;;) server.serve_fd(listener.accept());
}

}  // namespace rexprobe

#endif  // REXPROBE_COMMANDS_HPP
