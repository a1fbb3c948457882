#ifndef REXPROBE_ADAPTER_HPP
#define REXPROBE_ADAPTER_HPP

// Model access. A Model answers predict and attribute queries either in
// process (the reference model) or across the wire protocol:
//
//   request   {"id":int,"method":"info"|"predict"|"attribute","params":{...}}
//   response  {"id":int,"result":{...}} | {"id":int,"error":{"code":int,"message":str}}
//
// One JSON object per line. Requests on a connection are answered in order.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <istream>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rexprobe/attribution.hpp"
#include "rexprobe/corpus.hpp"
#include "rexprobe/prediction.hpp"
#include "rexprobe/refmodel.hpp"
#include "rexprobe/transport.hpp"

namespace rexprobe {

/// Malformed or out-of-contract adapter reply.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Error frame sent by the adapter.
class AdapterError : public Error {
 public:
  AdapterError(int code, const std::string& message)
      : Error("adapter error " + std::to_string(code) + ": " + message), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

class HandshakeError : public Error {
 public:
  using Error::Error;
};

class TimeoutError : public Error {
 public:
  using Error::Error;
};

/// Error codes used in error frames.
namespace wire_code {
inline constexpr int kBadRequest = 400;
inline constexpr int kTooLong = 413;
inline constexpr int kUnsupportedFact = 422;
inline constexpr int kInternal = 500;
}  // namespace wire_code

struct AdapterInfo {
  std::string name;
  std::string version;
  std::set<std::string> capabilities;
  std::optional<std::size_t> max_words;

  bool can(const std::string& capability) const { return capabilities.contains(capability); }
};

inline Json to_json(const AdapterInfo& info) {
  Json j = {{"name", info.name},
            {"version", info.version},
            {"capabilities", std::vector<std::string>(info.capabilities.begin(), info.capabilities.end())}};
  j["max_words"] = info.max_words ? Json(*info.max_words) : Json(nullptr);
  return j;
}

/// Parses an info result. Unknown fields are ignored.
inline AdapterInfo adapter_info_from_json(const Json& j) {
  if (!j.is_object()) throw HandshakeError("info result is not an object");
  if (!j.contains("capabilities") || !j["capabilities"].is_array()) {
    throw HandshakeError("info result lacks a 'capabilities' array");
  }
  AdapterInfo info;
  info.name = j.value("name", "");
  info.version = j.value("version", "");
  for (const auto& c : j["capabilities"]) {
    if (!c.is_string()) throw HandshakeError("non-string capability");
    info.capabilities.insert(c.get<std::string>());
  }
  if (info.capabilities.empty()) throw HandshakeError("adapter declares no capabilities");
  if (j.contains("max_words") && j["max_words"].is_number_unsigned()) {
    info.max_words = j["max_words"].get<std::size_t>();
  }
  return info;
}

/// Anything that can be asked for predictions and attributions.
class Model {
 public:
  virtual ~Model() = default;
  virtual const AdapterInfo& info() const = 0;
  virtual PredictionSet predict(const Document& doc) = 0;
  /// nullopt when the model declines the fact.
  virtual std::optional<AttributionMap> attribute(const Document& doc, const FactKey& fact, int steps) = 0;
  /// Number of accepted attributions whose completeness gap exceeded the
  /// warning threshold.
  virtual std::size_t completeness_warnings() const { return 0; }
};

/// Completeness tolerance applied to attributions coming back over the wire.
inline bool completeness_suspicious(const AttributionMap& m) {
  const double delta = std::abs(m.f_input - m.f_baseline);
  return completeness_gap(m) > 0.05 * delta + 1e-4;
}

/// The reference model called directly.
class RefModelBinding : public Model {
 public:
  explicit RefModelBinding(RefModel model) : model_(std::move(model)) {
    info_.name = "rexprobe-refmodel";
    info_.version = "1";
    info_.capabilities = {"predict", "attribute"};
  }

  const AdapterInfo& info() const override { return info_; }
  const RefModel& model() const { return model_; }

  PredictionSet predict(const Document& doc) override { return model_.predict_document(doc); }

  std::optional<AttributionMap> attribute(const Document& doc, const FactKey& fact, int steps) override {
    if (!model_.params().relations.contains(fact.relation)) return std::nullopt;
    return integrated_gradients(model_, doc, fact, steps);
  }

 private:
  RefModel model_;
  AdapterInfo info_;
};

struct WireOptions {
  std::chrono::milliseconds timeout{30000};
  int max_retries = 1;
};

/// Client side of the wire protocol over one serial connection.
class WireModel : public Model {
 public:
  explicit WireModel(std::unique_ptr<Transport> transport, WireOptions options = {})
      : transport_(std::move(transport)), options_(options) {
    handshake();
  }

  const AdapterInfo& info() const override { return info_; }

  PredictionSet predict(const Document& doc) override {
    require("predict");
    check_length(doc);
    const Json result = call("predict", {{"document", document_to_json(doc)}});
    return parse_predictions(result, doc);
  }

  std::optional<AttributionMap> attribute(const Document& doc, const FactKey& fact, int steps) override {
    require("attribute");
    check_length(doc);
    Json params = {{"document", document_to_json(doc)},
                   {"fact", {{"h", fact.head}, {"t", fact.tail}, {"r", fact.relation}}},
                   {"method", "integrated_gradients"},
                   {"steps", steps},
                   {"baseline", "zero"}};
    Json result;
    try {
      result = call("attribute", params);
    } catch (const AdapterError& e) {
      if (e.code() == wire_code::kUnsupportedFact) return std::nullopt;
      throw;
    }
    AttributionMap map = parse_attribution(result, doc, fact);
    if (completeness_suspicious(map)) ++completeness_warnings_;
    return map;
  }

  std::size_t completeness_warnings() const override { return completeness_warnings_.load(); }

  static PredictionSet parse_predictions(const Json& result, const Document& doc) {
    if (!result.is_object() || !result.contains("triples") || !result["triples"].is_array()) {
      throw ProtocolError("result.triples: missing or not an array");
    }
    const int n = static_cast<int>(doc.entities.size());
    PredictionSet out;
    const Json& triples = result["triples"];
    for (std::size_t i = 0; i < triples.size(); ++i) {
      const Json& t = triples[i];
      const std::string path = "result.triples[" + std::to_string(i) + "]";
      auto field = [&](const char* key) -> const Json& {
        if (!t.is_object() || !t.contains(key)) throw ProtocolError(path + "." + key + ": missing");
        return t[key];
      };
      const Json& h = field("h");
      const Json& tl = field("t");
      const Json& r = field("r");
      const Json& s = field("score");
      if (!h.is_number_integer() || h.get<int>() < 0 || h.get<int>() >= n) {
        throw ProtocolError(path + ".h: entity index out of range");
      }
      if (!tl.is_number_integer() || tl.get<int>() < 0 || tl.get<int>() >= n) {
        throw ProtocolError(path + ".t: entity index out of range");
      }
      if (h.get<int>() == tl.get<int>()) throw ProtocolError(path + ": head equals tail");
      if (!r.is_string()) throw ProtocolError(path + ".r: not a string");
      if (!s.is_number() || !std::isfinite(s.get<double>()) || s.get<double>() < 0.0 || s.get<double>() > 1.0) {
        throw ProtocolError(path + ".score: not a probability");
      }
      try {
        out.insert({doc.doc_id, h.get<int>(), tl.get<int>(), r.get<std::string>()}, s.get<double>());
      } catch (const Error& e) {
        throw ProtocolError(path + ": " + e.what());
      }
    }
    return out;
  }

  static AttributionMap parse_attribution(const Json& result, const Document& doc, const FactKey& fact) {
    if (!result.is_object()) throw ProtocolError("result: not an object");
    for (const char* key : {"scores", "f_input", "f_baseline", "steps"}) {
      if (!result.contains(key)) throw ProtocolError(std::string("result.") + key + ": missing");
    }
    AttributionMap map;
    map.doc_id = doc.doc_id;
    map.fact = fact;
    try {
      map.word_scores = result["scores"].get<std::vector<double>>();
      map.f_input = result["f_input"].get<double>();
      map.f_baseline = result["f_baseline"].get<double>();
      map.steps = result["steps"].get<int>();
    } catch (const Json::exception& e) {
      throw ProtocolError(std::string("result: ") + e.what());
    }
    const std::size_t n = doc.word_count();
    if (map.word_scores.size() != n) {
      throw ProtocolError("result.scores: " + std::to_string(map.word_scores.size()) + " scores for a " +
                          std::to_string(n) + "-word document");
    }
    return map;
  }

 private:
  void handshake() {
    Json response;
    try {
      response = exchange(Json{{"id", 0}, {"method", "info"}}, 0);
    } catch (const TimeoutError& e) {
      throw HandshakeError(std::string("handshake failed: ") + e.what());
    }
    if (response.contains("error")) throw HandshakeError("adapter refused info: " + response["error"].dump());
    if (!response.contains("result")) throw HandshakeError("info response has no result");
    info_ = adapter_info_from_json(response["result"]);
    next_id_ = 1;
  }

  void require(const std::string& capability) const {
    if (!info_.can(capability)) {
      throw CapabilityError("adapter '" + info_.name + "' does not support " + capability);
    }
  }

  void check_length(const Document& doc) const {
    if (info_.max_words && doc.word_count() > *info_.max_words) {
      throw CapabilityError("document '" + doc.doc_id + "' has " + std::to_string(doc.word_count()) +
                            " words; adapter accepts at most " + std::to_string(*info_.max_words));
    }
  }

  Json call(const std::string& method, const Json& params) {
    for (int attempt = 0;; ++attempt) {
      const long long id = next_id_++;
      try {
        const Json response = exchange(Json{{"id", id}, {"method", method}, {"params", params}}, id);
        if (response.contains("error")) {
          const Json& err = response["error"];
          throw AdapterError(err.value("code", wire_code::kInternal), err.value("message", std::string()));
        }
        if (!response.contains("result")) throw ProtocolError("response " + std::to_string(id) + " has no result");
        return response["result"];
      } catch (const TimeoutError&) {
        if (attempt >= options_.max_retries) throw;
      }
    }
  }

  /// Sends one request and waits for the response carrying `id`. Replies to
  /// earlier, abandoned requests are discarded.
  Json exchange(const Json& request, long long id) {
    transport_->send(request.dump());
    const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
    for (;;) {
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      auto line = left.count() > 0 ? transport_->receive(left) : std::nullopt;
      if (!line) throw TimeoutError("no response to request " + std::to_string(id));
      Json response;
      try {
        response = Json::parse(*line);
      } catch (const Json::parse_error& e) {
        throw ProtocolError(std::string("unparseable response: ") + e.what());
      }
      if (!response.is_object() || !response.contains("id") || !response["id"].is_number_integer()) {
        throw ProtocolError("response without integer id");
      }
      const long long got = response["id"].get<long long>();
      if (got == id) return response;
      if (got > id) throw ProtocolError("response id " + std::to_string(got) + " ahead of request " + std::to_string(id));
    }
  }

  std::unique_ptr<Transport> transport_;
  WireOptions options_;
  AdapterInfo info_;
  long long next_id_ = 0;
  std::atomic<std::size_t> completeness_warnings_{0};
};

// ---------------------------------------------------------------------------
// Server side

/// Answers wire requests on behalf of any in-process Model.
class ModelServer {
 public:
  explicit ModelServer(Model& model) : model_(model) {}

  Json handle(const Json& request) {
    const Json id = request.is_object() && request.contains("id") ? request["id"] : Json(nullptr);
    auto error = [&](int code, const std::string& message) {
      return Json{{"id", id}, {"error", {{"code", code}, {"message", message}}}};
    };
    if (!request.is_object() || !request.contains("method") || !request["method"].is_string()) {
      return error(wire_code::kBadRequest, "request needs a string 'method'");
    }
    const std::string method = request["method"].get<std::string>();
    try {
      if (method == "info") return {{"id", id}, {"result", to_json(model_.info())}};
      if (method != "predict" && method != "attribute") return error(wire_code::kBadRequest, "unknown method '" + method + "'");
      const Json& params = request.contains("params") ? request["params"] : Json::object();
      if (!params.contains("document")) return error(wire_code::kBadRequest, "params.document missing");
      const Document doc = document_from_json(params["document"], "params.document");
      const auto& max_words = model_.info().max_words;
      if (max_words && doc.word_count() > *max_words) return error(wire_code::kTooLong, "document too long");
      if (method == "predict") {
        Json triples = Json::array();
        for (const auto& [key, s] : model_.predict(doc)) {
          triples.push_back({{"h", key.head}, {"t", key.tail}, {"r", key.relation}, {"score", s}});
        }
        return {{"id", id}, {"result", {{"triples", std::move(triples)}}}};
      }
      if (!params.contains("fact")) return error(wire_code::kBadRequest, "params.fact missing");
      if (params.value("method", "integrated_gradients") != "integrated_gradients" ||
          params.value("baseline", "zero") != "zero") {
        return error(wire_code::kBadRequest, "only integrated_gradients with a zero baseline is supported");
      }
      const Json& f = params["fact"];
      const FactKey fact{f.at("h").get<int>(), f.at("t").get<int>(), f.at("r").get<std::string>()};
      const int steps = params.value("steps", 128);
      auto map = model_.attribute(doc, fact, steps);
      if (!map) return error(wire_code::kUnsupportedFact, "fact not supported");
      return {{"id", id},
              {"result",
               {{"scores", map->word_scores},
                {"f_input", map->f_input},
                {"f_baseline", map->f_baseline},
                {"steps", map->steps}}}};
    } catch (const SchemaError& e) {
      return error(wire_code::kBadRequest, e.what());
    } catch (const Json::exception& e) {
      return error(wire_code::kBadRequest, e.what());
    } catch (const std::exception& e) {
      return error(wire_code::kInternal, e.what());
    }
  }

  std::string handle_line(const std::string& line) {
    Json request;
    try {
      request = Json::parse(line);
    } catch (const Json::parse_error& e) {
      return Json{{"id", nullptr}, {"error", {{"code", wire_code::kBadRequest}, {"message", e.what()}}}}.dump();
    }
    return handle(request).dump();
  }

  /// Serves until `in` reaches end of file.
  void serve(std::istream& in, std::ostream& out) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      out << handle_line(line) << '\n';
      out.flush();
    }
  }

  /// Serves one accepted connection until the peer closes it.
  void serve_fd(int fd) {
    detail::FdLineChannel channel(fd, fd, true);
    try {
      for (;;) {
        auto line = channel.read_line(std::chrono::hours(24));
        if (!line) continue;
        if (line->empty()) continue;
        channel.write_line(handle_line(*line));
      }
    } catch (const TransportError&) {
    }
    ::close(fd);
  }

 private:
  Model& model_;
};

/// WireModel talking to a ModelServer through a LoopbackTransport. Exercises
/// serialization in both directions without a process boundary.
inline std::unique_ptr<WireModel> loopback_model(Model& backend, WireOptions options = {}) {
  auto server = std::make_shared<ModelServer>(backend);
  return std::make_unique<WireModel>(
      std::make_unique<LoopbackTransport>([server](const std::string& line) { return server->handle_line(line); }),
      options);
}

/// Builds a model from an adapter spec: `builtin:refmodel`, `exec:<command>`
/// or `tcp:<host:port>`. The builtin needs reference-model parameters.
inline std::unique_ptr<Model> make_model(const std::string& spec, const std::optional<RefModelParams>& params,
                                         WireOptions options = {}) {
  if (spec == "builtin:refmodel" || spec == "builtin") {
    if (!params) throw Error("builtin:refmodel needs reference-model parameters (--params)");
    return std::make_unique<RefModelBinding>(RefModel(*params));
  }
  if (spec.rfind("exec:", 0) == 0) {
    return std::make_unique<WireModel>(std::make_unique<ChildProcessTransport>(spec.substr(5)), options);
  }
  if (spec.rfind("tcp:", 0) == 0) {
    return std::make_unique<WireModel>(std::make_unique<TcpTransport>(spec.substr(4)), options);
  }
  throw Error("unknown adapter spec '" + spec + "' (expected builtin:refmodel, exec:<cmd> or tcp:<addr>)");
}

/// Runs jobs [0, n) across a pool of serial endpoints, one worker thread per
/// endpoint. Returns one exception slot per job (null on success).
template <typename Fn>
std::vector<std::exception_ptr> run_on_pool(std::vector<std::unique_ptr<Model>>& pool, std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&](Model& model) {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(model, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (pool.size() <= 1) {
    if (!pool.empty()) worker(*pool.front());
    return errors;
  }
  std::vector<std::thread> threads;
  threads.reserve(pool.size());
  for (auto& m : pool) threads.emplace_back(worker, std::ref(*m));
  for (auto& t : threads) t.join();
  return errors;
}

}  // namespace rexprobe

#endif  // REXPROBE_ADAPTER_HPP
