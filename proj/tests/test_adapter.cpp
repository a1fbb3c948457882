#include <gtest/gtest.h>

#include <deque>
#include <functional>
#include <thread>

#include "rexprobe/adapter.hpp"
#include "support.hpp"

namespace rexprobe {
namespace {

using testing::fixture_corpus;

/// Transport driven by a function that maps each request to zero or more
/// reply lines.
class ScriptedTransport : public Transport {
 public:
  using Script = std::function<std::vector<std::string>(const Json&)>;
  explicit ScriptedTransport(Script script) : script_(std::move(script)) {}

  void send(const std::string& line) override {
    for (auto& r : script_(Json::parse(line))) replies_.push_back(std::move(r));
  }
  std::optional<std::string> receive(std::chrono::milliseconds) override {
    if (replies_.empty()) return std::nullopt;
    std::string r = std::move(replies_.front());
    replies_.pop_front();
    return r;
  }

 private:
  Script script_;
  std::deque<std::string> replies_;
};

Json info_result(std::vector<std::string> caps, std::optional<std::size_t> max_words = std::nullopt) {
  Json j = {{"name", "fake"}, {"version", "0"}, {"capabilities", caps}};
  if (max_words) j["max_words"] = *max_words;
  return j;
}

std::string reply(const Json& req, const Json& result) { return Json{{"id", req["id"]}, {"result", result}}.dump(); }

std::unique_ptr<WireModel> scripted(const Json& info, std::function<Json(const Json&)> answer, WireOptions opt = {}) {
  return std::make_unique<WireModel>(
      std::make_unique<ScriptedTransport>([info, answer](const Json& req) -> std::vector<std::string> {
        if (req["method"] == "info") return {reply(req, info)};
        return {reply(req, answer(req))};
      }),
      opt);
}

RefModelBinding trained_binding() { return RefModelBinding(RefModel(testing::trained_fixture_params())); }

void expect_same_attribution(const AttributionMap& a, const AttributionMap& b) {
  EXPECT_EQ(a.word_scores, b.word_scores);
  EXPECT_EQ(a.f_input, b.f_input);
  EXPECT_EQ(a.f_baseline, b.f_baseline);
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_EQ(a.fact, b.fact);
}

TEST(Adapter, HandshakeReadsCapabilities) {
  auto m = scripted(info_result({"predict"}, 300), [](const Json&) { return Json::object(); });
  EXPECT_TRUE(m->info().can("predict"));
  EXPECT_FALSE(m->info().can("attribute"));
  EXPECT_EQ(m->info().max_words, 300u);
}

TEST(Adapter, HandshakeWithoutCapabilitiesFails) {
  EXPECT_THROW(scripted(Json{{"name", "x"}}, [](const Json&) { return Json::object(); }), HandshakeError);
  EXPECT_THROW(scripted(info_result({}), [](const Json&) { return Json::object(); }), HandshakeError);
}

TEST(Adapter, SilentAdapterFailsHandshake) {
  WireOptions opt;
  opt.timeout = std::chrono::milliseconds(20);
  EXPECT_THROW(WireModel(std::make_unique<ScriptedTransport>([](const Json&) { return std::vector<std::string>{}; }),
                         opt),
               HandshakeError);
}

TEST(Adapter, MissingCapabilityRaisesBeforeSending) {
  int calls = 0;
  auto m = scripted(info_result({"predict"}), [&](const Json&) {
    ++calls;
    return Json::object();
  });
  const Corpus corpus = fixture_corpus();
  EXPECT_THROW(m->attribute(corpus.documents[0], {0, 1, "P27"}, 8), CapabilityError);
  EXPECT_EQ(calls, 0);
}

TEST(Adapter, OverlongDocumentRejectedLocally) {
  auto m = scripted(info_result({"predict"}, 10), [](const Json&) { return Json{{"triples", Json::array()}}; });
  EXPECT_THROW(m->predict(fixture_corpus().documents[0]), CapabilityError);
}

TEST(Adapter, OutOfRangeHeadNamesTheField) {
  auto m = scripted(info_result({"predict"}), [](const Json&) {
    return Json{{"triples", {{{"h", 0}, {"t", 1}, {"r", "P1"}, {"score", 0.9}}, {{"h", 99}, {"t", 1}, {"r", "P1"}, {"score", 0.9}}}}};
  });
  try {
    m->predict(fixture_corpus().documents[1]);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("result.triples[1].h"), std::string::npos) << e.what();
  }
}

TEST(Adapter, BadScoresAndDuplicatesAreProtocolErrors) {
  const Document doc = fixture_corpus().documents[1];
  EXPECT_THROW(WireModel::parse_predictions(Json{{"triples", {{{"h", 0}, {"t", 1}, {"r", "P1"}, {"score", 1.2}}}}}, doc),
               ProtocolError);
  const Json dup = {{"h", 0}, {"t", 1}, {"r", "P1"}, {"score", 0.7}};
  EXPECT_THROW(WireModel::parse_predictions(Json{{"triples", {dup, dup}}}, doc), ProtocolError);
  EXPECT_THROW(WireModel::parse_predictions(Json{{"triples", {{{"h", 1}, {"t", 1}, {"r", "P1"}, {"score", 0.5}}}}}, doc),
               ProtocolError);
  EXPECT_THROW(WireModel::parse_predictions(Json::object(), doc), ProtocolError);
}

TEST(Adapter, ShortScoreVectorIsProtocolError) {
  const Document doc = fixture_corpus().documents[2];
  const std::size_t n = doc.word_count();
  auto m = scripted(info_result({"attribute"}), [n](const Json&) {
    return Json{{"scores", std::vector<double>(n - 1, 0.0)}, {"f_input", 0.5}, {"f_baseline", 0.5}, {"steps", 8}};
  });
  EXPECT_THROW(m->attribute(doc, {0, 1, "P276"}, 8), ProtocolError);
}

TEST(Adapter, CompletenessWarningsAreCounted) {
  const Document doc = fixture_corpus().documents[2];
  const std::size_t n = doc.word_count();
  double total = 0.0;
  auto m = scripted(info_result({"attribute"}), [&](const Json&) {
    std::vector<double> scores(n, 0.0);
    scores[0] = total;
    return Json{{"scores", scores}, {"f_input", 0.9}, {"f_baseline", 0.5}, {"steps", 8}};
  });
  total = 0.4;
  ASSERT_TRUE(m->attribute(doc, {0, 1, "P276"}, 8));
  EXPECT_EQ(m->completeness_warnings(), 0u);
  total = 0.1;
  ASSERT_TRUE(m->attribute(doc, {0, 1, "P276"}, 8));
  EXPECT_EQ(m->completeness_warnings(), 1u);
}

TEST(Adapter, UnsupportedFactIsSkipped) {
  auto m = std::make_unique<WireModel>(std::make_unique<ScriptedTransport>([](const Json& req) -> std::vector<std::string> {
    if (req["method"] == "info") return {reply(req, info_result({"attribute"}))};
    return {Json{{"id", req["id"]}, {"error", {{"code", 422}, {"message", "no"}}}}.dump()};
  }));
  EXPECT_FALSE(m->attribute(fixture_corpus().documents[0], {0, 1, "P27"}, 8));
}

TEST(Adapter, OtherErrorFramesPropagate) {
  auto m = std::make_unique<WireModel>(std::make_unique<ScriptedTransport>([](const Json& req) -> std::vector<std::string> {
    if (req["method"] == "info") return {reply(req, info_result({"predict"}))};
    return {Json{{"id", req["id"]}, {"error", {{"code", 500}, {"message", "boom"}}}}.dump()};
  }));
  try {
    m->predict(fixture_corpus().documents[0]);
    FAIL();
  } catch (const AdapterError& e) {
    EXPECT_EQ(e.code(), 500);
  }
}

TEST(Adapter, TimeoutIsRetriedOnceAndStaleRepliesDropped) {
  int predict_calls = 0;
  std::string stale;
  WireOptions opt;
  opt.timeout = std::chrono::milliseconds(20);
  auto m = std::make_unique<WireModel>(
      std::make_unique<ScriptedTransport>([&](const Json& req) -> std::vector<std::string> {
        if (req["method"] == "info") return {reply(req, info_result({"predict"}))};
        if (++predict_calls == 1) {
          stale = reply(req, Json{{"triples", Json::array()}});
          return {};
        }
        return {stale, reply(req, Json{{"triples", {{{"h", 0}, {"t", 1}, {"r", "P1"}, {"score", 0.75}}}}})};
      }),
      opt);
  const PredictionSet p = m->predict(fixture_corpus().documents[1]);
  EXPECT_EQ(predict_calls, 2);
  EXPECT_EQ(p.size(), 1u);
}

TEST(Adapter, RepeatedTimeoutsSurface) {
  WireOptions opt;
  opt.timeout = std::chrono::milliseconds(10);
  auto m = std::make_unique<WireModel>(
      std::make_unique<ScriptedTransport>([&](const Json& req) -> std::vector<std::string> {
        if (req["method"] == "info") return {reply(req, info_result({"predict"}))};
        return {};
      }),
      opt);
  EXPECT_THROW(m->predict(fixture_corpus().documents[1]), TimeoutError);
}

TEST(Adapter, ServerRejectsMalformedRequests) {
  RefModelBinding binding = trained_binding();
  ModelServer server(binding);
  EXPECT_EQ(Json::parse(server.handle_line("{nope"))["error"]["code"], 400);
  EXPECT_EQ(server.handle(Json{{"id", 3}, {"method", "dance"}})["error"]["code"], 400);
  EXPECT_EQ(server.handle(Json{{"id", 3}, {"method", "predict"}, {"params", Json::object()}})["error"]["code"], 400);
  const Json doc = document_to_json(fixture_corpus().documents[0]);
  const Json r = server.handle(
      Json{{"id", 4}, {"method", "attribute"}, {"params", {{"document", doc}, {"fact", {{"h", 0}, {"t", 1}, {"r", "P0"}}}}}});
  EXPECT_EQ(r["error"]["code"], 422);
  EXPECT_EQ(r["id"], 4);
}

TEST(Adapter, EmptyDocumentPredictsNothing) {
  RefModelBinding binding = trained_binding();
  auto wire = loopback_model(binding);
  Document empty;
  empty.doc_id = "empty";
  empty.sentences = {{"nothing", "here"}};
  EXPECT_TRUE(wire->predict(empty).empty());
}

TEST(Adapter, LoopbackIsBitIdentical) {
  RefModelBinding binding = trained_binding();
  auto wire = loopback_model(binding);
  const Corpus corpus = fixture_corpus();
  for (const auto& doc : corpus.documents) {
    EXPECT_EQ(wire->predict(doc), binding.predict(doc));
    for (const auto& f : doc.facts) {
      expect_same_attribution(*wire->attribute(doc, f.key(), 32), *binding.attribute(doc, f.key(), 32));
    }
  }
  EXPECT_EQ(wire->completeness_warnings(), 0u);
}

TEST(Adapter, ChildProcessIsBitIdentical) {
  testing::TempDir dir;
  const RefModelParams params = testing::trained_fixture_params();
  testing::write_text(dir / "params.json", to_json(params).dump());
  RefModelBinding binding{RefModel(params)};
  auto wire = make_model("exec:" + testing::shell_quote(testing::cli_path()) + " serve-ref --params " +
                             testing::shell_quote((dir / "params.json").string()),
                         std::nullopt);
  EXPECT_EQ(wire->info().name, "rexprobe-refmodel");
  const Corpus corpus = fixture_corpus();
  for (const auto& doc : corpus.documents) {
    EXPECT_EQ(wire->predict(doc), binding.predict(doc));
    const FactKey f = doc.facts.front().key();
    expect_same_attribution(*wire->attribute(doc, f, 16), *binding.attribute(doc, f, 16));
  }
}

TEST(Adapter, TcpIsBitIdentical) {
  RefModelBinding binding = trained_binding();
  ModelServer server(binding);
  TcpListener listener("127.0.0.1:0");
  std::thread serving([&] { server.serve_fd(listener.accept()); });
  {
    auto wire = make_model("tcp:127.0.0.1:" + std::to_string(listener.port()), std::nullopt);
    const Corpus corpus = fixture_corpus();
    for (const auto& doc : corpus.documents) {
      EXPECT_EQ(wire->predict(doc), binding.predict(doc));
      const FactKey f = doc.facts.back().key();
      expect_same_attribution(*wire->attribute(doc, f, 16), *binding.attribute(doc, f, 16));
    }
  }
  serving.join();
}

TEST(Adapter, PoolRunsEveryJobOnce) {
  RefModelBinding a = trained_binding(), b = trained_binding();
  std::vector<std::unique_ptr<Model>> pool;
  pool.push_back(loopback_model(a));
  pool.push_back(loopback_model(b));
  std::vector<int> hits(50, 0);
  const auto errors = run_on_pool(pool, hits.size(), [&](Model&, std::size_t i) {
    ++hits[i];
    if (i == 7) throw Error("job 7");
  });
  for (int h : hits) EXPECT_EQ(h, 1);
  for (std::size_t i = 0; i < errors.size(); ++i) EXPECT_EQ(errors[i] != nullptr, i == 7);
}

TEST(Adapter, UnknownSpec) {
  EXPECT_THROW(make_model("grpc:foo", std::nullopt), Error);
  EXPECT_THROW(make_model("builtin:refmodel", std::nullopt), Error);
}

}  // namespace
}  // namespace rexprobe
