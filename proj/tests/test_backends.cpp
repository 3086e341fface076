#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "pra/backends.hpp"
#include "pra/log.hpp"
#include "pra/prompts.hpp"
#include "pra/remote.hpp"
#include "pra/replay.hpp"
#include "pra/search.hpp"
#include "pra/synthetic.hpp"
#include "support.hpp"

namespace pra {
namespace {

struct QuietLog {
  QuietLog() { previous = log::set_sink([](log::Level, std::string_view) {}); }
  ~QuietLog() { log::set_sink(previous); }
  log::Sink previous;
};

Step step(int index, std::string text) { return {index, std::move(text), {}, {}, {}}; }

TEST(Prompts, DocumentsSectionOnlyWithDocuments) {
  const auto q = testing::golden_question();
  const auto steps = testing::golden_steps();
  const auto docs = testing::golden_documents();
  EXPECT_NE(render_pra_prompt(q, steps, docs).flatten().find("DOCUMENTS"), std::string::npos);
  EXPECT_EQ(render_pra_prompt(q, steps, {}).flatten().find("DOCUMENTS"), std::string::npos);
  EXPECT_NE(render_teacher_prompt(q, steps, {}, true).flatten().find("DOCUMENTS"), std::string::npos);
  EXPECT_EQ(render_teacher_prompt(q, steps, docs, false).flatten().find("DOCUMENTS"), std::string::npos);
}

TEST(Prompts, RagPromptCarriesDocumentText) {
  const auto q = testing::golden_question();
  const auto docs = testing::golden_documents();
  const auto flat = render_rag_prompt(q, docs).flatten();
  for (const auto& d : docs) EXPECT_NE(flat.find(d.text), std::string::npos);
}

TEST(Prompts, StepPrefixNumbersSteps) {
  const std::vector<Step> steps = {step(1, "a"), step(2, "b")};
  EXPECT_EQ(render_step_prefix(steps), "Step 1: a\nStep 2: b\n");
}

TEST(Prompts, QueryUsesLastTwoSteps) {
  const auto q = testing::plain_question("q1");
  const std::vector<Step> steps = {step(1, "first"), step(2, "second"), step(3, "third")};
  const auto query = build_query(q, steps);
  EXPECT_EQ(query.find("first"), std::string::npos);
  EXPECT_NE(query.find("second\nthird"), std::string::npos);
  EXPECT_EQ(query.rfind(q.stem(), 0), 0u);
  EXPECT_NE(query.find("D: delta"), std::string::npos);
}

TEST(DocumentSets, CheckOrderingAndSize) {
  DocumentSet docs = {{"c", "1", "t", 0.0, 2.0}, {"c", "2", "t", 0.0, 1.0}};
  EXPECT_NO_THROW(check_document_set(docs, 2));
  EXPECT_THROW(check_document_set(docs, 1), BackendError);
  std::swap(docs[0], docs[1]);
  EXPECT_THROW(check_document_set(docs, 2), BackendError);
}

TEST(DocumentSets, PoolDeduplicatesAndKeepsTopM) {
  std::vector<DocumentSet> per_corpus = {
      {{"a", "shared", "one", 1.0, {}}, {"a", "x", "xx", 5.0, {}}},
      {{"b", "shared", "two", 3.0, {}}, {"b", "y", "yyy", 2.0, {}}, {"b", "z", "z", 0.5, {}}}};
  auto by_length = [](const std::string&, const Document& d) { return static_cast<double>(d.text.size()); };
  const auto out = pool_and_rerank("q", per_corpus, by_length, 3);
  ASSERT_EQ(out.size(), 3u);
  // "shared" keeps the higher retrieval score copy ("two") and ties "yyy" on
  // rerank score, so the doc id decides
  EXPECT_EQ(out[0].doc_id, "shared");
  EXPECT_EQ(out[0].corpus_id, "b");
  EXPECT_EQ(out[1].doc_id, "y");
  EXPECT_EQ(out[2].doc_id, "x");
  EXPECT_NO_THROW(check_document_set(out, 3));
}

class SyntheticFixture : public ::testing::Test {
 protected:
  SyntheticFixture() : world(SyntheticConfig{}) { questions = world.make_questions(); }

  GenerateRequest request(const Question& q, std::uint64_t serial, int n) {
    GenerateRequest r;
    r.question_id = q.id();
    r.trace_serial = serial;
    r.prompt = render_policy_prompt(q);
    r.n = n;
    r.seed = 1234 + serial;
    return r;
  }

  SyntheticWorld world;
  std::vector<Question> questions;
};

TEST_F(SyntheticFixture, PolicyIndependentOfBatchComposition) {
  auto backends = world.backends();
  const auto alone = backends.policy->generate_steps(std::vector{request(questions[0], 3, 4)});
  const auto batched = backends.policy->generate_steps(
      std::vector{request(questions[1], 0, 2), request(questions[0], 3, 4), request(questions[2], 1, 1)});
  ASSERT_EQ(batched.size(), 3u);
  EXPECT_EQ(alone[0], batched[1]);
  EXPECT_EQ(batched[0].size(), 2u);
}

TEST_F(SyntheticFixture, RewardIsPureFunctionOfRequest) {
  auto backends = world.backends();
  const auto& q = questions[0];
  const auto steps = backends.policy->generate_steps(std::vector{request(q, 0, 1)})[0];
  ScoreRequest s;
  s.question_id = q.id();
  s.steps = {step_from_output(steps[0])};
  const auto a = backends.reward->score_steps(std::vector{s});
  const auto b = backends.reward->score_steps(std::vector{s, s});
  EXPECT_EQ(a[0], b[0]);
  EXPECT_EQ(b[0], b[1]);
}

TEST_F(SyntheticFixture, RetrieverReturnsRankedRelevantDocs) {
  auto backends = world.backends();
  RetrieveRequest r;
  r.question_id = questions[0].id();
  r.query = build_query(questions[0], {});
  const auto docs = backends.retriever->retrieve(std::vector{r});
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_FALSE(docs[0].empty());
  EXPECT_NO_THROW(check_document_set(docs[0], r.params.rerank_m));
  bool relevant = false;
  for (const auto& d : docs[0]) relevant |= d.doc_id.rfind("syn/" + questions[0].id() + "/rel/", 0) == 0;
  EXPECT_TRUE(relevant);
}

TEST_F(SyntheticFixture, UnknownQuestionIsBackendError) {
  auto backends = world.backends();
  GenerateRequest r = request(questions[0], 0, 1);
  r.question_id = "nope";
  EXPECT_THROW(backends.policy->generate_steps(std::vector{r}), BackendError);
}

TEST(SyntheticConfig, Validates) {
  SyntheticConfig c;
  c.p_correct = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.min_depth = 5;
  c.max_depth = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Replay, RecordThenReplayUnderDifferentBatching) {
  SyntheticWorld world{SyntheticConfig{}};
  const auto questions = world.make_questions();
  auto log = std::make_shared<ReplayLog>();
  auto recording = recording_backends(world.backends(), log);

  std::vector<GenerateRequest> batch;
  for (std::uint64_t i = 0; i < 3; ++i) {
    GenerateRequest r;
    r.question_id = questions[i].id();
    r.trace_serial = i;
    r.prompt = render_policy_prompt(questions[i]);
    r.n = 2;
    r.seed = i;
    batch.push_back(r);
  }
  const auto recorded = recording.policy->generate_steps(batch);
  EXPECT_EQ(log->size(), 3u);

  const auto path = std::filesystem::temp_directory_path() / "pra_replay_test.jsonl";
  log->save(path);
  auto replay = replay_backends(ReplayLog::load(path));
  const auto single = replay.policy->generate_steps(std::vector{batch[1]});
  EXPECT_EQ(single[0], recorded[1]);

  batch[0].seed = 99;
  EXPECT_THROW(replay.policy->generate_steps(std::vector{batch[0]}), BackendError);
  std::filesystem::remove(path);
}

TEST(CorpusRetrieverTest, SkipsUnavailableCorpus) {
  QuietLog quiet;
  CorpusRetriever retriever;
  retriever.add({"guidelines", "g1", "ecg chest pain first test", 0.0, {}});
  retriever.add({"textbooks", "t1", "chest pain differential diagnosis list ecg", 0.0, {}});
  retriever.add({"textbooks", "t2", "unrelated renal physiology", 0.0, {}});
  RetrieveRequest r;
  r.query = "chest pain ecg";
  r.params = {10, 5};

  auto docs = retriever.retrieve(std::vector{r})[0];
  EXPECT_EQ(docs.front().doc_id, "g1");
  EXPECT_NO_THROW(check_document_set(docs, 5));

  retriever.set_available("guidelines", false);
  docs = retriever.retrieve(std::vector{r})[0];
  ASSERT_FALSE(docs.empty());
  for (const auto& d : docs) EXPECT_EQ(d.corpus_id, "textbooks");
}

TEST(CorpusRetrieverTest, EmptyRetrieverIsConfigError) {
  CorpusRetriever retriever;
  RetrieveRequest r;
  r.query = "x";
  EXPECT_THROW(retriever.retrieve(std::vector{r}), ConfigError);
}

// In-process HTTP stub for the remote clients.
class StubServer {
 public:
  StubServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  httplib::Server& server() { return server_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

RemoteConfig remote(const StubServer& stub) { return {stub.url(), 2000, 2, 2}; }

GenerateRequest one_generate() {
  GenerateRequest r;
  r.question_id = "q";
  r.prompt = {"sys", "user"};
  r.n = 2;
  return r;
}

TEST(Remote, GenerateRoundTrip) {
  StubServer stub;
  stub.server().Post("/generate", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    json outputs = json::array();
    for (const auto& item : body["items"]) {
      json texts = json::array();
      for (int k = 0; k < item["n"].get<int>(); ++k) texts.push_back(fmt::format("text {}", k));
      outputs.push_back(texts);
    }
    res.set_content(json{{"request_id", body["request_id"]}, {"outputs", outputs}}.dump(), "application/json");
  });
  auto policy = make_remote_policy(remote(stub));
  const auto out = policy->generate_steps(std::vector{one_generate()});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], (GenerateResponse{"text 0", "text 1"}));
}

TEST(Remote, ScoreParsesSlots) {
  StubServer stub;
  stub.server().Post("/score", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const json slots = {{{"logit_zero", 0.0}, {"logit_one", 2.0}}, {{"logit_zero", 1.0}, {"logit_one", -1.0}}};
    res.set_content(json{{"request_id", body["request_id"]}, {"results", {{{"slots", slots}}}}}.dump(),
                    "application/json");
  });
  auto reward = make_remote_reward(remote(stub));
  ScoreRequest s;
  s.question_id = "q";
  const auto out = reward->score_steps(std::vector{s});
  EXPECT_EQ(out[0], (ScoreResponse{{0.0, 2.0}, {1.0, -1.0}}));
  auto teacher = make_remote_teacher(remote(stub));
  const auto judged = teacher->judge(std::vector{TeacherRequest{}});
  EXPECT_EQ(judged[0], (LogitPair{0.0, 2.0}));
}

TEST(Remote, MalformedReplyIsBackendError) {
  StubServer stub;
  stub.server().Post("/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{not json", "application/json");
  });
  auto policy = make_remote_policy(remote(stub));
  EXPECT_THROW(policy->generate_steps(std::vector{one_generate()}), BackendError);
}

TEST(Remote, RequestIdMismatchIsBackendError) {
  StubServer stub;
  stub.server().Post("/generate", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"request_id", "other"}, {"outputs", json::array({json::array({"a", "b"})})}}.dump(), "application/json");
  });
  auto policy = make_remote_policy(remote(stub));
  EXPECT_THROW(policy->generate_steps(std::vector{one_generate()}), BackendError);
}

TEST(Remote, ShortReplyIsBackendError) {
  StubServer stub;
  stub.server().Post("/generate", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    res.set_content(json{{"request_id", body["request_id"]}, {"outputs", json::array({json::array({"only one"})})}}.dump(), "application/json");
  });
  auto policy = make_remote_policy(remote(stub));
  EXPECT_THROW(policy->generate_steps(std::vector{one_generate()}), BackendError);
}

TEST(Remote, ServerErrorsAreRetried) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    if (calls.fetch_add(1) < 2) {
      res.status = 503;
      return;
    }
    const auto body = json::parse(req.body);
    res.set_content(json{{"request_id", body["request_id"]}, {"outputs", json::array({json::array({"a", "b"})})}}.dump(), "application/json");
  });
  auto policy = make_remote_policy(remote(stub));
  EXPECT_NO_THROW(policy->generate_steps(std::vector{one_generate()}));
  EXPECT_EQ(calls.load(), 3);
}

TEST(Remote, RetriesExhausted) {
  StubServer stub;
  std::atomic<int> calls{0};
  stub.server().Post("/generate", [&](const httplib::Request&, httplib::Response& res) {
    calls.fetch_add(1);
    res.status = 500;
  });
  auto policy = make_remote_policy(remote(stub));
  EXPECT_THROW(policy->generate_steps(std::vector{one_generate()}), BackendError);
  EXPECT_EQ(calls.load(), 3);
}

TEST(Remote, InvalidUrlIsConfigError) { EXPECT_THROW(make_remote_policy({"localhost:80", 10, 0, 1}), ConfigError); }

}  // namespace
}  // namespace pra
