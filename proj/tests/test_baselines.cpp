#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

#include "pra/baselines.hpp"
#include "pra/log.hpp"
#include "pra/synthetic.hpp"
#include "support.hpp"

namespace pra {
namespace {

using Answers = std::vector<std::optional<Label>>;

struct QuietLog {
  QuietLog() { previous = log::set_sink([](log::Level, std::string_view) {}); }
  ~QuietLog() { log::set_sink(previous); }
  log::Sink previous;
};

class RecordingPolicy final : public PolicyBackend {
 public:
  explicit RecordingPolicy(std::shared_ptr<PolicyBackend> inner) : inner_(std::move(inner)) {}

  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) override {
    {
      std::lock_guard lock(mutex_);
      seen.insert(seen.end(), batch.begin(), batch.end());
    }
    return inner_->generate_steps(batch);
  }

  std::vector<GenerateRequest> seen;

 private:
  std::shared_ptr<PolicyBackend> inner_;
  std::mutex mutex_;
};

class CountingRetriever final : public RetrieverBackend {
 public:
  explicit CountingRetriever(std::shared_ptr<RetrieverBackend> inner) : inner_(std::move(inner)) {}
  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) override {
    calls += batch.size();
    return inner_->retrieve(batch);
  }
  std::size_t calls = 0;

 private:
  std::shared_ptr<RetrieverBackend> inner_;
};

TEST(SelfConsistency, Majority) {
  EXPECT_EQ(self_consistency(Answers{'A', 'A', 'B'}), 'A');
  EXPECT_EQ(self_consistency(Answers{'B', 'C', 'C', 'B', 'C'}), 'C');
}

TEST(SelfConsistency, TiesGoToSmallestLabel) {
  EXPECT_EQ(self_consistency(Answers{'A', 'B'}), 'A');
  EXPECT_EQ(self_consistency(Answers{'D', 'B'}), 'B');
}

TEST(SelfConsistency, AbsentAnswersDoNotVote) {
  EXPECT_EQ(self_consistency(Answers{std::nullopt, std::nullopt, 'C'}), 'C');
  EXPECT_FALSE(self_consistency(Answers{std::nullopt, std::nullopt}));
  EXPECT_FALSE(self_consistency(Answers{}));
}

TEST(SelfConsistency, PermutationInvariant) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Answers a;
    const auto n = 1 + rng() % 9;
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = rng() % 5;
      a.push_back(v == 4 ? std::nullopt : std::optional<Label>(static_cast<Label>('A' + v)));
    }
    const auto expected = self_consistency(a);
    std::shuffle(a.begin(), a.end(), rng);
    EXPECT_EQ(self_consistency(a), expected);
  }
}

TEST(ScEstimator, AllCorrectPoolIsExact) {
  const std::vector<SamplePool> pools = {{"a", 'B', Answers(8, 'B')}, {"b", 'A', Answers(8, 'A')}};
  const std::vector<int> budgets = {1, 4, 8};
  const auto curve = estimate_sc_curve(pools, budgets, 200, 200, 1);
  ASSERT_EQ(curve.size(), 3u);
  for (const auto& p : curve) {
    EXPECT_EQ(p.accuracy, 1.0);
    EXPECT_EQ(p.standard_error, 0.0);
  }
}

TEST(ScEstimator, FullBudgetIsDeterministic) {
  const SamplePool pool{"a", 'A', Answers{'A', 'B', 'B', std::nullopt}};
  std::mt19937_64 rng(0);
  EXPECT_EQ(estimate_sc_accuracy(pool, 4, 50, rng), 0.0);
  const SamplePool win{"b", 'B', Answers{'A', 'B', 'B', std::nullopt}};
  EXPECT_EQ(estimate_sc_accuracy(win, 4, 50, rng), 1.0);
}

TEST(ScEstimator, BudgetOneIsSampleAccuracy) {
  const SamplePool pool{"a", 'A', Answers{'A', 'B', 'A', 'C', std::nullopt}};
  std::mt19937_64 rng(0);
  EXPECT_DOUBLE_EQ(estimate_sc_accuracy(pool, 1, 10, rng), 0.4);
}

TEST(ScEstimator, OversizedBudgetsAreSkipped) {
  QuietLog quiet;
  const std::vector<SamplePool> pools = {{"a", 'A', Answers(4, 'A')}, {"b", 'A', Answers(2, 'A')}};
  const std::vector<int> budgets = {1, 2, 4};
  const auto curve = estimate_sc_curve(pools, budgets);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve.back().budget, 2);
}

TEST(ScEstimator, Reproducible) {
  const std::vector<SamplePool> pools = {{"a", 'A', Answers{'A', 'B', 'C', 'A', 'B', 'B'}},
                                         {"b", 'C', Answers{'C', 'B', 'C', 'A', std::nullopt, 'B'}}};
  const std::vector<int> budgets = {2, 3};
  const auto a = estimate_sc_curve(pools, budgets, 300, 100, 9);
  const auto b = estimate_sc_curve(pools, budgets, 300, 100, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
    EXPECT_EQ(a[i].standard_error, b[i].standard_error);
  }
}

class SamplerTest : public ::testing::Test {
 protected:
  SamplerTest() {
    SyntheticConfig sc;
    sc.num_questions = 4;
    sc.seed = 21;
    world = std::make_shared<SyntheticWorld>(sc);
    questions = world->make_questions();
  }

  std::shared_ptr<SyntheticWorld> world;
  std::vector<Question> questions;
};

TEST_F(SamplerTest, CotDrawsRequestedSamples) {
  const auto r = run_cot(questions[0], world->backends(), 64, 3);
  EXPECT_TRUE(r.error.empty());
  EXPECT_EQ(r.sample_answers.size(), 64u);
  EXPECT_EQ(r.completed.size(), 64u);
  EXPECT_EQ(r.answer, self_consistency(r.sample_answers));
  EXPECT_EQ(r.stats.generations_per_cycle.front(), 64u);
}

TEST_F(SamplerTest, PerfectPolicyFindsGold) {
  SyntheticConfig sc;
  sc.num_questions = 3;
  sc.p_correct = 1.0;
  SyntheticWorld perfect(sc);
  for (const auto& q : perfect.make_questions()) {
    const auto r = run_cot(q, perfect.backends(), 1, 0);
    EXPECT_EQ(r.answer, q.gold());
    EXPECT_TRUE(r.correct);
  }
}

TEST_F(SamplerTest, DirectIsOneStep) {
  const auto r = run_direct(questions[1], world->backends(), 3, 0);
  for (const auto& t : r.completed) EXPECT_EQ(t.steps.size(), 1u);
}

TEST_F(SamplerTest, ChainsRespectMaxDepth) {
  const auto r = run_cot(questions[1], world->backends(), 8, 0, 1);
  for (const auto& t : r.completed) EXPECT_EQ(t.steps.size(), 1u);
}

TEST_F(SamplerTest, RagRetrievesOnceWithBoundedEvidence) {
  auto backends = world->backends();
  auto policy = std::make_shared<RecordingPolicy>(backends.policy);
  auto retriever = std::make_shared<CountingRetriever>(backends.retriever);
  backends.policy = policy;
  backends.retriever = retriever;
  const auto r = run_rag(questions[2], backends, 4, 0);
  EXPECT_TRUE(r.error.empty());
  EXPECT_EQ(retriever->calls, 1u);
  ASSERT_FALSE(policy->seen.empty());
  for (const auto& req : policy->seen) {
    EXPECT_EQ(req.mode, PromptMode::Rag);
    EXPECT_FALSE(req.documents.empty());
    EXPECT_LE(req.documents.size(), 64u);
  }
}

TEST_F(SamplerTest, RagWithoutRetrieverIsConfigError) {
  auto backends = world->backends();
  backends.retriever = nullptr;
  EXPECT_THROW(run_rag(questions[0], backends, 1, 0), ConfigError);
}

TEST_F(SamplerTest, ScheduledMatchesDriven) {
  const SamplingConfig cfg{SamplingMethod::CoT, 5, 12, {}};
  const auto scheduled = run(questions, world->backends(), sampler_factory(cfg, 7), {});
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto direct = run_cot(questions[i], world->backends(), 5, 7);
    EXPECT_EQ(scheduled.results[i].sample_answers, direct.sample_answers);
    EXPECT_EQ(scheduled.results[i].completed, direct.completed);
  }
}

TEST_F(SamplerTest, PolicyFailureLeavesChainUnanswered) {
  QuietLog quiet;
  auto backends = world->backends();
  backends.policy = std::make_shared<testing::FailingPolicy>();
  const auto r = run_cot(questions[0], backends, 3, 0);
  EXPECT_FALSE(r.answer);
  EXPECT_FALSE(r.correct);
}

TEST(SamplingMethodNames, RoundTrip) {
  for (auto m : {SamplingMethod::Direct, SamplingMethod::CoT, SamplingMethod::Rag}) {
    EXPECT_EQ(sampling_method_from(to_string(m)), m);
  }
  EXPECT_FALSE(sampling_method_from("pra"));
}

TEST(Pareto, DominatedPointsAreMarked) {
  std::vector<SweepPoint> pts(4);
  pts[0].accuracy = 0.9, pts[0].search_frequency = 1.0;
  pts[1].accuracy = 0.8, pts[1].search_frequency = 0.5;
  pts[2].accuracy = 0.7, pts[2].search_frequency = 0.6;  // dominated by 1
  pts[3].accuracy = 0.8, pts[3].search_frequency = 0.5;  // ties with 1, neither dominates
  mark_pareto(pts);
  EXPECT_TRUE(pts[0].pareto);
  EXPECT_TRUE(pts[1].pareto);
  EXPECT_FALSE(pts[2].pareto);
  EXPECT_TRUE(pts[3].pareto);
}

TEST(ThetaGrid, DefaultIsElevenPoints) {
  const auto g = default_theta_grid();
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], 0.1 * static_cast<double>(i), 1e-12);
}

TEST(MarginBins, PositionAndDifficulty) {
  EXPECT_EQ(position_decile(1, 1), 0);
  EXPECT_EQ(position_decile(1, 10), 0);
  EXPECT_EQ(position_decile(10, 10), 9);
  EXPECT_EQ(position_decile(2, 3), 3);
  EXPECT_EQ(position_decile(3, 3), 6);
  EXPECT_THROW(position_decile(4, 3), DataError);
  EXPECT_EQ(difficulty_bin(0.0), 0);
  EXPECT_EQ(difficulty_bin(0.35), 3);
  EXPECT_EQ(difficulty_bin(1.0), 9);
  EXPECT_THROW(difficulty_bin(1.2), DataError);
}

TEST(MarginTablesTest, SingleRecord) {
  const std::vector<MarginObservation> obs = {{"q", 1, 1, -2.0, true, 0.5}};
  const auto t = analyze_margin_shift(obs);
  ASSERT_EQ(t.by_position.size(), 20u);
  ASSERT_EQ(t.by_difficulty.size(), 20u);
  std::size_t populated = 0;
  for (const auto& c : t.by_position) {
    if (c.count == 0) {
      EXPECT_TRUE(std::isnan(c.mean_abs_delta));
      continue;
    }
    ++populated;
    EXPECT_EQ(c.bin, 0);
    EXPECT_TRUE(c.correct);
    EXPECT_EQ(c.mean_abs_delta, 2.0);
    EXPECT_EQ(c.mean_delta, -2.0);
  }
  EXPECT_EQ(populated, 1u);
  for (const auto& c : t.by_difficulty) EXPECT_EQ(c.count, c.bin == 5 && c.correct ? 1u : 0u);
}

TEST(MarginTablesTest, MagnitudeTracksPosition) {
  std::vector<MarginObservation> obs;
  for (int q = 0; q < 5; ++q) {
    for (int i = 1; i <= 10; ++i) obs.push_back({fmt::format("q{}", q), i, 10, static_cast<double>(i), q % 2 == 0, {}});
  }
  const auto t = analyze_margin_shift(obs);
  for (const auto& c : t.by_position) {
    EXPECT_EQ(c.count, c.correct ? 3u : 2u);
    EXPECT_EQ(c.questions, c.count);
    EXPECT_DOUBLE_EQ(c.mean_abs_delta, c.bin + 1.0);
  }
  for (const auto& c : t.by_difficulty) EXPECT_EQ(c.count, 0u);
}

TEST(MarginTablesTest, DifficultyPartitionsRecords) {
  std::mt19937_64 rng(4);
  std::vector<MarginObservation> obs;
  for (int i = 0; i < 300; ++i) {
    obs.push_back({fmt::format("q{}", i % 37), 1, 1, uniform01(rng) - 0.5, rng() % 2 == 0,
                   static_cast<double>(i % 37) / 36.0});
  }
  const auto t = analyze_margin_shift(obs);
  std::size_t total = 0;
  for (const auto& c : t.by_difficulty) total += c.count;
  EXPECT_EQ(total, obs.size());
}

TEST(MarginCsv, HeaderAndRows) {
  const auto t = analyze_margin_shift(std::vector<MarginObservation>{{"q", 1, 2, 1.5, false, std::nullopt}});
  const auto csv = margin_csv("position", t.by_position);
  EXPECT_EQ(csv.rfind("grouping,bin,correct,count,questions,mean_abs_delta,mean_delta\n", 0), 0u);
  EXPECT_NE(csv.find("position,0,0,1,1,1.5,1.5\n"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
}

}  // namespace
}  // namespace pra
