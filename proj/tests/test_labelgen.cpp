#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pra/labelgen.hpp"
#include "pra/log.hpp"
#include "pra/synthetic.hpp"
#include "support.hpp"

namespace pra {
namespace {

struct QuietLog {
  QuietLog() { previous = log::set_sink([](log::Level, std::string_view) {}); }
  ~QuietLog() { log::set_sink(previous); }
  log::Sink previous;
};

// Teacher returning fixed logits per pass.
class FixedTeacher final : public TeacherBackend {
 public:
  FixedTeacher(LogitPair docs, LogitPair nodocs) : docs_(docs), nodocs_(nodocs) {}

  std::vector<LogitPair> judge(std::span<const TeacherRequest> batch) override {
    std::vector<LogitPair> out;
    for (const auto& r : batch) {
      seen.push_back(r);
      out.push_back(r.with_docs ? docs_ : nodocs_);
    }
    return out;
  }

  std::vector<TeacherRequest> seen;

 private:
  LogitPair docs_;
  LogitPair nodocs_;
};

MarginRecord record_with_delta(double delta) {
  MarginRecord r;
  r.question_id = "q";
  r.delta = delta;
  return r;
}

TEST(Margin, IsLogitDifference) {
  EXPECT_EQ(margin({0.0, 0.0}), 0.0);
  EXPECT_DOUBLE_EQ(margin({1.0, 3.5}), 2.5);
  EXPECT_THROW(margin({std::numeric_limits<double>::quiet_NaN(), 0.0}), DataError);
}

TEST(Margin, EqualsLogProbabilityRatio) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 2000; ++i) {
    const double l0 = u(rng);
    const double l1 = u(rng);
    const double m = std::max(l0, l1);
    const double log_z = m + std::log(std::exp(l0 - m) + std::exp(l1 - m));
    EXPECT_NEAR(margin({l0, l1}), (l1 - log_z) - (l0 - log_z), 1e-12);
  }
}

TEST(LabelStep, TwoPassesAndArithmetic) {
  const auto q = testing::golden_question();
  const auto steps = testing::golden_steps();
  const auto docs = testing::golden_documents();
  FixedTeacher teacher({0.0, 4.0}, {0.0, 0.0});
  const auto r = label_step(q, steps, docs, teacher);
  EXPECT_DOUBLE_EQ(r.margin_docs, 4.0);
  EXPECT_DOUBLE_EQ(r.margin_nodocs, 0.0);
  EXPECT_DOUBLE_EQ(r.delta, -4.0);
  EXPECT_EQ(r.reasoning_label, 1);
  EXPECT_EQ(r.step_index, 2);
  EXPECT_FALSE(r.search_label);

  ASSERT_EQ(teacher.seen.size(), 2u);
  EXPECT_TRUE(teacher.seen[0].with_docs);
  EXPECT_EQ(teacher.seen[0].documents, docs);
  EXPECT_FALSE(teacher.seen[1].with_docs);
  EXPECT_TRUE(teacher.seen[1].documents.empty());
  EXPECT_NE(teacher.seen[0].prompt.flatten().find("DOCUMENTS"), std::string::npos);
  EXPECT_EQ(teacher.seen[1].prompt.flatten().find("DOCUMENTS"), std::string::npos);
}

TEST(LabelStep, ReasoningLabelFromDocsPass) {
  const auto q = testing::golden_question();
  const auto steps = testing::golden_steps();
  FixedTeacher teacher({1.0, 0.5}, {0.0, 9.0});
  EXPECT_EQ(label_step(q, steps, testing::golden_documents(), teacher).reasoning_label, 0);
  FixedTeacher tied({2.0, 2.0}, {0.0, 0.0});
  EXPECT_EQ(label_step(q, steps, testing::golden_documents(), tied).reasoning_label, 1);
}

TEST(LabelStep, EmptyPrefixRejected) {
  FixedTeacher teacher({0, 0}, {0, 0});
  EXPECT_THROW(label_step(testing::golden_question(), {}, DocumentSet{}, teacher), DataError);
}

TEST(LabelStep, RetrievalFailureLabelsWithoutDocuments) {
  QuietLog quiet;
  FixedTeacher teacher({0, 1}, {0, 1});
  testing::FailingRetriever retriever;
  const auto steps = testing::golden_steps();
  EXPECT_NO_THROW(label_step(testing::golden_question(), steps, &retriever, teacher));
  EXPECT_TRUE(teacher.seen[0].documents.empty());
  EXPECT_TRUE(teacher.seen[0].with_docs);
}

TEST(FinalizeLabels, MedianRuleEvenCount) {
  std::vector<MarginRecord> rs = {record_with_delta(1), record_with_delta(-2), record_with_delta(3),
                                  record_with_delta(-4)};
  const auto report = finalize_labels(rs, LabelConfig{});
  EXPECT_DOUBLE_EQ(report.epsilon, 2.5);
  EXPECT_EQ(report.search, 2u);
  EXPECT_DOUBLE_EQ(report.search_fraction, 0.5);
  EXPECT_EQ(rs[0].search_label, Action::Reward);
  EXPECT_EQ(rs[1].search_label, Action::Reward);
  EXPECT_EQ(rs[2].search_label, Action::Search);
  EXPECT_EQ(rs[3].search_label, Action::Search);
}

TEST(FinalizeLabels, MedianRuleOddCountIsStrict) {
  std::vector<MarginRecord> rs = {record_with_delta(1), record_with_delta(2), record_with_delta(3)};
  const auto report = finalize_labels(rs, LabelConfig{});
  EXPECT_DOUBLE_EQ(report.epsilon, 2.0);
  EXPECT_EQ(report.search, 1u);
}

TEST(FinalizeLabels, AllEqualGivesNoSearch) {
  std::vector<MarginRecord> rs(5, record_with_delta(0.7));
  EXPECT_EQ(finalize_labels(rs, LabelConfig{}).search, 0u);
}

TEST(FinalizeLabels, FixedZeroSearchesAllNonzero) {
  std::vector<MarginRecord> rs = {record_with_delta(0.1), record_with_delta(-0.1), record_with_delta(5)};
  LabelConfig cfg;
  cfg.epsilon_mode = EpsilonMode::Fixed;
  cfg.epsilon = 0.0;
  const auto report = finalize_labels(rs, cfg);
  EXPECT_EQ(report.search, 3u);
  EXPECT_EQ(report.epsilon, 0.0);
}

TEST(FinalizeLabels, EmptyThrows) {
  std::vector<MarginRecord> rs;
  EXPECT_THROW(finalize_labels(rs, LabelConfig{}), DataError);
}

TEST(FinalizeLabels, MedianSplitsRandomDeltasInHalf) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<MarginRecord> rs;
  for (int i = 0; i < 1001; ++i) rs.push_back(record_with_delta(n(rng)));
  const auto report = finalize_labels(rs, LabelConfig{});
  EXPECT_EQ(report.search, 500u);
}

class DatasetTest : public ::testing::Test {
 protected:
  DatasetTest() {
    SyntheticConfig sc;
    sc.num_questions = 6;
    sc.seed = 12;
    world = std::make_shared<SyntheticWorld>(sc);
    questions = world->make_questions();
  }

  std::shared_ptr<SyntheticWorld> world;
  std::vector<Question> questions;
};

TEST_F(DatasetTest, OneRecordPerStep) {
  const auto ds = generate_dataset(questions, world->backends(), LabelConfig{}, 4);
  std::map<std::string, std::vector<int>> steps;
  for (const auto& ex : ds.examples) steps[ex.record.question_id].push_back(ex.record.step_index);
  EXPECT_EQ(steps.size(), questions.size());
  for (const auto& ex : ds.examples) {
    const auto& seen = steps[ex.record.question_id];
    EXPECT_EQ(static_cast<int>(seen.size()), ex.num_steps);
  }
  for (const auto& [id, idx] : steps) {
    for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], static_cast<int>(i) + 1);
  }
  EXPECT_EQ(ds.report.records, ds.examples.size());
}

TEST_F(DatasetTest, TargetsAndPromptsAgree) {
  const auto ds = generate_dataset(questions, world->backends(), LabelConfig{}, 4);
  std::size_t search = 0;
  for (const auto& ex : ds.examples) {
    const bool s = ex.record.search_label == Action::Search;
    search += s;
    EXPECT_EQ(ex.target, fmt::format("{},{}", ex.record.reasoning_label, s ? 1 : 0));
    EXPECT_EQ(ex.prompt.flatten().find("DOCUMENTS") != std::string::npos, s);
    EXPECT_EQ(std::abs(ex.record.delta) > ds.report.epsilon, s);
  }
  EXPECT_EQ(search, ds.report.search);
}

TEST_F(DatasetTest, AlwaysSearchTargetsEndInOne) {
  LabelConfig cfg;
  cfg.always_search = true;
  const auto ds = generate_dataset(questions, world->backends(), cfg, 4);
  for (const auto& ex : ds.examples) {
    EXPECT_EQ(ex.target.back(), '1');
    EXPECT_NE(ex.prompt.flatten().find("DOCUMENTS"), std::string::npos);
  }
}

TEST_F(DatasetTest, SingleStepTraceGivesOneRecord) {
  SyntheticConfig sc;
  sc.num_questions = 1;
  sc.min_depth = 1;
  sc.max_depth = 1;
  SyntheticWorld one(sc);
  const auto qs = one.make_questions();
  const auto ds = generate_dataset(qs, one.backends(), LabelConfig{}, 0);
  ASSERT_EQ(ds.examples.size(), 1u);
  EXPECT_EQ(ds.examples[0].num_steps, 1);
  EXPECT_EQ(ds.examples[0].record.search_label, Action::Reward);  // |delta| equals its own median
}

TEST_F(DatasetTest, JsonFields) {
  const auto ds = generate_dataset(questions, world->backends(), LabelConfig{}, 4);
  const auto j = example_to_json(ds.examples.front());
  for (const char* key : {"question_id", "step_index", "prompt", "target", "m", "m_d", "delta", "reasoning_label",
                          "search_label", "num_steps", "trace_correct"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const auto r = report_to_json(ds.report);
  EXPECT_EQ(r["records"].get<std::size_t>(), ds.report.records);
}

TEST_F(DatasetTest, EmptyInputThrows) {
  EXPECT_THROW(generate_dataset({}, world->backends(), LabelConfig{}, 0), DataError);
}

TEST(LabelConfigTest, Validates) {
  LabelConfig cfg;
  cfg.epsilon_mode = EpsilonMode::Fixed;
  cfg.epsilon = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace pra
