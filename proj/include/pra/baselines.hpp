#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pra/scheduler.hpp"
#include "pra/search.hpp"
#include "pra/task.hpp"

namespace pra {

enum class SamplingMethod { Direct, CoT, Rag };

std::string_view to_string(SamplingMethod method);
std::optional<SamplingMethod> sampling_method_from(std::string_view name);

struct SamplingConfig {
  SamplingMethod method = SamplingMethod::CoT;
  int n_samples = 1;
  int max_depth = 12;
  RetrievalParams retrieval;

  void validate() const;
};

/// `n_samples` independent chains for one question. Chains are extended one
/// step at a time with n = 1, so a step cycle issues one policy call per
/// live chain. RAG performs a single question-level retrieval first.
class ChainSampler final : public Task {
 public:
  ChainSampler(Question question, SamplingConfig config, std::uint64_t seed);

  const Question& question() const override { return question_; }
  bool finished() const override { return finished_; }

  std::vector<GenerateRequest> generation_requests() const override;
  std::vector<RetrieveRequest> retrieval_requests() const override;
  std::vector<ScoreRequest> scoring_requests() const override { return {}; }

  void on_generated(std::uint64_t serial, GenerateResponse outputs) override;
  void on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) override;
  void on_scored(std::uint64_t serial, const ScoreResponse& response) override;
  void on_generation_failed(std::uint64_t serial, const std::string& error) override;
  void abort(std::string reason) override;

  QuestionResult result() const override;

 private:
  struct Chain {
    Trace trace;
    bool done = false;
    bool awaiting = false;
  };

  Chain& chain(std::uint64_t serial);
  void finish_chain(Chain& c);
  void close_cycle();

  Question question_;
  SamplingConfig config_;
  std::uint64_t seed_;
  std::vector<Chain> chains_;
  std::optional<DocumentSet> documents_;  // RAG evidence once retrieved
  bool finished_ = false;
  std::size_t cycle_calls_ = 0;
  std::string error_;
  TaskStats stats_;
};

TaskFactory sampler_factory(const SamplingConfig& config, std::uint64_t seed);

QuestionResult run_direct(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed);
QuestionResult run_cot(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed,
                       int max_depth = 12);
QuestionResult run_rag(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed,
                       int max_depth = 12, RetrievalParams retrieval = {});

/// Majority label over present answers; ties go to the alphabetically
/// smallest label; nullopt when every answer is absent.
std::optional<Label> self_consistency(std::span<const std::optional<Label>> answers);

struct SamplePool {
  std::string question_id;
  Label gold = 'A';
  std::vector<std::optional<Label>> answers;
};

struct CurvePoint {
  int budget = 1;
  double accuracy = 0.0;
  double standard_error = 0.0;
};

/// Expected self-consistency accuracy of one pool at `budget` from `trials`
/// subsets drawn without replacement. The last member of each subset is
/// averaged over the rest of the pool rather than drawn.
double estimate_sc_accuracy(const SamplePool& pool, int budget, int trials, std::mt19937_64& rng);

/// Dataset-level curve. Budgets larger than the smallest pool are skipped
/// with a warning. The standard error bootstraps over questions.
std::vector<CurvePoint> estimate_sc_curve(std::span<const SamplePool> pools, std::span<const int> budgets,
                                          int trials = 1000, int bootstrap = 1000, std::uint64_t seed = 0);

struct SweepPoint {
  double theta = 0.0;
  double accuracy = 0.0;
  double search_frequency = 0.0;
  std::size_t scored_steps = 0;
  std::size_t search_decisions = 0;
  bool pareto = false;
};

std::vector<double> default_theta_grid();

/// One Threshold-mode PRA run per theta.
std::vector<SweepPoint> sweep_theta(std::span<const Question> questions, const Backends& backends,
                                    const SearchConfig& base, std::uint64_t seed, std::span<const double> thetas,
                                    const SchedulerConfig& scheduler = {});

/// Marks points not dominated by another point with accuracy at least as
/// high and search frequency at least as low (strictly better in one).
void mark_pareto(std::vector<SweepPoint>& points);

double accuracy(std::span<const QuestionResult> results);

struct MarginObservation {
  std::string question_id;
  int step_index = 1;
  int num_steps = 1;
  double delta = 0.0;
  bool correct = false;
  std::optional<double> solve_rate;  // fraction of a question's samples that are correct
};

struct MarginCell {
  int bin = 0;
  bool correct = false;
  std::size_t count = 0;
  std::size_t questions = 0;
  double mean_abs_delta = 0.0;  // NaN when count == 0
  double mean_delta = 0.0;
};

struct MarginTables {
  std::vector<MarginCell> by_position;    // 10 deciles x {incorrect, correct}
  std::vector<MarginCell> by_difficulty;  // 10 solve-rate bins x {incorrect, correct}
};

int position_decile(int step_index, int num_steps);
int difficulty_bin(double solve_rate);

MarginTables analyze_margin_shift(std::span<const MarginObservation> observations);

/// "grouping,bin,correct,count,questions,mean_abs_delta,mean_delta" rows.
std::string margin_csv(const std::string& grouping, std::span<const MarginCell> cells);

}  // namespace pra
