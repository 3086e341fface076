#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pra/backends.hpp"
#include "pra/core.hpp"

namespace pra {

struct TaskStats {
  std::vector<std::size_t> generations_per_cycle;  // policy continuations per expansion cycle
  std::size_t policy_generations = 0;
  std::size_t scored_steps = 0;
  std::size_t search_decisions = 0;
  std::size_t reward_calls = 0;
  std::size_t retrieval_calls = 0;
};

struct QuestionResult {
  std::string question_id;
  Label gold = 'A';
  std::optional<Label> answer;
  bool correct = false;
  std::optional<Trace> winner;
  std::vector<Trace> completed;
  std::vector<std::optional<Label>> sample_answers;  // sampling baselines only
  std::string error;                                 // non-empty if the question errored
  TaskStats stats;
};

/// Per-question unit of work driven by the scheduler. A task exposes the
/// requests it is waiting on, grouped by stage, and consumes results keyed
/// by trace serial. Results for one task are applied by a single owner;
/// the order of application within an iteration never changes the outcome.
class Task {
 public:
  virtual ~Task() = default;

  virtual const Question& question() const = 0;
  virtual bool finished() const = 0;

  virtual std::vector<GenerateRequest> generation_requests() const = 0;
  virtual std::vector<RetrieveRequest> retrieval_requests() const = 0;
  virtual std::vector<ScoreRequest> scoring_requests() const = 0;

  virtual void on_generated(std::uint64_t serial, GenerateResponse outputs) = 0;
  /// `docs` is empty on retrieval failure; tasks degrade to no evidence.
  virtual void on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) = 0;
  virtual void on_scored(std::uint64_t serial, const ScoreResponse& response) = 0;

  /// A generation request exhausted its retries. Aborts the task unless
  /// the task can continue without that output.
  virtual void on_generation_failed(std::uint64_t serial, const std::string& error) {
    (void)serial;
    abort(error);
  }

  /// Finalises the task as errored (counts as unanswered).
  virtual void abort(std::string reason) = 0;

  virtual QuestionResult result() const = 0;
};

/// Drives `task` to completion with one request per backend call. Backend
/// errors are retried `retry_limit` times and then abort the task, except
/// retrieval errors, which degrade to no evidence.
void drive(Task& task, const Backends& backends, int retry_limit = 2);

}  // namespace pra
