#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pra/search.hpp"
#include "pra/task.hpp"

namespace pra {

enum class StageKind { Retrieve, Generate, Score };

std::string_view to_string(StageKind stage);

struct SchedulerConfig {
  std::size_t max_batch_per_stage = 0;     // 0 = unbounded
  std::size_t max_inflight_questions = 0;  // 0 = all questions at once
  int retry_limit = 2;
  bool parallel_stages = true;  // dispatch the three stages concurrently
  /// Called once per iteration with a one-line summary.
  std::function<void(const std::string&)> progress;

  void validate() const;
};

struct StageStats {
  std::size_t batches = 0;
  std::size_t items = 0;
  std::size_t retries = 0;   // failed batch or item attempts that were retried
  std::size_t failures = 0;  // items that exhausted their retries
  double wall_ms = 0.0;
  std::map<std::size_t, std::size_t> size_histogram;  // batch size -> count
};

struct BatchRecord {
  std::uint64_t serial = 0;
  StageKind stage = StageKind::Generate;
  std::size_t size = 0;
  std::size_t iteration = 0;
};

struct RunReport {
  std::size_t iterations = 0;
  std::array<StageStats, 3> stages;  // indexed by StageKind
  std::vector<BatchRecord> batches;
  std::size_t policy_calls = 0;
  std::size_t max_policy_calls_per_cycle = 0;
  std::size_t search_decisions = 0;
  std::size_t scored_steps = 0;
  std::size_t errored = 0;
  double wall_ms = 0.0;

  const StageStats& stage(StageKind kind) const { return stages[static_cast<std::size_t>(kind)]; }
};

struct RunResult {
  std::vector<QuestionResult> results;  // in input order
  RunReport report;
};

using TaskFactory = std::function<std::unique_ptr<Task>(const Question&)>;

TaskFactory beam_search_factory(const SearchConfig& config, std::uint64_t seed);

/// Stage-level batched execution. Each iteration snapshots the pending
/// requests of every in-flight question, groups them by stage and issues
/// one backend call per batch. Results are applied in question order, then
/// by serial, so outputs do not depend on batch limits or timing.
RunResult run(std::span<const Question> questions, const Backends& backends, const TaskFactory& factory,
              const SchedulerConfig& config = {});

RunResult run(std::span<const Question> questions, const Backends& backends, const SearchConfig& search,
              std::uint64_t seed, const SchedulerConfig& config = {});

/// One question at a time, one request per backend call.
std::vector<QuestionResult> sequential_reference(std::span<const Question> questions, const Backends& backends,
                                                 const TaskFactory& factory, int retry_limit = 2);

/// Summary fields of a finished run computed from per-question stats.
void tally(RunReport& report, std::span<const QuestionResult> results);

}  // namespace pra
