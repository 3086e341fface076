#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "pra/backends.hpp"
#include "pra/readout.hpp"
#include "pra/task.hpp"

namespace pra {

enum class RewardMode { Online, PosthocLast, PosthocMin, PosthocMax, PosthocAverage };

std::string_view to_string(RewardMode mode);
std::optional<RewardMode> reward_mode_from(std::string_view name);

struct SearchConfig {
  int beam_width = 4;
  int branching = 16;
  int max_depth = 12;
  RewardMode reward_mode = RewardMode::Online;
  ReadoutConfig readout;
  RetrievalParams retrieval;
  bool length_normalized = false;  // rank by mean instead of sum; off by default

  void validate() const;
  int budget() const { return beam_width * branching; }
};

struct BeamState {
  std::string question_id;
  int width = 1;
  int branching = 1;
  std::vector<Trace> live;
  std::vector<Trace> completed;

  bool finished() const { return live.empty(); }
};

/// `width` empty root traces with serials 0..width-1, so the first
/// expansion already yields width x branching candidates.
BeamState initial_beam(const std::string& question_id, int width, int branching);

/// Beam shape actually searched: (B, b) online, (B*b, 1) for post-hoc modes,
/// which sample independent chains and only rank them once complete.
std::pair<int, int> beam_shape(const SearchConfig& config);

/// Text of the step in a raw continuation: the first `Step N:` block if
/// present, otherwise the whole trimmed output.
std::string step_from_output(std::string_view raw);

GenerateRequest generation_request(const Question& question, const Trace& parent, int n, std::uint64_t seed);

/// One candidate per output for each live parent. Serials are
/// `first_serial + parent_rank * branching + k`, independent of the order
/// in which outputs arrived.
std::vector<Trace> make_candidates(const BeamState& beam, const std::vector<GenerateResponse>& outputs,
                                   std::uint64_t first_serial);

/// Synchronous expansion of every live trace with `beam.branching` continuations.
std::vector<Trace> expand(const BeamState& beam, const Question& question, PolicyBackend& policy,
                          std::uint64_t seed, std::uint64_t first_serial);

/// Synchronous scoring: readout action, optional retrieval, reward.
/// Retrieval failures degrade to an empty document set.
void score_candidates(std::vector<Trace>& candidates, const Question& question, RewardBackend& reward,
                      RetrieverBackend* retriever, const SearchConfig& config, TaskStats* stats = nullptr);

/// Moves answered candidates to `completed`, keeps the top `beam.width` of
/// the rest by ranking score (ties: lower serial), and force-terminates
/// retained traces that reached `config.max_depth`.
BeamState prune(BeamState beam, std::vector<Trace> candidates, const SearchConfig& config);

double ranking_score(const Trace& trace, RewardMode mode, bool length_normalized = false);

struct Selection {
  std::optional<Label> answer;
  Trace trace;
};

/// Best completed trace under `mode`; ties go to the lower serial.
/// nullopt when nothing completed.
std::optional<Selection> select_answer(const BeamState& beam, RewardMode mode, bool length_normalized = false);

/// PRA-guided beam search over one question as a schedulable task.
class BeamSearch final : public Task {
 public:
  BeamSearch(Question question, SearchConfig config, std::uint64_t seed);

  const Question& question() const override { return question_; }
  bool finished() const override { return finished_; }

  std::vector<GenerateRequest> generation_requests() const override;
  std::vector<RetrieveRequest> retrieval_requests() const override;
  std::vector<ScoreRequest> scoring_requests() const override;

  void on_generated(std::uint64_t serial, GenerateResponse outputs) override;
  void on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) override;
  void on_scored(std::uint64_t serial, const ScoreResponse& response) override;
  void abort(std::string reason) override;

  QuestionResult result() const override;

  const BeamState& beam() const { return beam_; }

  class Candidates;

 private:
  void settle();

  Question question_;
  SearchConfig config_;
  std::uint64_t seed_;
  BeamState beam_;
  std::vector<std::optional<GenerateResponse>> generated_;
  std::shared_ptr<Candidates> candidates_;
  std::uint64_t next_serial_;
  bool finished_ = false;
  std::string error_;
  TaskStats stats_;
};

/// Runs one question to completion with unbatched backend calls.
QuestionResult run_search(const Question& question, const Backends& backends, const SearchConfig& config,
                          std::uint64_t seed);

}  // namespace pra
