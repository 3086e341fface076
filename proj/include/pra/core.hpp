#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or invalid input handed to the engine.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A backend call failed or returned something unusable. Retryable.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Malformed data file (dataset, trace record, replay log).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Option labels are single uppercase letters.
using Label = char;

struct Option {
  Label label;
  std::string text;

  bool operator==(const Option&) const = default;
};

/// A multiple-choice question. The constructor enforces the invariants:
/// non-empty stem, at least two options labelled contiguously from 'A',
/// and a gold label that names one of the options.
class Question {
 public:
  Question(std::string id, std::string stem, std::vector<Option> options, Label gold);

  const std::string& id() const { return id_; }
  const std::string& stem() const { return stem_; }
  const std::vector<Option>& options() const { return options_; }
  Label gold() const { return gold_; }

  const Option* find(Label label) const;

  bool operator==(const Question&) const = default;

 private:
  std::string id_;
  std::string stem_;
  std::vector<Option> options_;
  Label gold_;
};

enum class Action { Search, Reward };

struct ActionDecision {
  Action value = Action::Reward;
  double score = 0.0;  // probability of Search

  bool operator==(const ActionDecision&) const = default;
};

/// The logits of the "0" and "1" tokens at one output slot.
struct LogitPair {
  double logit_zero = 0.0;
  double logit_one = 0.0;

  bool operator==(const LogitPair&) const = default;
};

struct Document {
  std::string corpus_id;
  std::string doc_id;
  std::string text;
  double retrieval_score = 0.0;
  std::optional<double> rerank_score;

  bool operator==(const Document&) const = default;
};

using DocumentSet = std::vector<Document>;

struct Step {
  int index = 1;
  std::string text;
  std::optional<double> reward;
  std::optional<ActionDecision> action;
  // Present iff the step was scored after a Search decision.
  std::optional<std::vector<std::string>> doc_ids;

  bool operator==(const Step&) const = default;
};

enum class Stage { Reason, Reward, Search, Done };

std::string_view to_string(Stage stage);
std::string_view to_string(Action action);

struct Trace {
  std::string question_id;
  std::uint64_t serial = 0;
  std::vector<Step> steps;
  double cumulative_reward = 0.0;
  Stage stage = Stage::Reason;
  std::optional<Label> final_answer;

  /// Sets the reward of the newest step and adds it to the running sum.
  void reward_newest(double reward);

  bool operator==(const Trace&) const = default;
};

/// Teacher margins for one step with and without documents.
struct MarginRecord {
  std::string question_id;
  int step_index = 1;
  double margin_nodocs = 0.0;
  double margin_docs = 0.0;
  double delta = 0.0;  // margin_nodocs - margin_docs
  int reasoning_label = 0;
  std::optional<Action> search_label;

  bool operator==(const MarginRecord&) const = default;
};

struct PolicyOutput {
  std::vector<std::string> steps;
  std::optional<Label> answer;
};

/// Maximum number of steps produced by the paragraph fallback splitter.
inline constexpr std::size_t kMaxFallbackSteps = 30;

/// Splits raw policy text into steps on lines starting with `Step <n>:`,
/// falling back to blank-line paragraphs when no marker is present. The
/// answer is the last `the answer is (<letter>)` anywhere in the text.
/// Total: never throws on any input.
PolicyOutput parse_policy_output(std::string_view raw);

/// Last answer phrase in `text`, letter uppercased.
std::optional<Label> find_answer(std::string_view text);

/// Answer phrase of the final step only.
std::optional<Label> extract_answer(const Trace& trace);

int correctness(std::optional<Label> predicted, Label gold);

std::string trim(std::string_view text);

}  // namespace pra
