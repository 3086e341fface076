#include "pra/search.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <regex>

#include <fmt/format.h>

#include "pra/log.hpp"
#include "pra/prompts.hpp"
#include "pra/rng.hpp"

namespace pra {

std::string_view to_string(RewardMode mode) {
  switch (mode) {
    case RewardMode::Online: return "online";
    case RewardMode::PosthocLast: return "posthoc_last";
    case RewardMode::PosthocMin: return "posthoc_min";
    case RewardMode::PosthocMax: return "posthoc_max";
    case RewardMode::PosthocAverage: return "posthoc_average";
  }
  return "?";
}

std::optional<RewardMode> reward_mode_from(std::string_view name) {
  for (auto mode : {RewardMode::Online, RewardMode::PosthocLast, RewardMode::PosthocMin, RewardMode::PosthocMax,
                    RewardMode::PosthocAverage}) {
    if (to_string(mode) == name) return mode;
  }
  return std::nullopt;
}

void SearchConfig::validate() const {
  if (beam_width < 1) throw ConfigError("search.beam_width must be >= 1");
  if (branching < 1) throw ConfigError("search.branching must be >= 1");
  if (max_depth < 1) throw ConfigError("search.max_depth must be >= 1");
  if (retrieval.per_corpus_k < 1 || retrieval.rerank_m < 1) throw ConfigError("retrieval k and m must be >= 1");
  readout.validate();
}

BeamState initial_beam(const std::string& question_id, int width, int branching) {
  BeamState beam{question_id, width, branching, {}, {}};
  for (int i = 0; i < width; ++i) {
    Trace root;
    root.question_id = question_id;
    root.serial = static_cast<std::uint64_t>(i);
    beam.live.push_back(std::move(root));
  }
  return beam;
}

std::pair<int, int> beam_shape(const SearchConfig& config) {
  if (config.reward_mode == RewardMode::Online) return {config.beam_width, config.branching};
  return {config.beam_width * config.branching, 1};
}

std::string step_from_output(std::string_view raw) {
  static const std::regex marker(R"((^|\n)[ \t]*Step[ \t]*\d+[ \t]*:)");
  const std::string text(raw);
  if (std::regex_search(text, marker)) {
    auto parsed = parse_policy_output(raw);
    if (!parsed.steps.empty()) return parsed.steps.front();
  }
  return trim(raw);
}

GenerateRequest generation_request(const Question& question, const Trace& parent, int n, std::uint64_t seed) {
  GenerateRequest request;
  request.question_id = question.id();
  request.trace_serial = parent.serial;
  request.mode = PromptMode::CoT;
  request.prompt = render_policy_prompt(question);
  request.prior_steps = step_texts(parent.steps);
  request.n = n;
  request.seed = mix({seed, hash_string(question.id()), parent.serial});
  return request;
}

std::vector<Trace> make_candidates(const BeamState& beam, const std::vector<GenerateResponse>& outputs,
                                   std::uint64_t first_serial) {
  if (outputs.size() != beam.live.size()) throw BackendError("one output list per live trace expected");
  std::vector<Trace> candidates;
  candidates.reserve(beam.live.size() * static_cast<std::size_t>(beam.branching));
  for (std::size_t i = 0; i < beam.live.size(); ++i) {
    if (static_cast<int>(outputs[i].size()) != beam.branching) {
      throw BackendError(fmt::format("expected {} continuations, got {}", beam.branching, outputs[i].size()));
    }
    for (std::size_t k = 0; k < outputs[i].size(); ++k) {
      Trace child = beam.live[i];
      child.serial = first_serial + i * static_cast<std::uint64_t>(beam.branching) + k;
      child.stage = Stage::Reward;
      child.steps.push_back(Step{static_cast<int>(child.steps.size()) + 1, step_from_output(outputs[i][k]), {}, {}, {}});
      candidates.push_back(std::move(child));
    }
  }
  return candidates;
}

std::vector<Trace> expand(const BeamState& beam, const Question& question, PolicyBackend& policy,
                          std::uint64_t seed, std::uint64_t first_serial) {
  std::vector<GenerateRequest> requests;
  for (const auto& parent : beam.live) requests.push_back(generation_request(question, parent, beam.branching, seed));
  auto outputs = policy.generate_steps(requests);
  if (outputs.size() != requests.size()) throw BackendError("policy returned wrong batch size");
  return make_candidates(beam, outputs, first_serial);
}

// Scoring state for the candidates of one expansion cycle.
class BeamSearch::Candidates {
 public:
  Candidates(const Question& question, const SearchConfig& config, TaskStats& stats)
      : question_(question), config_(config), stats_(stats) {}

  void add(Trace candidate) {
    Entry entry{std::move(candidate), {}, false, false};
    if (config_.readout.always_search) {
      entry.trace.stage = Stage::Search;
      entry.decided = true;
      ++stats_.search_decisions;
    } else {
      entry.trace.stage = Stage::Reward;
    }
    entries_.push_back(std::move(entry));
  }

  std::vector<ScoreRequest> scoring_requests() const {
    std::vector<ScoreRequest> out;
    for (const auto& e : entries_) {
      if (e.scored || e.trace.stage != Stage::Reward) continue;
      ScoreRequest r;
      r.question_id = question_.id();
      r.trace_serial = e.trace.serial;
      r.prompt = render_pra_prompt(question_, e.trace.steps, e.evidence);
      r.steps = step_texts(e.trace.steps);
      r.documents = e.evidence;
      out.push_back(std::move(r));
    }
    return out;
  }

  std::vector<RetrieveRequest> retrieval_requests() const {
    std::vector<RetrieveRequest> out;
    for (const auto& e : entries_) {
      if (e.scored || e.trace.stage != Stage::Search) continue;
      out.push_back({question_.id(), e.trace.serial, build_query(question_, e.trace.steps), config_.retrieval});
    }
    return out;
  }

  void on_scored(std::uint64_t serial, const ScoreResponse& response) {
    Entry& e = find(serial, Stage::Reward);
    ++stats_.reward_calls;
    if (!e.decided) {
      auto rng = trace_stream(config_.readout.rng_seed, question_.id(), serial);
      const ActionDecision decision = action_from_logits(response.action, config_.readout, rng);
      e.trace.steps.back().action = decision;
      e.decided = true;
      if (decision.value == Action::Search) {
        ++stats_.search_decisions;
        e.trace.stage = Stage::Search;
        return;
      }
    } else if (config_.readout.always_search) {
      e.trace.steps.back().action = ActionDecision{Action::Search, reward_from_logits(response.action)};
    }
    e.trace.reward_newest(reward_from_logits(response.reward));
    e.scored = true;
    ++stats_.scored_steps;
  }

  void on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) {
    Entry& e = find(serial, Stage::Search);
    ++stats_.retrieval_calls;
    if (!docs) {
      log::warn(fmt::format("question {}: retrieval failed for trace {}, scoring without evidence", question_.id(),
                            serial));
    }
    e.evidence = docs ? std::move(*docs) : DocumentSet{};
    std::vector<std::string> ids;
    for (const auto& d : e.evidence) ids.push_back(d.doc_id);
    e.trace.steps.back().doc_ids = std::move(ids);
    e.trace.stage = Stage::Reward;
  }

  bool all_scored() const {
    return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.scored; });
  }

  std::vector<Trace> take() {
    std::vector<Trace> out;
    out.reserve(entries_.size());
    for (auto& e : entries_) out.push_back(std::move(e.trace));
    entries_.clear();
    return out;
  }

 private:
  struct Entry {
    Trace trace;
    DocumentSet evidence;
    bool decided;
    bool scored;
  };

  Entry& find(std::uint64_t serial, Stage expected) {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), serial,
                               [](const Entry& e, std::uint64_t s) { return e.trace.serial < s; });
    if (it == entries_.end() || it->trace.serial != serial) {
      throw BackendError(fmt::format("question {}: no pending candidate {}", question_.id(), serial));
    }
    if (it->scored || it->trace.stage != expected) {
      throw BackendError(fmt::format("question {}: candidate {} is not awaiting {}", question_.id(), serial,
                                     to_string(expected)));
    }
    return *it;
  }

  const Question& question_;
  const SearchConfig& config_;
  TaskStats& stats_;
  std::vector<Entry> entries_;  // ascending serial
};

void score_candidates(std::vector<Trace>& candidates, const Question& question, RewardBackend& reward,
                      RetrieverBackend* retriever, const SearchConfig& config, TaskStats* stats) {
  TaskStats local;
  BeamSearch::Candidates book(question, config, stats ? *stats : local);
  std::sort(candidates.begin(), candidates.end(), [](const Trace& a, const Trace& b) { return a.serial < b.serial; });
  for (auto& c : candidates) book.add(std::move(c));
  for (;;) {
    auto retrievals = book.retrieval_requests();
    for (const auto& r : retrievals) {
      std::optional<DocumentSet> docs;
      if (retriever) {
        try {
          auto result = retriever->retrieve(std::span(&r, 1));
          if (result.size() != 1) throw BackendError("retriever returned wrong batch size");
          check_document_set(result.front(), r.params.rerank_m);
          docs = std::move(result.front());
        } catch (const BackendError&) {
        }
      }
      book.on_retrieved(r.trace_serial, std::move(docs));
    }
    auto scores = book.scoring_requests();
    if (scores.empty() && retrievals.empty()) break;
    for (const auto& r : scores) {
      auto result = reward.score_steps(std::span(&r, 1));
      if (result.size() != 1) throw BackendError("reward backend returned wrong batch size");
      book.on_scored(r.trace_serial, result.front());
    }
  }
  candidates = book.take();
}

BeamState prune(BeamState beam, std::vector<Trace> candidates, const SearchConfig& config) {
  std::vector<Trace> rest;
  for (auto& c : candidates) {
    if (auto answer = extract_answer(c)) {
      c.stage = Stage::Done;
      c.final_answer = answer;
      beam.completed.push_back(std::move(c));
    } else {
      rest.push_back(std::move(c));
    }
  }
  std::stable_sort(rest.begin(), rest.end(), [&](const Trace& a, const Trace& b) {
    const double sa = ranking_score(a, RewardMode::Online, config.length_normalized);
    const double sb = ranking_score(b, RewardMode::Online, config.length_normalized);
    if (sa != sb) return sa > sb;
    return a.serial < b.serial;
  });
  if (rest.size() > static_cast<std::size_t>(beam.width)) rest.resize(static_cast<std::size_t>(beam.width));
  beam.live.clear();
  for (auto& c : rest) {
    if (static_cast<int>(c.steps.size()) >= config.max_depth) {
      c.stage = Stage::Done;
      c.final_answer = extract_answer(c);
      beam.completed.push_back(std::move(c));
    } else {
      c.stage = Stage::Reason;
      beam.live.push_back(std::move(c));
    }
  }
  return beam;
}

double ranking_score(const Trace& trace, RewardMode mode, bool length_normalized) {
  std::vector<double> rewards;
  for (const auto& s : trace.steps) {
    if (s.reward) rewards.push_back(*s.reward);
  }
  if (rewards.empty()) return mode == RewardMode::Online ? 0.0 : -std::numeric_limits<double>::infinity();
  switch (mode) {
    case RewardMode::Online:
      return length_normalized ? trace.cumulative_reward / static_cast<double>(rewards.size())
                               : trace.cumulative_reward;
    case RewardMode::PosthocLast: return rewards.back();
    case RewardMode::PosthocMin: return *std::min_element(rewards.begin(), rewards.end());
    case RewardMode::PosthocMax: return *std::max_element(rewards.begin(), rewards.end());
    case RewardMode::PosthocAverage:
      return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
  }
  return 0.0;
}

std::optional<Selection> select_answer(const BeamState& beam, RewardMode mode, bool length_normalized) {
  const Trace* best = nullptr;
  double best_score = 0.0;
  for (const auto& t : beam.completed) {
    const double score = ranking_score(t, mode, length_normalized);
    if (!best || score > best_score || (score == best_score && t.serial < best->serial)) {
      best = &t;
      best_score = score;
    }
  }
  if (!best) return std::nullopt;
  return Selection{best->final_answer, *best};
}

BeamSearch::BeamSearch(Question question, SearchConfig config, std::uint64_t seed)
    : question_(std::move(question)), config_(config), seed_(seed) {
  config_.validate();
  const auto [width, branching] = beam_shape(config_);
  beam_ = initial_beam(question_.id(), width, branching);
  next_serial_ = static_cast<std::uint64_t>(width);
  generated_.resize(beam_.live.size());
}

std::vector<GenerateRequest> BeamSearch::generation_requests() const {
  std::vector<GenerateRequest> out;
  if (finished_ || candidates_) return out;
  for (std::size_t i = 0; i < beam_.live.size(); ++i) {
    if (!generated_[i]) out.push_back(generation_request(question_, beam_.live[i], beam_.branching, seed_));
  }
  return out;
}

std::vector<RetrieveRequest> BeamSearch::retrieval_requests() const {
  if (finished_ || !candidates_) return {};
  return candidates_->retrieval_requests();
}

std::vector<ScoreRequest> BeamSearch::scoring_requests() const {
  if (finished_ || !candidates_) return {};
  return candidates_->scoring_requests();
}

void BeamSearch::on_generated(std::uint64_t serial, GenerateResponse outputs) {
  if (finished_) return;
  auto it = std::find_if(beam_.live.begin(), beam_.live.end(), [&](const Trace& t) { return t.serial == serial; });
  if (it == beam_.live.end() || candidates_) {
    throw BackendError(fmt::format("question {}: trace {} is not awaiting generation", question_.id(), serial));
  }
  if (static_cast<int>(outputs.size()) != beam_.branching) {
    throw BackendError(fmt::format("question {}: expected {} continuations, got {}", question_.id(), beam_.branching,
                                   outputs.size()));
  }
  generated_[static_cast<std::size_t>(it - beam_.live.begin())] = std::move(outputs);
  if (!std::all_of(generated_.begin(), generated_.end(), [](const auto& g) { return g.has_value(); })) return;

  std::vector<GenerateResponse> all;
  for (auto& g : generated_) all.push_back(std::move(*g));
  auto candidates = make_candidates(beam_, all, next_serial_);
  next_serial_ += candidates.size();
  stats_.generations_per_cycle.push_back(candidates.size());
  stats_.policy_generations += candidates.size();
  candidates_ = std::make_shared<Candidates>(question_, config_, stats_);
  for (auto& c : candidates) candidates_->add(std::move(c));
  generated_.clear();
}

void BeamSearch::on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) {
  if (finished_) return;
  if (!candidates_) throw BackendError(fmt::format("question {}: no retrieval pending", question_.id()));
  candidates_->on_retrieved(serial, std::move(docs));
}

void BeamSearch::on_scored(std::uint64_t serial, const ScoreResponse& response) {
  if (finished_) return;
  if (!candidates_) throw BackendError(fmt::format("question {}: no scoring pending", question_.id()));
  candidates_->on_scored(serial, response);
  settle();
}

void BeamSearch::settle() {
  if (!candidates_->all_scored()) return;
  beam_ = prune(std::move(beam_), candidates_->take(), config_);
  candidates_.reset();
  generated_.assign(beam_.live.size(), std::nullopt);
  if (beam_.finished()) finished_ = true;
}

void BeamSearch::abort(std::string reason) {
  error_ = std::move(reason);
  finished_ = true;
  candidates_.reset();
}

QuestionResult BeamSearch::result() const {
  QuestionResult r;
  r.question_id = question_.id();
  r.gold = question_.gold();
  r.error = error_;
  r.stats = stats_;
  r.completed = beam_.completed;
  if (error_.empty()) {
    if (auto selection = select_answer(beam_, config_.reward_mode, config_.length_normalized)) {
      r.answer = selection->answer;
      r.winner = std::move(selection->trace);
    }
  }
  r.correct = correctness(r.answer, question_.gold()) == 1;
  return r;
}

QuestionResult run_search(const Question& question, const Backends& backends, const SearchConfig& config,
                          std::uint64_t seed) {
  BeamSearch task(question, config, seed);
  drive(task, backends);
  return task.result();
}

}  // namespace pra
