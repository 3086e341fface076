#include "pra/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "pra/io.hpp"
#include "pra/log.hpp"
#include "pra/prompts.hpp"
#include "pra/rng.hpp"

namespace pra {

std::string_view to_string(SamplingMethod method) {
  switch (method) {
    case SamplingMethod::Direct: return "direct";
    case SamplingMethod::CoT: return "cot";
    case SamplingMethod::Rag: return "rag";
  }
  return "?";
}

std::optional<SamplingMethod> sampling_method_from(std::string_view name) {
  for (auto m : {SamplingMethod::Direct, SamplingMethod::CoT, SamplingMethod::Rag}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

void SamplingConfig::validate() const {
  if (n_samples < 1) throw ConfigError("samples must be >= 1");
  if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
  if (retrieval.per_corpus_k < 1 || retrieval.rerank_m < 1) throw ConfigError("retrieval k and m must be >= 1");
}

ChainSampler::ChainSampler(Question question, SamplingConfig config, std::uint64_t seed)
    : question_(std::move(question)), config_(config), seed_(seed) {
  config_.validate();
  for (int i = 0; i < config_.n_samples; ++i) {
    Chain c;
    c.trace.question_id = question_.id();
    c.trace.serial = static_cast<std::uint64_t>(i);
    chains_.push_back(std::move(c));
  }
}

std::vector<RetrieveRequest> ChainSampler::retrieval_requests() const {
  if (finished_ || config_.method != SamplingMethod::Rag || documents_) return {};
  // Serial n identifies the question-level retrieval.
  return {{question_.id(), static_cast<std::uint64_t>(chains_.size()), build_query(question_, {}), config_.retrieval}};
}

std::vector<GenerateRequest> ChainSampler::generation_requests() const {
  std::vector<GenerateRequest> out;
  if (finished_ || (config_.method == SamplingMethod::Rag && !documents_)) return out;
  if (std::any_of(chains_.begin(), chains_.end(), [](const Chain& c) { return c.awaiting; })) return out;
  for (const auto& c : chains_) {
    if (c.done) continue;
    GenerateRequest r;
    r.question_id = question_.id();
    r.trace_serial = c.trace.serial;
    r.prior_steps = step_texts(c.trace.steps);
    r.n = 1;
    r.seed = mix({seed_, hash_string(question_.id()), c.trace.serial, c.trace.steps.size()});
    switch (config_.method) {
      case SamplingMethod::Direct:
        r.mode = PromptMode::Direct;
        r.prompt = render_direct_prompt(question_);
        break;
      case SamplingMethod::CoT:
        r.mode = PromptMode::CoT;
        r.prompt = render_policy_prompt(question_);
        break;
      case SamplingMethod::Rag:
        r.mode = PromptMode::Rag;
        r.prompt = render_rag_prompt(question_, *documents_);
        r.documents = *documents_;
        break;
    }
    out.push_back(std::move(r));
  }
  return out;
}

ChainSampler::Chain& ChainSampler::chain(std::uint64_t serial) {
  if (serial >= chains_.size() || chains_[serial].done) {
    throw BackendError(fmt::format("question {}: chain {} is not awaiting output", question_.id(), serial));
  }
  return chains_[serial];
}

void ChainSampler::on_retrieved(std::uint64_t serial, std::optional<DocumentSet> docs) {
  if (finished_) return;
  if (config_.method != SamplingMethod::Rag || documents_ || serial != chains_.size()) {
    throw BackendError(fmt::format("question {}: unexpected retrieval result {}", question_.id(), serial));
  }
  ++stats_.retrieval_calls;
  if (!docs) log::warn(fmt::format("question {}: retrieval failed, sampling without documents", question_.id()));
  documents_ = docs ? std::move(*docs) : DocumentSet{};
}

void ChainSampler::on_generated(std::uint64_t serial, GenerateResponse outputs) {
  if (finished_) return;
  Chain& c = chain(serial);
  if (outputs.size() != 1) {
    throw BackendError(fmt::format("question {}: expected 1 continuation, got {}", question_.id(), outputs.size()));
  }
  c.awaiting = true;
  ++cycle_calls_;
  ++stats_.policy_generations;
  const std::string& raw = outputs.front();
  const int index = static_cast<int>(c.trace.steps.size()) + 1;
  if (config_.method == SamplingMethod::Direct) {
    c.trace.steps.push_back(Step{index, trim(raw), {}, {}, {}});
    finish_chain(c);
  } else {
    c.trace.steps.push_back(Step{index, step_from_output(raw), {}, {}, {}});
    if (find_answer(c.trace.steps.back().text) || index >= config_.max_depth) finish_chain(c);
  }
  close_cycle();
}

void ChainSampler::on_generation_failed(std::uint64_t serial, const std::string& error) {
  if (finished_) return;
  log::warn(fmt::format("question {}: sample {} unanswered: {}", question_.id(), serial, error));
  Chain& c = chain(serial);
  c.awaiting = true;
  ++cycle_calls_;
  c.done = true;
  c.trace.stage = Stage::Done;
  close_cycle();
}

void ChainSampler::finish_chain(Chain& c) {
  c.done = true;
  c.trace.stage = Stage::Done;
  std::string full;
  for (const auto& s : c.trace.steps) full += s.text + "\n";
  c.trace.final_answer = find_answer(full);
}

// A cycle ends once every chain that was asked for a step has answered.
void ChainSampler::close_cycle() {
  const bool all_in = std::none_of(chains_.begin(), chains_.end(), [&](const Chain& c) {
    return !c.awaiting && !c.done;
  });
  if (!all_in) return;
  stats_.generations_per_cycle.push_back(cycle_calls_);
  cycle_calls_ = 0;
  for (auto& c : chains_) c.awaiting = false;
  if (std::all_of(chains_.begin(), chains_.end(), [](const Chain& c) { return c.done; })) finished_ = true;
}

void ChainSampler::on_scored(std::uint64_t serial, const ScoreResponse&) {
  throw BackendError(fmt::format("question {}: sampling baselines do not score (trace {})", question_.id(), serial));
}

void ChainSampler::abort(std::string reason) {
  error_ = std::move(reason);
  finished_ = true;
}

QuestionResult ChainSampler::result() const {
  QuestionResult r;
  r.question_id = question_.id();
  r.gold = question_.gold();
  r.error = error_;
  r.stats = stats_;
  for (const auto& c : chains_) {
    r.sample_answers.push_back(c.done && error_.empty() ? c.trace.final_answer : std::nullopt);
    r.completed.push_back(c.trace);
  }
  if (error_.empty()) {
    r.answer = r.sample_answers.size() == 1 ? r.sample_answers.front() : self_consistency(r.sample_answers);
  }
  r.correct = correctness(r.answer, question_.gold()) == 1;
  return r;
}

TaskFactory sampler_factory(const SamplingConfig& config, std::uint64_t seed) {
  config.validate();
  return [config, seed](const Question& q) { return std::make_unique<ChainSampler>(q, config, seed); };
}

namespace {

QuestionResult sample(const Question& question, const Backends& backends, SamplingConfig config,
                      std::uint64_t seed) {
  ChainSampler task(question, config, seed);
  drive(task, backends);
  return task.result();
}

}  // namespace

QuestionResult run_direct(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed) {
  return sample(question, backends, {SamplingMethod::Direct, n_samples, 1, {}}, seed);
}

QuestionResult run_cot(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed,
                       int max_depth) {
  return sample(question, backends, {SamplingMethod::CoT, n_samples, max_depth, {}}, seed);
}

QuestionResult run_rag(const Question& question, const Backends& backends, int n_samples, std::uint64_t seed,
                       int max_depth, RetrievalParams retrieval) {
  if (!backends.retriever) throw ConfigError("rag requires a retriever backend");
  return sample(question, backends, {SamplingMethod::Rag, n_samples, max_depth, retrieval}, seed);
}

std::optional<Label> self_consistency(std::span<const std::optional<Label>> answers) {
  std::map<Label, int> votes;
  for (const auto& a : answers) {
    if (a) ++votes[*a];
  }
  std::optional<Label> best;
  int best_votes = 0;
  for (const auto& [label, n] : votes) {  // ascending labels, so ties keep the smallest
    if (n > best_votes) {
      best = label;
      best_votes = n;
    }
  }
  return best;
}

double estimate_sc_accuracy(const SamplePool& pool, int budget, int trials, std::mt19937_64& rng) {
  if (budget < 1 || static_cast<std::size_t>(budget) > pool.answers.size()) {
    throw ConfigError(fmt::format("budget {} outside pool of {}", budget, pool.answers.size()));
  }
  if (trials < 1) throw ConfigError("trials must be >= 1");
  // Each trial draws the first budget - 1 members without replacement and
  // averages the vote over every possible last member (conditional Monte
  // Carlo: same expectation, lower variance than drawing the last one too).
  std::vector<std::size_t> idx(pool.answers.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto head = static_cast<std::size_t>(budget - 1);
  std::vector<std::optional<Label>> subset(static_cast<std::size_t>(budget));
  double hits = 0.0;
  for (int t = 0; t < trials; ++t) {
    for (std::size_t i = 0; i < head; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      subset[i] = pool.answers[idx[i]];
    }
    int wins = 0;
    for (std::size_t j = head; j < idx.size(); ++j) {
      subset[head] = pool.answers[idx[j]];
      wins += correctness(self_consistency(subset), pool.gold);
    }
    hits += static_cast<double>(wins) / static_cast<double>(idx.size() - head);
  }
  return hits / trials;
}

std::vector<CurvePoint> estimate_sc_curve(std::span<const SamplePool> pools, std::span<const int> budgets, int trials,
                                          int bootstrap, std::uint64_t seed) {
  std::vector<CurvePoint> out;
  if (pools.empty()) return out;
  std::size_t smallest = std::numeric_limits<std::size_t>::max();
  for (const auto& p : pools) smallest = std::min(smallest, p.answers.size());
  for (int budget : budgets) {
    if (budget < 1 || static_cast<std::size_t>(budget) > smallest) {
      log::warn(fmt::format("skipping budget {}: smallest sample pool has {}", budget, smallest));
      continue;
    }
    std::vector<double> per_question;
    for (const auto& p : pools) {
      std::mt19937_64 rng(mix({seed, hash_string(p.question_id), static_cast<std::uint64_t>(budget)}));
      per_question.push_back(estimate_sc_accuracy(p, budget, trials, rng));
    }
    const double n = static_cast<double>(per_question.size());
    const double mean = std::accumulate(per_question.begin(), per_question.end(), 0.0) / n;
    double se = 0.0;
    if (bootstrap > 1) {
      std::mt19937_64 rng(mix({seed, 0xb007, static_cast<std::uint64_t>(budget)}));
      std::uniform_int_distribution<std::size_t> pick(0, per_question.size() - 1);
      std::vector<double> means;
      means.reserve(static_cast<std::size_t>(bootstrap));
      for (int b = 0; b < bootstrap; ++b) {
        double sum = 0.0;
        for (std::size_t i = 0; i < per_question.size(); ++i) sum += per_question[pick(rng)];
        means.push_back(sum / n);
      }
      const double mm = std::accumulate(means.begin(), means.end(), 0.0) / bootstrap;
      double var = 0.0;
      for (double m : means) var += (m - mm) * (m - mm);
      se = std::sqrt(var / (bootstrap - 1));
    }
    out.push_back({budget, mean, se});
  }
  return out;
}

std::vector<double> default_theta_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

double accuracy(std::span<const QuestionResult> results) {
  if (results.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& r : results) correct += r.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(results.size());
}

void mark_pareto(std::vector<SweepPoint>& points) {
  for (auto& p : points) {
    p.pareto = std::none_of(points.begin(), points.end(), [&](const SweepPoint& q) {
      return q.accuracy >= p.accuracy && q.search_frequency <= p.search_frequency &&
             (q.accuracy > p.accuracy || q.search_frequency < p.search_frequency);
    });
  }
}

std::vector<SweepPoint> sweep_theta(std::span<const Question> questions, const Backends& backends,
                                    const SearchConfig& base, std::uint64_t seed, std::span<const double> thetas,
                                    const SchedulerConfig& scheduler) {
  std::vector<SweepPoint> out;
  for (double theta : thetas) {
    SearchConfig cfg = base;
    cfg.readout.action_mode = ActionMode::Threshold;
    cfg.readout.always_search = false;
    cfg.readout.theta_dep = theta;
    auto result = run(questions, backends, cfg, seed, scheduler);
    SweepPoint p;
    p.theta = theta;
    p.accuracy = accuracy(result.results);
    p.scored_steps = result.report.scored_steps;
    p.search_decisions = result.report.search_decisions;
    p.search_frequency =
        p.scored_steps == 0 ? 0.0 : static_cast<double>(p.search_decisions) / static_cast<double>(p.scored_steps);
    out.push_back(p);
  }
  mark_pareto(out);
  return out;
}

int position_decile(int step_index, int num_steps) {
  if (num_steps < 1 || step_index < 1 || step_index > num_steps) {
    throw DataError(fmt::format("step {} outside a trace of {}", step_index, num_steps));
  }
  return 10 * (step_index - 1) / num_steps;
}

int difficulty_bin(double solve_rate) {
  if (!(solve_rate >= 0.0 && solve_rate <= 1.0)) throw DataError("solve rate must be in [0, 1]");
  return std::min(9, static_cast<int>(std::floor(solve_rate * 10.0)));
}

namespace {

std::vector<MarginCell> group(std::span<const MarginObservation> observations,
                              const std::function<std::optional<int>(const MarginObservation&)>& bin_of) {
  struct Acc {
    std::size_t count = 0;
    double abs_sum = 0.0;
    double sum = 0.0;
    std::set<std::string> questions;
  };
  std::array<std::array<Acc, 2>, 10> acc{};
  for (const auto& o : observations) {
    auto bin = bin_of(o);
    if (!bin) continue;
    auto& a = acc[static_cast<std::size_t>(*bin)][o.correct ? 1 : 0];
    ++a.count;
    a.abs_sum += std::abs(o.delta);
    a.sum += o.delta;
    a.questions.insert(o.question_id);
  }
  std::vector<MarginCell> cells;
  for (int bin = 0; bin < 10; ++bin) {
    for (int c = 0; c < 2; ++c) {
      const auto& a = acc[static_cast<std::size_t>(bin)][static_cast<std::size_t>(c)];
      const double nan = std::numeric_limits<double>::quiet_NaN();
      const double n = static_cast<double>(a.count);
      cells.push_back({bin, c == 1, a.count, a.questions.size(), a.count ? a.abs_sum / n : nan,
                       a.count ? a.sum / n : nan});
    }
  }
  return cells;
}

}  // namespace

MarginTables analyze_margin_shift(std::span<const MarginObservation> observations) {
  MarginTables t;
  t.by_position = group(observations, [](const MarginObservation& o) -> std::optional<int> {
    return position_decile(o.step_index, o.num_steps);
  });
  t.by_difficulty = group(observations, [](const MarginObservation& o) -> std::optional<int> {
    if (!o.solve_rate) return std::nullopt;
    return difficulty_bin(*o.solve_rate);
  });
  return t;
}

std::string margin_csv(const std::string& grouping, std::span<const MarginCell> cells) {
  std::string out = "grouping,bin,correct,count,questions,mean_abs_delta,mean_delta\n";
  for (const auto& c : cells) {
    out += fmt::format("{},{},{},{},{},{},{}\n", grouping, c.bin, c.correct ? 1 : 0, c.count, c.questions,
                       format_number(c.mean_abs_delta), format_number(c.mean_delta));
  }
  return out;
}

}  // namespace pra
