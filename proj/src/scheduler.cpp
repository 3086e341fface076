#include "pra/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <future>
#include <optional>
#include <variant>

#include <fmt/format.h>

#include "pra/log.hpp"

namespace pra {

std::string_view to_string(StageKind stage) {
  switch (stage) {
    case StageKind::Retrieve: return "retrieve";
    case StageKind::Generate: return "generate";
    case StageKind::Score: return "score";
  }
  return "?";
}

void SchedulerConfig::validate() const {
  if (retry_limit < 0) throw ConfigError("scheduler.retry_limit must be >= 0");
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::vector<GenerateResponse> call(PolicyBackend& b, std::span<const GenerateRequest> batch) {
  return b.generate_steps(batch);
}
std::vector<ScoreResponse> call(RewardBackend& b, std::span<const ScoreRequest> batch) { return b.score_steps(batch); }
std::vector<DocumentSet> call(RetrieverBackend& b, std::span<const RetrieveRequest> batch) {
  auto out = b.retrieve(batch);
  if (out.size() == batch.size()) {
    for (std::size_t i = 0; i < out.size(); ++i) check_document_set(out[i], batch[i].params.rerank_m);
  }
  return out;
}

template <typename Backend, typename Request>
auto checked_call(Backend& backend, std::span<const Request> batch) {
  auto out = call(backend, batch);
  if (out.size() != batch.size()) {
    throw BackendError(fmt::format("backend returned {} results for {} requests", out.size(), batch.size()));
  }
  return out;
}

// Response slot for one request: a value, or the error that ended its retries.
template <typename Response>
using Outcome = std::variant<Response, std::string>;

// Issues `requests` in batches of at most `limit`, retrying a failed batch
// and then falling back to per-item calls.
template <typename Backend, typename Request>
auto dispatch(Backend* backend, const std::vector<Request>& requests, std::size_t limit, int retry_limit,
              StageStats& stats, std::vector<std::size_t>& sizes) {
  using Response = typename decltype(checked_call(*backend, std::span<const Request>()))::value_type;
  std::vector<Outcome<Response>> out;
  out.reserve(requests.size());
  const auto start = Clock::now();
  const std::size_t step = limit == 0 ? std::max<std::size_t>(requests.size(), 1) : limit;
  for (std::size_t lo = 0; lo < requests.size(); lo += step) {
    const std::size_t hi = std::min(requests.size(), lo + step);
    const std::span<const Request> batch(requests.data() + lo, hi - lo);
    ++stats.batches;
    stats.items += batch.size();
    ++stats.size_histogram[batch.size()];
    sizes.push_back(batch.size());

    std::string error = "no backend configured";
    bool done = false;
    for (int attempt = 0; backend && attempt <= retry_limit && !done; ++attempt) {
      try {
        for (auto& r : checked_call(*backend, batch)) out.emplace_back(std::move(r));
        done = true;
      } catch (const BackendError& e) {
        error = e.what();
        if (attempt < retry_limit) ++stats.retries;
      }
    }
    if (done) continue;
    // Batch kept failing; isolate the items that are actually broken.
    for (const auto& request : batch) {
      std::optional<Response> value;
      for (int attempt = 0; backend && attempt <= retry_limit && !value; ++attempt) {
        try {
          value = std::move(checked_call(*backend, std::span<const Request>(&request, 1)).front());
        } catch (const BackendError& e) {
          error = e.what();
          if (attempt < retry_limit) ++stats.retries;
        }
      }
      if (value) {
        out.emplace_back(std::move(*value));
      } else {
        ++stats.failures;
        out.emplace_back(error);
      }
    }
  }
  stats.wall_ms += elapsed_ms(start);
  return out;
}

struct Tagged {
  std::size_t task = 0;
  std::uint64_t serial = 0;
};

template <typename Request>
struct Queue {
  std::vector<Request> requests;
  std::vector<Tagged> tags;
};

void apply_or_abort(Task& task, const std::function<void()>& apply) {
  if (task.finished()) return;
  try {
    apply();
  } catch (const BackendError& e) {
    log::warn(fmt::format("question {}: {}", task.question().id(), e.what()));
    task.abort(e.what());
  }
}

}  // namespace

TaskFactory beam_search_factory(const SearchConfig& config, std::uint64_t seed) {
  config.validate();
  return [config, seed](const Question& q) { return std::make_unique<BeamSearch>(q, config, seed); };
}

void drive(Task& task, const Backends& backends, int retry_limit) {
  StageStats scratch;
  std::vector<std::size_t> sizes;
  while (!task.finished()) {
    auto retrievals = task.retrieval_requests();
    auto generations = task.generation_requests();
    auto scores = task.scoring_requests();
    if (retrievals.empty() && generations.empty() && scores.empty()) {
      task.abort("task stalled with no pending requests");
      break;
    }
    for (const auto& r : retrievals) {
      auto out = dispatch(backends.retriever.get(), std::vector{r}, 1, retry_limit, scratch, sizes);
      auto* docs = std::get_if<DocumentSet>(&out.front());
      apply_or_abort(task, [&] {
        task.on_retrieved(r.trace_serial, docs ? std::optional(std::move(*docs)) : std::nullopt);
      });
    }
    for (const auto& r : generations) {
      if (task.finished()) break;
      auto out = dispatch(backends.policy.get(), std::vector{r}, 1, retry_limit, scratch, sizes);
      if (auto* error = std::get_if<std::string>(&out.front())) {
        task.on_generation_failed(r.trace_serial, *error);
        continue;
      }
      apply_or_abort(task, [&] { task.on_generated(r.trace_serial, std::get<GenerateResponse>(std::move(out.front()))); });
    }
    for (const auto& r : scores) {
      if (task.finished()) break;
      auto out = dispatch(backends.reward.get(), std::vector{r}, 1, retry_limit, scratch, sizes);
      if (auto* error = std::get_if<std::string>(&out.front())) {
        task.abort(*error);
        break;
      }
      apply_or_abort(task, [&] { task.on_scored(r.trace_serial, std::get<ScoreResponse>(out.front())); });
    }
  }
}

void tally(RunReport& report, std::span<const QuestionResult> results) {
  report.policy_calls = 0;
  report.max_policy_calls_per_cycle = 0;
  report.search_decisions = 0;
  report.scored_steps = 0;
  report.errored = 0;
  for (const auto& r : results) {
    report.policy_calls += r.stats.policy_generations;
    for (auto n : r.stats.generations_per_cycle) {
      report.max_policy_calls_per_cycle = std::max(report.max_policy_calls_per_cycle, n);
    }
    report.search_decisions += r.stats.search_decisions;
    report.scored_steps += r.stats.scored_steps;
    if (!r.error.empty()) ++report.errored;
  }
}

RunResult run(std::span<const Question> questions, const Backends& backends, const TaskFactory& factory,
              const SchedulerConfig& config) {
  config.validate();
  const auto start = Clock::now();
  RunResult run_result;
  run_result.results.resize(questions.size());
  RunReport& report = run_result.report;
  std::vector<std::unique_ptr<Task>> tasks(questions.size());
  std::vector<std::size_t> active;
  std::size_t next = 0;
  std::size_t done = 0;
  std::uint64_t batch_serial = 0;

  while (done < questions.size()) {
    while (next < questions.size() &&
           (config.max_inflight_questions == 0 || active.size() < config.max_inflight_questions)) {
      tasks[next] = factory(questions[next]);
      active.push_back(next++);
    }

    Queue<RetrieveRequest> retrieve;
    Queue<GenerateRequest> generate;
    Queue<ScoreRequest> score;
    for (std::size_t i : active) {
      Task& task = *tasks[i];
      auto r = task.retrieval_requests();
      auto g = task.generation_requests();
      auto s = task.scoring_requests();
      if (!task.finished() && r.empty() && g.empty() && s.empty()) task.abort("task stalled with no pending requests");
      for (auto& x : r) {
        retrieve.tags.push_back({i, x.trace_serial});
        retrieve.requests.push_back(std::move(x));
      }
      for (auto& x : g) {
        generate.tags.push_back({i, x.trace_serial});
        generate.requests.push_back(std::move(x));
      }
      for (auto& x : s) {
        score.tags.push_back({i, x.trace_serial});
        score.requests.push_back(std::move(x));
      }
    }

    std::array<std::vector<std::size_t>, 3> sizes;
    auto& rs = report.stages[static_cast<std::size_t>(StageKind::Retrieve)];
    auto& gs = report.stages[static_cast<std::size_t>(StageKind::Generate)];
    auto& ss = report.stages[static_cast<std::size_t>(StageKind::Score)];
    const std::size_t limit = config.max_batch_per_stage;
    const int retries = config.retry_limit;
    auto do_retrieve = [&] { return dispatch(backends.retriever.get(), retrieve.requests, limit, retries, rs, sizes[0]); };
    auto do_generate = [&] { return dispatch(backends.policy.get(), generate.requests, limit, retries, gs, sizes[1]); };
    auto do_score = [&] { return dispatch(backends.reward.get(), score.requests, limit, retries, ss, sizes[2]); };

    decltype(do_retrieve()) retrieved;
    decltype(do_generate()) generated;
    decltype(do_score()) scored;
    if (config.parallel_stages) {
      auto fr = std::async(std::launch::async, do_retrieve);
      auto fg = std::async(std::launch::async, do_generate);
      scored = do_score();
      retrieved = fr.get();
      generated = fg.get();
    } else {
      retrieved = do_retrieve();
      generated = do_generate();
      scored = do_score();
    }

    for (std::size_t k = 0; k < 3; ++k) {
      for (auto size : sizes[k]) {
        report.batches.push_back({batch_serial++, static_cast<StageKind>(k), size, report.iterations});
      }
    }

    // Apply per question: retrievals, generations, scores, each by serial.
    auto order = [](const std::vector<Tagged>& tags) {
      std::vector<std::size_t> idx(tags.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(tags[a].task, tags[a].serial) < std::tie(tags[b].task, tags[b].serial);
      });
      return idx;
    };
    const auto ro = order(retrieve.tags);
    const auto go = order(generate.tags);
    const auto so = order(score.tags);
    std::size_t ri = 0, gi = 0, si = 0;
    for (std::size_t t : active) {
      Task& task = *tasks[t];
      for (; ri < ro.size() && retrieve.tags[ro[ri]].task == t; ++ri) {
        auto& outcome = retrieved[ro[ri]];
        auto* docs = std::get_if<DocumentSet>(&outcome);
        const auto serial = retrieve.tags[ro[ri]].serial;
        apply_or_abort(task, [&] {
          task.on_retrieved(serial, docs ? std::optional(std::move(*docs)) : std::nullopt);
        });
      }
      for (; gi < go.size() && generate.tags[go[gi]].task == t; ++gi) {
        auto& outcome = generated[go[gi]];
        if (task.finished()) continue;
        const auto serial = generate.tags[go[gi]].serial;
        if (auto* error = std::get_if<std::string>(&outcome)) {
          log::warn(fmt::format("question {}: generation failed: {}", task.question().id(), *error));
          task.on_generation_failed(serial, *error);
          continue;
        }
        apply_or_abort(task, [&] { task.on_generated(serial, std::get<GenerateResponse>(std::move(outcome))); });
      }
      for (; si < so.size() && score.tags[so[si]].task == t; ++si) {
        auto& outcome = scored[so[si]];
        if (task.finished()) continue;
        if (auto* error = std::get_if<std::string>(&outcome)) {
          log::warn(fmt::format("question {}: scoring failed: {}", task.question().id(), *error));
          task.abort(*error);
          continue;
        }
        const auto serial = score.tags[so[si]].serial;
        apply_or_abort(task, [&] { task.on_scored(serial, std::get<ScoreResponse>(outcome)); });
      }
    }

    std::vector<std::size_t> still;
    for (std::size_t t : active) {
      if (tasks[t]->finished()) {
        run_result.results[t] = tasks[t]->result();
        tasks[t].reset();
        ++done;
      } else {
        still.push_back(t);
      }
    }
    active = std::move(still);
    ++report.iterations;
    if (config.progress) {
      config.progress(fmt::format("iteration {}: retrieve {} generate {} score {} | {}/{} questions done",
                                  report.iterations, retrieve.requests.size(), generate.requests.size(),
                                  score.requests.size(), done, questions.size()));
    }
  }
  tally(report, run_result.results);
  report.wall_ms = elapsed_ms(start);
  return run_result;
}

RunResult run(std::span<const Question> questions, const Backends& backends, const SearchConfig& search,
              std::uint64_t seed, const SchedulerConfig& config) {
  return run(questions, backends, beam_search_factory(search, seed), config);
}

std::vector<QuestionResult> sequential_reference(std::span<const Question> questions, const Backends& backends,
                                                 const TaskFactory& factory, int retry_limit) {
  std::vector<QuestionResult> out;
  out.reserve(questions.size());
  for (const auto& q : questions) {
    auto task = factory(q);
    drive(*task, backends, retry_limit);
    out.push_back(task->result());
  }
  return out;
}

}  // namespace pra
