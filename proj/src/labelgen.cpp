#include "pra/labelgen.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "pra/baselines.hpp"
#include "pra/log.hpp"

namespace pra {

void LabelConfig::validate() const {
  if (epsilon_mode == EpsilonMode::Fixed && !(epsilon >= 0.0)) throw ConfigError("labels.epsilon must be >= 0");
  if (max_depth < 1) throw ConfigError("labels.max_depth must be >= 1");
  if (retry_limit < 0) throw ConfigError("labels.retry_limit must be >= 0");
  if (retrieval.per_corpus_k < 1 || retrieval.rerank_m < 1) throw ConfigError("retrieval k and m must be >= 1");
}

double margin(LogitPair pair) {
  if (!std::isfinite(pair.logit_zero) || !std::isfinite(pair.logit_one)) throw DataError("non-finite teacher logits");
  return pair.logit_one - pair.logit_zero;
}

MarginRecord label_step(const Question& question, std::span<const Step> steps, const DocumentSet& documents,
                        TeacherBackend& teacher) {
  if (steps.empty()) throw DataError("label_step needs a non-empty trace prefix");
  std::vector<TeacherRequest> requests(2);
  for (int pass = 0; pass < 2; ++pass) {
    const bool with_docs = pass == 0;
    auto& r = requests[static_cast<std::size_t>(pass)];
    r.question_id = question.id();
    r.prompt = render_teacher_prompt(question, steps, documents, with_docs);
    r.steps = step_texts(steps);
    if (with_docs) r.documents = documents;
    r.with_docs = with_docs;
  }
  const auto pairs = teacher.judge(requests);
  if (pairs.size() != 2) throw BackendError("teacher returned wrong batch size");

  MarginRecord record;
  record.question_id = question.id();
  record.step_index = steps.back().index;
  record.margin_docs = margin(pairs[0]);
  record.margin_nodocs = margin(pairs[1]);
  record.delta = record.margin_nodocs - record.margin_docs;
  record.reasoning_label = pairs[0].logit_one >= pairs[0].logit_zero ? 1 : 0;
  return record;
}

MarginRecord label_step(const Question& question, std::span<const Step> steps, RetrieverBackend* retriever,
                        TeacherBackend& teacher, const RetrievalParams& params) {
  DocumentSet docs;
  if (retriever) {
    try {
      docs = retrieve_and_rerank(build_query(question, steps), *retriever, params, question.id());
    } catch (const BackendError& e) {
      log::warn(fmt::format("question {}: retrieval failed, labelling without documents: {}", question.id(),
                            e.what()));
    }
  }
  return label_step(question, steps, docs, teacher);
}

ThresholdReport finalize_labels(std::vector<MarginRecord>& records, const LabelConfig& config) {
  if (records.empty()) throw DataError("no margin records to threshold");
  ThresholdReport report;
  report.mode = config.epsilon_mode;
  report.records = records.size();
  if (config.epsilon_mode == EpsilonMode::GlobalMedian) {
    std::vector<double> mags;
    mags.reserve(records.size());
    for (const auto& r : records) mags.push_back(std::abs(r.delta));
    std::sort(mags.begin(), mags.end());
    const std::size_t n = mags.size();
    report.epsilon = n % 2 == 1 ? mags[n / 2] : (mags[n / 2 - 1] + mags[n / 2]) / 2.0;
  } else {
    report.epsilon = config.epsilon;
  }
  for (auto& r : records) {
    r.search_label = std::abs(r.delta) > report.epsilon ? Action::Search : Action::Reward;
    if (r.search_label == Action::Search) ++report.search;
  }
  report.search_fraction = static_cast<double>(report.search) / static_cast<double>(report.records);
  return report;
}

namespace {

template <typename F>
auto with_retries(int retry_limit, F&& call) {
  for (int attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (const BackendError&) {
      if (attempt >= retry_limit) throw;
    }
  }
}

}  // namespace

LabelDataset generate_dataset(std::span<const Question> questions, const Backends& backends,
                              const LabelConfig& config, std::uint64_t seed) {
  config.validate();
  if (!backends.policy || !backends.teacher) throw ConfigError("label generation needs policy and teacher backends");
  LabelDataset dataset;
  struct Pending {
    const Question* question;
    std::vector<Step> steps;
    DocumentSet docs;
  };
  std::vector<Pending> sources;
  std::vector<MarginRecord> records;
  std::vector<LabelExample> examples;

  for (const auto& q : questions) {
    ChainSampler sampler(q, {SamplingMethod::CoT, 1, config.max_depth, config.retrieval}, seed);
    drive(sampler, backends, config.retry_limit);
    const QuestionResult chain = sampler.result();
    if (!chain.error.empty() || chain.completed.empty() || chain.completed.front().steps.empty()) {
      log::warn(fmt::format("question {}: no trace to label, skipped", q.id()));
      ++dataset.skipped_questions;
      continue;
    }
    const Trace& trace = chain.completed.front();
    const int num_steps = static_cast<int>(trace.steps.size());
    for (int t = 1; t <= num_steps; ++t) {
      const std::span<const Step> prefix(trace.steps.data(), static_cast<std::size_t>(t));
      DocumentSet docs;
      if (backends.retriever) {
        try {
          docs = with_retries(config.retry_limit, [&] {
            return retrieve_and_rerank(build_query(q, prefix), *backends.retriever, config.retrieval, q.id());
          });
        } catch (const BackendError& e) {
          log::warn(fmt::format("question {} step {}: retrieval failed: {}", q.id(), t, e.what()));
        }
      }
      try {
        auto record = with_retries(config.retry_limit, [&] { return label_step(q, prefix, docs, *backends.teacher); });
        LabelExample example;
        example.record = record;
        example.num_steps = num_steps;
        example.trace_correct = chain.correct;
        examples.push_back(std::move(example));
        records.push_back(std::move(record));
        // The prompt is rendered once the search label is known.
        sources.push_back({&q, {prefix.begin(), prefix.end()}, std::move(docs)});
      } catch (const BackendError& e) {
        log::warn(fmt::format("question {} step {}: teacher failed, record skipped: {}", q.id(), t, e.what()));
        ++dataset.skipped_records;
      }
    }
  }
  if (records.empty()) throw DataError("label generation produced no records");

  dataset.report = finalize_labels(records, config);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto& ex = examples[i];
    ex.record = records[i];
    const bool search = config.always_search || ex.record.search_label == Action::Search;
    const auto& src = sources[i];
    ex.prompt = render_pra_prompt(*src.question, src.steps, search ? src.docs : DocumentSet{});
    ex.target = fmt::format("{},{}", ex.record.reasoning_label, search ? 1 : 0);
  }
  dataset.examples = std::move(examples);
  return dataset;
}

json example_to_json(const LabelExample& example) {
  const auto& r = example.record;
  return {
      {"question_id", r.question_id},
      {"step_index", r.step_index},
      {"prompt", prompt_to_json(example.prompt)},
      {"target", example.target},
      {"m", r.margin_nodocs},
      {"m_d", r.margin_docs},
      {"delta", r.delta},
      {"reasoning_label", r.reasoning_label},
      {"search_label", r.search_label == Action::Search ? 1 : 0},
      {"num_steps", example.num_steps},
      {"trace_correct", example.trace_correct},
  };
}

json report_to_json(const ThresholdReport& report) {
  return {
      {"epsilon_mode", report.mode == EpsilonMode::GlobalMedian ? "global_median" : "fixed"},
      {"epsilon", report.epsilon},
      {"records", report.records},
      {"search", report.search},
      {"search_fraction", report.search_fraction},
  };
}

}  // namespace pra
