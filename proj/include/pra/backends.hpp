#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pra/core.hpp"
#include "pra/prompts.hpp"

namespace pra {

// Interfaces to the three external models plus the label teacher. Every
// call is batched; implementations must return exactly one result per
// request, be safe for concurrent calls, and be deterministic functions of
// the request contents (never of batch composition). Failures are reported
// by throwing BackendError.

enum class PromptMode { Direct, CoT, Rag };

struct GenerateRequest {
  std::string question_id;
  std::uint64_t trace_serial = 0;
  PromptMode mode = PromptMode::CoT;
  Prompt prompt;
  std::vector<std::string> prior_steps;  // texts of the steps already in the trace
  DocumentSet documents;                 // RAG only
  int n = 1;
  std::uint64_t seed = 0;
};

/// `n` raw continuations. In CoT/RAG modes each is expected to be one step.
using GenerateResponse = std::vector<std::string>;

class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) = 0;
};

struct ScoreRequest {
  std::string question_id;
  std::uint64_t trace_serial = 0;
  Prompt prompt;
  std::vector<std::string> steps;
  DocumentSet documents;  // empty unless Search was decided
};

/// Reward slot and action slot logits.
struct ScoreResponse {
  LogitPair reward;
  LogitPair action;

  bool operator==(const ScoreResponse&) const = default;
};

class RewardBackend {
 public:
  virtual ~RewardBackend() = default;
  virtual std::vector<ScoreResponse> score_steps(std::span<const ScoreRequest> batch) = 0;
};

struct RetrievalParams {
  int per_corpus_k = 200;
  int rerank_m = 64;

  bool operator==(const RetrievalParams&) const = default;
};

struct RetrieveRequest {
  std::string question_id;
  std::uint64_t trace_serial = 0;
  std::string query;
  RetrievalParams params;
};

class RetrieverBackend {
 public:
  virtual ~RetrieverBackend() = default;
  virtual std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) = 0;
};

struct TeacherRequest {
  std::string question_id;
  Prompt prompt;
  std::vector<std::string> steps;
  DocumentSet documents;
  bool with_docs = false;
};

class TeacherBackend {
 public:
  virtual ~TeacherBackend() = default;
  virtual std::vector<LogitPair> judge(std::span<const TeacherRequest> batch) = 0;
};

struct Backends {
  std::shared_ptr<PolicyBackend> policy;
  std::shared_ptr<RewardBackend> reward;
  std::shared_ptr<RetrieverBackend> retriever;
  std::shared_ptr<TeacherBackend> teacher;
};

/// Throws BackendError unless `docs` has at most `m` entries sorted by
/// rerank score, descending.
void check_document_set(const DocumentSet& docs, int m);

/// Single-query retrieval with the fixed pooled configuration.
DocumentSet retrieve_and_rerank(const std::string& query, RetrieverBackend& retriever,
                                RetrievalParams params = {}, const std::string& question_id = {});

using Reranker = std::function<double(const std::string& query, const Document& doc)>;

/// Pools per-corpus candidate lists, drops duplicate doc ids (keeping the
/// higher retrieval score), reranks jointly and keeps the top `m`.
/// Ties in rerank score are broken by doc id.
DocumentSet pool_and_rerank(const std::string& query, std::vector<DocumentSet> per_corpus, const Reranker& rerank,
                            int m);

std::vector<std::string> step_texts(std::span<const Step> steps);

}  // namespace pra
