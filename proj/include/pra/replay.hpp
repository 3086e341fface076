#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "pra/backends.hpp"
#include "pra/io.hpp"

namespace pra {

/// Recorded backend responses keyed by (kind, request fingerprint). The
/// fingerprint is taken per request, so a log recorded with one batching
/// replays under any other.
class ReplayLog {
 public:
  static std::string fingerprint(const json& request);

  void put(const std::string& kind, const std::string& key, json response);
  std::optional<json> get(const std::string& kind, const std::string& key) const;
  std::size_t size() const;

  /// JSONL of {"kind", "key", "response"}, sorted by (kind, key).
  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<ReplayLog> load(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, json> entries_;
};

/// Wraps `inner` so that every response is also written to `log`.
Backends recording_backends(Backends inner, std::shared_ptr<ReplayLog> log);

/// Serves responses from `log` only; a request with no recording raises
/// BackendError.
Backends replay_backends(std::shared_ptr<ReplayLog> log);

/// Toy lexical retriever over in-memory corpora, loaded from JSONL records
/// {corpus_id, doc_id, text}. Per corpus it scores documents by idf-weighted
/// term overlap, keeps the top k, then pools and reranks by length-normalised
/// overlap with the query.
class CorpusRetriever final : public RetrieverBackend {
 public:
  static std::shared_ptr<CorpusRetriever> from_jsonl(const std::filesystem::path& path);

  void add(Document doc);
  void set_available(const std::string& corpus_id, bool available);
  std::vector<std::string> corpora() const;

  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) override;

 private:
  DocumentSet search_corpus(const std::string& corpus_id, const std::string& query, int k) const;

  std::map<std::string, std::vector<Document>> corpora_;
  std::set<std::string> unavailable_;
  mutable std::mutex mutex_;
};

}  // namespace pra
