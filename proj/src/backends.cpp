#include "pra/backends.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

namespace pra {

void check_document_set(const DocumentSet& docs, int m) {
  if (static_cast<int>(docs.size()) > m) {
    throw BackendError(fmt::format("retriever returned {} documents, limit is {}", docs.size(), m));
  }
  for (std::size_t i = 1; i < docs.size(); ++i) {
    if (docs[i].rerank_score.value_or(0.0) > docs[i - 1].rerank_score.value_or(0.0)) {
      throw BackendError("retriever result is not sorted by rerank score");
    }
  }
}

DocumentSet retrieve_and_rerank(const std::string& query, RetrieverBackend& retriever, RetrievalParams params,
                                const std::string& question_id) {
  RetrieveRequest request{.question_id = question_id, .trace_serial = 0, .query = query, .params = params};
  auto results = retriever.retrieve(std::span(&request, 1));
  if (results.size() != 1) throw BackendError("retriever returned wrong batch size");
  check_document_set(results.front(), params.rerank_m);
  return std::move(results.front());
}

DocumentSet pool_and_rerank(const std::string& query, std::vector<DocumentSet> per_corpus, const Reranker& rerank,
                            int m) {
  std::map<std::string, Document> pooled;
  for (auto& corpus : per_corpus) {
    for (auto& doc : corpus) {
      auto [it, inserted] = pooled.try_emplace(doc.doc_id, doc);
      if (!inserted && doc.retrieval_score > it->second.retrieval_score) it->second = std::move(doc);
    }
  }
  DocumentSet out;
  out.reserve(pooled.size());
  for (auto& [id, doc] : pooled) {
    doc.rerank_score = rerank(query, doc);
    out.push_back(std::move(doc));
  }
  std::stable_sort(out.begin(), out.end(), [](const Document& a, const Document& b) {
    if (*a.rerank_score != *b.rerank_score) return *a.rerank_score > *b.rerank_score;
    return a.doc_id < b.doc_id;
  });
  if (static_cast<int>(out.size()) > m) out.resize(static_cast<std::size_t>(std::max(m, 0)));
  return out;
}

std::vector<std::string> step_texts(std::span<const Step> steps) {
  std::vector<std::string> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.text);
  return out;
}

}  // namespace pra
