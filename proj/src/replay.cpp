#include "pra/replay.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "pra/log.hpp"
#include "pra/rng.hpp"

namespace pra {

std::string ReplayLog::fingerprint(const json& request) { return fmt::format("{:016x}", hash_string(request.dump())); }

void ReplayLog::put(const std::string& kind, const std::string& key, json response) {
  std::lock_guard lock(mutex_);
  entries_[{kind, key}] = std::move(response);
}

std::optional<json> ReplayLog::get(const std::string& kind, const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({kind, key});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t ReplayLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ReplayLog::save(const std::filesystem::path& path) const {
  std::vector<json> records;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [key, response] : entries_) {
      records.push_back({{"kind", key.first}, {"key", key.second}, {"response", response}});
    }
  }
  write_jsonl(path, records);
}

std::shared_ptr<ReplayLog> ReplayLog::load(const std::filesystem::path& path) {
  auto log = std::make_shared<ReplayLog>();
  for (const auto& record : read_jsonl(path)) {
    if (!record.contains("kind") || !record.contains("key") || !record.contains("response")) {
      throw DataError(fmt::format("{}: replay record needs kind, key and response", path.string()));
    }
    log->put(record["kind"].get<std::string>(), record["key"].get<std::string>(), record["response"]);
  }
  return log;
}

namespace {

json response_to_json(const GenerateResponse& r) { return r; }
json response_to_json(const ScoreResponse& r) {
  return {{"reward", logits_to_json(r.reward)}, {"action", logits_to_json(r.action)}};
}
json response_to_json(const DocumentSet& docs) {
  json out = json::array();
  for (const auto& d : docs) out.push_back(document_to_json(d));
  return out;
}
json response_to_json(const LogitPair& pair) { return logits_to_json(pair); }

template <typename T>
T response_from_json(const json& j);
template <>
GenerateResponse response_from_json<GenerateResponse>(const json& j) {
  return j.get<GenerateResponse>();
}
template <>
ScoreResponse response_from_json<ScoreResponse>(const json& j) {
  return {logits_from_json(j.at("reward")), logits_from_json(j.at("action"))};
}
template <>
DocumentSet response_from_json<DocumentSet>(const json& j) {
  DocumentSet docs;
  for (const auto& d : j) docs.push_back(document_from_json(d));
  return docs;
}
template <>
LogitPair response_from_json<LogitPair>(const json& j) {
  return logits_from_json(j);
}

// Records through `inner` when set, otherwise replays from the log.
template <typename Request, typename Response, typename Call>
std::vector<Response> record_or_replay(ReplayLog& log, const char* kind, std::span<const Request> batch,
                                       Call&& inner) {
  std::vector<std::string> keys;
  keys.reserve(batch.size());
  for (const auto& r : batch) keys.push_back(ReplayLog::fingerprint(request_to_json(r)));
  if (inner) {
    auto responses = inner(batch);
    if (responses.size() != batch.size()) throw BackendError(fmt::format("{}: wrong batch size from inner", kind));
    for (std::size_t i = 0; i < batch.size(); ++i) log.put(kind, keys[i], response_to_json(responses[i]));
    return responses;
  }
  std::vector<Response> out;
  out.reserve(batch.size());
  for (const auto& key : keys) {
    auto recorded = log.get(kind, key);
    if (!recorded) throw BackendError(fmt::format("no recorded {} response for request {}", kind, key));
    try {
      out.push_back(response_from_json<Response>(*recorded));
    } catch (const json::exception& e) {
      throw BackendError(fmt::format("corrupt recorded {} response {}: {}", kind, key, e.what()));
    }
  }
  return out;
}

class ReplayBackend final : public PolicyBackend, public RewardBackend, public RetrieverBackend, public TeacherBackend {
 public:
  ReplayBackend(Backends inner, std::shared_ptr<ReplayLog> log) : inner_(std::move(inner)), log_(std::move(log)) {}

  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) override {
    std::function<std::vector<GenerateResponse>(std::span<const GenerateRequest>)> call;
    if (inner_.policy) call = [this](auto b) { return inner_.policy->generate_steps(b); };
    return record_or_replay<GenerateRequest, GenerateResponse>(*log_, "generate", batch, call);
  }

  std::vector<ScoreResponse> score_steps(std::span<const ScoreRequest> batch) override {
    std::function<std::vector<ScoreResponse>(std::span<const ScoreRequest>)> call;
    if (inner_.reward) call = [this](auto b) { return inner_.reward->score_steps(b); };
    return record_or_replay<ScoreRequest, ScoreResponse>(*log_, "score", batch, call);
  }

  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) override {
    std::function<std::vector<DocumentSet>(std::span<const RetrieveRequest>)> call;
    if (inner_.retriever) call = [this](auto b) { return inner_.retriever->retrieve(b); };
    return record_or_replay<RetrieveRequest, DocumentSet>(*log_, "retrieve", batch, call);
  }

  std::vector<LogitPair> judge(std::span<const TeacherRequest> batch) override {
    std::function<std::vector<LogitPair>(std::span<const TeacherRequest>)> call;
    if (inner_.teacher) call = [this](auto b) { return inner_.teacher->judge(b); };
    return record_or_replay<TeacherRequest, LogitPair>(*log_, "judge", batch, call);
  }

 private:
  Backends inner_;
  std::shared_ptr<ReplayLog> log_;
};

Backends as_backends(const std::shared_ptr<ReplayBackend>& b, const Backends& inner, bool replay_all) {
  Backends out;
  if (replay_all || inner.policy) out.policy = b;
  if (replay_all || inner.reward) out.reward = b;
  if (replay_all || inner.retriever) out.retriever = b;
  if (replay_all || inner.teacher) out.teacher = b;
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::set<std::string> term_set(const std::string& text) {
  auto tokens = tokenize(text);
  return {tokens.begin(), tokens.end()};
}

}  // namespace

Backends recording_backends(Backends inner, std::shared_ptr<ReplayLog> log) {
  auto b = std::make_shared<ReplayBackend>(inner, std::move(log));
  return as_backends(b, inner, false);
}

Backends replay_backends(std::shared_ptr<ReplayLog> log) {
  auto b = std::make_shared<ReplayBackend>(Backends{}, std::move(log));
  return as_backends(b, {}, true);
}

std::shared_ptr<CorpusRetriever> CorpusRetriever::from_jsonl(const std::filesystem::path& path) {
  auto retriever = std::make_shared<CorpusRetriever>();
  for (const auto& record : read_jsonl(path)) {
    Document doc;
    try {
      doc.corpus_id = record.at("corpus_id").get<std::string>();
      doc.doc_id = record.at("doc_id").get<std::string>();
      doc.text = record.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}: corpus record: {}", path.string(), e.what()));
    }
    retriever->add(std::move(doc));
  }
  return retriever;
}

void CorpusRetriever::add(Document doc) {
  if (trim(doc.text).empty()) throw DataError(fmt::format("document {} has empty text", doc.doc_id));
  std::lock_guard lock(mutex_);
  corpora_[doc.corpus_id].push_back(std::move(doc));
}

void CorpusRetriever::set_available(const std::string& corpus_id, bool available) {
  std::lock_guard lock(mutex_);
  if (available) {
    unavailable_.erase(corpus_id);
  } else {
    unavailable_.insert(corpus_id);
  }
}

std::vector<std::string> CorpusRetriever::corpora() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, docs] : corpora_) out.push_back(id);
  return out;
}

DocumentSet CorpusRetriever::search_corpus(const std::string& corpus_id, const std::string& query, int k) const {
  const auto& docs = corpora_.at(corpus_id);
  const auto query_terms = term_set(query);
  std::map<std::string, int> document_frequency;
  std::vector<std::set<std::string>> doc_terms;
  doc_terms.reserve(docs.size());
  for (const auto& d : docs) {
    doc_terms.push_back(term_set(d.text));
    for (const auto& t : doc_terms.back()) ++document_frequency[t];
  }
  DocumentSet scored;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    double score = 0.0;
    for (const auto& t : query_terms) {
      if (doc_terms[i].count(t)) score += std::log(1.0 + static_cast<double>(docs.size()) / document_frequency[t]);
    }
    if (score <= 0.0) continue;
    Document d = docs[i];
    d.retrieval_score = score;
    d.rerank_score.reset();
    scored.push_back(std::move(d));
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Document& a, const Document& b) {
    if (a.retrieval_score != b.retrieval_score) return a.retrieval_score > b.retrieval_score;
    return a.doc_id < b.doc_id;
  });
  if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(std::max(k, 0)));
  return scored;
}

std::vector<DocumentSet> CorpusRetriever::retrieve(std::span<const RetrieveRequest> batch) {
  std::lock_guard lock(mutex_);
  if (corpora_.empty()) throw ConfigError("corpus retriever has no corpora registered");
  std::vector<DocumentSet> out;
  out.reserve(batch.size());
  for (const auto& request : batch) {
    std::vector<DocumentSet> per_corpus;
    for (const auto& [id, docs] : corpora_) {
      if (unavailable_.count(id)) {
        log::warn(fmt::format("corpus '{}' unavailable, retrieving from the remaining corpora", id));
        continue;
      }
      per_corpus.push_back(search_corpus(id, request.query, request.params.per_corpus_k));
    }
    const auto query_terms = term_set(request.query);
    auto rerank = [&](const std::string&, const Document& doc) {
      const auto tokens = tokenize(doc.text);
      std::size_t overlap = 0;
      for (const auto& t : term_set(doc.text)) overlap += query_terms.count(t);
      return static_cast<double>(overlap) / std::sqrt(static_cast<double>(std::max<std::size_t>(tokens.size(), 1)));
    };
    out.push_back(pool_and_rerank(request.query, std::move(per_corpus), rerank, request.params.rerank_m));
  }
  return out;
}

}  // namespace pra
