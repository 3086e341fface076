#include "pra/synthetic.hpp"

#include <map>
#include <mutex>
#include <shared_mutex>
#include <sstream>

#include <fmt/format.h>

#include "pra/rng.hpp"

namespace pra {

class SyntheticWorld::Registry {
 public:
  void put(const std::string& id, Entry entry) {
    std::unique_lock lock(mutex_);
    entries_[id] = entry;
  }

  Entry get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(id);
    if (it == entries_.end()) throw BackendError(fmt::format("synthetic world does not know question '{}'", id));
    return it->second;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> entries_;
};

namespace {

struct StepTag {
  std::string question_id;
  int index = 0;
  bool gold = false;
};

// Steps carry a trailing "[syn <qid> <t> <g|x> <variant>]" tag.
std::optional<StepTag> parse_tag(const std::string& text) {
  const auto pos = text.rfind("[syn ");
  if (pos == std::string::npos) return std::nullopt;
  std::istringstream in(text.substr(pos + 5));
  StepTag tag;
  std::string kind;
  if (!(in >> tag.question_id >> tag.index >> kind)) return std::nullopt;
  tag.gold = kind == "g";
  return tag;
}

std::string joined(std::span<const std::string> steps) {
  std::string out;
  for (const auto& s : steps) {
    out += s;
    out += '\x1f';
  }
  return out;
}

bool on_gold_chain(const std::string& qid, std::span<const std::string> steps) {
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto tag = parse_tag(steps[i]);
    if (!tag || tag->question_id != qid || tag->index != static_cast<int>(i + 1) || !tag->gold) return false;
  }
  return true;
}

bool has_relevant(const DocumentSet& docs, const std::string& question_id) {
  const std::string prefix = fmt::format("syn/{}/rel/", question_id);
  for (const auto& d : docs) {
    if (d.doc_id.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

class WorldBackend {
 public:
  WorldBackend(SyntheticConfig config, std::shared_ptr<SyntheticWorld::Registry> registry)
      : config_(config), registry_(std::move(registry)) {}

 protected:
  // l1 - l0 = +/-gain + 2 * gain * sigma * Z, returned with l0 = 0.
  LogitPair oracle_logits(bool gold, double sigma, std::uint64_t key) const {
    const double signal = gold ? config_.gain : -config_.gain;
    return {0.0, signal + 2.0 * config_.gain * sigma * normal_from(key)};
  }

  SyntheticConfig config_;
  std::shared_ptr<SyntheticWorld::Registry> registry_;
};

class SyntheticPolicy final : public PolicyBackend, WorldBackend {
 public:
  using WorldBackend::WorldBackend;

  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) override {
    std::vector<GenerateResponse> out;
    out.reserve(batch.size());
    for (const auto& request : batch) out.push_back(generate(request));
    return out;
  }

 private:
  GenerateResponse generate(const GenerateRequest& request) const {
    const auto entry = registry_->get(request.question_id);
    GenerateResponse texts;
    texts.reserve(static_cast<std::size_t>(std::max(request.n, 0)));
    double p = config_.p_correct;
    if (request.mode == PromptMode::Rag && has_relevant(request.documents, request.question_id)) {
      p += config_.rag_boost * (1.0 - p);
    }
    const bool on_gold = on_gold_chain(request.question_id, request.prior_steps);
    const int t = static_cast<int>(request.prior_steps.size()) + 1;
    for (int k = 0; k < request.n; ++k) {
      const std::uint64_t key = mix({config_.seed, request.seed, static_cast<std::uint64_t>(k)});
      const bool ok = on_gold && to_unit(splitmix64(key)) < p;
      const std::uint64_t variant = splitmix64(key ^ 0xabcdefULL) % 1000000;
      const Label wrong = wrong_label(entry, key);
      if (request.mode == PromptMode::Direct) {
        texts.push_back(fmt::format("the answer is ({}).", ok ? entry.gold : wrong));
        continue;
      }
      const std::string tag = fmt::format("[syn {} {} {} {}]", request.question_id, t, ok ? "g" : "x", variant);
      if (t >= entry.depth) {
        texts.push_back(fmt::format("Step {}: Weighing the findings together, the answer is ({}). {}", t,
                                    ok ? entry.gold : wrong, tag));
      } else if (ok) {
        texts.push_back(fmt::format("Step {}: Finding {} of case {} supports the working diagnosis. {}", t, t,
                                    request.question_id, tag));
      } else {
        texts.push_back(fmt::format("Step {}: Finding {} of case {} is read as pointing elsewhere. {}", t, t,
                                    request.question_id, tag));
      }
    }
    return texts;
  }

  static Label wrong_label(const SyntheticWorld::Entry& entry, std::uint64_t key) {
    const auto offset = 1 + splitmix64(key ^ 0x77ULL) % static_cast<std::uint64_t>(entry.num_options - 1);
    return static_cast<Label>('A' + (entry.gold - 'A' + offset) % static_cast<std::uint64_t>(entry.num_options));
  }
};

class SyntheticReward final : public RewardBackend, WorldBackend {
 public:
  using WorldBackend::WorldBackend;

  std::vector<ScoreResponse> score_steps(std::span<const ScoreRequest> batch) override {
    std::vector<ScoreResponse> out;
    out.reserve(batch.size());
    for (const auto& request : batch) {
      registry_->get(request.question_id);
      const bool gold = on_gold_chain(request.question_id, request.steps);
      const bool relevant = has_relevant(request.documents, request.question_id);
      const std::uint64_t base = mix({config_.seed, hash_string(request.question_id), hash_string(joined(request.steps))});
      ScoreResponse response;
      response.reward = oracle_logits(gold, relevant ? config_.sigma_doc : config_.sigma,
                                      mix({base, 0x1111, relevant ? 1ULL : 0ULL}));
      response.action = {0.0, config_.action_spread * normal_from(mix({base, 0x2222}))};
      out.push_back(response);
    }
    return out;
  }
};

class SyntheticTeacher final : public TeacherBackend, WorldBackend {
 public:
  using WorldBackend::WorldBackend;

  std::vector<LogitPair> judge(std::span<const TeacherRequest> batch) override {
    std::vector<LogitPair> out;
    out.reserve(batch.size());
    for (const auto& request : batch) {
      registry_->get(request.question_id);
      const bool gold = on_gold_chain(request.question_id, request.steps);
      const bool relevant = request.with_docs && has_relevant(request.documents, request.question_id);
      const std::uint64_t key = mix({config_.seed, 0x3333, hash_string(request.question_id),
                                     hash_string(joined(request.steps)), request.with_docs ? 1ULL : 0ULL});
      out.push_back(oracle_logits(gold, relevant ? config_.sigma_doc : config_.sigma, key));
    }
    return out;
  }
};

class SyntheticRetriever final : public RetrieverBackend, WorldBackend {
 public:
  using WorldBackend::WorldBackend;

  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) override {
    std::vector<DocumentSet> out;
    out.reserve(batch.size());
    for (const auto& request : batch) out.push_back(retrieve_one(request));
    return out;
  }

 private:
  DocumentSet retrieve_one(const RetrieveRequest& request) const {
    registry_->get(request.question_id);
    const auto& qid = request.question_id;
    const std::uint64_t base = mix({config_.seed, 0x4444, hash_string(qid)});
    // Two corpora: a guideline-like corpus holding the relevant documents and
    // a textbook-like corpus of distractors. One relevant document is
    // duplicated into the second corpus with a lower score.
    std::vector<DocumentSet> corpora(2);
    for (int i = 0; i < config_.relevant_docs; ++i) {
      corpora[0].push_back({"syn-guidelines", fmt::format("syn/{}/rel/{}", qid, i),
                            fmt::format("Evidence note {} for case {}: the gold chain of findings is confirmed.", i, qid),
                            1.0 + to_unit(mix({base, 1, static_cast<std::uint64_t>(i)})), std::nullopt});
    }
    for (int i = 0; i < config_.distractor_docs; ++i) {
      corpora[1].push_back({"syn-textbooks", fmt::format("syn/{}/noise/{}", qid, i),
                            fmt::format("Background passage {} loosely related to case {}.", i, qid),
                            to_unit(mix({base, 2, static_cast<std::uint64_t>(i)})), std::nullopt});
    }
    if (!corpora[0].empty()) {
      Document dup = corpora[0].front();
      dup.corpus_id = "syn-textbooks";
      dup.retrieval_score = 0.5;
      corpora[1].push_back(std::move(dup));
    }
    const auto k = static_cast<std::size_t>(std::max(request.params.per_corpus_k, 0));
    for (auto& corpus : corpora) {
      std::stable_sort(corpus.begin(), corpus.end(),
                       [](const Document& a, const Document& b) { return a.retrieval_score > b.retrieval_score; });
      if (corpus.size() > k) corpus.resize(k);
    }
    const std::string rel_prefix = fmt::format("syn/{}/rel/", qid);
    auto rerank = [&](const std::string&, const Document& doc) {
      const double bonus = doc.doc_id.rfind(rel_prefix, 0) == 0 ? 1.0 : 0.0;
      return bonus + to_unit(mix({base, 3, hash_string(doc.doc_id)}));
    };
    return pool_and_rerank(request.query, std::move(corpora), rerank, request.params.rerank_m);
  }
};

}  // namespace

void SyntheticConfig::validate() const {
  if (num_options < 2 || num_options > 26) throw ConfigError("synthetic.num_options must be in [2, 26]");
  if (min_depth < 1 || max_depth < min_depth) throw ConfigError("synthetic depths must satisfy 1 <= min <= max");
  if (!(p_correct >= 0.0 && p_correct <= 1.0)) throw ConfigError("synthetic.p_correct must be in [0, 1]");
  if (!(sigma >= 0.0) || !(sigma_doc >= 0.0)) throw ConfigError("synthetic noise levels must be >= 0");
  if (!(gain >= 0.0)) throw ConfigError("synthetic.gain must be >= 0");
  if (!(rag_boost >= 0.0 && rag_boost <= 1.0)) throw ConfigError("synthetic.rag_boost must be in [0, 1]");
  if (relevant_docs < 0 || distractor_docs < 0) throw ConfigError("synthetic document counts must be >= 0");
}

SyntheticWorld::SyntheticWorld(SyntheticConfig config)
    : config_(config), registry_(std::make_shared<Registry>()) {
  config_.validate();
}

std::vector<Question> SyntheticWorld::make_questions() {
  std::vector<Question> questions;
  questions.reserve(config_.num_questions);
  for (std::size_t i = 0; i < config_.num_questions; ++i) {
    const std::string id = fmt::format("syn-{:04}", i);
    const std::uint64_t key = mix({config_.seed, 0x5555, i});
    std::vector<Option> options;
    for (int o = 0; o < config_.num_options; ++o) {
      options.push_back({static_cast<Label>('A' + o), fmt::format("Management option {} for case {}", o + 1, i)});
    }
    const auto gold = static_cast<Label>('A' + splitmix64(key) % static_cast<std::uint64_t>(config_.num_options));
    questions.emplace_back(
        id, fmt::format("Synthetic case {}: a patient presents with a sequence of findings. What is the best next step?", i),
        std::move(options), gold);
  }
  adopt(questions);
  return questions;
}

void SyntheticWorld::adopt(std::span<const Question> questions) {
  const auto span = static_cast<std::uint64_t>(config_.max_depth - config_.min_depth + 1);
  for (const auto& q : questions) {
    const auto depth = config_.min_depth + static_cast<int>(mix({config_.seed, 0x6666, hash_string(q.id())}) % span);
    registry_->put(q.id(), {q.gold(), static_cast<int>(q.options().size()), depth});
  }
}

int SyntheticWorld::depth_of(const std::string& question_id) const { return registry_->get(question_id).depth; }

bool SyntheticWorld::gold_consistent(const std::string& question_id, std::span<const std::string> steps) const {
  return on_gold_chain(question_id, steps);
}

Backends SyntheticWorld::backends() const {
  return {std::make_shared<SyntheticPolicy>(config_, registry_), std::make_shared<SyntheticReward>(config_, registry_),
          std::make_shared<SyntheticRetriever>(config_, registry_),
          std::make_shared<SyntheticTeacher>(config_, registry_)};
}

}  // namespace pra
