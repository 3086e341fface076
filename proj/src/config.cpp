#include "pra/config.hpp"

#include <cstdlib>
#include <set>

#include <fmt/format.h>

#include "pra/baselines.hpp"
#include "pra/remote.hpp"

namespace pra {

namespace {

// Reads fields of one JSON object and rejects any key nobody asked for.
class Section {
 public:
  Section(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError(fmt::format("{} must be an object", where()));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    try {
      out = object_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}: invalid value {}", field(key), object_.at(key).dump()));
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!object_.contains(key)) return std::nullopt;
    return Section(object_.at(key), field(key));
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : object_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(fmt::format("unknown config key '{}'", field(item.key().c_str())));
    }
  }

 private:
  std::string where() const { return path_.empty() ? std::string("config") : path_; }

  const json& object_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* mode_name(ActionMode mode) { return mode == ActionMode::Threshold ? "threshold" : "sample"; }

void read_retrieval(Section& s, RetrievalParams& p) {
  s.get("per_corpus_k", p.per_corpus_k);
  s.get("rerank_m", p.rerank_m);
}

json retrieval_json(const RetrievalParams& p) { return {{"per_corpus_k", p.per_corpus_k}, {"rerank_m", p.rerank_m}}; }

}  // namespace

AppConfig::AppConfig() : theta_grid(default_theta_grid()), sc_budgets({1, 2, 4, 8, 16, 32, 64}) {}

void AppConfig::validate() const {
  static const std::set<std::string> methods = {"pra", "cot", "direct", "rag"};
  if (!methods.count(method)) {
    throw ConfigError(fmt::format("method: unknown method '{}' (expected pra, cot, direct or rag)", method));
  }
  if (samples < 1) throw ConfigError("samples must be >= 1");
  search.validate();
  scheduler.validate();
  labels.validate();
  synthetic.validate();
  for (double t : theta_grid) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError(fmt::format("theta_grid: {} is outside [0, 1]", t));
  }
  for (int b : sc_budgets) {
    if (b < 1) throw ConfigError("sc_budgets entries must be >= 1");
  }
  static const std::set<std::string> kinds = {"synthetic", "remote", "replay"};
  if (!kinds.count(backends.kind)) throw ConfigError(fmt::format("backends.kind: unknown kind '{}'", backends.kind));
  if (backends.kind == "replay" && backends.replay.empty()) throw ConfigError("backends.replay is required for replay");
  if (backends.timeout_ms < 1 || backends.retries < 0 || backends.max_connections < 1) {
    throw ConfigError("backends timeout, retries and max_connections must be positive");
  }
}

AppConfig config_from_json(const json& document) {
  AppConfig c;
  Section root(document, "");
  root.get("dataset", c.dataset);
  root.get("dataset_name", c.dataset_name);
  root.get("method", c.method);
  root.get("samples", c.samples);
  root.get("theta_grid", c.theta_grid);
  root.get("sc_budgets", c.sc_budgets);
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  if (auto s = root.child("synthetic")) {
    auto& w = c.synthetic;
    s->get("num_questions", w.num_questions);
    s->get("num_options", w.num_options);
    s->get("min_depth", w.min_depth);
    s->get("max_depth", w.max_depth);
    s->get("p_correct", w.p_correct);
    s->get("gain", w.gain);
    s->get("sigma", w.sigma);
    s->get("sigma_doc", w.sigma_doc);
    s->get("action_spread", w.action_spread);
    s->get("rag_boost", w.rag_boost);
    s->get("relevant_docs", w.relevant_docs);
    s->get("distractor_docs", w.distractor_docs);
    s->get("seed", w.seed);
    s->finish();
  }
  if (auto s = root.child("search")) {
    auto& p = c.search;
    s->get("beam_width", p.beam_width);
    s->get("branching", p.branching);
    s->get("max_depth", p.max_depth);
    s->get("length_normalized", p.length_normalized);
    std::string mode(to_string(p.reward_mode));
    s->get("reward_mode", mode);
    auto parsed = reward_mode_from(mode);
    if (!parsed) throw ConfigError(fmt::format("search.reward_mode: unknown mode '{}'", mode));
    p.reward_mode = *parsed;
    if (auto r = s->child("retrieval")) {
      read_retrieval(*r, p.retrieval);
      r->finish();
    }
    s->finish();
  }
  if (auto s = root.child("readout")) {
    auto& r = c.search.readout;
    std::string mode = mode_name(r.action_mode);
    s->get("action_mode", mode);
    if (mode == "threshold") {
      r.action_mode = ActionMode::Threshold;
    } else if (mode == "sample") {
      r.action_mode = ActionMode::Sample;
    } else {
      throw ConfigError(fmt::format("readout.action_mode: unknown mode '{}'", mode));
    }
    s->get("theta_dep", r.theta_dep);
    s->get("always_search", r.always_search);
    s->get("rng_seed", r.rng_seed);
    s->finish();
  }
  if (auto s = root.child("scheduler")) {
    auto& p = c.scheduler;
    s->get("max_batch_per_stage", p.max_batch_per_stage);
    s->get("max_inflight_questions", p.max_inflight_questions);
    s->get("retry_limit", p.retry_limit);
    s->get("parallel_stages", p.parallel_stages);
    s->finish();
  }
  if (auto s = root.child("backends")) {
    auto& b = c.backends;
    s->get("kind", b.kind);
    s->get("policy_url", b.policy_url);
    s->get("reward_url", b.reward_url);
    s->get("retriever_url", b.retriever_url);
    s->get("teacher_url", b.teacher_url);
    s->get("timeout_ms", b.timeout_ms);
    s->get("retries", b.retries);
    s->get("max_connections", b.max_connections);
    s->get("corpus", b.corpus);
    s->get("replay", b.replay);
    s->get("record", b.record);
    s->finish();
  }
  if (auto s = root.child("labels")) {
    auto& l = c.labels;
    std::string mode = l.epsilon_mode == EpsilonMode::GlobalMedian ? "global_median" : "fixed";
    s->get("epsilon_mode", mode);
    if (mode == "global_median") {
      l.epsilon_mode = EpsilonMode::GlobalMedian;
    } else if (mode == "fixed") {
      l.epsilon_mode = EpsilonMode::Fixed;
    } else {
      throw ConfigError(fmt::format("labels.epsilon_mode: unknown mode '{}'", mode));
    }
    s->get("epsilon", l.epsilon);
    s->get("always_search", l.always_search);
    s->get("max_depth", l.max_depth);
    s->get("retry_limit", l.retry_limit);
    if (auto r = s->child("retrieval")) {
      read_retrieval(*r, l.retrieval);
      r->finish();
    }
    s->finish();
  }
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const AppConfig& c) {
  const auto& w = c.synthetic;
  const auto& s = c.search;
  const auto& b = c.backends;
  const auto& l = c.labels;
  return {
      {"dataset", c.dataset},
      {"dataset_name", c.dataset_name},
      {"method", c.method},
      {"samples", c.samples},
      {"theta_grid", c.theta_grid},
      {"sc_budgets", c.sc_budgets},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"synthetic",
       {{"num_questions", w.num_questions}, {"num_options", w.num_options}, {"min_depth", w.min_depth},
        {"max_depth", w.max_depth}, {"p_correct", w.p_correct}, {"gain", w.gain}, {"sigma", w.sigma},
        {"sigma_doc", w.sigma_doc}, {"action_spread", w.action_spread}, {"rag_boost", w.rag_boost},
        {"relevant_docs", w.relevant_docs}, {"distractor_docs", w.distractor_docs}, {"seed", w.seed}}},
      {"search",
       {{"beam_width", s.beam_width}, {"branching", s.branching}, {"max_depth", s.max_depth},
        {"reward_mode", std::string(to_string(s.reward_mode))}, {"length_normalized", s.length_normalized},
        {"retrieval", retrieval_json(s.retrieval)}}},
      {"readout",
       {{"action_mode", mode_name(s.readout.action_mode)}, {"theta_dep", s.readout.theta_dep},
        {"always_search", s.readout.always_search}, {"rng_seed", s.readout.rng_seed}}},
      {"scheduler",
       {{"max_batch_per_stage", c.scheduler.max_batch_per_stage},
        {"max_inflight_questions", c.scheduler.max_inflight_questions}, {"retry_limit", c.scheduler.retry_limit},
        {"parallel_stages", c.scheduler.parallel_stages}}},
      {"backends",
       {{"kind", b.kind}, {"policy_url", b.policy_url}, {"reward_url", b.reward_url},
        {"retriever_url", b.retriever_url}, {"teacher_url", b.teacher_url}, {"timeout_ms", b.timeout_ms},
        {"retries", b.retries}, {"max_connections", b.max_connections}, {"corpus", b.corpus},
        {"replay", b.replay}, {"record", b.record}}},
      {"labels",
       {{"epsilon_mode", l.epsilon_mode == EpsilonMode::GlobalMedian ? "global_median" : "fixed"},
        {"epsilon", l.epsilon}, {"always_search", l.always_search}, {"max_depth", l.max_depth},
        {"retry_limit", l.retry_limit}, {"retrieval", retrieval_json(l.retrieval)}}},
  };
}

AppConfig load_config(const std::filesystem::path& path) {
  json document;
  try {
    document = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return config_from_json(document);
}

void apply_env_overrides(AppConfig& config) {
  auto take = [](const char* name, std::string& field) {
    if (const char* value = std::getenv(name); value && *value) field = value;
  };
  take("PRA_POLICY_URL", config.backends.policy_url);
  take("PRA_REWARD_URL", config.backends.reward_url);
  take("PRA_RETRIEVER_URL", config.backends.retriever_url);
  take("PRA_TEACHER_URL", config.backends.teacher_url);
}

Workspace open_workspace(const AppConfig& config) {
  config.validate();
  Workspace ws;
  const auto& b = config.backends;
  if (!config.dataset.empty()) ws.questions = load_questions(config.dataset);

  if (b.kind == "synthetic") {
    ws.world = std::make_shared<SyntheticWorld>(config.synthetic);
    if (config.dataset.empty()) {
      ws.questions = ws.world->make_questions();
    } else {
      ws.world->adopt(ws.questions);
    }
    ws.backends = ws.world->backends();
  } else if (b.kind == "remote") {
    if (config.dataset.empty()) throw ConfigError("dataset is required with remote backends");
    auto endpoint = [&](const std::string& url) {
      return RemoteConfig{url, b.timeout_ms, b.retries, b.max_connections};
    };
    if (b.policy_url.empty() || b.reward_url.empty()) {
      throw ConfigError("backends.policy_url and backends.reward_url are required for remote backends");
    }
    ws.backends.policy = make_remote_policy(endpoint(b.policy_url));
    ws.backends.reward = make_remote_reward(endpoint(b.reward_url));
    ws.backends.teacher = make_remote_teacher(endpoint(b.teacher_url.empty() ? b.reward_url : b.teacher_url));
    if (!b.retriever_url.empty()) ws.backends.retriever = make_remote_retriever(endpoint(b.retriever_url));
  } else {
    if (config.dataset.empty()) throw ConfigError("dataset is required with replay backends");
    ws.backends = replay_backends(ReplayLog::load(b.replay));
  }
  if (!b.corpus.empty()) ws.backends.retriever = CorpusRetriever::from_jsonl(b.corpus);
  if (!b.record.empty()) {
    ws.recording = std::make_shared<ReplayLog>();
    ws.backends = recording_backends(ws.backends, ws.recording);
  }
  return ws;
}

void close_workspace(const Workspace& workspace, const AppConfig& config) {
  if (workspace.recording) workspace.recording->save(config.backends.record);
}

}  // namespace pra
