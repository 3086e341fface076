#include "pra/remote.hpp"

#include <atomic>
#include <semaphore>

#include <fmt/format.h>
#include <httplib.h>

#include "pra/log.hpp"
#include "pra/rng.hpp"

namespace pra {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string prefix;  // optional path prefix, no trailing slash
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (url.empty() || scheme == std::string::npos) throw ConfigError(fmt::format("invalid backend url '{}'", url));
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path), prefix};
}

class HttpChannel {
 public:
  explicit HttpChannel(RemoteConfig config)
      : config_(std::move(config)),
        endpoint_(split_url(config_.url)),
        slots_(std::max(config_.max_connections, 1)),
        tag_(fmt::format("{:08x}", hash_string(config_.url) & 0xffffffffULL)) {}

  json post(const std::string& path, json items) {
    const std::string request_id = fmt::format("{}-{}", tag_, next_id_.fetch_add(1));
    const json body = {{"request_id", request_id}, {"items", std::move(items)}};
    const std::string payload = body.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= std::max(config_.retries, 0); ++attempt) {
      slots_.acquire();
      httplib::Result result = [&] {
        httplib::Client client(endpoint_.origin);
        const auto seconds = config_.timeout_ms / 1000;
        const auto micros = (config_.timeout_ms % 1000) * 1000;
        client.set_connection_timeout(seconds, micros);
        client.set_read_timeout(seconds, micros);
        client.set_write_timeout(seconds, micros);
        return client.Post(endpoint_.prefix + path, payload, "application/json");
      }();
      slots_.release();

      if (!result) {
        last_error = httplib::to_string(result.error());
        continue;
      }
      if (result->status >= 500) {
        last_error = fmt::format("HTTP {}", result->status);
        continue;
      }
      if (result->status != 200) throw BackendError(fmt::format("{}{}: HTTP {}", config_.url, path, result->status));
      json reply;
      try {
        reply = json::parse(result->body);
      } catch (const json::exception& e) {
        throw BackendError(fmt::format("{}{}: malformed JSON reply: {}", config_.url, path, e.what()));
      }
      if (!reply.is_object() || reply.value("request_id", std::string()) != request_id) {
        throw BackendError(fmt::format("{}{}: reply does not echo request id {}", config_.url, path, request_id));
      }
      return reply;
    }
    throw BackendError(fmt::format("{}{}: {} after {} attempts", config_.url, path, last_error, config_.retries + 1));
  }

 private:
  RemoteConfig config_;
  Endpoint endpoint_;
  std::counting_semaphore<> slots_;
  std::string tag_;
  std::atomic<std::uint64_t> next_id_{0};
};

const json& field(const json& reply, const char* key, std::size_t expected) {
  if (!reply.contains(key) || !reply[key].is_array() || reply[key].size() != expected) {
    throw BackendError(fmt::format("reply field '{}' must be an array of {} entries", key, expected));
  }
  return reply[key];
}

template <typename F>
auto guarded(F&& parse) {
  try {
    return parse();
  } catch (const json::exception& e) {
    throw BackendError(fmt::format("malformed reply: {}", e.what()));
  }
}

std::vector<LogitPair> parse_slots(const json& result, std::size_t slots) {
  const auto& s = result.at("slots");
  if (!s.is_array() || s.size() < slots) throw BackendError(fmt::format("reply needs {} logit slots", slots));
  std::vector<LogitPair> out;
  for (std::size_t i = 0; i < slots; ++i) out.push_back(logits_from_json(s[i]));
  return out;
}

class RemotePolicy final : public PolicyBackend {
 public:
  explicit RemotePolicy(RemoteConfig config) : channel_(std::move(config)) {}

  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) override {
    json items = json::array();
    for (const auto& r : batch) {
      json item = request_to_json(r);
      std::vector<Step> prior;
      for (const auto& text : r.prior_steps) prior.push_back(Step{static_cast<int>(prior.size()) + 1, text, {}, {}, {}});
      item["assistant_prefix"] = render_step_prefix(prior) + (r.mode == PromptMode::Direct ? "" : fmt::format("Step {}:", prior.size() + 1));
      item["stop"] = r.mode == PromptMode::Direct ? json::array() : json::array({"\nStep "});
      items.push_back(std::move(item));
    }
    const json reply = channel_.post("/generate", std::move(items));
    return guarded([&] {
      const auto& outputs = field(reply, "outputs", batch.size());
      std::vector<GenerateResponse> out;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        auto texts = outputs[i].get<GenerateResponse>();
        if (static_cast<int>(texts.size()) != batch[i].n) {
          throw BackendError(fmt::format("item {}: expected {} continuations, got {}", i, batch[i].n, texts.size()));
        }
        out.push_back(std::move(texts));
      }
      return out;
    });
  }

 private:
  HttpChannel channel_;
};

class RemoteReward final : public RewardBackend {
 public:
  explicit RemoteReward(RemoteConfig config) : channel_(std::move(config)) {}

  std::vector<ScoreResponse> score_steps(std::span<const ScoreRequest> batch) override {
    json items = json::array();
    for (const auto& r : batch) items.push_back(request_to_json(r));
    const json reply = channel_.post("/score", std::move(items));
    return guarded([&] {
      const auto& results = field(reply, "results", batch.size());
      std::vector<ScoreResponse> out;
      for (const auto& result : results) {
        auto slots = parse_slots(result, 2);
        out.push_back({slots[0], slots[1]});
      }
      return out;
    });
  }

 private:
  HttpChannel channel_;
};

class RemoteTeacher final : public TeacherBackend {
 public:
  explicit RemoteTeacher(RemoteConfig config) : channel_(std::move(config)) {}

  std::vector<LogitPair> judge(std::span<const TeacherRequest> batch) override {
    json items = json::array();
    for (const auto& r : batch) items.push_back(request_to_json(r));
    const json reply = channel_.post("/score", std::move(items));
    return guarded([&] {
      const auto& results = field(reply, "results", batch.size());
      std::vector<LogitPair> out;
      for (const auto& result : results) out.push_back(parse_slots(result, 1).front());
      return out;
    });
  }

 private:
  HttpChannel channel_;
};

class RemoteRetriever final : public RetrieverBackend {
 public:
  explicit RemoteRetriever(RemoteConfig config) : channel_(std::move(config)) {}

  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest> batch) override {
    json items = json::array();
    for (const auto& r : batch) items.push_back(request_to_json(r));
    const json reply = channel_.post("/retrieve", std::move(items));
    return guarded([&] {
      const auto& results = field(reply, "results", batch.size());
      std::vector<DocumentSet> out;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        DocumentSet docs;
        for (const auto& d : results[i]) docs.push_back(document_from_json(d));
        check_document_set(docs, batch[i].params.rerank_m);
        out.push_back(std::move(docs));
      }
      return out;
    });
  }

 private:
  HttpChannel channel_;
};

}  // namespace

std::shared_ptr<PolicyBackend> make_remote_policy(RemoteConfig config) {
  return std::make_shared<RemotePolicy>(std::move(config));
}
std::shared_ptr<RewardBackend> make_remote_reward(RemoteConfig config) {
  return std::make_shared<RemoteReward>(std::move(config));
}
std::shared_ptr<RetrieverBackend> make_remote_retriever(RemoteConfig config) {
  return std::make_shared<RemoteRetriever>(std::move(config));
}
std::shared_ptr<TeacherBackend> make_remote_teacher(RemoteConfig config) {
  return std::make_shared<RemoteTeacher>(std::move(config));
}

}  // namespace pra
