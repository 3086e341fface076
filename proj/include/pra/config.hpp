#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pra/backends.hpp"
#include "pra/io.hpp"
#include "pra/labelgen.hpp"
#include "pra/replay.hpp"
#include "pra/scheduler.hpp"
#include "pra/search.hpp"
#include "pra/synthetic.hpp"

namespace pra {

struct BackendsConfig {
  std::string kind = "synthetic";  // synthetic | remote | replay
  std::string policy_url;
  std::string reward_url;
  std::string retriever_url;
  std::string teacher_url;  // defaults to reward_url
  int timeout_ms = 30000;
  int retries = 2;
  int max_connections = 4;
  std::string corpus;  // JSONL corpus served by the built-in lexical retriever
  std::string replay;  // replay log to serve from (kind = replay)
  std::string record;  // if set, responses are recorded here
};

/// One experiment. Serialized as JSON with nested objects; unknown keys
/// are rejected.
struct AppConfig {
  std::string dataset;  // JSONL questions; empty = the synthetic world's own
  std::string dataset_name = "synthetic";
  SyntheticConfig synthetic;
  std::string method = "pra";  // pra | cot | direct | rag
  int samples = 1;             // per-question samples for the baselines
  SearchConfig search;
  std::vector<double> theta_grid;
  std::vector<int> sc_budgets;
  SchedulerConfig scheduler;
  BackendsConfig backends;
  LabelConfig labels;
  std::uint64_t seed = 0;
  std::string output_dir = "out";

  AppConfig();
  void validate() const;
};

AppConfig config_from_json(const json& document);
json config_to_json(const AppConfig& config);
AppConfig load_config(const std::filesystem::path& path);

/// PRA_POLICY_URL, PRA_REWARD_URL, PRA_RETRIEVER_URL and PRA_TEACHER_URL
/// replace the corresponding endpoints when set.
void apply_env_overrides(AppConfig& config);

/// Questions and backends for a configured run.
struct Workspace {
  std::vector<Question> questions;
  Backends backends;
  std::shared_ptr<SyntheticWorld> world;    // synthetic kind only
  std::shared_ptr<ReplayLog> recording;     // set when backends.record is set
};

Workspace open_workspace(const AppConfig& config);

/// Saves the recording, if any.
void close_workspace(const Workspace& workspace, const AppConfig& config);

}  // namespace pra
