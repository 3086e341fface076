#pragma once

#include <memory>
#include <string>

#include "pra/backends.hpp"
#include "pra/io.hpp"

namespace pra {

struct RemoteConfig {
  std::string url;  // http://host:port[/prefix]
  int timeout_ms = 30000;
  int retries = 2;
  int max_connections = 4;

  bool operator==(const RemoteConfig&) const = default;
};

// JSON-over-HTTP clients. Each batch is one POST whose body is
//   {"request_id": "...", "items": [<request>...]}
// and whose reply must echo request_id:
//   /generate  -> {"request_id", "outputs": [[text...]...]}
//   /score     -> {"request_id", "results": [{"slots": [{"logit_zero", "logit_one"}...]}...]}
//   /retrieve  -> {"request_id", "results": [[document...]...]}
// Transport failures are retried `retries` times. Malformed or short
// replies raise BackendError.

std::shared_ptr<PolicyBackend> make_remote_policy(RemoteConfig config);
std::shared_ptr<RewardBackend> make_remote_reward(RemoteConfig config);
std::shared_ptr<RetrieverBackend> make_remote_retriever(RemoteConfig config);
/// Teacher scoring goes to the /score endpoint with "slots": 1.
std::shared_ptr<TeacherBackend> make_remote_teacher(RemoteConfig config);

}  // namespace pra
