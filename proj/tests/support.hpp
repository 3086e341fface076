#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "pra/backends.hpp"
#include "pra/core.hpp"
#include "pra/rng.hpp"

namespace pra::testing {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline std::filesystem::path golden_path(const std::string& name) {
  return std::filesystem::path(PRA_TEST_DATA_DIR) / "golden" / name;
}

inline Question golden_question() {
  return Question("golden-1",
                  "A 58-year-old man has crushing chest pain radiating to the left arm. Which test should be "
                  "ordered first?",
                  {{'A', "Electrocardiogram"}, {'B', "Chest radiograph"}, {'C', "D-dimer"}}, 'A');
}

inline std::vector<Step> golden_steps() {
  return {{.index = 1, .text = "Crushing pain radiating to the arm suggests an acute coronary syndrome."},
          {.index = 2, .text = "An electrocardiogram is the fastest initial test, so the answer is (A)."}};
}

inline DocumentSet golden_documents() {
  return {{"guidelines", "g-1", "Obtain an ECG within 10 minutes of arrival for suspected acute coronary syndrome.",
           2.0, 0.9},
          {"textbooks", "t-7", "D-dimer is used to exclude pulmonary embolism in low-risk patients.", 1.0, 0.4}};
}

inline Question plain_question(const std::string& id, Label gold = 'A') {
  return Question(id, fmt::format("Stem of {}", id),
                  {{'A', "alpha"}, {'B', "beta"}, {'C', "gamma"}, {'D', "delta"}}, gold);
}

// A fully enumerable reasoning tree. Node ids are paths such as "r1/0/2":
// the root is named after the beam slot that expands it and each step adds
// the index of the continuation. Steps render as "node <id>", with an answer
// phrase on leaves.
struct TreeSpec {
  int depth = 3;           // every node at this depth answers
  int branching = 2;
  double early_answer = 0.0;  // chance that an inner node answers
  int reward_levels = 3;      // rewards take this many distinct values
  std::uint64_t seed = 0;

  std::uint64_t key(const std::string& id) const { return mix({seed, hash_string(id)}); }

  bool answers(const std::string& id, int t) const {
    return t >= depth || to_unit(splitmix64(key(id) ^ 0xa11ULL)) < early_answer;
  }

  Label answer(const std::string& id) const { return static_cast<Label>('A' + splitmix64(key(id) ^ 0xb22ULL) % 4); }

  double logit(const std::string& id) const {
    const auto level = static_cast<int>(splitmix64(key(id) ^ 0xc33ULL) % static_cast<std::uint64_t>(reward_levels));
    return static_cast<double>(level) - 1.0;
  }

  std::string text(const std::string& id, int t) const {
    return answers(id, t) ? fmt::format("node {} so the answer is ({}).", id, answer(id)) : fmt::format("node {}", id);
  }
};

inline std::string node_id(const std::string& step_text) {
  const auto start = step_text.find(' ') + 1;
  const auto end = step_text.find(' ', start);
  return step_text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

class TreePolicy final : public PolicyBackend {
 public:
  explicit TreePolicy(TreeSpec spec) : spec_(spec) {}

  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest> batch) override {
    std::vector<GenerateResponse> out;
    for (const auto& r : batch) {
      const std::string parent =
          r.prior_steps.empty() ? fmt::format("r{}", r.trace_serial) : node_id(r.prior_steps.back());
      const int t = static_cast<int>(r.prior_steps.size()) + 1;
      GenerateResponse texts;
      for (int k = 0; k < r.n; ++k) {
        const std::string id = fmt::format("{}/{}", parent, k);
        texts.push_back(fmt::format("Step {}: {}", t, spec_.text(id, t)));
      }
      out.push_back(std::move(texts));
    }
    return out;
  }

 private:
  TreeSpec spec_;
};

class TreeReward final : public RewardBackend {
 public:
  explicit TreeReward(TreeSpec spec) : spec_(spec) {}

  std::vector<ScoreResponse> score_steps(std::span<const ScoreRequest> batch) override {
    std::vector<ScoreResponse> out;
    for (const auto& r : batch) {
      out.push_back({{0.0, spec_.logit(node_id(r.steps.back()))}, {0.0, -4.0}});
    }
    return out;
  }

 private:
  TreeSpec spec_;
};

inline Backends tree_backends(const TreeSpec& spec) {
  return {std::make_shared<TreePolicy>(spec), std::make_shared<TreeReward>(spec), nullptr, nullptr};
}

/// Policy whose every call fails.
class FailingPolicy final : public PolicyBackend {
 public:
  std::vector<GenerateResponse> generate_steps(std::span<const GenerateRequest>) override {
    throw BackendError("policy unavailable");
  }
};

/// Retriever whose every call fails.
class FailingRetriever final : public RetrieverBackend {
 public:
  std::vector<DocumentSet> retrieve(std::span<const RetrieveRequest>) override {
    throw BackendError("retriever unavailable");
  }
};

}  // namespace pra::testing
