#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pra/backends.hpp"

namespace pra {

/// Parameters of the synthetic testbed.
///
/// Every question has a hidden gold chain of `depth` steps whose last step
/// states the gold answer. From a gold-consistent prefix the policy emits the
/// next gold step with probability `p_correct`; otherwise it drifts off the
/// chain and stays off it, ending on a wrong answer at the same depth.
///
/// The reward oracle returns l1 - l0 = +gain on gold-consistent steps and
/// -gain otherwise, plus Gaussian noise with standard deviation
/// `2 * gain * sigma` (noise is measured in units of the gold/off-gold
/// separation). When the scored request carries a document relevant to the
/// question the noise level drops to `sigma_doc`.
struct SyntheticConfig {
  std::size_t num_questions = 20;
  int num_options = 4;
  int min_depth = 2;
  int max_depth = 6;
  double p_correct = 0.55;
  double gain = 4.0;
  double sigma = 1.0;
  double sigma_doc = 0.2;
  double action_spread = 2.0;  // std of the action-slot logit
  double rag_boost = 0.25;     // RAG policy: p -> p + rag_boost * (1 - p) with relevant docs
  int relevant_docs = 4;
  int distractor_docs = 12;
  std::uint64_t seed = 0;

  void validate() const;
};

class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticConfig config);

  const SyntheticConfig& config() const { return config_; }

  /// The world's own questions (`num_questions` of them), registered.
  std::vector<Question> make_questions();

  /// Registers externally supplied questions so the oracle backends can serve them.
  void adopt(std::span<const Question> questions);

  int depth_of(const std::string& question_id) const;

  /// True iff every step carries this question's gold tag.
  bool gold_consistent(const std::string& question_id, std::span<const std::string> steps) const;

  Backends backends() const;

  struct Entry {
    Label gold;
    int num_options;
    int depth;
  };
  class Registry;

 private:
  SyntheticConfig config_;
  std::shared_ptr<Registry> registry_;
};

}  // namespace pra
