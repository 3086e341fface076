#pragma once

#include <cstdint>
#include <random>

#include "pra/core.hpp"

namespace pra {

enum class ActionMode { Sample, Threshold };

struct ReadoutConfig {
  ActionMode action_mode = ActionMode::Threshold;
  double theta_dep = 0.5;
  bool always_search = true;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Normalized score of token "1" under a two-way softmax, evaluated as
/// 1 / (1 + exp(l0 - l1)). Throws ConfigError on non-finite logits.
double reward_from_logits(LogitPair pair);

/// Search decision from the action slot. Threshold mode searches iff the
/// score is strictly above theta_dep; Sample mode draws Bernoulli(score).
ActionDecision action_from_logits(LogitPair pair, const ReadoutConfig& config, std::mt19937_64& rng);

}  // namespace pra
