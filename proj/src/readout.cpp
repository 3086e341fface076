#include "pra/readout.hpp"

#include <cmath>

#include <fmt/format.h>

#include "pra/rng.hpp"

namespace pra {

void ReadoutConfig::validate() const {
  if (!(theta_dep >= 0.0 && theta_dep <= 1.0)) {
    throw ConfigError(fmt::format("readout.theta_dep must lie in [0,1], got {}", theta_dep));
  }
}

double reward_from_logits(LogitPair pair) {
  if (!std::isfinite(pair.logit_zero) || !std::isfinite(pair.logit_one)) {
    throw ConfigError(fmt::format("non-finite logits ({}, {})", pair.logit_zero, pair.logit_one));
  }
  return 1.0 / (1.0 + std::exp(pair.logit_zero - pair.logit_one));
}

ActionDecision action_from_logits(LogitPair pair, const ReadoutConfig& config, std::mt19937_64& rng) {
  const double score = reward_from_logits(pair);
  if (config.always_search) return {Action::Search, score};
  if (config.action_mode == ActionMode::Threshold) {
    return {score > config.theta_dep ? Action::Search : Action::Reward, score};
  }
  return {uniform01(rng) < score ? Action::Search : Action::Reward, score};
}

}  // namespace pra
