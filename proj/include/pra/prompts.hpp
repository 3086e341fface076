#pragma once

#include <span>
#include <string>

#include "pra/core.hpp"

namespace pra {

/// A chat prompt. Remote backends receive the two parts as separate
/// messages; `flatten()` is the single-string form used by golden files.
struct Prompt {
  std::string system;
  std::string user;

  std::string flatten() const;

  bool operator==(const Prompt&) const = default;
};

/// Chain-of-thought policy prompt (also used for PRA-guided search).
Prompt render_policy_prompt(const Question& question);

/// Answer-only prompt for the Direct baseline.
Prompt render_direct_prompt(const Question& question);

/// Policy prompt with retrieved documents prepended to the user turn.
Prompt render_rag_prompt(const Question& question, std::span<const Document> documents);

/// Reward-agent prompt for the newest step of `steps`. The DOCUMENTS
/// section is rendered iff `documents` is non-empty.
Prompt render_pra_prompt(const Question& question, std::span<const Step> steps,
                         std::span<const Document> documents);

/// Teacher prompt used for label generation. The DOCUMENTS header is
/// rendered iff `include_docs`, even when `documents` is empty.
Prompt render_teacher_prompt(const Question& question, std::span<const Step> steps,
                             std::span<const Document> documents, bool include_docs);

/// "Step 1: ...\nStep 2: ...\n", the assistant-side prefix a policy continues from.
std::string render_step_prefix(std::span<const Step> steps);

/// Retrieval query: question stem and options, then the last two step texts.
std::string build_query(const Question& question, std::span<const Step> steps);

}  // namespace pra
