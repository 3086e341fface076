#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pra/backends.hpp"
#include "pra/io.hpp"
#include "pra/prompts.hpp"

namespace pra {

enum class EpsilonMode { GlobalMedian, Fixed };

struct LabelConfig {
  EpsilonMode epsilon_mode = EpsilonMode::GlobalMedian;
  double epsilon = 0.0;  // used when epsilon_mode == Fixed
  RetrievalParams retrieval;
  bool always_search = false;  // export every target with a = 1
  int max_depth = 12;
  int retry_limit = 2;

  void validate() const;
};

/// log p(1) - log p(0) of a two-way softmax, which is l1 - l0.
double margin(LogitPair pair);

/// Margins for the newest step of `steps` from two teacher calls, with
/// `documents` and without. The reasoning label is 1 iff l1 >= l0 on the
/// with-docs pass. `search_label` is left unset.
MarginRecord label_step(const Question& question, std::span<const Step> steps, const DocumentSet& documents,
                        TeacherBackend& teacher);

/// Retrieves evidence for the prefix first; retrieval failure degrades to
/// an empty document set.
MarginRecord label_step(const Question& question, std::span<const Step> steps, RetrieverBackend* retriever,
                        TeacherBackend& teacher, const RetrievalParams& params = {});

struct ThresholdReport {
  EpsilonMode mode = EpsilonMode::GlobalMedian;
  double epsilon = 0.0;
  std::size_t records = 0;
  std::size_t search = 0;
  double search_fraction = 0.0;
};

/// Median of |delta| (mean of the middle two for even counts) under
/// GlobalMedian, else the fixed value. A record is labelled Search iff
/// |delta| > epsilon. Throws DataError on an empty set.
ThresholdReport finalize_labels(std::vector<MarginRecord>& records, const LabelConfig& config);

struct LabelExample {
  MarginRecord record;
  Prompt prompt;
  std::string target;  // "<r>,<a>"
  int num_steps = 1;   // length of the source trace
  bool trace_correct = false;
};

struct LabelDataset {
  std::vector<LabelExample> examples;
  ThresholdReport report;
  std::size_t skipped_questions = 0;
  std::size_t skipped_records = 0;
};

/// One chain-of-thought trace per question, per-step retrieval and teacher
/// margins, then global thresholding. Prompts carry the documents iff the
/// example's search target is 1.
LabelDataset generate_dataset(std::span<const Question> questions, const Backends& backends,
                              const LabelConfig& config, std::uint64_t seed);

json example_to_json(const LabelExample& example);
json report_to_json(const ThresholdReport& report);

}  // namespace pra
