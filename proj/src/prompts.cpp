#include "pra/prompts.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace pra {

namespace {

constexpr std::string_view kPolicySystem =
    "Solve the following question step-by-step.\n"
    "\n"
    "Do not analyze individual options in a single step.\n"
    "\n"
    "Each step of your explanation must start with 'Step {number}:' format.\n"
    "\n"
    "You must conclude the answer using the phrase 'the answer is (option alphabet)' at the end of your step.";

constexpr std::string_view kDirectSystem =
    "Answer the following question directly, without explanation.\n"
    "\n"
    "You must state the answer using the phrase 'the answer is (option alphabet)'.";

constexpr std::string_view kTeacherSystem =
    "You are a medical expert responsible for evaluating the quality of the last reasoning step in a solution to "
    "a medical question.\n"
    "\n"
    "You are provided with relevant documents, the question, and the reasoning trace including prior steps.\n"
    "\n"
    "Your task is to critically assess only the last reasoning step, considering its logical coherence, medical "
    "validity, and consistency with the evidence.\n"
    "\n"
    "You must only return one score, and output nothing else:\n"
    "\n"
    "Reasoning Score: Score 1 if the last step is logically coherent, medically sound, and aligns with the "
    "provided evidence; otherwise, score 0.\n"
    "\n"
    "Output only a single digit of your reasoning score in the following format:\n"
    "\n"
    "1 or 0 (1: correct, 0: incorrect)";

constexpr std::string_view kPraSystem =
    "You are an evaluator responsible for assessing the quality of the last reasoning step in a solution to a "
    "medical question.\n"
    "\n"
    "You are provided with relevant documents, the question, and the reasoning path (including prior steps and "
    "their rewards, if they exist).\n"
    "\n"
    "Your task is to critically assess only the last reasoning step, considering its logical coherence, medical "
    "validity, and consistency with the evidence.\n"
    "\n"
    "You must only return two scores, and output nothing else:\n"
    "\n"
    "1. Reasoning Reward: Score 1 if the last step is logically coherent, medically sound, and aligns with the "
    "provided evidence; otherwise, score 0.\n"
    "\n"
    "2. Search Reward: Score 1 if, in order to evaluate the last reasoning step, you needed to refer to the "
    "provided evidence (i.e., the step required searching for or validating with external information), or if "
    "the reasoning step itself explicitly involves searching, retrieval, or referencing outside knowledge; "
    "otherwise, score 0.\n"
    "\n"
    "Provide your evaluation as two numbers, separated by a comma and a space, with no additional explanation or "
    "text. The first number is the Reasoning Reward, and the second is the Search Reward, as in the following "
    "examples:\n"
    "\n"
    "0,0\n"
    "\n"
    "1,0\n"
    "\n"
    "0,1\n"
    "\n"
    "1,1\n"
    "\n"
    "For instance:\n"
    "\n"
    "If Reasoning Reward = 0 and Search Reward = 1, write: 0,1\n"
    "\n"
    "If both are 1: 1,1\n"
    "\n"
    "If both are 0: 0,0\n"
    "\n"
    "If Reasoning Reward = 1 and Search Reward = 0: 1,0";

std::string documents_section(std::span<const Document> documents) {
  std::string out = "=== DOCUMENTS ===";
  for (std::size_t i = 0; i < documents.size(); ++i) {
    out += fmt::format("\nDoc {}: {}", i + 1, documents[i].text);
  }
  return out;
}

std::string question_section(const Question& question) {
  std::string out = fmt::format("=== QUESTION ===\n{}\n", question.stem());
  for (const auto& option : question.options()) {
    out += fmt::format("\n{}: {}", option.label, option.text);
  }
  return out;
}

std::string trace_section(std::span<const Step> steps) {
  std::string out = "=== REASONING TRACE ===";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += fmt::format("\nStep {}: {}", i + 1, steps[i].text);
  }
  return out;
}

std::string join_sections(std::initializer_list<std::string> sections) {
  std::string out;
  for (const auto& s : sections) {
    if (s.empty()) continue;
    if (!out.empty()) out += "\n\n";
    out += s;
  }
  return out;
}

}  // namespace

std::string Prompt::flatten() const { return fmt::format("System:\n{}\n\nUser:\n{}\n", system, user); }

Prompt render_policy_prompt(const Question& question) {
  return {std::string(kPolicySystem), question_section(question)};
}

Prompt render_direct_prompt(const Question& question) {
  return {std::string(kDirectSystem), question_section(question)};
}

Prompt render_rag_prompt(const Question& question, std::span<const Document> documents) {
  return {std::string(kPolicySystem),
          join_sections({documents.empty() ? std::string() : documents_section(documents),
                         question_section(question)})};
}

Prompt render_pra_prompt(const Question& question, std::span<const Step> steps,
                         std::span<const Document> documents) {
  return {std::string(kPraSystem),
          join_sections({documents.empty() ? std::string() : documents_section(documents),
                         question_section(question), trace_section(steps)})};
}

Prompt render_teacher_prompt(const Question& question, std::span<const Step> steps,
                             std::span<const Document> documents, bool include_docs) {
  const Option* gold = question.find(question.gold());
  const std::string answer = fmt::format("=== CORRECT ANSWER ===\n({}): {}", question.gold(), gold->text);
  return {std::string(kTeacherSystem),
          join_sections({include_docs ? documents_section(documents) : std::string(),
                         question_section(question), answer, trace_section(steps)})};
}

std::string render_step_prefix(std::span<const Step> steps) {
  std::string out;
  for (std::size_t i = 0; i < steps.size(); ++i) out += fmt::format("Step {}: {}\n", i + 1, steps[i].text);
  return out;
}

std::string build_query(const Question& question, std::span<const Step> steps) {
  std::string query = question.stem();
  for (const auto& option : question.options()) query += fmt::format("\n{}: {}", option.label, option.text);
  const std::size_t first = steps.size() > 2 ? steps.size() - 2 : 0;
  for (std::size_t i = first; i < steps.size(); ++i) {
    query += '\n';
    query += steps[i].text;
  }
  return query;
}

}  // namespace pra
