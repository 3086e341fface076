#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pra/backends.hpp"
#include "pra/core.hpp"

namespace pra {

using json = nlohmann::json;

// Dataset records: {"id", "question", "options": {"A": ..., ...}, "answer_idx"}.
json question_to_json(const Question& question);
Question question_from_json(const json& record);
std::vector<Question> load_questions(const std::filesystem::path& path);
void save_questions(const std::filesystem::path& path, std::span<const Question> questions);

// Trace records: {question_id, serial, steps: [{index, text, reward, action, doc_ids}],
// cumulative_reward, final_answer, correct, selected}. `action` is null or
// {"value": "search"|"reward", "score": p}.
json trace_to_json(const Trace& trace, std::optional<bool> correct = std::nullopt, bool selected = false);
Trace trace_from_json(const json& record);

json document_to_json(const Document& doc);
Document document_from_json(const json& record);

json prompt_to_json(const Prompt& prompt);

// Wire forms of backend requests (also used as replay fingerprints).
json request_to_json(const GenerateRequest& request);
json request_to_json(const ScoreRequest& request);
json request_to_json(const RetrieveRequest& request);
json request_to_json(const TeacherRequest& request);

json logits_to_json(const LogitPair& pair);
LogitPair logits_from_json(const json& record);

std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const json> records);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Shortest decimal that round-trips, for CSV cells.
std::string format_number(double value);

}  // namespace pra
