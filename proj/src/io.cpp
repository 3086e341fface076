#include "pra/io.hpp"

#include <fstream>
#include <mutex>
#include <sstream>

#include <fmt/format.h>

#include "pra/log.hpp"

namespace pra {

namespace log {

namespace {
std::mutex sink_mutex;
Sink& current_sink() {
  static Sink sink = [](Level level, std::string_view message) {
    std::fputs(level == Level::Warning ? "warning: " : "", stderr);
    std::fwrite(message.data(), 1, message.size(), stderr);
    std::fputc('\n', stderr);
  };
  return sink;
}
}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex);
  std::swap(current_sink(), sink);
  return sink;
}

void info(std::string_view message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink()) current_sink()(Level::Info, message);
}

void warn(std::string_view message) {
  std::lock_guard lock(sink_mutex);
  if (current_sink()) current_sink()(Level::Warning, message);
}

}  // namespace log

namespace {

template <typename T>
T required(const json& record, const char* key) {
  if (!record.is_object() || !record.contains(key)) throw DataError(fmt::format("missing field '{}'", key));
  try {
    return record.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DataError(fmt::format("field '{}': {}", key, e.what()));
  }
}

Label label_from(const std::string& text, const char* what) {
  if (text.size() != 1) throw DataError(fmt::format("{} must be a single letter, got '{}'", what, text));
  return text[0];
}

}  // namespace

json question_to_json(const Question& question) {
  json options = json::object();
  for (const auto& option : question.options()) options[std::string(1, option.label)] = option.text;
  return {{"id", question.id()},
          {"question", question.stem()},
          {"options", options},
          {"answer_idx", std::string(1, question.gold())}};
}

Question question_from_json(const json& record) {
  const auto options_json = required<json>(record, "options");
  if (!options_json.is_object()) throw DataError("'options' must be an object of label -> text");
  std::vector<Option> options;
  for (const auto& [label, text] : options_json.items()) {
    if (!text.is_string()) throw DataError(fmt::format("option {} is not a string", label));
    options.push_back({label_from(label, "option label"), text.get<std::string>()});
  }
  return Question(required<std::string>(record, "id"), required<std::string>(record, "question"), std::move(options),
                  label_from(required<std::string>(record, "answer_idx"), "answer_idx"));
}

std::vector<Question> load_questions(const std::filesystem::path& path) {
  std::vector<Question> questions;
  for (const auto& record : read_jsonl(path)) questions.push_back(question_from_json(record));
  return questions;
}

void save_questions(const std::filesystem::path& path, std::span<const Question> questions) {
  std::vector<json> records;
  for (const auto& q : questions) records.push_back(question_to_json(q));
  write_jsonl(path, records);
}

json trace_to_json(const Trace& trace, std::optional<bool> correct, bool selected) {
  json steps = json::array();
  for (const auto& step : trace.steps) {
    json s = {{"index", step.index}, {"text", step.text}};
    s["reward"] = step.reward ? json(*step.reward) : json(nullptr);
    s["action"] = step.action ? json{{"value", to_string(step.action->value)}, {"score", step.action->score}}
                              : json(nullptr);
    s["doc_ids"] = step.doc_ids ? json(*step.doc_ids) : json(nullptr);
    steps.push_back(std::move(s));
  }
  json record = {{"question_id", trace.question_id},
                 {"serial", trace.serial},
                 {"steps", steps},
                 {"cumulative_reward", trace.cumulative_reward}};
  record["final_answer"] = trace.final_answer ? json(std::string(1, *trace.final_answer)) : json(nullptr);
  record["correct"] = correct ? json(*correct) : json(nullptr);
  record["selected"] = selected;
  return record;
}

Trace trace_from_json(const json& record) {
  Trace trace;
  trace.question_id = required<std::string>(record, "question_id");
  trace.serial = record.value("serial", std::uint64_t{0});
  trace.cumulative_reward = required<double>(record, "cumulative_reward");
  trace.stage = Stage::Done;
  for (const auto& s : required<json>(record, "steps")) {
    Step step;
    step.index = required<int>(s, "index");
    step.text = required<std::string>(s, "text");
    if (s.contains("reward") && !s["reward"].is_null()) step.reward = s["reward"].get<double>();
    if (s.contains("action") && !s["action"].is_null()) {
      const auto value = required<std::string>(s["action"], "value");
      if (value != "search" && value != "reward") throw DataError(fmt::format("unknown action '{}'", value));
      step.action = ActionDecision{value == "search" ? Action::Search : Action::Reward,
                                   required<double>(s["action"], "score")};
    }
    if (s.contains("doc_ids") && !s["doc_ids"].is_null()) step.doc_ids = s["doc_ids"].get<std::vector<std::string>>();
    trace.steps.push_back(std::move(step));
  }
  if (record.contains("final_answer") && !record["final_answer"].is_null()) {
    trace.final_answer = label_from(record["final_answer"].get<std::string>(), "final_answer");
  }
  return trace;
}

json document_to_json(const Document& doc) {
  json record = {{"corpus_id", doc.corpus_id},
                 {"doc_id", doc.doc_id},
                 {"text", doc.text},
                 {"retrieval_score", doc.retrieval_score}};
  record["rerank_score"] = doc.rerank_score ? json(*doc.rerank_score) : json(nullptr);
  return record;
}

Document document_from_json(const json& record) {
  Document doc;
  doc.corpus_id = required<std::string>(record, "corpus_id");
  doc.doc_id = required<std::string>(record, "doc_id");
  doc.text = required<std::string>(record, "text");
  doc.retrieval_score = record.value("retrieval_score", 0.0);
  if (record.contains("rerank_score") && !record["rerank_score"].is_null()) {
    doc.rerank_score = record["rerank_score"].get<double>();
  }
  return doc;
}

json prompt_to_json(const Prompt& prompt) {
  return json::array({{{"role", "system"}, {"content", prompt.system}}, {{"role", "user"}, {"content", prompt.user}}});
}

namespace {
json documents_to_json(const DocumentSet& docs) {
  json out = json::array();
  for (const auto& d : docs) out.push_back(document_to_json(d));
  return out;
}

std::string_view mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::Direct: return "direct";
    case PromptMode::CoT: return "cot";
    case PromptMode::Rag: return "rag";
  }
  return "?";
}
}  // namespace

json request_to_json(const GenerateRequest& request) {
  return {{"question_id", request.question_id},
          {"trace_serial", request.trace_serial},
          {"mode", mode_name(request.mode)},
          {"messages", prompt_to_json(request.prompt)},
          {"prior_steps", request.prior_steps},
          {"documents", documents_to_json(request.documents)},
          {"n", request.n},
          {"seed", request.seed}};
}

json request_to_json(const ScoreRequest& request) {
  return {{"question_id", request.question_id},
          {"trace_serial", request.trace_serial},
          {"messages", prompt_to_json(request.prompt)},
          {"steps", request.steps},
          {"documents", documents_to_json(request.documents)},
          {"slots", 2}};
}

json request_to_json(const RetrieveRequest& request) {
  return {{"question_id", request.question_id},
          {"trace_serial", request.trace_serial},
          {"query", request.query},
          {"k", request.params.per_corpus_k},
          {"m", request.params.rerank_m}};
}

json request_to_json(const TeacherRequest& request) {
  return {{"question_id", request.question_id},
          {"messages", prompt_to_json(request.prompt)},
          {"steps", request.steps},
          {"documents", documents_to_json(request.documents)},
          {"with_docs", request.with_docs},
          {"slots", 1}};
}

json logits_to_json(const LogitPair& pair) { return {{"logit_zero", pair.logit_zero}, {"logit_one", pair.logit_one}}; }

LogitPair logits_from_json(const json& record) {
  return {required<double>(record, "logit_zero"), required<double>(record, "logit_one")};
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::vector<json> records;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(fmt::format("{}:{}: {}", path.string(), number, e.what()));
    }
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string format_number(double value) { return fmt::format("{}", value); }

}  // namespace pra
