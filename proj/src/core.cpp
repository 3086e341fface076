#include "pra/core.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <fmt/format.h>

namespace pra {

namespace {

bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

// Returns the offset just past "Step <n>:" if `line` starts with a marker.
std::optional<std::size_t> step_marker(std::string_view line) {
  std::size_t i = 0;
  while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
  if (line.substr(i, 4) != "Step") return std::nullopt;
  i += 4;
  while (i < line.size() && line[i] == ' ') ++i;
  const std::size_t digits = i;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i == digits) return std::nullopt;
  while (i < line.size() && line[i] == ' ') ++i;
  if (i >= line.size() || line[i] != ':') return std::nullopt;
  return i + 1;
}

std::vector<std::string_view> split_lines(std::string_view raw) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= raw.size()) {
    const std::size_t end = raw.find('\n', start);
    if (end == std::string_view::npos) {
      lines.push_back(raw.substr(start));
      break;
    }
    lines.push_back(raw.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string> split_paragraphs(const std::vector<std::string_view>& lines) {
  std::vector<std::string> paragraphs;
  std::string current;
  auto flush = [&] {
    std::string text = trim(current);
    if (!text.empty()) paragraphs.push_back(std::move(text));
    current.clear();
  };
  for (auto line : lines) {
    if (trim(line).empty()) {
      flush();
      continue;
    }
    if (!current.empty()) current += '\n';
    current += line;
  }
  flush();
  if (paragraphs.size() > kMaxFallbackSteps) {
    std::string tail = paragraphs[kMaxFallbackSteps - 1];
    for (std::size_t i = kMaxFallbackSteps; i < paragraphs.size(); ++i) {
      tail += "\n\n";
      tail += paragraphs[i];
    }
    paragraphs.resize(kMaxFallbackSteps);
    paragraphs.back() = std::move(tail);
  }
  return paragraphs;
}

}  // namespace

Question::Question(std::string id, std::string stem, std::vector<Option> options, Label gold)
    : id_(std::move(id)), stem_(std::move(stem)), options_(std::move(options)), gold_(gold) {
  if (id_.empty()) throw ConfigError("question id must not be empty");
  if (trim(stem_).empty()) throw ConfigError(fmt::format("question {}: empty stem", id_));
  if (options_.size() < 2) throw ConfigError(fmt::format("question {}: needs at least 2 options", id_));
  if (options_.size() > 26) throw ConfigError(fmt::format("question {}: too many options", id_));
  for (std::size_t i = 0; i < options_.size(); ++i) {
    const Label expected = static_cast<Label>('A' + i);
    if (options_[i].label != expected) {
      throw ConfigError(fmt::format("question {}: option {} should be labelled {}", id_, i, expected));
    }
  }
  if (find(gold_) == nullptr) throw ConfigError(fmt::format("question {}: gold '{}' is not an option", id_, gold_));
}

const Option* Question::find(Label label) const {
  for (const auto& option : options_) {
    if (option.label == label) return &option;
  }
  return nullptr;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Reason: return "reason";
    case Stage::Reward: return "reward";
    case Stage::Search: return "search";
    case Stage::Done: return "done";
  }
  return "?";
}

std::string_view to_string(Action action) { return action == Action::Search ? "search" : "reward"; }

void Trace::reward_newest(double reward) {
  if (steps.empty()) throw ConfigError("cannot reward an empty trace");
  steps.back().reward = reward;
  cumulative_reward += reward;
}

std::string trim(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_blank(text[begin])) ++begin;
  while (end > begin && is_blank(text[end - 1])) --end;
  return std::string(text.substr(begin, end - begin));
}

std::optional<Label> find_answer(std::string_view text) {
  static constexpr std::string_view kPhrase = "the answer is";
  std::optional<Label> answer;
  if (text.size() < kPhrase.size()) return answer;
  for (std::size_t pos = 0; pos + kPhrase.size() <= text.size(); ++pos) {
    bool match = true;
    for (std::size_t k = 0; k < kPhrase.size(); ++k) {
      if (lower(text[pos + k]) != kPhrase[k]) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    std::size_t i = pos + kPhrase.size();
    while (i < text.size() && text[i] == ' ') ++i;
    if (i + 2 < text.size() && text[i] == '(' && std::isalpha(static_cast<unsigned char>(text[i + 1])) &&
        text[i + 2] == ')') {
      answer = static_cast<Label>(std::toupper(static_cast<unsigned char>(text[i + 1])));
    }
  }
  return answer;
}

PolicyOutput parse_policy_output(std::string_view raw) {
  PolicyOutput out;
  out.answer = find_answer(raw);
  const auto lines = split_lines(raw);

  bool any_marker = false;
  std::string current;
  for (auto line : lines) {
    if (auto offset = step_marker(line)) {
      if (any_marker) out.steps.push_back(trim(current));
      any_marker = true;
      current = std::string(line.substr(*offset));
      continue;
    }
    if (!any_marker) continue;  // preamble before the first marker
    current += '\n';
    current += line;
  }
  if (any_marker) {
    out.steps.push_back(trim(current));
    return out;
  }
  out.steps = split_paragraphs(lines);
  return out;
}

std::optional<Label> extract_answer(const Trace& trace) {
  if (trace.steps.empty()) return std::nullopt;
  return find_answer(trace.steps.back().text);
}

int correctness(std::optional<Label> predicted, Label gold) { return predicted && *predicted == gold ? 1 : 0; }

}  // namespace pra
