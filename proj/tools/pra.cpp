// pra: command-line entry point.
//
//   pra run     --config exp.json [--method pra|cot|direct|rag] [--out DIR] [--seed N] [--always-search]
//   pra label   --config exp.json [--always-search]
//   pra sweep   --config exp.json [--theta-grid 0,0.5,1]
//   pra analyze --traces traces.jsonl [--labels labels.jsonl] [--config exp.json]
//   pra synth   --out questions.jsonl [--num N] [--seed N]
//
// Exit codes: 0 success, 1 run-level errors occurred, 2 invalid invocation.

#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "pra/baselines.hpp"
#include "pra/config.hpp"
#include "pra/labelgen.hpp"
#include "pra/log.hpp"
#include "pra/scheduler.hpp"
#include "pra/search.hpp"
#include "pra/synthetic.hpp"

namespace fs = std::filesystem;
using namespace pra;

namespace {

constexpr int kOk = 0;
constexpr int kRunErrors = 1;
constexpr int kUsage = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string method;
  bool always_search = false;
  std::string theta_grid;
  std::string traces;
  std::string labels;
  std::size_t num = 20;
};

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      if (trim(item.substr(used)).size() != 0) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("--theta-grid: '{}' is not a number", item));
    }
  }
  if (grid.empty()) throw ConfigError("--theta-grid is empty");
  return grid;
}

AppConfig load(const Options& opt) {
  AppConfig cfg = opt.config.empty() ? AppConfig{} : load_config(opt.config);
  apply_env_overrides(cfg);
  if (!opt.out.empty()) cfg.output_dir = opt.out;
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.method.empty()) cfg.method = opt.method;
  if (opt.always_search) {
    cfg.search.readout.always_search = true;
    cfg.labels.always_search = true;
  }
  if (!opt.theta_grid.empty()) cfg.theta_grid = parse_grid(opt.theta_grid);
  cfg.validate();
  return cfg;
}

Workspace open(const AppConfig& cfg) {
  Workspace ws = open_workspace(cfg);
  if (ws.questions.empty()) throw ConfigError("dataset is empty");
  return ws;
}

double standard_error(double p, std::size_t n) {
  return n == 0 ? 0.0 : std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

std::string results_header() { return "method,dataset,budget,theta,accuracy,se,search_frequency\n"; }

std::string results_row(const std::string& method, const std::string& dataset, int budget,
                        std::optional<double> theta, double acc, std::size_t n, std::optional<double> freq) {
  return fmt::format("{},{},{},{},{},{},{}\n", method, dataset, budget, theta ? format_number(*theta) : "",
                     format_number(acc), format_number(standard_error(acc, n)), freq ? format_number(*freq) : "");
}

json stage_json(const StageStats& s) {
  json hist = json::object();
  for (const auto& [size, count] : s.size_histogram) hist[std::to_string(size)] = count;
  return {{"batches", s.batches}, {"items", s.items}, {"retries", s.retries}, {"failures", s.failures},
          {"batch_sizes", hist}};
}

json report_json(const RunReport& r, std::span<const QuestionResult> results) {
  json questions = json::array();
  for (const auto& q : results) {
    questions.push_back({{"question_id", q.question_id},
                         {"gold", std::string(1, q.gold)},
                         {"answer", q.answer ? json(std::string(1, *q.answer)) : json(nullptr)},
                         {"correct", q.correct},
                         {"error", q.error},
                         {"policy_calls_per_cycle", q.stats.generations_per_cycle},
                         {"search_decisions", q.stats.search_decisions},
                         {"scored_steps", q.stats.scored_steps}});
  }
  json stages = json::object();
  for (auto kind : {StageKind::Retrieve, StageKind::Generate, StageKind::Score}) {
    stages[std::string(to_string(kind))] = stage_json(r.stage(kind));
  }
  return {{"iterations", r.iterations},
          {"stages", stages},
          {"policy_calls", r.policy_calls},
          {"max_policy_calls_per_cycle", r.max_policy_calls_per_cycle},
          {"search_decisions", r.search_decisions},
          {"scored_steps", r.scored_steps},
          {"errored", r.errored},
          {"accuracy", accuracy(results)},
          {"questions", questions}};
}

json timing_json(const RunReport& r) {
  json stages = json::object();
  for (auto kind : {StageKind::Retrieve, StageKind::Generate, StageKind::Score}) {
    stages[std::string(to_string(kind))] = r.stage(kind).wall_ms;
  }
  return {{"wall_ms", r.wall_ms}, {"stage_wall_ms", stages}};
}

int cmd_run(const Options& opt) {
  const AppConfig cfg = load(opt);
  Workspace ws = open(cfg);
  const bool pra = cfg.method == "pra";
  SchedulerConfig sched = cfg.scheduler;
  sched.progress = [](const std::string& line) { log::info(line); };

  RunResult out;
  if (pra) {
    out = run(ws.questions, ws.backends, cfg.search, cfg.seed, sched);
  } else {
    SamplingConfig sc{*sampling_method_from(cfg.method), cfg.samples, cfg.search.max_depth, cfg.search.retrieval};
    if (sc.method == SamplingMethod::Rag && !ws.backends.retriever) throw ConfigError("method rag needs a retriever");
    out = run(ws.questions, ws.backends, sampler_factory(sc, cfg.seed), sched);
  }
  close_workspace(ws, cfg);

  const fs::path dir = cfg.output_dir;
  std::vector<json> traces;
  for (const auto& r : out.results) {
    for (const auto& t : r.completed) {
      const bool selected = pra && r.winner && r.winner->serial == t.serial;
      json record = trace_to_json(t, correctness(t.final_answer, r.gold) == 1, selected);
      record["gold"] = std::string(1, r.gold);
      traces.push_back(std::move(record));
    }
  }
  write_jsonl(dir / "traces.jsonl", traces);

  const std::size_t n = out.results.size();
  std::string csv = results_header();
  if (pra) {
    const auto& rep = out.report;
    const double freq =
        rep.scored_steps ? static_cast<double>(rep.search_decisions) / static_cast<double>(rep.scored_steps) : 0.0;
    std::optional<double> theta;
    if (!cfg.search.readout.always_search) theta = cfg.search.readout.theta_dep;
    csv += results_row("pra", cfg.dataset_name, cfg.search.budget(), theta, accuracy(out.results), n, freq);
  } else {
    std::size_t first_correct = 0;
    for (const auto& r : out.results) {
      first_correct += !r.sample_answers.empty() && correctness(r.sample_answers.front(), r.gold) == 1 ? 1 : 0;
    }
    const double single = n ? static_cast<double>(first_correct) / static_cast<double>(n) : 0.0;
    csv += results_row(cfg.method, cfg.dataset_name, 1, std::nullopt, single, n, std::nullopt);
    if (cfg.samples > 1) {
      csv += results_row(cfg.method + "+sc", cfg.dataset_name, cfg.samples, std::nullopt, accuracy(out.results), n,
                         std::nullopt);
    }
  }
  write_text(dir / "results.csv", csv);
  write_text(dir / "run_report.json", report_json(out.report, out.results).dump(2) + "\n");
  write_text(dir / "timing.json", timing_json(out.report).dump(2) + "\n");

  std::size_t correct = 0;
  for (const auto& r : out.results) correct += r.correct ? 1 : 0;
  std::cout << fmt::format("{} on {}: accuracy {:.4f} ({}/{}), {} errored; outputs in {}\n", cfg.method,
                           cfg.dataset_name, accuracy(out.results), correct, n, out.report.errored, dir.string());
  return out.report.errored ? kRunErrors : kOk;
}

int cmd_label(const Options& opt) {
  const AppConfig cfg = load(opt);
  Workspace ws = open(cfg);
  const auto dataset = generate_dataset(ws.questions, ws.backends, cfg.labels, cfg.seed);
  close_workspace(ws, cfg);
  std::vector<json> records;
  for (const auto& e : dataset.examples) records.push_back(example_to_json(e));
  const fs::path dir = cfg.output_dir;
  write_jsonl(dir / "labels.jsonl", records);
  json report = report_to_json(dataset.report);
  report["skipped_questions"] = dataset.skipped_questions;
  report["skipped_records"] = dataset.skipped_records;
  report["always_search"] = cfg.labels.always_search;
  write_text(dir / "threshold_report.json", report.dump(2) + "\n");
  std::cout << fmt::format("{} label records, epsilon {:.6g}, search fraction {:.4f}; outputs in {}\n",
                           records.size(), dataset.report.epsilon, dataset.report.search_fraction, dir.string());
  return dataset.skipped_questions + dataset.skipped_records ? kRunErrors : kOk;
}

int cmd_sweep(const Options& opt) {
  const AppConfig cfg = load(opt);
  Workspace ws = open(cfg);
  const auto points = sweep_theta(ws.questions, ws.backends, cfg.search, cfg.seed, cfg.theta_grid, cfg.scheduler);
  close_workspace(ws, cfg);
  std::string csv = "theta,accuracy,search_frequency,scored_steps,search_decisions,pareto\n";
  json frontier = json::array();
  for (const auto& p : points) {
    csv += fmt::format("{},{},{},{},{},{}\n", format_number(p.theta), format_number(p.accuracy),
                       format_number(p.search_frequency), p.scored_steps, p.search_decisions, p.pareto ? 1 : 0);
    if (p.pareto) {
      frontier.push_back({{"theta", p.theta}, {"accuracy", p.accuracy}, {"search_frequency", p.search_frequency}});
    }
  }
  const fs::path dir = cfg.output_dir;
  write_text(dir / "sweep.csv", csv);
  write_text(dir / "pareto.json", frontier.dump(2) + "\n");
  std::cout << fmt::format("{} sweep points, {} on the Pareto frontier; outputs in {}\n", points.size(),
                           frontier.size(), dir.string());
  return kOk;
}

int cmd_analyze(const Options& opt) {
  const AppConfig cfg = load(opt);
  if (opt.traces.empty()) throw ConfigError("--traces is required");
  for (const auto& path : {opt.traces, opt.labels}) {
    if (!path.empty() && !fs::exists(path)) throw ConfigError(fmt::format("input file {} does not exist", path));
  }

  // Sample pools per question, in first-seen order.
  std::vector<SamplePool> pools;
  std::map<std::string, std::size_t> index;
  for (const auto& record : read_jsonl(opt.traces)) {
    const Trace t = trace_from_json(record);
    if (!record.contains("gold") || !record["gold"].is_string() || record["gold"].get<std::string>().size() != 1) {
      throw DataError(fmt::format("trace of {} lacks a gold label", t.question_id));
    }
    auto [it, fresh] = index.emplace(t.question_id, pools.size());
    if (fresh) pools.push_back({t.question_id, record["gold"].get<std::string>()[0], {}});
    pools[it->second].answers.push_back(t.final_answer);
  }
  if (pools.empty()) throw ConfigError(fmt::format("{} holds no traces", opt.traces));

  const auto curve = estimate_sc_curve(pools, cfg.sc_budgets, 1000, 1000, cfg.seed);
  std::string csv = "budget,accuracy,se\n";
  for (const auto& p : curve) {
    csv += fmt::format("{},{},{}\n", p.budget, format_number(p.accuracy), format_number(p.standard_error));
  }
  const fs::path dir = cfg.output_dir;
  write_text(dir / "sc_curve.csv", csv);

  if (!opt.labels.empty()) {
    std::map<std::string, double> solve_rate;
    for (const auto& p : pools) {
      std::size_t ok = 0;
      for (const auto& a : p.answers) ok += correctness(a, p.gold) == 1 ? 1 : 0;
      solve_rate[p.question_id] = static_cast<double>(ok) / static_cast<double>(p.answers.size());
    }
    std::vector<MarginObservation> obs;
    for (const auto& record : read_jsonl(opt.labels)) {
      try {
        MarginObservation o;
        o.question_id = record.at("question_id").get<std::string>();
        o.step_index = record.at("step_index").get<int>();
        o.num_steps = record.at("num_steps").get<int>();
        o.delta = record.at("delta").get<double>();
        o.correct = record.at("trace_correct").get<bool>();
        if (auto it = solve_rate.find(o.question_id); it != solve_rate.end()) o.solve_rate = it->second;
        obs.push_back(std::move(o));
      } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: malformed label record: {}", opt.labels, e.what()));
      }
    }
    const auto tables = analyze_margin_shift(obs);
    write_text(dir / "margin_by_position.csv", margin_csv("position", tables.by_position));
    write_text(dir / "margin_by_difficulty.csv", margin_csv("difficulty", tables.by_difficulty));
  }
  std::cout << fmt::format("{} questions, {} curve points; outputs in {}\n", pools.size(), curve.size(), dir.string());
  return kOk;
}

int cmd_synth(const Options& opt) {
  if (opt.out.empty()) throw ConfigError("--out is required");
  SyntheticConfig sc;
  sc.num_questions = opt.num;
  sc.seed = opt.seed.value_or(0);
  SyntheticWorld world(sc);
  const auto questions = world.make_questions();
  save_questions(opt.out, questions);
  std::cout << fmt::format("wrote {} questions to {}\n", questions.size(), opt.out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Process reward agent search, baselines, labelling and analysis"};
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Experiment config (JSON)");
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--seed", seed, "Run seed")->each([&](const std::string&) { opt.seed = seed; });
  };
  auto* run_cmd = app.add_subcommand("run", "Run PRA search or a baseline over a dataset");
  common(run_cmd);
  run_cmd->add_option("--method", opt.method, "pra, cot, direct or rag");
  run_cmd->add_flag("--always-search", opt.always_search, "Retrieve before scoring every step");
  auto* label_cmd = app.add_subcommand("label", "Generate reasoning and search labels");
  common(label_cmd);
  label_cmd->add_flag("--always-search", opt.always_search, "Fix every search target to 1");
  auto* sweep_cmd = app.add_subcommand("sweep", "Sweep the search threshold");
  common(sweep_cmd);
  sweep_cmd->add_option("--theta-grid", opt.theta_grid, "Comma-separated thresholds");
  auto* analyze_cmd = app.add_subcommand("analyze", "SC accuracy curve and margin-shift tables");
  common(analyze_cmd);
  analyze_cmd->add_option("--traces", opt.traces, "traces.jsonl from a sampling run");
  analyze_cmd->add_option("--labels", opt.labels, "labels.jsonl from the label command");
  auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic question set");
  synth_cmd->add_option("--out", opt.out, "Output JSONL")->required();
  synth_cmd->add_option("--num", opt.num, "Number of questions");
  synth_cmd->add_option("--seed", seed, "World seed")->each([&](const std::string&) { opt.seed = seed; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(opt);
    if (*label_cmd) return cmd_label(opt);
    if (*sweep_cmd) return cmd_sweep(opt);
    if (*analyze_cmd) return cmd_analyze(opt);
    return cmd_synth(opt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunErrors;
  }
}
