#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vtlab/env.hpp"
#include "vtlab/experiment.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/rollout_parser.hpp"
#include "vtlab/token_budget.hpp"
#include "vtlab/trace_convert.hpp"
#include "vtlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace vtlab;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out;
  bool force = false;
};

ExperimentConfig resolve_config(const GlobalOpts& g) {
  ExperimentConfig cfg =
      g.config_path.empty() ? ExperimentConfig{} : load_experiment_config(g.config_path);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.trainer.seed = *g.seed;
  }
  if (!g.out.empty()) cfg.output.dir = g.out;
  return cfg;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string fmt(double v) {
  std::string s;
  append_double(s, v);
  return s;
}

const char* schema_name(CallSchema s) {
  switch (s) {
    case CallSchema::NativeCall: return "native_call";
    case CallSchema::LegacyCode: return "legacy_code";
    case CallSchema::Malformed: return "malformed";
  }
  return "malformed";
}

nlohmann::ordered_json prompt_to_json(const PromptInstance& p) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(task_kind_name(p.kind));
  j["question"] = p.question;
  j["options"] = p.options;
  j["correct_option"] = p.correct_option;
  nlohmann::ordered_json gt;
  gt["text"] = p.ground_truth.text;
  if (p.ground_truth.window)
    gt["window"] = {{"start", p.ground_truth.window->start},
                    {"end", p.ground_truth.window->end}};
  j["ground_truth"] = std::move(gt);
  j["budget_n"] = p.budget_n;
  j["bucket_hint"] = p.bucket_hint;
  j["video"] = {{"length_s", p.video.length_s},
                {"alphabet", p.video.alphabet},
                {"seed", p.video.seed},
                {"event_time", p.video.event_time},
                {"event_symbol", p.video.event_symbol},
                {"gt_window", {{"start", p.video.gt_window.start},
                               {"end", p.video.gt_window.end}}},
                {"symbols", p.video.symbols}};
  return j;
}

std::string load_rollout_text(const std::string& text, const std::string& file) {
  if (!text.empty() && !file.empty())
    throw std::invalid_argument("pass either --text or --file, not both");
  if (!file.empty()) return read_text_file(file);
  if (!text.empty()) return text;
  throw std::invalid_argument("pass --text or --file");
}

int cmd_train(const GlobalOpts& g) {
  ExperimentConfig cfg = resolve_config(g);
  RunArtifacts art = run_experiment(cfg, g.force);
  std::cout << "run " << cfg.name << " complete\n"
            << "  metrics:    " << art.metrics_csv << "\n"
            << "  steps:      " << art.steps_jsonl << "\n"
            << "  checkpoint: " << art.checkpoint_json << "\n"
            << "  manifest:   " << art.manifest_json << "\n";
  if (cfg.trainer.dapo_prefilter)
    std::cout << "  prefilter: kept " << art.filter.kept << "/" << art.filter.input_count
              << " (long-answer " << art.filter.dropped_long_answer << ", unanimous "
              << art.filter.dropped_unanimous << ")\n";
  std::cout << "  final (trailing 10): f_tau "
            << fmt(art.metrics.trailing_mean(&MetricsRecord::f_tau, 10)) << ", kappa "
            << fmt(art.metrics.trailing_mean(&MetricsRecord::kappa, 10)) << ", legacy_rate "
            << fmt(art.metrics.trailing_mean(&MetricsRecord::legacy_rate, 10)) << ", mean_acc "
            << fmt(art.metrics.trailing_mean(&MetricsRecord::mean_acc, 10)) << "\n";
  return 0;
}

int cmd_ablate(const GlobalOpts& g) {
  ExperimentConfig cfg = resolve_config(g);
  std::string summary;
  std::vector<RunArtifacts> cells = run_ablation(cfg, g.force, &summary);
  std::cout << "ablation complete: " << cells.size() << " cells\n  summary: " << summary << "\n";
  return 0;
}

int cmd_probe_paradox(const GlobalOpts& g, const std::string& weak_path,
                      const std::string& strong_path) {
  ExperimentConfig weak;
  ExperimentConfig strong;
  std::string report_dir;
  if (!weak_path.empty() || !strong_path.empty()) {
    if (weak_path.empty() || strong_path.empty())
      throw std::invalid_argument("probe-paradox needs both --weak-config and --strong-config");
    weak = load_experiment_config(weak_path);
    strong = load_experiment_config(strong_path);
    if (g.seed) {
      weak.seed = strong.seed = *g.seed;
      weak.trainer.seed = strong.trainer.seed = *g.seed;
    }
    report_dir = !g.out.empty() ? g.out
                                : fs::path(strong.output.dir).parent_path().string();
    if (report_dir.empty()) report_dir = ".";
  } else {
    ExperimentConfig base = resolve_config(g);
    weak = base;
    weak.name = base.name + "-weak";
    weak.policy.prior_strength = 0.0;
    weak.output.dir = base.output.dir + "/weak";
    strong = base;
    strong.name = base.name + "-strong";
    strong.policy.prior_strength =
        base.policy.prior_strength > 0.0 ? base.policy.prior_strength : 2.0;
    strong.output.dir = base.output.dir + "/strong";
    report_dir = base.output.dir;
  }
  ParadoxReport rep = run_paradox_probe(weak, strong, g.force, report_dir);
  std::cout << "paradox probe complete\n  report: " << rep.report_csv << "\n"
            << "  weak   (" << rep.weak.name << "): f_tau " << fmt(rep.weak.f_tau) << ", kappa "
            << fmt(rep.weak.kappa) << ", legacy_rate " << fmt(rep.weak.legacy_rate) << "\n"
            << "  strong (" << rep.strong.name << "): f_tau " << fmt(rep.strong.f_tau)
            << ", kappa " << fmt(rep.strong.kappa) << ", legacy_rate "
            << fmt(rep.strong.legacy_rate) << "\n";
  return 0;
}

int cmd_probe_reversion(const GlobalOpts& g, int samples) {
  ExperimentConfig cfg = resolve_config(g);
  ReversionReport rep = run_reversion_probe(cfg, samples);
  nlohmann::ordered_json j;
  j["samples"] = rep.samples;
  j["cold_start_schema"] = cfg.policy.cold_start_legacy ? "legacy_code" : "native_call";
  j["prior_strength"] = cfg.policy.prior_strength;
  j["temperature"] = cfg.trainer.temperature;
  j["native_rate"] = rep.native_rate;
  j["legacy_rate"] = rep.legacy_rate;
  j["native_rate_greedy"] = rep.native_rate_greedy;
  j["legacy_rate_greedy"] = rep.legacy_rate_greedy;
  std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    write_text_file(g.out + "/reversion_report.json", text);
  }
  return 0;
}

int cmd_parse(const std::string& text_opt, const std::string& file_opt) {
  std::string text = load_rollout_text(text_opt, file_opt);
  ParsedRollout r = parse_rollout(text);
  nlohmann::ordered_json j;
  j["think_opened"] = r.think_opened;
  j["think_closed"] = r.think_closed;
  j["think_content_length"] = r.think_content_length;
  j["answer_opened"] = r.answer_opened;
  j["answer_closed"] = r.answer_closed;
  if (r.answer_text) j["answer_text"] = *r.answer_text;
  nlohmann::ordered_json calls = nlohmann::ordered_json::array();
  for (const ToolCallRecord& c : r.tool_calls)
    calls.push_back({{"name", c.name},
                     {"video_ref", c.video_ref},
                     {"start_time", c.start_time},
                     {"end_time", c.end_time},
                     {"schema", schema_name(c.schema)}});
  j["tool_calls"] = std::move(calls);
  j["think_before_tools"] = r.think_before_tools;
  j["answer_after_think"] = r.answer_after_think;
  j["balanced_pairs"] = r.balanced_pairs;
  j["degenerate"] = r.degenerate;
  j["extracted_answer"] = extract_answer(text);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_reward(const GlobalOpts& g, const std::string& text_opt, const std::string& file_opt,
               const std::string& kind_name, const std::string& gt_text,
               std::optional<double> win_start, std::optional<double> win_end) {
  std::string text = load_rollout_text(text_opt, file_opt);
  std::optional<TaskKind> kind = task_kind_from(kind_name);
  if (!kind) throw std::invalid_argument("unknown task kind '" + kind_name + "'");
  GroundTruth gt;
  gt.text = gt_text;
  if (win_start || win_end) {
    if (!win_start || !win_end)
      throw std::invalid_argument("pass both --window-start and --window-end");
    gt.window = TimeWindow{*win_start, *win_end};
  }
  RewardConfig rcfg = resolve_config(g).reward;
  RewardBreakdown b = composite_reward(text, gt, *kind, rcfg);
  nlohmann::ordered_json j;
  j["r_acc"] = b.r_acc;
  j["r_base"] = b.r_base;
  j["r_anchor"] = b.r_anchor;
  j["r_fmt"] = b.r_fmt;
  j["r_tool"] = b.r_tool;
  j["total"] = b.total;
  j["short_circuited"] = b.short_circuited;
  j["extracted_answer"] = extract_answer(text);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_convert(const std::string& input, const std::string& output,
                const std::string& report_path) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + input);
  std::ofstream out(output, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + output + " for writing");
  std::string report = "line,valid,turns,merged_turns,calls,problems\n";
  std::string line;
  int line_no = 0;
  int written = 0;
  int rejected = 0;
  ConvertOptions opts;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::string problems;
    int turns = 0;
    int merged = 0;
    int calls = 0;
    bool valid = false;
    try {
      std::vector<ChatMessage> messages = messages_from_json_line(line);
      std::vector<ChatMessage> prefix;
      for (const ChatMessage& m : messages) {
        if (m.role == "assistant" || m.role == "tool") break;
        prefix.push_back(m);
      }
      SequentialTrace seq = sequential_from_messages(messages);
      turns = int(seq.turns.size());
      calls = turns;
      TraceDiagnostics diag = validate_trace(seq);
      if (!diag.valid) {
        for (const std::string& p : diag.problems) {
          if (!problems.empty()) problems += "; ";
          problems += p;
        }
      } else {
        ParallelTrace par = convert(seq, opts);
        merged = int(par.merged_turns.size());
        TraceDiagnostics out_diag = validate_trace(par);
        if (!out_diag.valid) {
          for (const std::string& p : out_diag.problems) {
            if (!problems.empty()) problems += "; ";
            problems += "converted: " + p;
          }
        } else {
          std::vector<ChatMessage> out_messages = prefix;
          std::vector<ChatMessage> rendered = parallel_to_messages(par);
          out_messages.insert(out_messages.end(), rendered.begin(), rendered.end());
          out << messages_to_json_line(out_messages) << "\n";
          valid = true;
          ++written;
        }
      }
    } catch (const std::invalid_argument& e) {
      problems = e.what();
    }
    if (!valid) ++rejected;
    report += std::to_string(line_no);
    report += valid ? ",1," : ",0,";
    report += std::to_string(turns) + "," + std::to_string(merged) + "," + std::to_string(calls);
    report += ",\"" + problems + "\"\n";
  }
  if (!out) throw std::runtime_error("write failed for " + output);
  if (!report_path.empty()) write_text_file(report_path, report);
  std::cout << "converted " << written << " traces, rejected " << rejected << "\n";
  return 0;
}

int cmd_budget(const GlobalOpts& g, double k_min, double k_max, double k_step) {
  if (!(k_step > 0.0) || k_max < k_min) throw std::invalid_argument("bad budget sweep range");
  TokenBudgetParams params;
  std::string csv = "k,t_seq,t_par,savings\n";
  for (double k = k_min; k <= k_max + 1e-9; k += k_step) {
    csv += fmt(k) + "," + fmt(t_seq(k, params)) + "," + fmt(t_par(k, params)) + "," +
           fmt(budget_savings(k, params)) + "\n";
  }
  if (!g.out.empty())
    write_text_file(g.out, csv);
  else
    std::cout << csv;
  return 0;
}

int cmd_filter(const GlobalOpts& g) {
  ExperimentConfig cfg = resolve_config(g);
  validate_env_config(cfg.env);
  TrainerConfig tcfg = cfg.trainer;
  tcfg.seed = cfg.seed;
  validate_trainer_config(tcfg);
  RewardConfig rcfg = cfg.reward;
  if (!tcfg.anchoring_enabled) rcfg.lambda_anchor = 0.0;
  PolicyParams policy = build_cold_started_policy(cfg.policy, cfg.env, cfg.seed);
  std::vector<PromptInstance> dataset = build_prompt_dataset(tcfg, cfg.env);
  FilterReport report;
  std::vector<PromptInstance> kept = dapo_prefilter(dataset, policy, tcfg, cfg.env, rcfg, report);
  nlohmann::ordered_json j;
  j["input_count"] = report.input_count;
  j["dropped_long_answer"] = report.dropped_long_answer;
  j["dropped_unanimous"] = report.dropped_unanimous;
  j["kept"] = report.kept;
  std::cout << j.dump(2) << "\n";
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    write_text_file(g.out + "/filter_report.json", j.dump(2) + "\n");
    std::string lines;
    for (const PromptInstance& p : kept) lines += prompt_to_json(p).dump() + "\n";
    write_text_file(g.out + "/kept_prompts.jsonl", lines);
  }
  return 0;
}

int cmd_gen_data(const GlobalOpts& g, const std::string& kind, int count, int min_turns,
                 int max_turns, double refine_p) {
  ExperimentConfig cfg = resolve_config(g);
  std::string dir = g.out.empty() ? std::string("data") : g.out;
  fs::create_directories(dir);
  if (kind == "prompts") {
    validate_env_config(cfg.env);
    std::string lines;
    for (int i = 0; i < count; ++i) {
      PromptInstance p = make_prompt(mix_seed(cfg.seed, 0x70726f6dULL, uint64_t(i)), cfg.env);
      lines += prompt_to_json(p).dump() + "\n";
    }
    std::string path = dir + "/prompts.jsonl";
    write_text_file(path, lines);
    std::cout << "wrote " << count << " prompts to " << path << "\n";
    return 0;
  }
  if (kind == "traces") {
    TraceCorpusConfig tc;
    tc.traces = count;
    tc.min_turns = min_turns;
    tc.max_turns = max_turns;
    tc.refine_p = refine_p;
    tc.seed = cfg.seed;
    std::string lines;
    for (const SequentialTrace& trace : generate_sequential_corpus(tc))
      lines += messages_to_json_line(sequential_to_messages(trace)) + "\n";
    std::string path = dir + "/traces.jsonl";
    write_text_file(path, lines);
    std::cout << "wrote " << count << " traces to " << path << "\n";
    return 0;
  }
  throw std::invalid_argument("gen-data kind must be 'prompts' or 'traces'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale lab for parallel video-tool RL"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--config", g.config_path, "experiment config JSON");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "override the output location");
  app.add_flag("--force", g.force, "overwrite existing run artifacts");

  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  CLI::App* ablate = app.add_subcommand("ablate", "run the ablation grid");

  CLI::App* paradox = app.add_subcommand("probe-paradox", "weak vs strong prior comparison");
  std::string weak_path;
  std::string strong_path;
  paradox->add_option("--weak-config", weak_path, "config for the weak-prior arm");
  paradox->add_option("--strong-config", strong_path, "config for the strong-prior arm");

  CLI::App* reversion = app.add_subcommand("probe-reversion", "schema reversion probe");
  int samples = 1000;
  reversion->add_option("--samples", samples, "rollouts to sample");

  CLI::App* parse_cmd = app.add_subcommand("parse", "parse one rollout transcript");
  std::string parse_text;
  std::string parse_file;
  parse_cmd->add_option("--text", parse_text, "transcript text");
  parse_cmd->add_option("--file", parse_file, "transcript file");

  CLI::App* reward_cmd = app.add_subcommand("reward", "score one rollout transcript");
  std::string reward_text;
  std::string reward_file;
  std::string kind_name = "mcq";
  std::string gt_text;
  std::optional<double> win_start;
  std::optional<double> win_end;
  reward_cmd->add_option("--text", reward_text, "transcript text");
  reward_cmd->add_option("--file", reward_file, "transcript file");
  reward_cmd->add_option("--kind", kind_name, "mcq | open_ended | temporal_grounding");
  reward_cmd->add_option("--gt", gt_text, "ground-truth text (MCQ letter / reference phrase)");
  reward_cmd->add_option("--window-start", win_start, "ground-truth window start (grounding)");
  reward_cmd->add_option("--window-end", win_end, "ground-truth window end (grounding)");

  CLI::App* convert_cmd = app.add_subcommand("convert", "sequential JSONL -> parallel JSONL");
  std::string conv_in;
  std::string conv_out;
  std::string conv_report;
  convert_cmd->add_option("--input", conv_in, "input JSONL")->required();
  convert_cmd->add_option("--output", conv_out, "output JSONL")->required();
  convert_cmd->add_option("--report", conv_report, "per-trace diagnostics CSV");

  CLI::App* budget_cmd = app.add_subcommand("budget", "token budget sweep CSV");
  double k_min = 1.0;
  double k_max = 8.0;
  double k_step = 0.5;
  budget_cmd->add_option("--k-min", k_min, "sweep start");
  budget_cmd->add_option("--k-max", k_max, "sweep end");
  budget_cmd->add_option("--k-step", k_step, "sweep step");

  CLI::App* filter_cmd = app.add_subcommand("filter", "run the dataset prefilter once");

  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate synthetic datasets");
  std::string gen_kind = "prompts";
  int gen_count = 256;
  int gen_min_turns = 1;
  int gen_max_turns = 6;
  double gen_refine_p = 0.3;
  gen_cmd->add_option("--kind", gen_kind, "prompts | traces");
  gen_cmd->add_option("--count", gen_count, "records to generate");
  gen_cmd->add_option("--min-turns", gen_min_turns, "traces: minimum turns");
  gen_cmd->add_option("--max-turns", gen_max_turns, "traces: maximum turns");
  gen_cmd->add_option("--refine-p", gen_refine_p, "traces: refinement probability");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(g);
    if (*ablate) return cmd_ablate(g);
    if (*paradox) return cmd_probe_paradox(g, weak_path, strong_path);
    if (*reversion) return cmd_probe_reversion(g, samples);
    if (*parse_cmd) return cmd_parse(parse_text, parse_file);
    if (*reward_cmd)
      return cmd_reward(g, reward_text, reward_file, kind_name, gt_text, win_start, win_end);
    if (*convert_cmd) return cmd_convert(conv_in, conv_out, conv_report);
    if (*budget_cmd) return cmd_budget(g, k_min, k_max, k_step);
    if (*filter_cmd) return cmd_filter(g);
    if (*gen_cmd)
      return cmd_gen_data(g, gen_kind, gen_count, gen_min_turns, gen_max_turns, gen_refine_p);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
