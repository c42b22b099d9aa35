#include "vtlab/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "vtlab/rollout_parser.hpp"
#include "vtlab/util.hpp"

namespace fs = std::filesystem;

namespace vtlab {

namespace {

constexpr uint64_t kSaltRevPrompt = 0x72657670ULL;
constexpr uint64_t kSaltRevRoll = 0x7265766cULL;
constexpr int kFinalWindow = 10;  // trailing steps averaged for summary numbers

// Tracks which keys a section consumed so leftovers can be rejected by path.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  double num(const char* key, double def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }

  int integer(const char* key, int def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    return v.get<int>();
  }

  uint64_t u64(const char* key, uint64_t def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!(v.is_number_integer() && v.get<long long>() >= 0) && !v.is_number_unsigned())
      throw ConfigError(at(key), "expected a non-negative integer");
    return v.get<uint64_t>();
  }

  bool boolean(const char* key, bool def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string str(const char* key, const std::string& def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const char* key, std::vector<int> def) {
    if (!mark(key)) return def;
    const nlohmann::json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(at(key), "expected an array of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  const nlohmann::json* sub(const char* key) {
    if (!mark(key)) return nullptr;
    return &j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!taken_.count(it.key())) throw ConfigError(at(it.key().c_str()), "unknown key");
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  bool mark(const char* key) {
    taken_.insert(key);
    return j_.contains(key);
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> taken_;
};

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string hash_hex(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string formatted(double v) {
  std::string s;
  append_double(s, v);
  return s;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", e.what());
  }
  ExperimentConfig cfg;
  Section root(j, "");
  cfg.name = root.str("name", cfg.name);
  cfg.seed = root.u64("seed", cfg.seed);

  if (const nlohmann::json* s = root.sub("env")) {
    Section sec(*s, "env");
    EnvConfig& e = cfg.env;
    e.length_s = sec.integer("length_s", e.length_s);
    e.alphabet = sec.integer("alphabet", e.alphabet);
    e.event_halfwidth_s = sec.integer("event_halfwidth_s", e.event_halfwidth_s);
    e.noise_p = sec.num("noise_p", e.noise_p);
    e.latency_c0 = sec.num("latency_c0", e.latency_c0);
    e.latency_c1 = sec.num("latency_c1", e.latency_c1);
    e.task_mix_mcq = sec.num("task_mix_mcq", e.task_mix_mcq);
    e.task_mix_open = sec.num("task_mix_open", e.task_mix_open);
    e.task_mix_grounding = sec.num("task_mix_grounding", e.task_mix_grounding);
    e.budget_choices = sec.int_list("budget_choices", e.budget_choices);
    sec.finish();
  }

  if (const nlohmann::json* s = root.sub("policy")) {
    Section sec(*s, "policy");
    PolicyConfig& p = cfg.policy;
    p.prior_strength = sec.num("prior_strength", p.prior_strength);
    p.bias_unit = sec.num("bias_unit", p.bias_unit);
    p.close_bias_factor = sec.num("close_bias_factor", p.close_bias_factor);
    p.cold_start_count = sec.integer("cold_start_count", p.cold_start_count);
    p.cold_start_tool_fraction = sec.num("cold_start_tool_fraction", p.cold_start_tool_fraction);
    p.cold_start_legacy = sec.boolean("cold_start_legacy", p.cold_start_legacy);
    p.cold_start_epochs = sec.integer("cold_start_epochs", p.cold_start_epochs);
    p.cold_start_lr = sec.num("cold_start_lr", p.cold_start_lr);
    sec.finish();
  }

  if (const nlohmann::json* s = root.sub("reward")) {
    Section sec(*s, "reward");
    RewardConfig& r = cfg.reward;
    r.lambda_fmt = sec.num("lambda_fmt", r.lambda_fmt);
    r.lambda_anchor = sec.num("lambda_anchor", r.lambda_anchor);
    r.alpha = sec.num("alpha", r.alpha);
    r.beta = sec.num("beta", r.beta);
    r.gamma = sec.num("gamma", r.gamma);
    r.think_content_min_chars = sec.integer("think_content_min_chars", r.think_content_min_chars);
    r.answer_suffix_mode = sec.boolean("answer_suffix_mode", r.answer_suffix_mode);
    r.tool_bonus_per_call = sec.num("tool_bonus_per_call", r.tool_bonus_per_call);
    r.tool_bonus_cap_calls = sec.integer("tool_bonus_cap_calls", r.tool_bonus_cap_calls);
    r.repeated_window_penalty = sec.num("repeated_window_penalty", r.repeated_window_penalty);
    if (const nlohmann::json* b = sec.sub("base_credits")) {
      Section bc(*b, "reward.base_credits");
      r.base_credits.think_content = bc.num("think_content", r.base_credits.think_content);
      r.base_credits.answer_open = bc.num("answer_open", r.base_credits.answer_open);
      r.base_credits.answer_close = bc.num("answer_close", r.base_credits.answer_close);
      r.base_credits.think_then_tool = bc.num("think_then_tool", r.base_credits.think_then_tool);
      r.base_credits.balanced = bc.num("balanced", r.base_credits.balanced);
      bc.finish();
    }
    sec.finish();
  }

  if (const nlohmann::json* s = root.sub("trainer")) {
    Section sec(*s, "trainer");
    TrainerConfig& t = cfg.trainer;
    t.group_size = sec.integer("group_size", t.group_size);
    t.temperature = sec.num("temperature", t.temperature);
    t.clip_eps = sec.num("clip_eps", t.clip_eps);
    t.lr = sec.num("lr", t.lr);
    t.steps = sec.integer("steps", t.steps);
    t.std_eps = sec.num("std_eps", t.std_eps);
    t.anchoring_enabled = sec.boolean("anchoring_enabled", t.anchoring_enabled);
    t.td_structural_mask = sec.boolean("td_structural_mask", t.td_structural_mask);
    t.prompts_per_step = sec.integer("prompts_per_step", t.prompts_per_step);
    t.dataset_size = sec.integer("dataset_size", t.dataset_size);
    t.dapo_prefilter = sec.boolean("dapo_prefilter", t.dapo_prefilter);
    sec.finish();
  }

  if (const nlohmann::json* s = root.sub("gating")) {
    Section sec(*s, "gating");
    cfg.trainer.gating_enabled = sec.boolean("enabled", cfg.trainer.gating_enabled);
    cfg.trainer.gating_set = sec.int_list("budgets", cfg.trainer.gating_set);
    sec.finish();
  }

  if (const nlohmann::json* s = root.sub("output")) {
    Section sec(*s, "output");
    cfg.output.dir = sec.str("dir", cfg.output.dir);
    cfg.output.checkpoint_interval =
        sec.integer("checkpoint_interval", cfg.output.checkpoint_interval);
    sec.finish();
  }

  root.finish();
  cfg.trainer.seed = cfg.seed;
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return experiment_config_from_json(text);
}

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["name"] = cfg.name;
  j["seed"] = cfg.seed;
  j["env"] = {{"length_s", cfg.env.length_s},
              {"alphabet", cfg.env.alphabet},
              {"event_halfwidth_s", cfg.env.event_halfwidth_s},
              {"noise_p", cfg.env.noise_p},
              {"latency_c0", cfg.env.latency_c0},
              {"latency_c1", cfg.env.latency_c1},
              {"task_mix_mcq", cfg.env.task_mix_mcq},
              {"task_mix_open", cfg.env.task_mix_open},
              {"task_mix_grounding", cfg.env.task_mix_grounding},
              {"budget_choices", cfg.env.budget_choices}};
  j["policy"] = {{"prior_strength", cfg.policy.prior_strength},
                 {"bias_unit", cfg.policy.bias_unit},
                 {"close_bias_factor", cfg.policy.close_bias_factor},
                 {"cold_start_count", cfg.policy.cold_start_count},
                 {"cold_start_tool_fraction", cfg.policy.cold_start_tool_fraction},
                 {"cold_start_legacy", cfg.policy.cold_start_legacy},
                 {"cold_start_epochs", cfg.policy.cold_start_epochs},
                 {"cold_start_lr", cfg.policy.cold_start_lr}};
  j["reward"] = {{"lambda_fmt", cfg.reward.lambda_fmt},
                 {"lambda_anchor", cfg.reward.lambda_anchor},
                 {"alpha", cfg.reward.alpha},
                 {"beta", cfg.reward.beta},
                 {"gamma", cfg.reward.gamma},
                 {"base_credits",
                  {{"think_content", cfg.reward.base_credits.think_content},
                   {"answer_open", cfg.reward.base_credits.answer_open},
                   {"answer_close", cfg.reward.base_credits.answer_close},
                   {"think_then_tool", cfg.reward.base_credits.think_then_tool},
                   {"balanced", cfg.reward.base_credits.balanced}}},
                 {"think_content_min_chars", cfg.reward.think_content_min_chars},
                 {"answer_suffix_mode", cfg.reward.answer_suffix_mode},
                 {"tool_bonus_per_call", cfg.reward.tool_bonus_per_call},
                 {"tool_bonus_cap_calls", cfg.reward.tool_bonus_cap_calls},
                 {"repeated_window_penalty", cfg.reward.repeated_window_penalty}};
  j["trainer"] = {{"group_size", cfg.trainer.group_size},
                  {"temperature", cfg.trainer.temperature},
                  {"clip_eps", cfg.trainer.clip_eps},
                  {"lr", cfg.trainer.lr},
                  {"steps", cfg.trainer.steps},
                  {"std_eps", cfg.trainer.std_eps},
                  {"anchoring_enabled", cfg.trainer.anchoring_enabled},
                  {"td_structural_mask", cfg.trainer.td_structural_mask},
                  {"prompts_per_step", cfg.trainer.prompts_per_step},
                  {"dataset_size", cfg.trainer.dataset_size},
                  {"dapo_prefilter", cfg.trainer.dapo_prefilter}};
  j["gating"] = {{"enabled", cfg.trainer.gating_enabled}, {"budgets", cfg.trainer.gating_set}};
  j["output"] = {{"dir", cfg.output.dir},
                 {"checkpoint_interval", cfg.output.checkpoint_interval}};
  return j.dump();
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, bool force) {
  validate_env_config(cfg.env);
  TrainerConfig tcfg = cfg.trainer;
  tcfg.seed = cfg.seed;
  validate_trainer_config(tcfg);
  if (cfg.output.checkpoint_interval < 0)
    throw ConfigError("output.checkpoint_interval", "must be non-negative");
  if (cfg.output.dir.empty()) throw ConfigError("output.dir", "must not be empty");

  RunArtifacts art;
  art.dir = cfg.output.dir;
  art.metrics_csv = art.dir + "/metrics.csv";
  art.steps_jsonl = art.dir + "/steps.jsonl";
  art.checkpoint_json = art.dir + "/checkpoint.json";
  art.manifest_json = art.dir + "/manifest.json";
  if (!force && fs::exists(art.manifest_json))
    throw std::runtime_error("run_experiment: " + art.manifest_json +
                             " already exists; pass --force to overwrite");
  fs::create_directories(art.dir);

  std::string canonical = experiment_config_to_json(cfg);

  StepObserver observer;
  if (cfg.output.checkpoint_interval > 0) {
    int interval = cfg.output.checkpoint_interval;
    std::string dir = art.dir;
    observer = [interval, dir](int step, const PolicyParams& p, const MetricsRecord&) {
      if ((step + 1) % interval == 0)
        save_policy(p, dir + "/checkpoint_step" + std::to_string(step + 1) + ".json");
    };
  }

  TrainResult result = train_run(tcfg, cfg.env, cfg.reward, cfg.policy, observer);
  art.metrics = std::move(result.metrics);
  art.filter = result.filter;

  write_file(art.metrics_csv, art.metrics.to_csv());
  write_file(art.steps_jsonl, art.metrics.to_jsonl());
  save_policy(result.policy, art.checkpoint_json);

  nlohmann::ordered_json manifest;
  manifest["name"] = cfg.name;
  manifest["seed"] = cfg.seed;
  manifest["config_hash"] = hash_hex(fnv1a(canonical));
  manifest["metrics_schema_version"] = kMetricsSchemaVersion;
  manifest["tool_version"] = std::string(kToolVersion);
  manifest["columns"] = {"step",        "f_tau",          "kappa",
                         "think_closure", "tool_closure", "answer_closure",
                         "legacy_rate", "mean_acc",       "mean_total"};
  manifest["artifacts"] = {{"metrics_csv", "metrics.csv"},
                           {"steps_jsonl", "steps.jsonl"},
                           {"checkpoint", "checkpoint.json"}};
  if (cfg.trainer.dapo_prefilter)
    manifest["filter"] = {{"input_count", art.filter.input_count},
                          {"dropped_long_answer", art.filter.dropped_long_answer},
                          {"dropped_unanimous", art.filter.dropped_unanimous},
                          {"kept", art.filter.kept}};
  manifest["config"] = nlohmann::ordered_json::parse(canonical);
  write_file(art.manifest_json, manifest.dump(2) + "\n");
  return art;
}

std::vector<RunArtifacts> run_ablation(const ExperimentConfig& base, bool force,
                                       std::string* summary_csv_path) {
  struct Cell {
    std::string name;
    bool anchoring;
    bool gating;
    bool td_mask = false;
    double prior = -1.0;  // negative: keep the base prior
  };
  std::vector<Cell> cells;
  for (bool anchoring : {false, true})
    for (bool gating : {false, true})
      cells.push_back({std::string(anchoring ? "anchor-on" : "anchor-off") + "_" +
                           (gating ? "gating-on" : "gating-off"),
                       anchoring, gating});
  cells.push_back({"td-mask-on", true, true, true});
  for (double s : {0.0, 1.0, 2.0})
    cells.push_back({"prior-" + formatted(s), false, false, false, s});

  std::vector<RunArtifacts> out;
  std::string summary = "cell,f_tau,kappa,legacy_rate,mean_acc,mean_total\n";
  for (const Cell& cell : cells) {
    ExperimentConfig cfg = base;
    cfg.name = base.name + "-" + cell.name;
    cfg.output.dir = base.output.dir + "/" + cell.name;
    cfg.trainer.anchoring_enabled = cell.anchoring;
    cfg.trainer.gating_enabled = cell.gating;
    cfg.trainer.td_structural_mask = cell.td_mask;
    if (cell.prior >= 0.0) cfg.policy.prior_strength = cell.prior;
    RunArtifacts art = run_experiment(cfg, force);
    summary += cell.name;
    for (double v : {art.metrics.trailing_mean(&MetricsRecord::f_tau, kFinalWindow),
                     art.metrics.trailing_mean(&MetricsRecord::kappa, kFinalWindow),
                     art.metrics.trailing_mean(&MetricsRecord::legacy_rate, kFinalWindow),
                     art.metrics.trailing_mean(&MetricsRecord::mean_acc, kFinalWindow),
                     art.metrics.trailing_mean(&MetricsRecord::mean_total, kFinalWindow)}) {
      summary.push_back(',');
      append_double(summary, v);
    }
    summary.push_back('\n');
    out.push_back(std::move(art));
  }
  fs::create_directories(base.output.dir);
  std::string path = base.output.dir + "/ablation_summary.csv";
  write_file(path, summary);
  if (summary_csv_path) *summary_csv_path = path;
  return out;
}

ParadoxReport run_paradox_probe(const ExperimentConfig& weak, const ExperimentConfig& strong,
                                bool force, const std::string& report_dir) {
  ExperimentConfig a = weak;
  ExperimentConfig b = strong;
  a.policy.prior_strength = b.policy.prior_strength = 0.0;
  a.name = b.name = "";
  a.output = b.output = OutputConfig{};
  if (experiment_config_to_json(a) != experiment_config_to_json(b))
    throw ConfigError("probe", "configs must differ only in policy.prior_strength");

  RunArtifacts wa = run_experiment(weak, force);
  RunArtifacts sa = run_experiment(strong, force);

  auto arm = [](const std::string& name, const RunArtifacts& art) {
    ParadoxArm p;
    p.name = name;
    p.f_tau = art.metrics.trailing_mean(&MetricsRecord::f_tau, kFinalWindow);
    p.kappa = art.metrics.trailing_mean(&MetricsRecord::kappa, kFinalWindow);
    p.legacy_rate = art.metrics.trailing_mean(&MetricsRecord::legacy_rate, kFinalWindow);
    p.mean_acc = art.metrics.trailing_mean(&MetricsRecord::mean_acc, kFinalWindow);
    return p;
  };

  ParadoxReport rep;
  rep.weak = arm(weak.name, wa);
  rep.strong = arm(strong.name, sa);

  std::string csv = "arm,name,f_tau,kappa,legacy_rate,mean_acc\n";
  for (const auto* p : {&rep.weak, &rep.strong}) {
    csv += (p == &rep.weak) ? "weak," : "strong,";
    csv += p->name;
    for (double v : {p->f_tau, p->kappa, p->legacy_rate, p->mean_acc}) {
      csv.push_back(',');
      append_double(csv, v);
    }
    csv.push_back('\n');
  }
  fs::create_directories(report_dir);
  rep.report_csv = report_dir + "/paradox_report.csv";
  write_file(rep.report_csv, csv);
  return rep;
}

ReversionReport run_reversion_probe(const ExperimentConfig& cfg, int samples) {
  if (samples < 1) throw std::invalid_argument("reversion probe: needs at least one sample");
  validate_env_config(cfg.env);
  PolicyParams policy = build_cold_started_policy(cfg.policy, cfg.env, cfg.seed);
  DecodingConstraints cons;
  cons.think_prefix = cfg.trainer.anchoring_enabled;

  ReversionReport rep;
  rep.samples = samples;
  int counts[4] = {0, 0, 0, 0};  // native@tau, legacy@tau, native@greedy, legacy@greedy
  for (int i = 0; i < samples; ++i) {
    PromptInstance prompt = make_prompt(mix_seed(cfg.seed, kSaltRevPrompt, uint64_t(i)), cfg.env);
    for (int greedy = 0; greedy < 2; ++greedy) {
      double tau = greedy ? 0.0 : cfg.trainer.temperature;
      SampledRollout ro = sample_rollout(policy, prompt, cfg.env, tau, cons,
                                         mix_seed(cfg.seed, kSaltRevRoll, uint64_t(i),
                                                  uint64_t(greedy)));
      ParsedRollout parsed = parse_rollout(ro.text);
      bool native = false;
      bool legacy = false;
      for (const ToolCallRecord& c : parsed.tool_calls) {
        native = native || c.schema == CallSchema::NativeCall;
        legacy = legacy || c.schema == CallSchema::LegacyCode;
      }
      counts[greedy * 2 + 0] += native ? 1 : 0;
      counts[greedy * 2 + 1] += legacy ? 1 : 0;
    }
  }
  rep.native_rate = double(counts[0]) / samples;
  rep.legacy_rate = double(counts[1]) / samples;
  rep.native_rate_greedy = double(counts[2]) / samples;
  rep.legacy_rate_greedy = double(counts[3]) / samples;
  return rep;
}

}  // namespace vtlab
