#include "vtlab/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "vtlab/rollout_parser.hpp"

namespace vtlab {

namespace {

constexpr uint64_t kSaltTrainPrompt = 0x74707270ULL;
constexpr uint64_t kSaltTrainBudget = 0x74626467ULL;
constexpr uint64_t kSaltTrainRoll = 0x74726f6cULL;
constexpr uint64_t kSaltTrainData = 0x64617461ULL;
constexpr uint64_t kSaltProbe = 0x70726f62ULL;
constexpr uint64_t kSaltEvalPrompt = 0x65767072ULL;
constexpr uint64_t kSaltEvalRoll = 0x6576726fULL;

int word_count(std::string_view s) {
  int n = 0;
  bool in_word = false;
  for (char c : s) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

size_t action_index(const SurrogateStep& st) {
  for (size_t i = 0; i < st.legal.size(); ++i)
    if (st.legal[i] == st.action) return i;
  throw std::invalid_argument("surrogate: action not in its legal set");
}

// Forced steps never reach the objective; under the structural mask, tag
// steps are dropped and the remaining distributions renormalise over the
// non-structural support, old logprobs included, so masked ratios stay 1 at
// the single post-sampling update.
std::vector<SurrogateRollout> build_surrogate(const PolicyParams& policy, const GroupRollout& group,
                                              const TrainerConfig& cfg) {
  std::vector<SurrogateRollout> out;
  out.reserve(group.rollouts.size());
  for (size_t i = 0; i < group.rollouts.size(); ++i) {
    SurrogateRollout sr;
    sr.advantage = group.advantages[i];
    for (const StepRecord& st : group.rollouts[i].steps) {
      if (st.forced) continue;
      if (cfg.td_structural_mask && is_structural_action(st.action)) continue;
      SurrogateStep ss;
      ss.row = st.row;
      ss.action = st.action;
      if (cfg.td_structural_mask) {
        for (int a : st.legal)
          if (!is_structural_action(a)) ss.legal.push_back(a);
        ss.old_logprob = step_logprob_masked(policy, st.row, st.legal, st.action, cfg.temperature);
      } else {
        ss.legal = st.legal;
        ss.old_logprob = st.logprob;
      }
      sr.steps.push_back(std::move(ss));
    }
    out.push_back(std::move(sr));
  }
  return out;
}

}  // namespace

void validate_trainer_config(const TrainerConfig& cfg) {
  if (cfg.group_size < 2) throw std::invalid_argument("trainer: group_size must be at least 2");
  if (!(cfg.temperature > 0.0))
    throw std::invalid_argument("trainer: temperature must be positive");
  if (!(cfg.clip_eps > 0.0 && cfg.clip_eps < 1.0))
    throw std::invalid_argument("trainer: clip_eps must lie in (0, 1)");
  if (!(cfg.lr > 0.0)) throw std::invalid_argument("trainer: lr must be positive");
  if (cfg.steps < 0) throw std::invalid_argument("trainer: steps must be non-negative");
  if (!(cfg.std_eps > 0.0)) throw std::invalid_argument("trainer: std_eps must be positive");
  if (cfg.prompts_per_step < 1)
    throw std::invalid_argument("trainer: prompts_per_step must be at least 1");
  if (cfg.gating_enabled) {
    if (cfg.gating_set.empty())
      throw std::invalid_argument("trainer: gating needs a non-empty budget set");
    for (int b : cfg.gating_set)
      if (b < 1) throw std::invalid_argument("trainer: gating budgets must be positive");
  }
  if (cfg.dapo_prefilter && cfg.dataset_size < 1)
    throw std::invalid_argument("trainer: prefilter needs a positive dataset size");
}

int sample_budget(bool gating_enabled, const std::vector<int>& gating_set, Rng& rng) {
  if (!gating_enabled) return 64;
  if (gating_set.empty())
    throw std::invalid_argument("sample_budget: gating needs a non-empty budget set");
  return gating_set[rand_below(rng, gating_set.size())];
}

std::vector<double> group_advantages(const std::vector<double>& rewards, double std_eps) {
  if (rewards.size() < 2)
    throw std::invalid_argument("group_advantages: needs at least two rewards");
  if (!(std_eps > 0.0)) throw std::invalid_argument("group_advantages: std_eps must be positive");
  double n = double(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  double sd = std::sqrt(var);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < std_eps) return out;  // degenerate group: exactly zero signal
  for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / (sd + std_eps);
  return out;
}

double clipped_surrogate_loss(const double* w, int actions, const double* bias, double tau,
                              const std::vector<SurrogateRollout>& rollouts, double clip_eps) {
  double total = 0.0;
  for (const SurrogateRollout& ro : rollouts) {
    double a = ro.advantage;
    if (a == 0.0) continue;
    for (const SurrogateStep& st : ro.steps) {
      std::vector<double> lps = table_logprobs(w, actions, bias, tau, st.row, st.legal);
      double lp_new = lps[action_index(st)];
      double rho = std::exp(lp_new - st.old_logprob);
      double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
      total += std::min(rho * a, clipped * a);
    }
  }
  return total;
}

void accumulate_clipped_gradient(const double* w, int actions, const double* bias, double tau,
                                 const std::vector<SurrogateRollout>& rollouts, double clip_eps,
                                 double scale, std::vector<double>& grad) {
  for (const SurrogateRollout& ro : rollouts) {
    double a = ro.advantage;
    if (a == 0.0) continue;
    for (const SurrogateStep& st : ro.steps) {
      std::vector<double> lps = table_logprobs(w, actions, bias, tau, st.row, st.legal);
      size_t idx = action_index(st);
      double rho = std::exp(lps[idx] - st.old_logprob);
      bool clip_active =
          (a > 0.0 && rho > 1.0 + clip_eps) || (a < 0.0 && rho < 1.0 - clip_eps);
      if (clip_active) continue;
      double coeff = scale * rho * a / tau;
      for (size_t i = 0; i < st.legal.size(); ++i)
        grad[size_t(st.row) * actions + st.legal[i]] -= coeff * std::exp(lps[i]);
      grad[size_t(st.row) * actions + st.action] += coeff;
    }
  }
}

MetricsRecord compute_metrics(const std::vector<std::string>& texts,
                              const std::vector<RewardBreakdown>& breakdowns) {
  if (texts.size() != breakdowns.size())
    throw std::invalid_argument("compute_metrics: texts and breakdowns must align");
  MetricsRecord rec;
  if (texts.empty()) return rec;
  double n = double(texts.size());
  ClosureStats cs = closure_stats(texts);
  rec.think_closure = cs.think.closure_rate;
  rec.tool_closure = cs.tool_call.closure_rate;
  rec.answer_closure = cs.answer.closure_rate;
  rec.kappa = double(cs.native_calls) / n;
  size_t legacy_any = 0;
  for (const std::string& t : texts) {
    ParsedRollout pr = parse_rollout(t);
    for (const ToolCallRecord& c : pr.tool_calls) {
      if (c.schema == CallSchema::LegacyCode) {
        ++legacy_any;
        break;
      }
    }
  }
  rec.legacy_rate = double(legacy_any) / n;
  for (const RewardBreakdown& b : breakdowns) {
    rec.f_tau += std::clamp(b.r_base, 0.0, 1.0);
    rec.mean_acc += b.r_acc;
    rec.mean_total += b.total;
    rec.mean_r_fmt += b.r_fmt;
  }
  rec.f_tau /= n;
  rec.mean_acc /= n;
  rec.mean_total /= n;
  rec.mean_r_fmt /= n;
  return rec;
}

std::string MetricsSeries::to_csv() const {
  std::string out =
      "step,f_tau,kappa,think_closure,tool_closure,answer_closure,legacy_rate,mean_acc,"
      "mean_total\n";
  for (const MetricsRecord& r : records) {
    out += std::to_string(r.step);
    for (double v : {r.f_tau, r.kappa, r.think_closure, r.tool_closure, r.answer_closure,
                     r.legacy_rate, r.mean_acc, r.mean_total}) {
      out.push_back(',');
      append_double(out, v);
    }
    out.push_back('\n');
  }
  return out;
}

std::string MetricsSeries::to_jsonl() const {
  std::string out;
  for (const MetricsRecord& r : records) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["f_tau"] = r.f_tau;
    j["kappa"] = r.kappa;
    j["think_closure"] = r.think_closure;
    j["tool_closure"] = r.tool_closure;
    j["answer_closure"] = r.answer_closure;
    j["legacy_rate"] = r.legacy_rate;
    j["mean_acc"] = r.mean_acc;
    j["mean_total"] = r.mean_total;
    j["mean_r_fmt"] = r.mean_r_fmt;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

double MetricsSeries::trailing_mean(double MetricsRecord::*field, int window) const {
  if (records.empty() || window <= 0) return 0.0;
  size_t n = std::min(records.size(), size_t(window));
  double sum = 0.0;
  for (size_t i = records.size() - n; i < records.size(); ++i) sum += records[i].*field;
  return sum / double(n);
}

std::vector<PromptInstance> build_prompt_dataset(const TrainerConfig& cfg,
                                                 const EnvConfig& env_cfg) {
  std::vector<PromptInstance> out;
  out.reserve(size_t(std::max(cfg.dataset_size, 0)));
  for (int i = 0; i < cfg.dataset_size; ++i)
    out.push_back(make_prompt(mix_seed(cfg.seed, kSaltTrainData, uint64_t(i)), env_cfg));
  return out;
}

std::vector<PromptInstance> dapo_prefilter(const std::vector<PromptInstance>& dataset,
                                           const PolicyParams& policy, const TrainerConfig& cfg,
                                           const EnvConfig& env_cfg,
                                           const RewardConfig& reward_cfg, FilterReport& report) {
  validate_trainer_config(cfg);
  report = FilterReport{};
  report.input_count = int(dataset.size());
  DecodingConstraints cons;
  cons.think_prefix = cfg.anchoring_enabled;
  std::vector<PromptInstance> kept;
  kept.reserve(dataset.size());
  for (size_t idx = 0; idx < dataset.size(); ++idx) {
    const PromptInstance& prompt = dataset[idx];
    if (prompt.kind == TaskKind::OpenEnded && word_count(prompt.ground_truth.text) > 15) {
      ++report.dropped_long_answer;
      continue;
    }
    bool all_zero = true;
    bool identical = true;
    double first_total = 0.0;
    for (int g = 0; g < cfg.group_size; ++g) {
      SampledRollout ro =
          sample_rollout(policy, prompt, env_cfg, cfg.temperature, cons,
                         mix_seed(cfg.seed, kSaltProbe, uint64_t(idx), uint64_t(g)));
      RewardBreakdown rb = composite_reward(ro.text, prompt, reward_cfg);
      if (rb.r_acc != 0.0) all_zero = false;
      if (g == 0)
        first_total = rb.total;
      else if (rb.total != first_total)
        identical = false;
    }
    if (all_zero && identical) {
      ++report.dropped_unanimous;
      continue;
    }
    kept.push_back(prompt);
  }
  report.kept = int(kept.size());
  return kept;
}

TrainResult train_run(const TrainerConfig& cfg, const EnvConfig& env_cfg,
                      const RewardConfig& reward_cfg, const PolicyConfig& policy_cfg,
                      const StepObserver& observer) {
  validate_trainer_config(cfg);
  validate_env_config(env_cfg);
  TrainResult result;
  result.policy = build_cold_started_policy(policy_cfg, env_cfg, cfg.seed);
  PolicyParams& policy = result.policy;

  RewardConfig rcfg = reward_cfg;
  if (!cfg.anchoring_enabled) rcfg.lambda_anchor = 0.0;
  DecodingConstraints cons;
  cons.think_prefix = cfg.anchoring_enabled;

  std::vector<PromptInstance> dataset;
  if (cfg.dapo_prefilter) {
    dataset = dapo_prefilter(build_prompt_dataset(cfg, env_cfg), policy, cfg, env_cfg, rcfg,
                             result.filter);
    if (dataset.empty()) throw std::runtime_error("train_run: prefilter removed every prompt");
  }

  const int G = cfg.group_size;
  std::vector<double> grad(policy.logits.size(), 0.0);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::string> texts;
    std::vector<RewardBreakdown> breakdowns;
    texts.reserve(size_t(cfg.prompts_per_step) * G);
    breakdowns.reserve(size_t(cfg.prompts_per_step) * G);
    std::vector<GroupRollout> groups;
    groups.reserve(size_t(cfg.prompts_per_step));
    for (int slot = 0; slot < cfg.prompts_per_step; ++slot) {
      GroupRollout group;
      if (cfg.dapo_prefilter)
        group.prompt =
            dataset[(size_t(step) * cfg.prompts_per_step + size_t(slot)) % dataset.size()];
      else
        group.prompt = make_prompt(
            mix_seed(cfg.seed, kSaltTrainPrompt, uint64_t(step), uint64_t(slot)), env_cfg);
      Rng brng(mix_seed(cfg.seed, kSaltTrainBudget, uint64_t(step), uint64_t(slot)));
      group.prompt.budget_n = sample_budget(cfg.gating_enabled, cfg.gating_set, brng);
      std::vector<double> rewards(size_t(G), 0.0);
      for (int g = 0; g < G; ++g) {
        SampledRollout ro = sample_rollout(
            policy, group.prompt, env_cfg, cfg.temperature, cons,
            mix_seed(cfg.seed, kSaltTrainRoll, uint64_t(step), uint64_t(slot), uint64_t(g)));
        RewardBreakdown rb = composite_reward(ro.text, group.prompt, rcfg);
        rewards[size_t(g)] = rb.total;
        texts.push_back(ro.text);
        breakdowns.push_back(rb);
        group.rollouts.push_back(std::move(ro));
        group.breakdowns.push_back(rb);
      }
      group.advantages = group_advantages(rewards, cfg.std_eps);
      groups.push_back(std::move(group));
    }

    MetricsRecord rec = compute_metrics(texts, breakdowns);
    rec.step = step;
    result.metrics.records.push_back(rec);

    // One clipped update per batch; ratios sit at 1 because the sampling
    // policy is still the current policy.
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const GroupRollout& group : groups) {
      std::vector<SurrogateRollout> surrogate = build_surrogate(policy, group, cfg);
      accumulate_clipped_gradient(policy.logits.data(), kActionCount, policy.prior_bias.data(),
                                  cfg.temperature, surrogate, cfg.clip_eps, 1.0, grad);
    }
    double scale = cfg.lr / double(size_t(G) * cfg.prompts_per_step);
    for (size_t i = 0; i < grad.size(); ++i) policy.logits[i] += scale * grad[i];

    if (observer) observer(step, policy, rec);
  }
  return result;
}

double evaluate_accuracy(const PolicyParams& policy, const EnvConfig& env_cfg,
                         const RewardConfig& reward_cfg, double tau, bool think_prefix,
                         int num_prompts, int budget_n, uint64_t seed) {
  if (num_prompts < 1) throw std::invalid_argument("evaluate_accuracy: needs prompts");
  DecodingConstraints cons;
  cons.think_prefix = think_prefix;
  double sum = 0.0;
  for (int i = 0; i < num_prompts; ++i) {
    PromptInstance prompt = make_prompt(mix_seed(seed, kSaltEvalPrompt, uint64_t(i)), env_cfg);
    prompt.budget_n = budget_n;
    SampledRollout ro = sample_rollout(policy, prompt, env_cfg, tau, cons,
                                       mix_seed(seed, kSaltEvalRoll, uint64_t(i)));
    sum += composite_reward(ro.text, prompt, reward_cfg).r_acc;
  }
  return sum / double(num_prompts);
}

}  // namespace vtlab
