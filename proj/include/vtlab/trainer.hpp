#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vtlab/env.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/util.hpp"

namespace vtlab {

struct TrainerConfig {
  int group_size = 8;
  double temperature = 0.7;
  double clip_eps = 0.2;
  double lr = 0.05;
  int steps = 0;
  double std_eps = 1e-6;
  bool gating_enabled = false;
  std::vector<int> gating_set = {4, 8, 16, 32, 64};
  bool anchoring_enabled = false;  // enables the forced think prefix and the anchor term
  bool td_structural_mask = false;
  int prompts_per_step = 8;
  int dataset_size = 512;      // only used when dapo_prefilter is on
  bool dapo_prefilter = false;
  uint64_t seed = 1;
};

void validate_trainer_config(const TrainerConfig& cfg);

// Per-rollout budget. Gating on: uniform over gating_set. Gating off: the
// full budget 64, which saturates visibility on the training clips.
int sample_budget(bool gating_enabled, const std::vector<int>& gating_set, Rng& rng);

// Group-relative advantages: (r_i - mean) / (population std + std_eps).
// A group whose std falls below std_eps gets exact zeros.
std::vector<double> group_advantages(const std::vector<double>& rewards, double std_eps);

// One scored decision for the surrogate objective. `legal` is the support of
// the softmax at this step and `old_logprob` was computed over that same
// support by the sampling-time policy.
struct SurrogateStep {
  int row = 0;
  int action = 0;
  std::vector<int> legal;
  double old_logprob = 0.0;
};

struct SurrogateRollout {
  std::vector<SurrogateStep> steps;
  double advantage = 0.0;
};

// Sum over rollouts and steps of min(rho * a, clip(rho, 1 - eps, 1 + eps) * a)
// with rho = exp(new_logprob - old_logprob) under the table (w, bias, tau).
// Callers apply their own 1/(G * groups) normalisation.
double clipped_surrogate_loss(const double* w, int actions, const double* bias, double tau,
                              const std::vector<SurrogateRollout>& rollouts, double clip_eps);

// grad += scale * d(loss)/dw. Steps where the clip is active contribute
// nothing; elsewhere the chosen action's softmax gradient is scaled by
// rho * advantage.
void accumulate_clipped_gradient(const double* w, int actions, const double* bias, double tau,
                                 const std::vector<SurrogateRollout>& rollouts, double clip_eps,
                                 double scale, std::vector<double>& grad);

struct GroupRollout {
  PromptInstance prompt;
  std::vector<SampledRollout> rollouts;
  std::vector<RewardBreakdown> breakdowns;
  std::vector<double> advantages;
};

struct MetricsRecord {
  int step = 0;
  double f_tau = 0.0;           // mean r_base clamped to [0, 1]
  double kappa = 0.0;           // mean native tool calls per rollout
  double think_closure = 0.0;
  double tool_closure = 0.0;    // native tool_call family
  double answer_closure = 0.0;
  double legacy_rate = 0.0;     // fraction of rollouts with a legacy code block
  double mean_acc = 0.0;
  double mean_total = 0.0;
  double mean_r_fmt = 0.0;      // unclamped, reported in the JSONL dump only
};

MetricsRecord compute_metrics(const std::vector<std::string>& texts,
                              const std::vector<RewardBreakdown>& breakdowns);

struct MetricsSeries {
  std::vector<MetricsRecord> records;
  // Fixed header: step,f_tau,kappa,think_closure,tool_closure,answer_closure,
  // legacy_rate,mean_acc,mean_total.
  std::string to_csv() const;
  std::string to_jsonl() const;
  // Mean of a column over the trailing `window` records (fewer if shorter).
  double trailing_mean(double MetricsRecord::*field, int window) const;
};

struct FilterReport {
  int input_count = 0;
  int dropped_long_answer = 0;  // open-ended ground truth over 15 words
  int dropped_unanimous = 0;    // all probe rollouts zero-accuracy with one identical total
  int kept = 0;
};

// The deterministic prompt dataset a prefiltering run draws from; a function
// of cfg.seed and cfg.dataset_size only.
std::vector<PromptInstance> build_prompt_dataset(const TrainerConfig& cfg,
                                                 const EnvConfig& env_cfg);

// One-shot dataset filter run before training: drops class (a) prompts on the
// ground-truth length test, then class (b) prompts whose probe group is
// unanimously zero-accuracy with bitwise-identical totals.
std::vector<PromptInstance> dapo_prefilter(const std::vector<PromptInstance>& dataset,
                                           const PolicyParams& policy, const TrainerConfig& cfg,
                                           const EnvConfig& env_cfg,
                                           const RewardConfig& reward_cfg, FilterReport& report);

struct TrainResult {
  MetricsSeries metrics;
  PolicyParams policy;
  FilterReport filter;  // zeros unless dapo_prefilter ran
};

// Called after each step's single policy update.
using StepObserver = std::function<void(int step, const PolicyParams&, const MetricsRecord&)>;

// Cold-start the policy, then run `steps` GRPO updates: sample G rollouts per
// prompt, score them, convert group-relative advantages into one clipped
// policy-gradient update per batch. Metrics are computed on the pre-update
// rollouts. Deterministic in cfg.seed.
TrainResult train_run(const TrainerConfig& cfg, const EnvConfig& env_cfg,
                      const RewardConfig& reward_cfg, const PolicyConfig& policy_cfg,
                      const StepObserver& observer = {});

// Mean accuracy reward of one rollout per prompt at the given temperature and
// tool budget. Prompts are drawn fresh from `seed`.
double evaluate_accuracy(const PolicyParams& policy, const EnvConfig& env_cfg,
                         const RewardConfig& reward_cfg, double tau, bool think_prefix,
                         int num_prompts, int budget_n, uint64_t seed);

}  // namespace vtlab
