#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vtlab/env.hpp"

namespace vtlab {

// Structured action vocabulary. Tool opens and answer tokens are indexed by
// window bucket / answer token, giving 43 actions total.
enum Action : int {
  kActThinkOpen = 0,
  kActThinkContent = 1,
  kActThinkClose = 2,
  kActToolCallOpenBase = 3,   // + bucket in [0, kBucketCount)
  kActToolCodeOpenBase = 15,  // + bucket
  kActToolBlockClose = 27,
  kActAnswerOpen = 28,
  kActAnswerTokenBase = 29,  // + token in [0, kBucketCount)
  kActAnswerClose = 41,
  kActStop = 42,
  kActionCount = 43,
};

// Tag-boundary actions; content-free, maskable as a unit.
bool is_structural_action(int action);

enum FeaturePhase : int {
  kPhasePreThink = 0,
  kPhaseInThink = 1,
  kPhasePostThink = 2,
  kPhasePostTool = 3,  // inside a tool block
  kPhaseInAnswer = 4,
  kPhaseCount = 5,
};

// A state feature is (phase, overview-budget index, event bucket hint,
// evidence summary). Evidence is -1 (unknown) or the answer token index the
// current evidence supports, so "known" rows can learn the answer directly.
struct PolicyLayout {
  std::vector<int> budget_values{4, 8, 16, 32, 64};
  static constexpr int kKnownStates = kBucketCount + 1;

  int features() const {
    return kPhaseCount * int(budget_values.size()) * kBucketCount * kKnownStates;
  }
  // Throws std::invalid_argument for a budget outside the layout.
  int budget_index(int budget_n) const;
  int row(int phase, int budget_idx, int bucket, int known) const {
    return ((phase * int(budget_values.size()) + budget_idx) * kBucketCount + bucket) *
               kKnownStates +
           (known + 1);
  }
};

// Fitted logits plus a frozen additive prior. Sampling uses
// softmax((logits + prior_bias) / tau) over the legal actions; cold-start
// fitting and RL updates touch only `logits`, so the prior persists beneath
// whatever the fit installs and temperature can re-expose it.
struct PolicyParams {
  PolicyLayout layout;
  double prior_strength = 0.0;
  double bias_unit = 1.0;
  double close_bias_factor = 0.6;
  std::vector<double> logits;      // features x actions, row-major
  std::vector<double> prior_bias;  // per action

  double& logit(int row, int action) { return logits[size_t(row) * kActionCount + action]; }
  double logit(int row, int action) const { return logits[size_t(row) * kActionCount + action]; }
  double score(int row, int action) const { return logit(row, action) + prior_bias[size_t(action)]; }
};

struct DecodingConstraints {
  bool think_prefix = true;  // force the first action to open the think span
  int max_actions = 64;
  int max_turns = 2;  // 1: no tool turn allowed; 2: one tool turn then answer
};

struct StepRecord {
  int row = 0;
  int action = 0;
  std::vector<int> legal;  // legal action ids at this step, ascending
  double logprob = 0.0;    // under the sampling policy at sampling temperature
  bool forced = false;     // constrained prefix step: logprob 0, no gradient
};

struct SampledRollout {
  std::string text;
  std::vector<StepRecord> steps;
};

// prior_strength >= 0 scales the bias toward legacy code blocks and away
// from closing think/answer tags. Deterministic in seed.
PolicyParams init_policy(double prior_strength, uint64_t seed, PolicyLayout layout = {},
                         double bias_unit = 1.0, double close_bias_factor = 0.6);

// The phase machine shared by sampling, replay scoring, cold-start fitting,
// and trace generation. Applying an action renders its text; opening the
// answer dispatches every closed tool block and folds the responses into the
// evidence summary before the answer token is chosen.
class RolloutMachine {
 public:
  RolloutMachine(const PolicyLayout& layout, const PromptInstance& prompt,
                 const EnvConfig& env_cfg, const DecodingConstraints& constraints);

  bool done() const { return pos_ == Pos::Done; }
  int row() const;
  const std::vector<int>& legal() const { return legal_; }
  // Throws std::invalid_argument on an illegal action.
  void apply(int action);
  const std::string& text() const { return text_; }
  int known() const { return known_; }
  int steps_taken() const { return steps_; }

 private:
  enum class Pos { Text, InBlockNative, InBlockLegacy, InAnswer, Done };
  enum class ThinkState { NotOpened, Open, Closed };

  void recompute_legal();
  void dispatch_now();
  void update_known(const ToolResponse& resp);

  const PolicyLayout& layout_;
  const PromptInstance& prompt_;
  const EnvConfig& env_;
  DecodingConstraints constraints_;
  int budget_idx_ = 0;
  Pos pos_ = Pos::Text;
  ThinkState think_ = ThinkState::NotOpened;
  ThinkState resume_think_ = ThinkState::NotOpened;  // where a legacy block returns
  int block_bucket_ = 0;
  int known_ = -1;
  int answer_tokens_ = 0;
  int content_count_ = 0;
  int steps_ = 0;
  std::array<bool, kBucketCount> bucket_opened_{};  // a window is cropped at most once
  std::string text_;
  std::vector<ToolCallRecord> pending_calls_;  // closed blocks awaiting dispatch
  std::vector<int> legal_;
};

// Log-probabilities over `legal` under softmax((w[row*actions+a] + bias[a]) / tau).
// The one softmax kernel shared by sampling, replay scoring, cold-start
// fitting, and trainer gradients, so ratios across modules are bit-identical.
// bias may be null (all zeros). Requires tau > 0.
std::vector<double> table_logprobs(const double* w, int actions, const double* bias, double tau,
                                   int row, const std::vector<int>& legal);

// Log-probability of `action` under softmax(score/tau) restricted to
// `legal`. tau = 0 denotes greedy decoding and scores 0 for the argmax.
double step_logprob(const PolicyParams& policy, int row, const std::vector<int>& legal,
                    int action, double tau);

// Same distribution with structural actions removed from the support; the
// chosen action must itself be non-structural.
double step_logprob_masked(const PolicyParams& policy, int row, const std::vector<int>& legal,
                           int action, double tau);

SampledRollout sample_rollout(const PolicyParams& policy, const PromptInstance& prompt,
                              const EnvConfig& env_cfg, double tau,
                              const DecodingConstraints& constraints, uint64_t seed);

// Exact recomputation of per-step records for a given action sequence;
// matches sample-time logprobs bit-for-bit for the sampling policy.
// Throws std::invalid_argument on a phase-illegal sequence.
std::vector<StepRecord> logprob_of(const PolicyParams& policy, const PromptInstance& prompt,
                                   const EnvConfig& env_cfg, const std::vector<int>& actions,
                                   double tau, const DecodingConstraints& constraints);

struct ColdStartTrace {
  PromptInstance prompt;
  std::vector<int> actions;
};

struct TraceGenOptions {
  int count = 128;
  double tool_fraction = 0.65;  // tool-using share among already-solvable prompts
  bool legacy_schema = false;   // emit legacy code blocks instead of native calls
};

// Well-formed demonstrations on a noiseless copy of the environment. Prompts
// whose overview misses the event always use tools; the rest mix directly
// answered and tool-using traces.
std::vector<ColdStartTrace> generate_cold_start_traces(const EnvConfig& env_cfg,
                                                       const TraceGenOptions& opts, uint64_t seed,
                                                       const PolicyLayout& layout = {});

// Full-batch cross-entropy fit of `logits` to the traces at temperature 1;
// prior_bias is untouched. Throws on a phase-illegal trace.
void cold_start_fit(PolicyParams& policy, const std::vector<ColdStartTrace>& traces,
                    const EnvConfig& env_cfg, int epochs, double lr);

// Everything needed to reproduce a starting policy: prior shape plus the
// cold-start demonstration fit that runs before any RL step.
struct PolicyConfig {
  double prior_strength = 0.0;
  double bias_unit = 1.0;
  double close_bias_factor = 0.6;
  int cold_start_count = 128;
  double cold_start_tool_fraction = 0.65;
  bool cold_start_legacy = false;
  int cold_start_epochs = 40;
  double cold_start_lr = 0.5;
};

// init_policy + trace generation + cold_start_fit, all derived from `seed`.
PolicyParams build_cold_started_policy(const PolicyConfig& cfg, const EnvConfig& env_cfg,
                                       uint64_t seed, const PolicyLayout& layout = {});

void save_policy(const PolicyParams& policy, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace vtlab
