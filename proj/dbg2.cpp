#include <cstdio>

#include "vtlab/env.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/rollout_parser.hpp"
#include "vtlab/trainer.hpp"
#include "vtlab/util.hpp"

using namespace vtlab;

int main() {
  EnvConfig env;
  env.noise_p = 0.3;
  env.task_mix_grounding = 0.0;
  PolicyConfig pcfg;
  pcfg.prior_strength = 2.0;
  pcfg.cold_start_count = 4096;
  pcfg.cold_start_epochs = 40;
  RewardConfig rcfg;
  rcfg.lambda_anchor = 0.0;
  rcfg.tool_bonus_per_call = -0.05;
  PolicyParams pol = build_cold_started_policy(pcfg, env, 1);
  DecodingConstraints dc;
  dc.think_prefix = false;

  // Within-group covariance between native-call count and advantage at n=64.
  double cov_sum = 0.0;
  int groups = 0;
  double tooled_reward = 0.0, untooled_reward = 0.0;
  long long tooled_n = 0, untooled_n = 0;
  double tooled_acc = 0.0, untooled_acc = 0.0;
  double tooled_fmt = 0.0, untooled_fmt = 0.0;
  for (uint64_t p = 0; p < 200; ++p) {
    PromptInstance prompt = make_prompt(mix_seed(42, p), env);
    prompt.budget_n = 64;
    std::vector<double> rewards;
    std::vector<int> calls;
    for (int g = 0; g < 8; ++g) {
      SampledRollout ro = sample_rollout(pol, prompt, env, 0.7, dc, mix_seed(7, p, uint64_t(g)));
      RewardBreakdown br = composite_reward(ro.text, prompt, rcfg);
      ParsedRollout pr = parse_rollout(ro.text);
      int nat = 0;
      for (const ToolCallRecord& rec : pr.tool_calls)
        if (rec.schema == CallSchema::NativeCall) ++nat;
      rewards.push_back(br.total);
      calls.push_back(nat);
      if (nat > 0) {
        tooled_reward += br.total;
        tooled_acc += br.r_acc;
        tooled_fmt += br.r_fmt;
        ++tooled_n;
      } else {
        untooled_reward += br.total;
        untooled_acc += br.r_acc;
        untooled_fmt += br.r_fmt;
        ++untooled_n;
      }
    }
    std::vector<double> adv = group_advantages(rewards, 1e-6);
    double mc = 0.0;
    for (int c : calls) mc += c;
    mc /= 8.0;
    double cv = 0.0;
    for (int g = 0; g < 8; ++g) cv += adv[size_t(g)] * (calls[size_t(g)] - mc);
    cov_sum += cv / 8.0;
    ++groups;
  }
  std::printf("groups=%d cov(calls, adv)=%g\n", groups, cov_sum / groups);
  std::printf("tooled:   n=%lld reward=%.4f acc=%.4f fmt=%.4f\n", tooled_n,
              tooled_reward / double(tooled_n), tooled_acc / double(tooled_n),
              tooled_fmt / double(tooled_n));
  std::printf("untooled: n=%lld reward=%.4f acc=%.4f fmt=%.4f\n", untooled_n,
              untooled_reward / double(untooled_n), untooled_acc / double(untooled_n),
              untooled_fmt / double(untooled_n));
  return 0;
}
