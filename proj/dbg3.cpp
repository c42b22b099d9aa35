#include <cstdio>

#include "vtlab/env.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/rollout_parser.hpp"
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

  long long wf_t = 0, br_t = 0, wf_u = 0, br_u = 0;
  double acc_wf_t = 0, acc_wf_u = 0, tot_wf_t = 0, tot_wf_u = 0;
  int printed = 0;
  for (uint64_t p = 0; p < 400; ++p) {
    PromptInstance prompt = make_prompt(mix_seed(42, p), env);
    prompt.budget_n = 64;
    for (int g = 0; g < 4; ++g) {
      SampledRollout ro = sample_rollout(pol, prompt, env, 0.7, dc, mix_seed(7, p, uint64_t(g)));
      RewardBreakdown br = composite_reward(ro.text, prompt, rcfg);
      ParsedRollout pr = parse_rollout(ro.text);
      int nat = 0;
      bool mal = false;
      for (const ToolCallRecord& rec : pr.tool_calls) {
        if (rec.schema == CallSchema::NativeCall) ++nat;
        if (rec.schema == CallSchema::Malformed) mal = true;
      }
      bool wf = pr.think_opened && pr.think_closed && pr.answer_opened && pr.answer_closed && !mal;
      if (nat > 0) {
        if (wf) { ++wf_t; acc_wf_t += br.r_acc; tot_wf_t += br.total; } else ++br_t;
      } else {
        if (wf) { ++wf_u; acc_wf_u += br.r_acc; tot_wf_u += br.total; } else {
          ++br_u;
          if (printed < 2) { std::printf("--- broken untooled ---\n%s\n---\n", ro.text.c_str()); ++printed; }
        }
      }
    }
  }
  std::printf("tooled:   wf=%lld broken=%lld  acc|wf=%.4f total|wf=%.4f\n", wf_t, br_t,
              acc_wf_t / double(wf_t), tot_wf_t / double(wf_t));
  std::printf("untooled: wf=%lld broken=%lld  acc|wf=%.4f total|wf=%.4f\n", wf_u, br_u,
              acc_wf_u / double(wf_u), tot_wf_u / double(wf_u));
  return 0;
}
