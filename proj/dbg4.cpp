#include "vtlab/policy.hpp"
#include "vtlab/env.hpp"
#include "vtlab/reward.hpp"
#include "vtlab/util.hpp"
#include <cstdio>
#include <map>
using namespace vtlab;

int main() {
  PolicyParams p = load_policy("/tmp/calib/sv5/checkpoint.json");
  EnvConfig env; env.length_s = 64; env.noise_p = 0.3; env.task_mix_grounding = 0.0;
  RewardConfig rcfg; rcfg.tool_bonus_per_call = -0.05;
  DecodingConstraints cons; cons.think_prefix = false;
  double sum_t = 0, sum_u = 0; long nt = 0, nu = 0;
  double acc_t = 0, acc_u = 0, fmt_t = 0, fmt_u = 0;
  std::map<int,int> call_hist;
  long legacy_only = 0;
  for (int g = 0; g < 300; ++g) {
    PromptInstance pr = make_prompt(7000 + g, env);
    pr.budget_n = 64;
    for (int k = 0; k < 8; ++k) {
      SampledRollout rr = sample_rollout(p, pr, env, 0.7, cons, mix_seed(11, g, k));
      RewardBreakdown b = composite_reward(rr.text, pr, rcfg);
      ParsedRollout parsed = parse_rollout(rr.text);
      int ncalls = 0; bool leg = false;
      for (auto& c : parsed.tool_calls) {
        if (c.schema == CallSchema::NativeCall) ++ncalls;
        if (c.schema == CallSchema::LegacyCode) leg = true;
      }
      ++call_hist[ncalls];
      if (ncalls == 0 && leg) ++legacy_only;
      if (ncalls > 0 || leg) { sum_t += b.total; acc_t += b.r_acc; fmt_t += b.r_fmt; ++nt; }
      else { sum_u += b.total; acc_u += b.r_acc; fmt_u += b.r_fmt; ++nu; }
    }
  }
  printf("tooled   n=%ld total=%.4f acc=%.4f fmt=%.4f\n", nt, sum_t/std::max(1L,nt), acc_t/std::max(1L,nt), fmt_t/std::max(1L,nt));
  printf("untooled n=%ld total=%.4f acc=%.4f fmt=%.4f\n", nu, sum_u/std::max(1L,nu), acc_u/std::max(1L,nu), fmt_u/std::max(1L,nu));
  printf("legacy-only rollouts: %ld\n", legacy_only);
  printf("native hist:"); for (auto& [k,v] : call_hist) printf(" %d:%d", k, v); printf("\n");
  return 0;
}
