#include "vtlab/policy.hpp"
#include "vtlab/env.hpp"
#include "vtlab/util.hpp"
#include <cstdio>
using namespace vtlab;
double eval_acc(const char* path, int n_budget, uint64_t eseed) {
  PolicyParams p = load_policy(path);
  EnvConfig env; env.length_s = 64; env.noise_p = 0.3; env.task_mix_grounding = 0.0;
  RewardConfig rcfg; rcfg.lambda_fmt = 0.25; rcfg.tool_bonus_per_call = -0.3;
  DecodingConstraints cons; cons.think_prefix = true;
  double acc = 0; int n = 400;
  for (int i = 0; i < n; ++i) {
    PromptInstance pr = make_prompt(mix_seed(eseed, 0x6576616cULL, uint64_t(i)), env);
    pr.budget_n = n_budget;
    SampledRollout rr = sample_rollout(p, pr, env, 0.7, cons, mix_seed(eseed, 0x726f6cULL, uint64_t(i)));
    acc += composite_reward(rr.text, pr, rcfg).r_acc;
  }
  return acc / n;
}
int main() {
  char a[128], b[128];
  for (int s = 1; s <= 5; ++s) {
    std::snprintf(a, sizeof a, "/tmp/calib/gate_s%d/checkpoint.json", s);
    std::snprintf(b, sizeof b, "/tmp/calib/pair_on_s%d/checkpoint.json", s);
    double ga = eval_acc(a, 8, 100 + s), ua = eval_acc(b, 8, 100 + s);
    printf("seed %d: acc@8 gated=%.4f ungated=%.4f  %s\n", s, ga, ua, ga > ua ? "WIN" : "LOSS");
  }
  return 0;
}
