#include "vtlab/policy.hpp"
#include "vtlab/env.hpp"
#include "vtlab/util.hpp"
#include <cstdio>
using namespace vtlab;
int main() {
  PolicyParams p = load_policy("/tmp/calib/k_anch/checkpoint.json");
  EnvConfig env; env.length_s = 64; env.noise_p = 0.3; env.task_mix_grounding = 0.0;
  DecodingConstraints cons; cons.think_prefix = true;
  int bad = 0;
  for (int i = 0; i < 200; ++i) {
    PromptInstance pr = make_prompt(9000 + i, env);
    pr.budget_n = 64;
    SampledRollout rr = sample_rollout(p, pr, env, 0.7, cons, mix_seed(3, i));
    ParsedRollout parsed = parse_rollout(rr.text);
    if (!parsed.think_before_tools) {
      ++bad;
      if (bad <= 3) printf("--- violating rollout %d:\n%.400s\n", i, rr.text.c_str());
    }
  }
  printf("think_before_tools violations: %d/200\n", bad);
  return 0;
}
