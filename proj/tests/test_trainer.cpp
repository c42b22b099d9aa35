#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "vtlab/env.hpp"
#include "vtlab/policy.hpp"
#include "vtlab/trainer.hpp"

using namespace vtlab;

namespace {

std::string native_call(double s, double e) {
  std::string out = "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": "
                    "\"c.mp4\", \"start_time\": ";
  out += std::to_string(s) + ", \"end_time\": " + std::to_string(e) + "}}</tool_call>";
  return out;
}

// Standalone loss evaluation for finite differences.
double loss_at(std::vector<double> w, int actions, const std::vector<double>& bias, double tau,
               const std::vector<SurrogateRollout>& rollouts, double eps) {
  return clipped_surrogate_loss(w.data(), actions, bias.data(), tau, rollouts, eps);
}

}  // namespace

TEST_CASE("group advantages match hand-worked cases") {
  std::vector<double> a = group_advantages({2.0, 0.0}, 1e-6);
  REQUIRE(a.size() == 2);
  CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(a[0] + a[1] == 0.0);

  std::vector<double> uniform = group_advantages({0.7, 0.7, 0.7, 0.7}, 1e-6);
  for (double v : uniform) CHECK(v == 0.0);

  // Near-uniform below the epsilon floor also collapses to zero.
  std::vector<double> tiny = group_advantages({0.5, 0.5 + 1e-9}, 1e-6);
  for (double v : tiny) CHECK(v == 0.0);

  CHECK_THROWS_AS(group_advantages({1.0}, 1e-6), std::invalid_argument);
}

TEST_CASE("advantages of a broad sample are centered with unit-capped spread") {
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<double> rewards(100000);
  for (double& r : rewards) r = u(rng);
  std::vector<double> adv = group_advantages(rewards, 1e-6);

  long double mean = 0.0L;
  for (double v : adv) mean += v;
  mean /= adv.size();
  CHECK(std::fabs(double(mean)) < 1e-10);

  long double var = 0.0L;
  for (double v : adv) var += (v - mean) * (v - mean);
  double sd = std::sqrt(double(var / adv.size()));
  CHECK(sd <= 1.0 + 1e-12);  // the epsilon in the denominator only shrinks
  CHECK(sd >= 1.0 - 1e-6);
}

TEST_CASE("clipped surrogate gradient matches central finite differences") {
  const int rows = 4, actions = 6;
  const double tau = 0.7, eps = 0.2;
  std::mt19937_64 rng(20260815);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<double> w(rows * actions), bias(actions);
  for (double& x : w) x = u(rng);
  for (double& x : bias) x = u(rng);

  std::uniform_real_distribution<double> off(-0.08, 0.08);
  std::vector<SurrogateRollout> rollouts;
  double advs[3] = {0.9, -0.7, 0.3};
  for (int r = 0; r < 3; ++r) {
    SurrogateRollout roll;
    roll.advantage = advs[r];
    for (int s = 0; s < 3; ++s) {
      SurrogateStep st;
      st.row = int(rng() % rows);
      st.legal.clear();
      for (int a = 0; a < actions; ++a)
        if (rng() % 2) st.legal.push_back(a);
      if (st.legal.size() < 2) st.legal = {0, 3, 5};
      st.action = st.legal[rng() % st.legal.size()];
      std::vector<double> lps = table_logprobs(w.data(), actions, bias.data(), tau, st.row,
                                               st.legal);
      double lp = 0.0;
      for (size_t i = 0; i < st.legal.size(); ++i)
        if (st.legal[i] == st.action) lp = lps[i];
      st.old_logprob = lp + off(rng);  // keeps every ratio far from the clip edge
      roll.steps.push_back(std::move(st));
    }
    rollouts.push_back(std::move(roll));
  }

  std::vector<double> grad(w.size(), 0.0);
  accumulate_clipped_gradient(w.data(), actions, bias.data(), tau, rollouts, eps, 1.0, grad);

  const double h = 1e-5;
  for (size_t i = 0; i < w.size(); ++i) {
    std::vector<double> wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    double fd = (loss_at(wp, actions, bias, tau, rollouts, eps) -
                 loss_at(wm, actions, bias, tau, rollouts, eps)) /
                (2 * h);
    CHECK(std::fabs(fd - grad[i]) <= 1e-4 * std::max(1.0, std::fabs(grad[i])));
  }
}

TEST_CASE("an active clip freezes both the loss and the gradient") {
  const int actions = 6;
  std::vector<double> w(actions, 0.0), bias(actions, 0.0);
  SurrogateStep st;
  st.row = 0;
  st.action = 2;
  st.legal = {0, 1, 2, 3, 4, 5};
  std::vector<double> lps = table_logprobs(w.data(), actions, bias.data(), 1.0, 0, st.legal);

  SurrogateRollout pos;
  pos.advantage = 1.0;
  st.old_logprob = lps[2] - 0.5;  // rho = e^0.5, above 1 + eps
  pos.steps = {st};
  CHECK(clipped_surrogate_loss(w.data(), actions, bias.data(), 1.0, {pos}, 0.2) ==
        doctest::Approx(1.2).epsilon(1e-12));

  SurrogateRollout neg;
  neg.advantage = -1.0;
  st.old_logprob = lps[2] + 0.5;  // rho = e^-0.5, below 1 - eps
  neg.steps = {st};
  CHECK(clipped_surrogate_loss(w.data(), actions, bias.data(), 1.0, {neg}, 0.2) ==
        doctest::Approx(-0.8).epsilon(1e-12));

  for (const SurrogateRollout& roll : {pos, neg}) {
    std::vector<double> grad(w.size(), 0.0);
    accumulate_clipped_gradient(w.data(), actions, bias.data(), 1.0, {roll}, 0.2, 1.0, grad);
    for (double g : grad) CHECK(g == 0.0);
  }
}

TEST_CASE("ratios of one reduce the loss to the advantage sum") {
  const int actions = 6;
  std::vector<double> w(actions * 2, 0.3), bias(actions, -0.1);
  SurrogateRollout roll;
  roll.advantage = 0.4;
  for (int s = 0; s < 3; ++s) {
    SurrogateStep st;
    st.row = s % 2;
    st.legal = {0, 2, 4};
    st.action = 2;
    std::vector<double> lps =
        table_logprobs(w.data(), actions, bias.data(), 0.7, st.row, st.legal);
    st.old_logprob = lps[1];
    roll.steps.push_back(st);
  }
  CHECK(clipped_surrogate_loss(w.data(), actions, bias.data(), 0.7, {roll}, 0.2) ==
        doctest::Approx(3 * 0.4).epsilon(1e-12));
}

TEST_CASE("weights outside every legal set never influence the objective") {
  const int actions = 6;
  std::vector<double> w(actions * 2, 0.0), bias(actions, 0.0);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (double& x : w) x = u(rng);

  SurrogateRollout roll;
  roll.advantage = 0.8;
  SurrogateStep st;
  st.row = 1;
  st.legal = {1, 3, 5};  // action 0 masked out of the support
  st.action = 3;
  st.old_logprob =
      table_logprobs(w.data(), actions, bias.data(), 0.7, st.row, st.legal)[1] - 0.02;
  roll.steps = {st};

  double base = clipped_surrogate_loss(w.data(), actions, bias.data(), 0.7, {roll}, 0.2);
  std::vector<double> w2 = w;
  w2[1 * actions + 0] += 0.1;
  w2[0 * actions + 2] -= 3.0;
  CHECK(clipped_surrogate_loss(w2.data(), actions, bias.data(), 0.7, {roll}, 0.2) == base);

  std::vector<double> grad(w.size(), 0.0);
  accumulate_clipped_gradient(w.data(), actions, bias.data(), 0.7, {roll}, 0.2, 1.0, grad);
  CHECK(grad[1 * actions + 0] == 0.0);
  CHECK(grad[0 * actions + 2] == 0.0);
}

TEST_CASE("budget sampling follows the gate") {
  Rng rng(123);
  std::vector<int> set = {4, 8, 16, 32, 64};
  for (int i = 0; i < 100; ++i) CHECK(sample_budget(false, set, rng) == 64);

  std::vector<int> counts(5, 0);
  double sum = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    int b = sample_budget(true, set, rng);
    sum += b;
    for (int j = 0; j < 5; ++j)
      if (set[j] == b) counts[j]++;
  }
  for (int c : counts) {
    CHECK(c > n * 0.19);
    CHECK(c < n * 0.21);
  }
  CHECK(sum / n == doctest::Approx(24.8).epsilon(0.02));
}

TEST_CASE("metrics aggregate the documented statistics") {
  std::vector<std::string> texts = {
      "no tags here",
      "<tool_code>crop_video(\"v\", 1, 2)</tool_code>",
      native_call(0, 5),
      native_call(0, 5) + native_call(10, 15),
      "<think>x</think>",
      "<answer>B</answer>",
      native_call(20, 25) + "<tool_code>crop_video(\"v\", 3, 4)</tool_code>",
      "<think>unclosed",
  };
  std::vector<RewardBreakdown> breakdowns(8);
  breakdowns[0].r_base = 1.2;  // clamps to 1
  breakdowns[1].r_base = 0.8;
  breakdowns[0].r_acc = 1.0;
  breakdowns[1].r_acc = 1.0;
  breakdowns[0].total = 2.0;
  breakdowns[1].total = 1.0;

  MetricsRecord m = compute_metrics(texts, breakdowns);
  CHECK(m.kappa == 0.5);  // 4 native records over 8 rollouts
  CHECK(m.legacy_rate == 0.25);
  CHECK(m.f_tau == doctest::Approx(1.8 / 8.0).epsilon(1e-12));
  CHECK(m.think_closure == 0.5);
  CHECK(m.tool_closure == 1.0);
  CHECK(m.answer_closure == 1.0);
  CHECK(m.mean_acc == 0.25);
  CHECK(m.mean_total == 0.375);

  MetricsSeries series;
  series.records = {m};
  CHECK(series.to_csv() ==
        "step,f_tau,kappa,think_closure,tool_closure,answer_closure,legacy_rate,mean_acc,"
        "mean_total\n0,0.225,0.5,0.5,1,1,0.25,0.25,0.375\n");
  CHECK(series.to_jsonl().find("\"mean_r_fmt\"") != std::string::npos);
}

TEST_CASE("trailing means window from the end") {
  MetricsSeries s;
  for (double v : {0.0, 1.0, 1.0}) {
    MetricsRecord r;
    r.f_tau = v;
    s.records.push_back(r);
  }
  CHECK(s.trailing_mean(&MetricsRecord::f_tau, 2) == 1.0);
  CHECK(s.trailing_mean(&MetricsRecord::f_tau, 5) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("the prompt dataset is a pure function of seed and size") {
  TrainerConfig cfg;
  cfg.dataset_size = 32;
  EnvConfig env;
  std::vector<PromptInstance> a = build_prompt_dataset(cfg, env);
  std::vector<PromptInstance> b = build_prompt_dataset(cfg, env);
  REQUIRE(a.size() == 32);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].question == b[i].question);
  cfg.seed = 2;
  std::vector<PromptInstance> c = build_prompt_dataset(cfg, env);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) any_diff |= a[i].question != c[i].question;
  CHECK(any_diff);
}

TEST_CASE("the prefilter drops verbose answers then unanimous groups") {
  EnvConfig env;
  env.length_s = 64;
  TrainerConfig cfg;
  cfg.dataset_size = 16;
  cfg.group_size = 4;
  RewardConfig rcfg;

  std::vector<PromptInstance> dataset = build_prompt_dataset(cfg, env);
  dataset[3].kind = TaskKind::OpenEnded;
  dataset[3].ground_truth.text = "one two three four five six seven eight nine ten "
                                 "eleven twelve thirteen fourteen fifteen sixteen";
  dataset[3].ground_truth.window.reset();

  // A spike policy that always answers immediately with an empty span: every
  // probe rollout is the same text, so every group is unanimously wrong.
  PolicyParams spike = init_policy(0.0, 1);
  for (int row = 0; row < spike.layout.features(); ++row) {
    spike.logit(row, kActAnswerOpen) = 50.0;
    spike.logit(row, kActAnswerClose) = 50.0;
  }
  FilterReport report;
  std::vector<PromptInstance> kept = dapo_prefilter(dataset, spike, cfg, env, rcfg, report);
  CHECK(report.input_count == 16);
  CHECK(report.dropped_long_answer == 1);
  CHECK(report.dropped_unanimous == 15);
  CHECK(report.kept == 0);
  CHECK(kept.empty());

  // A stochastic policy disagrees with itself, so groups survive.
  PolicyParams varied = init_policy(0.0, 2);
  FilterReport report2;
  std::vector<PromptInstance> kept2 = dapo_prefilter(dataset, varied, cfg, env, rcfg, report2);
  CHECK(report2.dropped_long_answer == 1);
  CHECK(report2.kept >= 12);
  CHECK(report2.kept == int(kept2.size()));
  CHECK(report2.input_count - report2.dropped_long_answer - report2.dropped_unanimous ==
        report2.kept);
}

TEST_CASE("training is bitwise reproducible") {
  EnvConfig env;
  env.length_s = 64;
  env.noise_p = 0.1;
  TrainerConfig cfg;
  cfg.steps = 3;
  cfg.group_size = 4;
  cfg.prompts_per_step = 2;
  RewardConfig rcfg;
  PolicyConfig pcfg;
  pcfg.cold_start_count = 16;
  pcfg.cold_start_epochs = 4;

  TrainResult a = train_run(cfg, env, rcfg, pcfg);
  TrainResult b = train_run(cfg, env, rcfg, pcfg);
  REQUIRE(a.metrics.records.size() == 3);
  CHECK(a.metrics.to_csv() == b.metrics.to_csv());
  CHECK(a.policy.logits == b.policy.logits);

  int observed = 0;
  TrainResult c = train_run(cfg, env, rcfg, pcfg,
                            [&](int step, const PolicyParams&, const MetricsRecord& m) {
                              CHECK(step == observed);
                              CHECK(m.step == step);
                              ++observed;
                            });
  CHECK(observed == 3);
  CHECK(c.metrics.to_csv() == a.metrics.to_csv());

  cfg.seed = 99;
  TrainResult d = train_run(cfg, env, rcfg, pcfg);
  CHECK(d.metrics.to_csv() != a.metrics.to_csv());
}

TEST_CASE("config validation guards the trainer") {
  TrainerConfig cfg;
  cfg.group_size = 1;
  CHECK_THROWS_AS(validate_trainer_config(cfg), std::invalid_argument);
  cfg = TrainerConfig{};
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(validate_trainer_config(cfg), std::invalid_argument);
  cfg = TrainerConfig{};
  cfg.clip_eps = 1.0;
  CHECK_THROWS_AS(validate_trainer_config(cfg), std::invalid_argument);
  cfg = TrainerConfig{};
  cfg.gating_enabled = true;
  cfg.gating_set = {};
  CHECK_THROWS_AS(validate_trainer_config(cfg), std::invalid_argument);
  CHECK_NOTHROW(validate_trainer_config(TrainerConfig{}));
}

TEST_CASE("evaluation accuracy is deterministic and bounded") {
  EnvConfig env;
  env.length_s = 64;
  RewardConfig rcfg;
  PolicyConfig pcfg;
  pcfg.cold_start_count = 32;
  pcfg.cold_start_epochs = 10;
  PolicyParams p = build_cold_started_policy(pcfg, env, 1);
  double a = evaluate_accuracy(p, env, rcfg, 0.7, false, 50, 8, 5);
  double b = evaluate_accuracy(p, env, rcfg, 0.7, false, 50, 8, 5);
  CHECK(a == b);
  CHECK(a >= 0.0);
  CHECK(a <= 1.0);
}

// Environment-level contrast behind the budget gate: when the overview is
// starved, cropping the hinted bucket is worth a large accuracy jump; at the
// saturated budget the overview already answers and the jump vanishes.
TEST_CASE("tool use only pays when the overview budget is scarce") {
  EnvConfig env;
  env.length_s = 64;
  env.task_mix_open = 0.0;
  env.task_mix_grounding = 0.0;

  auto contrast = [&](int budget) {
    double acc_plain = 0.0, acc_tools = 0.0;
    const int n = 400;
    for (uint64_t seed = 0; seed < n; ++seed) {
      PromptInstance p = make_prompt(seed, env);
      p.budget_n = budget;
      std::string known_letter(1, char('A' + p.correct_option));

      Observation obs = overview(p.video, budget);
      std::string plain = obs.event_index >= 0 ? known_letter : "A";
      acc_plain += accuracy_reward(plain, p.ground_truth, p.kind);

      bool seen = obs.event_index >= 0;
      if (!seen) {
        std::vector<Frame> frames =
            crop_video(p.video, bucket_start(p.bucket_hint, env.length_s),
                       bucket_end(p.bucket_hint, env.length_s));
        for (const Frame& f : frames) seen |= f.flagged;
      }
      std::string tooled = seen ? known_letter : "A";
      acc_tools += accuracy_reward(tooled, p.ground_truth, p.kind);
    }
    return std::make_pair(acc_plain / n, acc_tools / n);
  };

  auto [plain4, tools4] = contrast(4);
  CHECK(tools4 - plain4 > 0.15);
  CHECK(tools4 > 0.95);

  auto [plain64, tools64] = contrast(64);
  CHECK(plain64 == 1.0);
  CHECK(std::fabs(tools64 - plain64) <= 0.05);
}
