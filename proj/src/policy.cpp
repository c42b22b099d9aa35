#include "vtlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "vtlab/util.hpp"

namespace vtlab {

std::vector<double> table_logprobs(const double* w, int actions, const double* bias, double tau,
                                   int row, const std::vector<int>& legal) {
  std::vector<double> z(legal.size());
  double zmax = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < legal.size(); ++i) {
    int a = legal[i];
    double s = w[size_t(row) * actions + a] + (bias ? bias[a] : 0.0);
    z[i] = s / tau;
    zmax = std::max(zmax, z[i]);
  }
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - zmax);
  double lse = zmax + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

namespace {

constexpr uint64_t kSaltInit = 0x696e6974ULL;
constexpr uint64_t kSaltSample = 0x73616d70ULL;
constexpr uint64_t kSaltTracePrompt = 0x74726163ULL;
constexpr uint64_t kSaltTraceShape = 0x67656e31ULL;
constexpr uint64_t kSaltColdInit = 0x63706f6cULL;
constexpr uint64_t kSaltColdTraces = 0x63747273ULL;

constexpr const char* kClipRef = "clip.mp4";

constexpr std::string_view kThinkPhrases[] = {
    "scanning the overview for the flagged second",
    "the hint narrows the search to one segment",
    "a crop of that segment should reveal the symbol",
    "weighing the candidate segments before answering",
};
constexpr size_t kThinkPhraseCount = sizeof(kThinkPhrases) / sizeof(kThinkPhrases[0]);

// Shared by sampling and scoring so both produce bit-identical doubles.
std::vector<double> legal_logprobs(const PolicyParams& policy, int row,
                                   const std::vector<int>& legal, double tau) {
  return table_logprobs(policy.logits.data(), kActionCount, policy.prior_bias.data(), tau, row,
                        legal);
}

int argmax_action(const PolicyParams& policy, int row, const std::vector<int>& legal) {
  int best = legal.front();
  double best_score = policy.score(row, best);
  for (int a : legal) {
    double s = policy.score(row, a);
    if (s > best_score) {
      best_score = s;
      best = a;
    }
  }
  return best;
}

}  // namespace

bool is_structural_action(int action) {
  return action == kActThinkOpen || action == kActThinkClose || action == kActToolBlockClose ||
         action == kActAnswerOpen || action == kActAnswerClose;
}

int PolicyLayout::budget_index(int budget_n) const {
  for (size_t i = 0; i < budget_values.size(); ++i)
    if (budget_values[i] == budget_n) return int(i);
  throw std::invalid_argument("policy: budget " + std::to_string(budget_n) +
                              " is outside the layout's budget set");
}

PolicyParams init_policy(double prior_strength, uint64_t seed, PolicyLayout layout,
                         double bias_unit, double close_bias_factor) {
  if (prior_strength < 0.0) throw std::invalid_argument("init_policy: negative prior strength");
  PolicyParams p;
  p.layout = std::move(layout);
  p.prior_strength = prior_strength;
  p.bias_unit = bias_unit;
  p.close_bias_factor = close_bias_factor;
  p.logits.resize(size_t(p.layout.features()) * kActionCount);
  Rng rng(mix_seed(seed, kSaltInit));
  for (double& w : p.logits) w = 0.1 * rand_normal(rng);
  p.prior_bias.assign(kActionCount, 0.0);
  for (int b = 0; b < kBucketCount; ++b)
    p.prior_bias[size_t(kActToolCodeOpenBase + b)] = prior_strength * p.bias_unit;
  p.prior_bias[kActThinkClose] = -prior_strength * p.bias_unit * p.close_bias_factor;
  p.prior_bias[kActAnswerClose] = -prior_strength * p.bias_unit * p.close_bias_factor;
  return p;
}

RolloutMachine::RolloutMachine(const PolicyLayout& layout, const PromptInstance& prompt,
                               const EnvConfig& env_cfg, const DecodingConstraints& constraints)
    : layout_(layout), prompt_(prompt), env_(env_cfg), constraints_(constraints) {
  if (prompt.video.alphabet > kBucketCount)
    throw std::invalid_argument("policy: alphabet exceeds the answer token range");
  budget_idx_ = layout.budget_index(prompt.budget_n);
  switch (prompt.kind) {
    case TaskKind::MCQ:
      known_ = solvable_from_overview(prompt) ? prompt.correct_option : -1;
      break;
    case TaskKind::OpenEnded:
      known_ = solvable_from_overview(prompt) ? prompt.video.event_symbol : -1;
      break;
    case TaskKind::TemporalGrounding:
      // The bucket hint already pins the best expressible window.
      known_ = prompt.bucket_hint;
      break;
  }
  recompute_legal();
}

int RolloutMachine::row() const {
  int phase;
  switch (pos_) {
    case Pos::Text:
      // Once a closed block is waiting for dispatch the cell changes; the
      // "open another call or answer" decision is distinct from the first
      // "tool up or answer directly" decision made right after the think span.
      phase = think_ == ThinkState::NotOpened  ? kPhasePreThink
              : think_ == ThinkState::Open     ? kPhaseInThink
              : pending_calls_.empty()         ? kPhasePostThink
                                               : kPhasePostTool;
      break;
    case Pos::InBlockNative:
    case Pos::InBlockLegacy:
      // Shares the pre-think index: the two positions never offer the same
      // action (ThinkOpen is illegal here, ToolBlockClose illegal there), so
      // one cell holds both distributions without mixing them.
      phase = kPhasePreThink;
      break;
    case Pos::InAnswer:
      phase = kPhaseInAnswer;
      break;
    default:
      throw std::logic_error("row() on a finished rollout");
  }
  return layout_.row(phase, budget_idx_, prompt_.bucket_hint, known_);
}

void RolloutMachine::recompute_legal() {
  legal_.clear();
  bool tools_allowed = constraints_.max_turns >= 2;
  switch (pos_) {
    case Pos::Text:
      if (think_ == ThinkState::NotOpened) legal_.push_back(kActThinkOpen);
      if (think_ == ThinkState::Open) {
        // One content run per think span; a repeat adds no new cell and
        // would pin greedy decoding inside the span forever.
        if (content_count_ == 0) legal_.push_back(kActThinkContent);
        legal_.push_back(kActThinkClose);
      }
      if (tools_allowed && think_ != ThinkState::Open) {
        // Blocks of either schema start only between spans, so the legacy
        // habit expresses as acting before the think span ever opens; the
        // forced think prefix exists precisely to close that door.  A bucket
        // is cropped at most once per rollout under either schema.
        for (int b = 0; b < kBucketCount; ++b)
          if (!bucket_opened_[size_t(b)]) legal_.push_back(kActToolCallOpenBase + b);
        for (int b = 0; b < kBucketCount; ++b)
          if (!bucket_opened_[size_t(b)]) legal_.push_back(kActToolCodeOpenBase + b);
      }
      legal_.push_back(kActAnswerOpen);
      legal_.push_back(kActStop);
      break;
    case Pos::InBlockNative:
    case Pos::InBlockLegacy:
      legal_.push_back(kActToolBlockClose);
      legal_.push_back(kActAnswerOpen);
      legal_.push_back(kActStop);
      break;
    case Pos::InAnswer: {
      int tokens = prompt_.kind == TaskKind::MCQ          ? int(prompt_.options.size())
                   : prompt_.kind == TaskKind::OpenEnded  ? prompt_.video.alphabet
                                                          : kBucketCount;
      // A single token settles the answer; further tokens only repeat the
      // same cell and stall greedy decoding.
      if (answer_tokens_ == 0)
        for (int k = 0; k < tokens; ++k) legal_.push_back(kActAnswerTokenBase + k);
      legal_.push_back(kActAnswerClose);
      legal_.push_back(kActStop);
      break;
    }
    case Pos::Done:
      break;
  }
}

void RolloutMachine::update_known(const ToolResponse& resp) {
  if (resp.error || !resp.has_event) return;
  int shown = resp.event_symbol_displayed;
  switch (prompt_.kind) {
    case TaskKind::MCQ: {
      // The latest sighting overrides earlier evidence; a symbol matching no
      // option leaves the agent without a usable answer.
      known_ = -1;
      for (size_t i = 0; i < prompt_.options.size(); ++i)
        if (prompt_.options[i] == symbol_name(shown)) {
          known_ = int(i);
          break;
        }
      break;
    }
    case TaskKind::OpenEnded:
      known_ = shown < kBucketCount ? shown : -1;
      break;
    case TaskKind::TemporalGrounding:
      known_ = bucket_of(resp.event_second, prompt_.video.length_s);
      break;
  }
}

void RolloutMachine::dispatch_now() {
  if (pending_calls_.empty()) return;
  DispatchResult d = dispatch(pending_calls_, prompt_.video, env_, DispatchMode::Parallel);
  text_ += render_tool_responses(d.responses);
  for (const ToolResponse& resp : d.responses) update_known(resp);
}

void RolloutMachine::apply(int action) {
  if (pos_ == Pos::Done) throw std::invalid_argument("apply: rollout already finished");
  if (std::find(legal_.begin(), legal_.end(), action) == legal_.end())
    throw std::invalid_argument("apply: action illegal in this phase");

  int length = prompt_.video.length_s;
  if (action == kActThinkOpen) {
    text_ += "<think>";
    think_ = ThinkState::Open;
  } else if (action == kActThinkContent) {
    if (content_count_ > 0) text_ += " ";
    text_ += kThinkPhrases[size_t(content_count_) % kThinkPhraseCount];
    ++content_count_;
  } else if (action == kActThinkClose) {
    text_ += "</think>\n";
    think_ = ThinkState::Closed;
  } else if (action >= kActToolCallOpenBase && action < kActToolCallOpenBase + kBucketCount) {
    block_bucket_ = action - kActToolCallOpenBase;
    bucket_opened_[size_t(block_bucket_)] = true;
    text_ += "<tool_call>\n";
    text_ += native_call_body(kClipRef, bucket_start(block_bucket_, length),
                              bucket_end(block_bucket_, length));
    text_ += "\n";
    pos_ = Pos::InBlockNative;
  } else if (action >= kActToolCodeOpenBase && action < kActToolCodeOpenBase + kBucketCount) {
    block_bucket_ = action - kActToolCodeOpenBase;
    bucket_opened_[size_t(block_bucket_)] = true;
    text_ += "<tool_code>\n";
    text_ += legacy_call_body(kClipRef, bucket_start(block_bucket_, length),
                              bucket_end(block_bucket_, length));
    text_ += "\n";
    pos_ = Pos::InBlockLegacy;
  } else if (action == kActToolBlockClose) {
    bool native = pos_ == Pos::InBlockNative;
    text_ += native ? "</tool_call>\n" : "</tool_code>\n";
    ToolCallRecord rec;
    rec.name = "crop_video";
    rec.video_ref = kClipRef;
    rec.start_time = bucket_start(block_bucket_, length);
    rec.end_time = bucket_end(block_bucket_, length);
    rec.schema = native ? CallSchema::NativeCall : CallSchema::LegacyCode;
    pending_calls_.push_back(std::move(rec));
    pos_ = Pos::Text;
  } else if (action == kActAnswerOpen) {
    // An open block is abandoned unclosed; only closed blocks dispatch.
    dispatch_now();
    text_ += "<answer>";
    pos_ = Pos::InAnswer;
  } else if (action >= kActAnswerTokenBase && action < kActAnswerTokenBase + kBucketCount) {
    int k = action - kActAnswerTokenBase;
    if (answer_tokens_ > 0) text_ += " ";
    switch (prompt_.kind) {
      case TaskKind::MCQ:
        text_ += char('A' + k);
        break;
      case TaskKind::OpenEnded:
        text_ += symbol_name(k);
        break;
      case TaskKind::TemporalGrounding: {
        std::string w = "[";
        append_double(w, bucket_start(k, length));
        w += ", ";
        append_double(w, bucket_end(k, length));
        w += "]";
        text_ += w;
        break;
      }
    }
    ++answer_tokens_;
  } else if (action == kActAnswerClose) {
    text_ += "</answer>";
    pos_ = Pos::Done;
  } else if (action == kActStop) {
    pos_ = Pos::Done;
  } else {
    throw std::invalid_argument("apply: unknown action id");
  }

  ++steps_;
  if (steps_ >= constraints_.max_actions) pos_ = Pos::Done;
  recompute_legal();
}

double step_logprob(const PolicyParams& policy, int row, const std::vector<int>& legal,
                    int action, double tau) {
  size_t idx = legal.size();
  for (size_t i = 0; i < legal.size(); ++i)
    if (legal[i] == action) {
      idx = i;
      break;
    }
  if (idx == legal.size()) throw std::invalid_argument("step_logprob: action not legal");
  if (tau == 0.0)
    return action == argmax_action(policy, row, legal)
               ? 0.0
               : -std::numeric_limits<double>::infinity();
  return legal_logprobs(policy, row, legal, tau)[idx];
}

double step_logprob_masked(const PolicyParams& policy, int row, const std::vector<int>& legal,
                           int action, double tau) {
  if (is_structural_action(action))
    throw std::invalid_argument("step_logprob_masked: structural action has no masked score");
  std::vector<int> reduced;
  reduced.reserve(legal.size());
  for (int a : legal)
    if (!is_structural_action(a)) reduced.push_back(a);
  return step_logprob(policy, row, reduced, action, tau);
}

SampledRollout sample_rollout(const PolicyParams& policy, const PromptInstance& prompt,
                              const EnvConfig& env_cfg, double tau,
                              const DecodingConstraints& constraints, uint64_t seed) {
  RolloutMachine m(policy.layout, prompt, env_cfg, constraints);
  Rng rng(mix_seed(seed, kSaltSample));
  SampledRollout out;
  bool first = true;
  while (!m.done()) {
    StepRecord step;
    step.row = m.row();
    step.legal = m.legal();
    if (first && constraints.think_prefix) {
      step.action = kActThinkOpen;
      step.forced = true;
    } else if (tau == 0.0) {
      step.action = argmax_action(policy, step.row, step.legal);
    } else {
      std::vector<double> lps = legal_logprobs(policy, step.row, step.legal, tau);
      double u = rand_unit(rng);
      size_t pick = lps.size() - 1;
      double cum = 0.0;
      for (size_t i = 0; i < lps.size(); ++i) {
        cum += std::exp(lps[i]);
        if (u < cum) {
          pick = i;
          break;
        }
      }
      step.action = step.legal[pick];
      step.logprob = lps[pick];
    }
    first = false;
    m.apply(step.action);
    out.steps.push_back(std::move(step));
  }
  out.text = m.text();
  return out;
}

std::vector<StepRecord> logprob_of(const PolicyParams& policy, const PromptInstance& prompt,
                                   const EnvConfig& env_cfg, const std::vector<int>& actions,
                                   double tau, const DecodingConstraints& constraints) {
  RolloutMachine m(policy.layout, prompt, env_cfg, constraints);
  std::vector<StepRecord> steps;
  steps.reserve(actions.size());
  bool first = true;
  for (int action : actions) {
    if (m.done()) throw std::invalid_argument("logprob_of: actions continue past the end");
    StepRecord step;
    step.row = m.row();
    step.legal = m.legal();
    step.action = action;
    if (first && constraints.think_prefix) {
      if (action != kActThinkOpen)
        throw std::invalid_argument("logprob_of: constrained prefix violated");
      step.forced = true;
    } else {
      step.logprob = step_logprob(policy, step.row, step.legal, action, tau);
    }
    first = false;
    m.apply(action);
    steps.push_back(std::move(step));
  }
  return steps;
}

std::vector<ColdStartTrace> generate_cold_start_traces(const EnvConfig& env_cfg,
                                                       const TraceGenOptions& opts, uint64_t seed,
                                                       const PolicyLayout& layout) {
  EnvConfig noiseless = env_cfg;
  noiseless.noise_p = 0.0;
  DecodingConstraints c;
  c.think_prefix = false;
  std::vector<ColdStartTrace> out;
  out.reserve(size_t(opts.count));
  for (int i = 0; i < opts.count; ++i) {
    ColdStartTrace trace;
    trace.prompt = make_prompt(mix_seed(seed, kSaltTracePrompt, uint64_t(i)), noiseless);
    Rng rng(mix_seed(seed, kSaltTraceShape, uint64_t(i)));
    RolloutMachine m(layout, trace.prompt, noiseless, c);
    auto act = [&](int a) {
      trace.actions.push_back(a);
      m.apply(a);
    };
    act(kActThinkOpen);
    act(kActThinkContent);
    act(kActThinkClose);
    bool known = m.known() >= 0;
    bool use_tools = !known || rand_unit(rng) < opts.tool_fraction;
    if (use_tools) {
      int hint = trace.prompt.bucket_hint;
      int calls = 1 + int(rand_below(rng, 3));
      std::vector<int> targets;
      for (int cand : {hint, hint - 1, hint + 1, hint - 2, hint + 2}) {
        if (cand < 0 || cand >= kBucketCount) continue;
        targets.push_back(cand);
        if (int(targets.size()) == calls) break;
      }
      int open_base = opts.legacy_schema ? kActToolCodeOpenBase : kActToolCallOpenBase;
      for (int b : targets) {
        act(open_base + b);
        act(kActToolBlockClose);
      }
    }
    act(kActAnswerOpen);
    int k = m.known();
    act(kActAnswerTokenBase + (k >= 0 ? k : 0));
    act(kActAnswerClose);
    out.push_back(std::move(trace));
  }
  return out;
}

void cold_start_fit(PolicyParams& policy, const std::vector<ColdStartTrace>& traces,
                    const EnvConfig& env_cfg, int epochs, double lr) {
  DecodingConstraints c;
  c.think_prefix = false;  // SFT counts every step, the prefix is decode-time
  size_t rows = size_t(policy.layout.features());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<double> grad(policy.logits.size(), 0.0);
    std::vector<long long> row_visits(rows, 0);
    long long steps = 0;
    for (const ColdStartTrace& trace : traces) {
      RolloutMachine m(policy.layout, trace.prompt, env_cfg, c);
      for (int action : trace.actions) {
        if (m.done()) throw std::invalid_argument("cold_start_fit: trace overruns the machine");
        int row = m.row();
        const std::vector<int>& legal = m.legal();
        // Fit the logits alone. The prior bias sits outside the fitted table,
        // so supervised fitting can never cancel it; sampling adds it back and
        // temperature re-exposes whatever the demonstrations papered over.
        std::vector<double> lps =
            table_logprobs(policy.logits.data(), kActionCount, nullptr, 1.0, row, legal);
        bool found = false;
        for (size_t i = 0; i < legal.size(); ++i) {
          grad[size_t(row) * kActionCount + legal[i]] -= std::exp(lps[i]);
          if (legal[i] == action) found = true;
        }
        if (!found) throw std::invalid_argument("cold_start_fit: illegal trace action");
        grad[size_t(row) * kActionCount + action] += 1.0;
        ++row_visits[size_t(row)];
        ++steps;
        m.apply(action);
      }
    }
    if (steps == 0) return;
    // Each row is its own softmax; normalizing by that row's visit count
    // gives every demonstrated cell the same effective step size instead of
    // burying rare cells under the global step total.
    for (size_t r = 0; r < rows; ++r) {
      if (row_visits[r] == 0) continue;
      double scale = lr / double(row_visits[r]);
      for (int a = 0; a < kActionCount; ++a)
        policy.logits[r * size_t(kActionCount) + size_t(a)] += scale * grad[r * size_t(kActionCount) + size_t(a)];
    }
  }
}

PolicyParams build_cold_started_policy(const PolicyConfig& cfg, const EnvConfig& env_cfg,
                                       uint64_t seed, const PolicyLayout& layout) {
  PolicyParams policy = init_policy(cfg.prior_strength, mix_seed(seed, kSaltColdInit), layout,
                                    cfg.bias_unit, cfg.close_bias_factor);
  TraceGenOptions opts;
  opts.count = cfg.cold_start_count;
  opts.tool_fraction = cfg.cold_start_tool_fraction;
  opts.legacy_schema = cfg.cold_start_legacy;
  std::vector<ColdStartTrace> traces =
      generate_cold_start_traces(env_cfg, opts, mix_seed(seed, kSaltColdTraces), policy.layout);
  // The traces were generated on a noiseless environment; fit on the same one
  // so every replayed machine sees the evidence the demonstration saw.
  EnvConfig noiseless = env_cfg;
  noiseless.noise_p = 0.0;
  cold_start_fit(policy, traces, noiseless, cfg.cold_start_epochs, cfg.cold_start_lr);
  return policy;
}

void save_policy(const PolicyParams& policy, const std::string& path) {
  nlohmann::json j;
  j["prior_strength"] = policy.prior_strength;
  j["bias_unit"] = policy.bias_unit;
  j["close_bias_factor"] = policy.close_bias_factor;
  j["budget_values"] = policy.layout.budget_values;
  j["prior_bias"] = policy.prior_bias;
  nlohmann::json table = nlohmann::json::array();
  int features = policy.layout.features();
  for (int r = 0; r < features; ++r)
    for (int a = 0; a < kActionCount; ++a)
      table.push_back({{"feature", r}, {"action", a}, {"logit", policy.logit(r, a)}});
  j["logits"] = std::move(table);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_policy: cannot open " + path);
  out << j.dump();
  if (!out) throw std::runtime_error("save_policy: write failed for " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_policy: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  PolicyParams p;
  p.layout.budget_values = j.at("budget_values").get<std::vector<int>>();
  p.prior_strength = j.at("prior_strength").get<double>();
  p.bias_unit = j.at("bias_unit").get<double>();
  p.close_bias_factor = j.at("close_bias_factor").get<double>();
  p.prior_bias = j.at("prior_bias").get<std::vector<double>>();
  if (int(p.prior_bias.size()) != kActionCount)
    throw std::runtime_error("load_policy: prior_bias has the wrong arity");
  p.logits.assign(size_t(p.layout.features()) * kActionCount, 0.0);
  for (const auto& entry : j.at("logits")) {
    int r = entry.at("feature").get<int>();
    int a = entry.at("action").get<int>();
    if (r < 0 || r >= p.layout.features() || a < 0 || a >= kActionCount)
      throw std::runtime_error("load_policy: logit entry out of range");
    p.logit(r, a) = entry.at("logit").get<double>();
  }
  return p;
}

}  // namespace vtlab
