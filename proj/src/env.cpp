#include "vtlab/env.hpp"

#include <algorithm>
#include <bit>
#include <climits>
#include <cmath>
#include <stdexcept>

#include "vtlab/util.hpp"

namespace vtlab {

namespace {

constexpr uint64_t kSaltVideo = 0x7669646575ULL;
constexpr uint64_t kSaltPrompt = 0x70726f6d7074ULL;
constexpr uint64_t kSaltCrop = 0x63726f70ULL;

int ceil_div_ll(long long a, long long b) { return int((a + b - 1) / b); }

}  // namespace

const std::array<std::string_view, 16>& symbol_names() {
  static const std::array<std::string_view, 16> names = {
      "red",   "blue",  "green", "amber", "violet", "teal", "coral", "ochre",
      "ivory", "slate", "mauve", "lime",  "navy",   "plum", "rust",  "jade"};
  return names;
}

std::string_view symbol_name(int symbol) {
  const auto& names = symbol_names();
  if (symbol < 0 || symbol >= int(names.size())) throw std::out_of_range("symbol_name");
  return names[size_t(symbol)];
}

int bucket_of(int second, int length_s) {
  if (second < 0) return 0;
  int b = int(1LL * second * kBucketCount / length_s);
  return std::min(b, kBucketCount - 1);
}

double bucket_start(int bucket, int length_s) {
  return double(bucket) * double(length_s) / kBucketCount;
}

double bucket_end(int bucket, int length_s) {
  return double(bucket + 1) * double(length_s) / kBucketCount;
}

void validate_env_config(const EnvConfig& cfg) {
  if (cfg.length_s < 64) throw std::invalid_argument("env: length_s must be >= 64");
  if (cfg.alphabet < 2) throw std::invalid_argument("env: alphabet must be >= 2");
  if (cfg.alphabet > int(symbol_names().size()))
    throw std::invalid_argument("env: alphabet exceeds the symbol vocabulary");
  if (cfg.event_halfwidth_s < 1 || 2 * cfg.event_halfwidth_s + 1 > cfg.length_s)
    throw std::invalid_argument("env: event_halfwidth_s does not fit the video");
  if (!(cfg.noise_p >= 0.0 && cfg.noise_p < 0.5))
    throw std::invalid_argument("env: noise_p must lie in [0, 0.5)");
  if (cfg.latency_c0 < 0.0 || cfg.latency_c1 < 0.0)
    throw std::invalid_argument("env: latency constants must be non-negative");
  double mix = cfg.task_mix_mcq + cfg.task_mix_open + cfg.task_mix_grounding;
  if (cfg.task_mix_mcq < 0.0 || cfg.task_mix_open < 0.0 || cfg.task_mix_grounding < 0.0 ||
      mix <= 0.0)
    throw std::invalid_argument("env: task mix weights must be non-negative with a positive sum");
  if (cfg.budget_choices.empty()) throw std::invalid_argument("env: budget_choices is empty");
  for (int n : cfg.budget_choices)
    if (n < 1) throw std::invalid_argument("env: budget_choices entries must be >= 1");
}

SyntheticVideo make_video(uint64_t seed, const EnvConfig& cfg) {
  validate_env_config(cfg);
  SyntheticVideo v;
  v.length_s = cfg.length_s;
  v.alphabet = cfg.alphabet;
  v.seed = mix_seed(seed, kSaltVideo);
  Rng rng(v.seed);
  v.symbols.resize(size_t(cfg.length_s));
  for (int& s : v.symbols) s = int(rand_below(rng, uint64_t(cfg.alphabet)));
  int w = cfg.event_halfwidth_s;
  v.event_time = w + int(rand_below(rng, uint64_t(cfg.length_s - 2 * w)));
  v.event_symbol = v.symbols[size_t(v.event_time)];
  v.gt_window = {double(v.event_time - w), double(v.event_time + w)};
  return v;
}

PromptInstance make_prompt(uint64_t seed, const EnvConfig& cfg) {
  PromptInstance p;
  p.video = make_video(seed, cfg);
  Rng rng(mix_seed(seed, kSaltPrompt));

  double mix_total = cfg.task_mix_mcq + cfg.task_mix_open + cfg.task_mix_grounding;
  double draw = rand_unit(rng) * mix_total;
  if (draw < cfg.task_mix_mcq)
    p.kind = TaskKind::MCQ;
  else if (draw < cfg.task_mix_mcq + cfg.task_mix_open)
    p.kind = TaskKind::OpenEnded;
  else
    p.kind = TaskKind::TemporalGrounding;

  p.bucket_hint = bucket_of(p.video.event_time, p.video.length_s);
  p.budget_n = cfg.budget_choices[size_t(rand_below(rng, cfg.budget_choices.size()))];

  std::string stem = "One second of the clip is flagged as the key event; it falls in segment " +
                     std::to_string(p.bucket_hint) + " of 12. ";
  switch (p.kind) {
    case TaskKind::MCQ: {
      int correct = p.video.event_symbol;
      std::vector<int> pool;
      for (int s = 0; s < cfg.alphabet; ++s)
        if (s != correct) pool.push_back(s);
      for (size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[size_t(rand_below(rng, i))]);
      p.correct_option = int(rand_below(rng, 4));
      p.question = stem + "Which symbol is shown at the flagged second?";
      size_t next_distractor = 0;
      for (int i = 0; i < 4; ++i) {
        int sym = correct;
        if (i != p.correct_option) {
          // Distractors repeat only when the alphabet cannot supply three.
          sym = pool[next_distractor % pool.size()];
          ++next_distractor;
        }
        p.options.push_back(std::string(symbol_name(sym)));
        p.question += "\n";
        p.question += char('A' + i);
        p.question += ") ";
        p.question += symbol_name(sym);
      }
      p.ground_truth.text = std::string(1, char('A' + p.correct_option));
      break;
    }
    case TaskKind::OpenEnded:
      p.question = stem + "Name the symbol shown at the flagged second.";
      p.ground_truth.text = std::string(symbol_name(p.video.event_symbol));
      break;
    case TaskKind::TemporalGrounding:
      p.question = stem + "Report the flagged window as [start, end] in seconds.";
      p.ground_truth.window = p.video.gt_window;
      break;
  }
  return p;
}

Observation overview(const SyntheticVideo& video, int n) {
  if (n < 1) throw std::invalid_argument("overview: n must be >= 1");
  Observation obs;
  int length = video.length_s;
  if (n >= length) {
    obs.frame_indices.resize(size_t(length));
    for (int i = 0; i < length; ++i) obs.frame_indices[size_t(i)] = i;
  } else if (n == 1) {
    obs.frame_indices.push_back(0);
  } else {
    // Ceiling subsample; strictly increasing whenever n <= length, so no
    // duplicate pass is needed.
    obs.frame_indices.reserve(size_t(n));
    for (int i = 0; i < n; ++i)
      obs.frame_indices.push_back(ceil_div_ll(1LL * i * (length - 1), n - 1));
  }
  obs.frame_symbols.reserve(obs.frame_indices.size());
  for (size_t k = 0; k < obs.frame_indices.size(); ++k) {
    obs.frame_symbols.push_back(video.symbols[size_t(obs.frame_indices[k])]);
    if (obs.frame_indices[k] == video.event_time) obs.event_index = int(k);
  }
  return obs;
}

std::string render_observation(const Observation& obs) {
  std::string out;
  for (size_t k = 0; k < obs.frame_indices.size(); ++k) {
    out += "t=" + std::to_string(obs.frame_indices[k]) + ": ";
    out += symbol_name(obs.frame_symbols[k]);
    if (int(k) == obs.event_index) out += " (flagged)";
    out += "\n";
  }
  return out;
}

std::vector<Frame> crop_video(const SyntheticVideo& video, double start_s, double end_s) {
  if (!(start_s >= 0.0 && start_s < end_s && end_s <= double(video.length_s)))
    throw std::invalid_argument("crop_video: invalid window");
  std::vector<int> seconds;
  for (int i = int(std::ceil(start_s)); double(i) < end_s && i < video.length_s; ++i)
    seconds.push_back(i);
  if (int(seconds.size()) > kCropFrameCap) {
    std::vector<int> kept;
    kept.reserve(kCropFrameCap);
    long long m = (long long)(seconds.size());
    for (int i = 0; i < kCropFrameCap; ++i)
      kept.push_back(seconds[size_t(ceil_div_ll(i * (m - 1), kCropFrameCap - 1))]);
    seconds.swap(kept);
  }
  bool covers = start_s <= double(video.event_time) && double(video.event_time) < end_s;
  if (covers && std::find(seconds.begin(), seconds.end(), video.event_time) == seconds.end()) {
    // The flagged second is salient: it displaces the nearest sampled frame.
    size_t nearest = 0;
    int best = INT_MAX;
    for (size_t k = 0; k < seconds.size(); ++k) {
      int d = std::abs(seconds[k] - video.event_time);
      if (d < best) {
        best = d;
        nearest = k;
      }
    }
    seconds[nearest] = video.event_time;
    std::sort(seconds.begin(), seconds.end());
  }
  std::vector<Frame> frames;
  frames.reserve(seconds.size());
  for (int s : seconds)
    frames.push_back({s, video.symbols[size_t(s)], s == video.event_time});
  return frames;
}

ToolResponse subagent_summarize(const std::vector<Frame>& frames, double noise_p,
                                uint64_t stream_seed, int alphabet) {
  ToolResponse resp;
  Rng rng(stream_seed);
  std::string out;
  for (const Frame& f : frames) {
    int shown = f.symbol;
    if (rand_unit(rng) < noise_p) {
      shown = (f.symbol + 1 + int(rand_below(rng, uint64_t(alphabet - 1)))) % alphabet;
      ++resp.noise_flips;
    }
    out += "t=" + std::to_string(f.second) + ": ";
    out += symbol_name(shown);
    if (f.flagged) {
      out += " (flagged)";
      resp.has_event = true;
      resp.event_second = f.second;
      resp.event_symbol_displayed = shown;
    }
    out += "\n";
  }
  if (!out.empty()) out.pop_back();
  resp.summary_text = std::move(out);
  resp.frames_reported = int(frames.size());
  return resp;
}

DispatchResult dispatch(const std::vector<ToolCallRecord>& calls, const SyntheticVideo& video,
                        const EnvConfig& cfg, DispatchMode mode) {
  DispatchResult result;
  result.responses.reserve(calls.size());
  for (size_t idx = 0; idx < calls.size(); ++idx) {
    const ToolCallRecord& call = calls[idx];
    ToolResponse resp;
    bool valid = call.schema != CallSchema::Malformed && call.start_time >= 0.0 &&
                 call.start_time < call.end_time && call.end_time <= double(video.length_s);
    if (valid) {
      std::vector<Frame> frames = crop_video(video, call.start_time, call.end_time);
      uint64_t stream = mix_seed(video.seed, kSaltCrop, uint64_t(idx),
                                 std::bit_cast<uint64_t>(call.start_time),
                                 std::bit_cast<uint64_t>(call.end_time));
      resp = subagent_summarize(frames, cfg.noise_p, stream, video.alphabet);
    } else {
      resp.error = true;
      resp.summary_text = call.schema == CallSchema::Malformed ? "error: unparseable call"
                                                               : "error: invalid crop window";
    }
    resp.call_index = int(idx);
    resp.window = {call.start_time, call.end_time};
    double latency = cfg.latency_c0 + cfg.latency_c1 * resp.frames_reported;
    if (mode == DispatchMode::Parallel)
      result.turn_latency = std::max(result.turn_latency, latency);
    else
      result.turn_latency += latency;
    result.responses.push_back(std::move(resp));
  }
  return result;
}

bool solvable_from_overview(const PromptInstance& prompt) {
  return overview(prompt.video, prompt.budget_n).event_index >= 0;
}

std::string render_tool_responses(const std::vector<ToolResponse>& responses) {
  std::string out;
  for (const ToolResponse& r : responses) {
    out += "<tool_response>\n";
    out += r.summary_text;
    out += "\n</tool_response>\n";
  }
  return out;
}

}  // namespace vtlab
