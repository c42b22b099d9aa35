#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vtlab/reward.hpp"
#include "vtlab/rollout_parser.hpp"

namespace vtlab {

constexpr int kBucketCount = 12;
constexpr int kCropFrameCap = 16;

struct EnvConfig {
  int length_s = 600;
  int alphabet = 8;
  int event_halfwidth_s = 5;  // grounding target is [t*-w, t*+w]
  double noise_p = 0.0;
  double latency_c0 = 2.0;
  double latency_c1 = 0.5;
  double task_mix_mcq = 1.0;
  double task_mix_open = 1.0;
  double task_mix_grounding = 1.0;
  std::vector<int> budget_choices = {4, 8, 16, 32, 64};
};

// One symbol per second; the flagged event second is the only distinguished
// frame, so locating it is the whole game.
struct SyntheticVideo {
  int length_s = 0;
  int alphabet = 0;
  std::vector<int> symbols;
  int event_time = 0;    // t*, hidden from the policy
  int event_symbol = 0;  // symbols[event_time]
  TimeWindow gt_window;
  uint64_t seed = 0;
};

struct PromptInstance {
  SyntheticVideo video;
  TaskKind kind = TaskKind::MCQ;
  std::string question;
  std::vector<std::string> options;  // MCQ only, four symbol names
  int correct_option = 0;            // MCQ only, index into options
  GroundTruth ground_truth;
  int budget_n = 64;
  int bucket_hint = 0;  // coarse event location, also stated in the question
};

struct Observation {
  std::vector<int> frame_indices;  // strictly increasing second indices
  std::vector<int> frame_symbols;
  int event_index = -1;  // position of t* within frame_indices, -1 if unseen
};

struct Frame {
  int second = 0;
  int symbol = 0;
  bool flagged = false;  // the event frame
};

struct ToolResponse {
  int call_index = 0;
  TimeWindow window;
  std::string summary_text;
  int noise_flips = 0;
  bool error = false;
  int frames_reported = 0;
  bool has_event = false;           // a flagged line is present
  int event_second = 0;             // valid when has_event
  int event_symbol_displayed = 0;   // post-noise symbol on the flagged line
};

enum class DispatchMode { Parallel, Sequential };

struct DispatchResult {
  std::vector<ToolResponse> responses;  // response i answers call i
  double turn_latency = 0.0;            // max over calls (parallel) or sum (sequential)
};

const std::array<std::string_view, 16>& symbol_names();
std::string_view symbol_name(int symbol);

int bucket_of(int second, int length_s);
double bucket_start(int bucket, int length_s);
double bucket_end(int bucket, int length_s);

// Throws std::invalid_argument on an invalid config.
void validate_env_config(const EnvConfig& cfg);

SyntheticVideo make_video(uint64_t seed, const EnvConfig& cfg);
PromptInstance make_prompt(uint64_t seed, const EnvConfig& cfg);

// Uniform subsample of n seconds (ceiling form, n=1 -> {0}); n >= length
// saturates to every second.
Observation overview(const SyntheticVideo& video, int n);
std::string render_observation(const Observation& obs);

// Frames at 1 fps in [start_s, end_s), capped at kCropFrameCap by uniform
// subsampling. The flagged frame is always kept when the window covers it.
// Window must satisfy 0 <= start < end <= length.
std::vector<Frame> crop_video(const SyntheticVideo& video, double start_s, double end_s);

// Textual summary of a crop; each symbol is independently swapped for a
// uniformly chosen wrong one with probability noise_p. Seconds never flip.
ToolResponse subagent_summarize(const std::vector<Frame>& frames, double noise_p,
                                uint64_t stream_seed, int alphabet);

// Executes one assistant turn's calls. Invalid windows become error
// responses; the batch never fails wholesale. Per-call randomness is seeded
// from (video seed, window, call index) so replay is order-independent.
DispatchResult dispatch(const std::vector<ToolCallRecord>& calls, const SyntheticVideo& video,
                        const EnvConfig& cfg, DispatchMode mode);

// True iff the overview at the prompt's budget shows the flagged second.
// Test/acceptance oracle; the policy never consults it.
bool solvable_from_overview(const PromptInstance& prompt);

std::string render_tool_responses(const std::vector<ToolResponse>& responses);

inline RewardBreakdown composite_reward(std::string_view text, const PromptInstance& prompt,
                                        const RewardConfig& cfg) {
  return composite_reward(text, prompt.ground_truth, prompt.kind, cfg);
}

}  // namespace vtlab
