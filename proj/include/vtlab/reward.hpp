#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "vtlab/rollout_parser.hpp"

namespace vtlab {

enum class TaskKind { MCQ, OpenEnded, TemporalGrounding };

struct TimeWindow {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

// Reference answer for one prompt. MCQ and open-ended tasks use `text`
// (option letter / reference phrase); temporal grounding uses `window`.
struct GroundTruth {
  std::string text;
  std::optional<TimeWindow> window;
};

struct BaseCredits {
  double think_content = 0.2;
  double answer_open = 0.3;
  double answer_close = 0.2;
  double think_then_tool = 0.3;
  double balanced = 0.1;
};

struct RewardConfig {
  double lambda_fmt = 1.0;
  double lambda_anchor = 0.5;
  double alpha = 0.4;  // think span closed
  double beta = 0.3;   // think open -> think close -> answer open, in order
  double gamma = 0.3;  // think opened, never closed
  BaseCredits base_credits;
  int think_content_min_chars = 10;
  bool answer_suffix_mode = true;  // off: base format collapses to all-or-nothing
  double tool_bonus_per_call = 0.05;
  int tool_bonus_cap_calls = 8;
  double repeated_window_penalty = 0.0;  // per duplicate window beyond the first
};

struct RewardBreakdown {
  double r_acc = 0.0;
  double r_base = 0.0;
  double r_anchor = 0.0;
  double r_fmt = 0.0;  // r_base + lambda_anchor * r_anchor
  double r_tool = 0.0;
  double total = 0.0;  // 0 when short_circuited; components still reported
  bool short_circuited = false;
};

// Task-appropriate match in [0,1]. Throws std::invalid_argument when the
// ground truth does not carry the shape the task kind requires.
double accuracy_reward(std::string_view answer, const GroundTruth& gt, TaskKind kind);

// Bag-of-tokens F1 after lowercasing and mapping ASCII punctuation to spaces.
double token_f1(std::string_view a, std::string_view b);

double temporal_iou(const TimeWindow& a, const TimeWindow& b);

// First "S, E" / "S to E" / "S - E" number pair with S < E found in the text.
std::optional<TimeWindow> parse_time_window(std::string_view text);

double base_format_reward(const ParsedRollout& parsed, const RewardConfig& cfg);
double anchor_reward(const ParsedRollout& parsed, const RewardConfig& cfg);
double tool_bonus(const ParsedRollout& parsed, const RewardConfig& cfg);

RewardBreakdown composite_reward(std::string_view text, const GroundTruth& gt, TaskKind kind,
                                 const RewardConfig& cfg);

std::string_view task_kind_name(TaskKind kind);
std::optional<TaskKind> task_kind_from(std::string_view name);

}  // namespace vtlab
