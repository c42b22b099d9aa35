#include "vtlab/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vtlab/util.hpp"

namespace vtlab {

namespace {

// Option letters compare after trimming, shedding enclosing punctuation, and
// uppercasing, so "(b)" and "B." both match option B.
std::string normalize_option(std::string_view s) {
  std::string_view t = trim_view(s);
  while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.front()))) t.remove_prefix(1);
  while (!t.empty() && std::ispunct(static_cast<unsigned char>(t.back()))) t.remove_suffix(1);
  std::string out(t);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string> f1_tokens(std::string_view s) {
  std::vector<std::string> toks;
  std::string cur;
  for (char ch : s) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) toks.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) toks.push_back(std::move(cur));
  return toks;
}

}  // namespace

double token_f1(std::string_view a, std::string_view b) {
  std::vector<std::string> ta = f1_tokens(a);
  std::vector<std::string> tb = f1_tokens(b);
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, int> bag;
  for (const std::string& t : ta) ++bag[t];
  int overlap = 0;
  for (const std::string& t : tb) {
    auto it = bag.find(t);
    if (it != bag.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return 2.0 * overlap / static_cast<double>(ta.size() + tb.size());
}

double temporal_iou(const TimeWindow& a, const TimeWindow& b) {
  double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0.0) return 0.0;
  double uni = a.length() + b.length() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

std::optional<TimeWindow> parse_time_window(std::string_view text) {
  struct Num {
    double value;
    size_t begin, end;
  };
  std::vector<Num> nums;
  size_t i = 0;
  while (i < text.size()) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    if (j < text.size() && text[j] == '.') {
      size_t k = j + 1;
      while (k < text.size() && std::isdigit(static_cast<unsigned char>(text[k]))) ++k;
      if (k > j + 1) j = k;
    }
    std::string digits(text.substr(i, j - i));
    nums.push_back({std::strtod(digits.c_str(), nullptr), i, j});
    i = j;
  }
  for (size_t n = 0; n + 1 < nums.size(); ++n) {
    std::string sep;
    for (size_t p = nums[n].end; p < nums[n + 1].begin; ++p) {
      unsigned char c = static_cast<unsigned char>(text[p]);
      if (!std::isspace(c)) sep.push_back(static_cast<char>(std::tolower(c)));
    }
    bool joined = sep == "," || sep == "-" || sep == "to";
    if (joined && nums[n].value < nums[n + 1].value)
      return TimeWindow{nums[n].value, nums[n + 1].value};
  }
  return std::nullopt;
}

double accuracy_reward(std::string_view answer, const GroundTruth& gt, TaskKind kind) {
  switch (kind) {
    case TaskKind::MCQ:
      if (gt.window || gt.text.empty())
        throw std::invalid_argument("accuracy_reward: MCQ ground truth must be an option letter");
      return normalize_option(answer) == normalize_option(gt.text) ? 1.0 : 0.0;
    case TaskKind::OpenEnded:
      if (gt.window || gt.text.empty())
        throw std::invalid_argument(
            "accuracy_reward: open-ended ground truth must be a reference string");
      return token_f1(answer, gt.text);
    case TaskKind::TemporalGrounding: {
      if (!gt.window)
        throw std::invalid_argument(
            "accuracy_reward: temporal grounding needs a reference window");
      std::optional<TimeWindow> predicted = parse_time_window(answer);
      if (!predicted) return 0.0;
      return temporal_iou(*predicted, *gt.window);
    }
  }
  throw std::invalid_argument("accuracy_reward: unknown task kind");
}

double base_format_reward(const ParsedRollout& p, const RewardConfig& cfg) {
  const BaseCredits& c = cfg.base_credits;
  bool think_content =
      p.think_opened && p.think_content_length >= static_cast<size_t>(cfg.think_content_min_chars);
  if (!cfg.answer_suffix_mode) {
    bool all = think_content && p.answer_opened && p.answer_closed && p.think_before_tools &&
               p.balanced_pairs;
    return all ? 1.0 : 0.0;
  }
  double r = 0.0;
  if (think_content) r += c.think_content;
  if (p.answer_opened) r += c.answer_open;
  if (p.answer_closed) r += c.answer_close;
  if (p.think_before_tools) r += c.think_then_tool;
  if (p.balanced_pairs) r += c.balanced;
  return r;
}

double anchor_reward(const ParsedRollout& p, const RewardConfig& cfg) {
  double r = 0.0;
  if (p.think_closed) {
    r += cfg.alpha;
    if (p.answer_after_think) r += cfg.beta;
  } else if (p.think_opened) {
    r -= cfg.gamma;
  }
  return r;
}

double tool_bonus(const ParsedRollout& p, const RewardConfig& cfg) {
  int native = 0;
  std::map<std::pair<double, double>, int> windows;
  for (const ToolCallRecord& rec : p.tool_calls) {
    if (rec.schema != CallSchema::NativeCall) continue;
    ++native;
    ++windows[{rec.start_time, rec.end_time}];
  }
  double r = cfg.tool_bonus_per_call * std::min(native, cfg.tool_bonus_cap_calls);
  if (cfg.repeated_window_penalty > 0.0) {
    int duplicates = 0;
    for (const auto& [window, count] : windows) duplicates += count - 1;
    r -= cfg.repeated_window_penalty * duplicates;
  }
  return r;
}

RewardBreakdown composite_reward(std::string_view text, const GroundTruth& gt, TaskKind kind,
                                 const RewardConfig& cfg) {
  RewardBreakdown b;
  ParsedRollout parsed = parse_rollout(text);
  b.r_acc = accuracy_reward(extract_answer(text), gt, kind);
  b.r_base = base_format_reward(parsed, cfg);
  b.r_anchor = anchor_reward(parsed, cfg);
  b.r_fmt = b.r_base + cfg.lambda_anchor * b.r_anchor;
  b.r_tool = tool_bonus(parsed, cfg);
  b.short_circuited = parsed.degenerate;
  b.total = b.short_circuited ? 0.0 : b.r_acc + cfg.lambda_fmt * b.r_fmt + b.r_tool;
  return b;
}

std::string_view task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::MCQ:
      return "mcq";
    case TaskKind::OpenEnded:
      return "open_ended";
    case TaskKind::TemporalGrounding:
      return "temporal_grounding";
  }
  return "unknown";
}

std::optional<TaskKind> task_kind_from(std::string_view name) {
  if (name == "mcq") return TaskKind::MCQ;
  if (name == "open_ended") return TaskKind::OpenEnded;
  if (name == "temporal_grounding") return TaskKind::TemporalGrounding;
  return std::nullopt;
}

}  // namespace vtlab
