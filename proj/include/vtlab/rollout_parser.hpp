#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vtlab {

// Schema of one tool-call block found in a transcript.
//   NativeCall: <tool_call> block, closed, arguments parsed, start < end.
//   LegacyCode: <tool_code> block, closed, arguments parsed, start < end.
//   Malformed:  everything else (unclosed block, unparseable body, inverted window).
enum class CallSchema { NativeCall, LegacyCode, Malformed };

struct ToolCallRecord {
  std::string name;
  std::string video_ref;
  double start_time = 0.0;
  double end_time = 0.0;
  CallSchema schema = CallSchema::Malformed;
};

// Structural summary of a single rollout transcript. Tags are matched as flat,
// non-nesting delimiters per family in scan order: a close pairs with the
// earliest unmatched open of its family, so an "inner" open is left unmatched.
struct ParsedRollout {
  bool think_opened = false;
  bool think_closed = false;  // first think span has a matching close
  size_t think_content_length = 0;
  bool answer_opened = false;
  bool answer_closed = false;                // first answer span has a matching close
  std::optional<std::string> answer_text;    // content of the first complete answer span
  std::vector<ToolCallRecord> tool_calls;    // in order of appearance, both schemas
  bool think_before_tools = false;  // think closed and every tool block starts after it
  bool answer_after_think = false;  // first answer open comes after the first think close
  bool balanced_pairs = false;      // every opened structural tag has a matching close
  bool degenerate = false;          // turn-marker pile-up, see detect_degenerate
};

struct TagFamilyStats {
  size_t opened = 0;
  size_t closed = 0;
  double closure_rate = 1.0;  // closed / opened, 1.0 when nothing opened
};

struct ClosureStats {
  TagFamilyStats think;
  TagFamilyStats tool_call;  // native <tool_call> family only
  TagFamilyStats answer;
  size_t native_calls = 0;  // NativeCall records across the batch
  size_t legacy_calls = 0;  // LegacyCode records across the batch
};

ParsedRollout parse_rollout(std::string_view text);

// Three-level answer recovery:
//   1. content of the first complete <answer> span;
//   2. text after the first </think>, tool blocks and tool responses excised;
//   3. last non-empty line of the transcript.
// Results are whitespace-trimmed; empty only for an all-whitespace transcript.
std::string extract_answer(std::string_view text);

// True when five or more turn-start markers are packed into fewer than 300
// characters anywhere in the transcript (the collapsed-babble signature).
bool detect_degenerate(std::string_view text);

ClosureStats closure_stats(const std::vector<std::string>& batch);

// Canonical re-rendering of a parsed rollout; think content is replaced by a
// placeholder run of equal length. Well-formed transcripts round-trip through
// parse_rollout -> render_rollout -> parse_rollout unchanged.
std::string render_rollout(const ParsedRollout& rollout);

// Body text of a canonical native / legacy tool block (shared with the policy renderer).
std::string native_call_body(const std::string& video_ref, double start, double end);
std::string legacy_call_body(const std::string& video_ref, double start, double end);

// Text with tool blocks, tool responses, and stray tag literals removed; what
// remains is the prose of a transcript fragment.
std::string strip_tool_machinery(std::string_view text);

// Shortest decimal form that parses back to exactly the same double.
void append_double(std::string& out, double v);

}  // namespace vtlab
