#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vtlab/rollout_parser.hpp"

namespace vtlab {

enum class ResponseKind { Frames, Text };

// One assistant turn of a single-call sequential trace, plus the response it
// received and the assistant text that consumed that response.
struct SequentialTurn {
  std::string think_text;
  ToolCallRecord tool_call;
  ResponseKind response_kind = ResponseKind::Frames;
  std::string response_payload;
  std::string continuation_text;
};

struct SequentialTrace {
  std::vector<SequentialTurn> turns;
  std::string final_answer;
};

struct MergedTurn {
  std::string think_text;
  std::vector<ToolCallRecord> calls;      // pairwise disjoint windows
  std::vector<std::string> summaries;     // text, one per call, never frames
};

struct ParallelTrace {
  std::vector<MergedTurn> merged_turns;
  std::string final_answer;
};

struct ConvertOptions {
  // A later continuation containing any of these (case-insensitive substring)
  // is treated as refining an earlier response and blocks the merge.
  std::vector<std::string> refinement_markers = {"zoom",      "refine",    "narrow",
                                                 "closer look", "follow up", "follow-up"};
  size_t summary_excerpt_chars = 120;
};

// Timestamps a prose fragment mentions, in seconds: "t=<number>" and "MM:SS"
// forms only.
std::vector<double> mentioned_timestamps(std::string_view text);

// True when `later_text` cites a timestamp inside [window_start, window_end]
// or carries a refinement marker.
bool cross_references(std::string_view later_text, double window_start, double window_end,
                      const ConvertOptions& opts);

// Mergeable test for an earlier/later turn pair: closed windows disjoint and
// the later continuation does not cross-reference the earlier response.
// Throws std::invalid_argument when either call is malformed.
bool independent(const SequentialTurn& earlier, const SequentialTurn& later,
                 const ConvertOptions& opts);

// Greedy left-to-right merge of maximal consecutive runs that stay pairwise
// independent. Frame responses are replaced by text summaries pulled from the
// sentences of the continuation that mention the call's window (templated
// fallback otherwise); think texts concatenate in order; the final answer is
// preserved verbatim.
ParallelTrace convert(const SequentialTrace& seq, const ConvertOptions& opts = {});

struct TraceDiagnostics {
  bool valid = true;
  std::vector<std::string> problems;
};

// Rejects inverted call windows, empty final answers, and malformed call
// blocks. The parallel overload additionally rejects overlapping windows
// inside one merged turn.
TraceDiagnostics validate_trace(const SequentialTrace& trace);
TraceDiagnostics validate_trace(const ParallelTrace& trace);

struct ChatMessage {
  std::string role;  // "user", "assistant", "tool", ...
  std::string content;
};

// Interpret a chat transcript as a sequential trace. Leading non-assistant
// messages are skipped; after that the shape must alternate assistant (one
// tool block each) / tool, ending on an assistant answer message. A tool
// message whose content starts with "frames:" is a frame-payload placeholder.
// Throws std::invalid_argument on any other shape.
SequentialTrace sequential_from_messages(const std::vector<ChatMessage>& messages);

// One assistant message per merged turn, one tool message carrying its
// numbered summaries, then the final answer message.
std::vector<ChatMessage> parallel_to_messages(const ParallelTrace& trace);

// Inverse-direction rendering for corpus generation: one assistant message
// per turn (think, the prior turn's continuation prose, one call block), its
// tool response, then the final answer message carrying the last
// continuation. sequential_from_messages() accepts the result.
std::vector<ChatMessage> sequential_to_messages(const SequentialTrace& trace);

// JSONL corpus record {"messages": [{"role": ..., "content": ...}, ...]}.
// Throws std::invalid_argument on unparseable lines.
std::vector<ChatMessage> messages_from_json_line(const std::string& line);
std::string messages_to_json_line(const std::vector<ChatMessage>& messages);

// Synthetic single-call corpus for exercising the converter: each turn crops
// a fresh window; with probability refine_p a turn instead refines its
// predecessor (citing a timestamp inside the predecessor's window), which the
// converter must keep on its own turn.
struct TraceCorpusConfig {
  int traces = 64;
  int min_turns = 1;
  int max_turns = 6;
  double refine_p = 0.3;
  uint64_t seed = 1;
};

std::vector<SequentialTrace> generate_sequential_corpus(const TraceCorpusConfig& cfg);

}  // namespace vtlab
