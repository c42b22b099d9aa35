#include "vtlab/trace_convert.hpp"

#include <cctype>
#include <cstdlib>
#include <stdexcept>

#include "json.hpp"
#include "vtlab/util.hpp"

namespace vtlab {

namespace {

constexpr uint64_t kSaltCorpus = 0x636f7270ULL;

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_';
}

// Sentence boundaries are '.', '!', '?', and newlines; a '.' followed by a
// digit is a decimal point, not a boundary.
std::vector<std::string> split_sentences(std::string_view prose) {
  std::vector<std::string> out;
  size_t begin = 0;
  for (size_t i = 0; i <= prose.size(); ++i) {
    bool brk;
    if (i == prose.size()) {
      brk = true;
    } else if (prose[i] == '\n' || prose[i] == '!' || prose[i] == '?') {
      brk = true;
    } else if (prose[i] == '.') {
      brk = i + 1 >= prose.size() || !is_digit(prose[i + 1]);
    } else {
      brk = false;
    }
    if (!brk) continue;
    size_t end = (i < prose.size() && prose[i] != '\n') ? i + 1 : i;
    std::string s = trim(prose.substr(begin, end > begin ? end - begin : 0));
    if (!s.empty()) out.push_back(std::move(s));
    begin = i + 1;
  }
  return out;
}

bool mentions_inside(std::string_view text, double window_start, double window_end) {
  for (double v : mentioned_timestamps(text))
    if (v >= window_start && v <= window_end) return true;
  return false;
}

std::string summarize_turn(const SequentialTurn& turn, const ConvertOptions& opts) {
  if (turn.response_kind == ResponseKind::Text) return turn.response_payload;
  std::string prose = trim(strip_tool_machinery(turn.continuation_text));
  double s = turn.tool_call.start_time;
  double e = turn.tool_call.end_time;
  std::string picked;
  for (const std::string& sentence : split_sentences(prose)) {
    if (!mentions_inside(sentence, s, e)) continue;
    if (!picked.empty()) picked.push_back(' ');
    picked += sentence;
  }
  if (!picked.empty()) return picked;
  std::string out = "segment [";
  append_double(out, s);
  out += ", ";
  append_double(out, e);
  out += "]";
  std::string excerpt = prose.size() > opts.summary_excerpt_chars
                            ? trim(std::string_view(prose).substr(0, opts.summary_excerpt_chars))
                            : prose;
  if (!excerpt.empty()) {
    out += ": ";
    out += excerpt;
  }
  return out;
}

void check_call(const ToolCallRecord& call, size_t turn, size_t slot,
                TraceDiagnostics& diag) {
  std::string at = "turn " + std::to_string(turn + 1) + " call " + std::to_string(slot + 1);
  if (call.schema == CallSchema::Malformed) diag.problems.push_back(at + ": malformed block");
  if (!(call.start_time < call.end_time)) diag.problems.push_back(at + ": inverted window");
}

std::string first_think_text(std::string_view content) {
  constexpr std::string_view kOpen = "<think>";
  constexpr std::string_view kClose = "</think>";
  size_t open = content.find(kOpen);
  if (open == std::string_view::npos) return {};
  size_t begin = open + kOpen.size();
  size_t close = content.find(kClose, begin);
  if (close == std::string_view::npos) return {};
  return trim(content.substr(begin, close - begin));
}

}  // namespace

std::vector<double> mentioned_timestamps(std::string_view text) {
  std::vector<double> out;
  for (size_t i = 0; i < text.size(); ++i) {
    // t=<number>, not embedded in a longer identifier such as "start=".
    if (text[i] == 't' && i + 2 < text.size() && text[i + 1] == '=' && is_digit(text[i + 2]) &&
        (i == 0 || !word_char(text[i - 1]))) {
      size_t j = i + 2;
      while (j < text.size() && is_digit(text[j])) ++j;
      if (j < text.size() && text[j] == '.' && j + 1 < text.size() && is_digit(text[j + 1])) {
        ++j;
        while (j < text.size() && is_digit(text[j])) ++j;
      }
      out.push_back(std::strtod(std::string(text.substr(i + 2, j - i - 2)).c_str(), nullptr));
      i = j - 1;
      continue;
    }
    // MM:SS with exactly two trailing digits; hh:mm:ss forms are ignored.
    if (text[i] == ':' && i > 0 && is_digit(text[i - 1])) {
      size_t mb = i;
      while (mb > 0 && is_digit(text[mb - 1])) --mb;
      if (i - mb > 4) continue;
      if (mb > 0 && text[mb - 1] == ':') continue;
      if (i + 2 >= text.size() || !is_digit(text[i + 1]) || !is_digit(text[i + 2])) continue;
      if (i + 3 < text.size() && (is_digit(text[i + 3]) || text[i + 3] == ':')) continue;
      int minutes = std::atoi(std::string(text.substr(mb, i - mb)).c_str());
      int seconds = (text[i + 1] - '0') * 10 + (text[i + 2] - '0');
      if (seconds >= 60) continue;
      out.push_back(60.0 * minutes + seconds);
      i += 2;
    }
  }
  return out;
}

bool cross_references(std::string_view later_text, double window_start, double window_end,
                      const ConvertOptions& opts) {
  if (mentions_inside(later_text, window_start, window_end)) return true;
  std::string lower = to_lower(later_text);
  for (const std::string& marker : opts.refinement_markers)
    if (!marker.empty() && lower.find(to_lower(marker)) != std::string::npos) return true;
  return false;
}

bool independent(const SequentialTurn& earlier, const SequentialTurn& later,
                 const ConvertOptions& opts) {
  if (earlier.tool_call.schema == CallSchema::Malformed ||
      later.tool_call.schema == CallSchema::Malformed)
    throw std::invalid_argument("independent: malformed call");
  bool disjoint = earlier.tool_call.end_time < later.tool_call.start_time ||
                  later.tool_call.end_time < earlier.tool_call.start_time;
  if (!disjoint) return false;
  return !cross_references(later.continuation_text, earlier.tool_call.start_time,
                           earlier.tool_call.end_time, opts);
}

ParallelTrace convert(const SequentialTrace& seq, const ConvertOptions& opts) {
  ParallelTrace out;
  out.final_answer = seq.final_answer;
  size_t i = 0;
  while (i < seq.turns.size()) {
    size_t j = i + 1;
    while (j < seq.turns.size()) {
      bool ok = true;
      for (size_t k = i; k < j && ok; ++k) ok = independent(seq.turns[k], seq.turns[j], opts);
      if (!ok) break;
      ++j;
    }
    MergedTurn mt;
    for (size_t k = i; k < j; ++k) {
      const SequentialTurn& t = seq.turns[k];
      if (!mt.think_text.empty() && !t.think_text.empty()) mt.think_text.push_back('\n');
      mt.think_text += t.think_text;
      mt.calls.push_back(t.tool_call);
      mt.summaries.push_back(summarize_turn(t, opts));
    }
    out.merged_turns.push_back(std::move(mt));
    i = j;
  }
  return out;
}

TraceDiagnostics validate_trace(const SequentialTrace& trace) {
  TraceDiagnostics diag;
  for (size_t t = 0; t < trace.turns.size(); ++t)
    check_call(trace.turns[t].tool_call, t, 0, diag);
  if (trim(trace.final_answer).empty()) diag.problems.push_back("empty final answer");
  diag.valid = diag.problems.empty();
  return diag;
}

TraceDiagnostics validate_trace(const ParallelTrace& trace) {
  TraceDiagnostics diag;
  for (size_t t = 0; t < trace.merged_turns.size(); ++t) {
    const MergedTurn& mt = trace.merged_turns[t];
    for (size_t c = 0; c < mt.calls.size(); ++c) check_call(mt.calls[c], t, c, diag);
    for (size_t a = 0; a < mt.calls.size(); ++a) {
      for (size_t b = a + 1; b < mt.calls.size(); ++b) {
        bool disjoint = mt.calls[a].end_time < mt.calls[b].start_time ||
                        mt.calls[b].end_time < mt.calls[a].start_time;
        if (!disjoint)
          diag.problems.push_back("turn " + std::to_string(t + 1) +
                                  ": overlapping windows in one merged turn");
      }
    }
  }
  if (trim(trace.final_answer).empty()) diag.problems.push_back("empty final answer");
  diag.valid = diag.problems.empty();
  return diag;
}

SequentialTrace sequential_from_messages(const std::vector<ChatMessage>& messages) {
  struct Seg {
    const std::string* assistant = nullptr;
    const std::string* tool = nullptr;
  };
  std::vector<Seg> segs;
  bool started = false;
  for (const ChatMessage& m : messages) {
    if (!started && m.role != "assistant" && m.role != "tool") continue;  // prompt prefix
    started = true;
    if (m.role == "assistant") {
      segs.push_back(Seg{&m.content, nullptr});
    } else if (m.role == "tool") {
      if (segs.empty() || segs.back().tool)
        throw std::invalid_argument("trace messages: tool response without a pending call");
      segs.back().tool = &m.content;
    } else {
      throw std::invalid_argument("trace messages: unexpected role '" + m.role +
                                  "' inside the turn list");
    }
  }
  if (segs.empty()) throw std::invalid_argument("trace messages: no assistant turns");
  if (segs.back().tool)
    throw std::invalid_argument("trace messages: trailing tool response");

  SequentialTrace trace;
  for (size_t k = 0; k + 1 < segs.size(); ++k) {
    const std::string& content = *segs[k].assistant;
    ParsedRollout parsed = parse_rollout(content);
    if (parsed.tool_calls.size() != 1)
      throw std::invalid_argument("trace messages: each assistant turn needs exactly one tool call");
    if (!segs[k].tool)
      throw std::invalid_argument("trace messages: call without a tool response");
    SequentialTurn turn;
    turn.think_text = first_think_text(content);
    turn.tool_call = parsed.tool_calls.front();
    turn.response_payload = *segs[k].tool;
    turn.response_kind = turn.response_payload.rfind("frames:", 0) == 0 ? ResponseKind::Frames
                                                                        : ResponseKind::Text;
    turn.continuation_text = trim(strip_tool_machinery(*segs[k + 1].assistant));
    trace.turns.push_back(std::move(turn));
  }
  const std::string& last = *segs.back().assistant;
  if (!parse_rollout(last).tool_calls.empty())
    throw std::invalid_argument("trace messages: final assistant message must not call tools");
  trace.final_answer = extract_answer(last);
  return trace;
}

std::vector<ChatMessage> parallel_to_messages(const ParallelTrace& trace) {
  std::vector<ChatMessage> out;
  for (const MergedTurn& mt : trace.merged_turns) {
    std::string content = "<think>" + mt.think_text + "</think>\n";
    for (const ToolCallRecord& c : mt.calls) {
      bool legacy = c.schema == CallSchema::LegacyCode;
      content += legacy ? "<tool_code>\n" : "<tool_call>\n";
      content += legacy ? legacy_call_body(c.video_ref, c.start_time, c.end_time)
                        : native_call_body(c.video_ref, c.start_time, c.end_time);
      content += legacy ? "\n</tool_code>\n" : "\n</tool_call>\n";
    }
    out.push_back({"assistant", std::move(content)});
    std::string resp;
    for (size_t i = 0; i < mt.summaries.size(); ++i) {
      resp += "call " + std::to_string(i + 1) + ": " + mt.summaries[i];
      if (i + 1 < mt.summaries.size()) resp.push_back('\n');
    }
    out.push_back({"tool", std::move(resp)});
  }
  out.push_back({"assistant", "<answer>" + trace.final_answer + "</answer>"});
  return out;
}

std::vector<ChatMessage> sequential_to_messages(const SequentialTrace& trace) {
  std::vector<ChatMessage> out;
  for (size_t k = 0; k < trace.turns.size(); ++k) {
    const SequentialTurn& t = trace.turns[k];
    std::string content = "<think>" + t.think_text + "</think>\n";
    if (k > 0 && !trace.turns[k - 1].continuation_text.empty())
      content += trace.turns[k - 1].continuation_text + "\n";
    bool legacy = t.tool_call.schema == CallSchema::LegacyCode;
    content += legacy ? "<tool_code>\n" : "<tool_call>\n";
    content += legacy
                   ? legacy_call_body(t.tool_call.video_ref, t.tool_call.start_time,
                                      t.tool_call.end_time)
                   : native_call_body(t.tool_call.video_ref, t.tool_call.start_time,
                                      t.tool_call.end_time);
    content += legacy ? "\n</tool_code>" : "\n</tool_call>";
    out.push_back({"assistant", std::move(content)});
    out.push_back({"tool", t.response_payload});
  }
  std::string last;
  if (!trace.turns.empty() && !trace.turns.back().continuation_text.empty())
    last = trace.turns.back().continuation_text + "\n";
  last += "<answer>" + trace.final_answer + "</answer>";
  out.push_back({"assistant", std::move(last)});
  return out;
}

std::vector<ChatMessage> messages_from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("corpus line: ") + e.what());
  }
  if (!j.is_object() || !j.contains("messages") || !j["messages"].is_array())
    throw std::invalid_argument("corpus line: expected an object with a messages array");
  std::vector<ChatMessage> out;
  for (const auto& m : j["messages"]) {
    if (!m.is_object() || !m.contains("role") || !m.contains("content") ||
        !m["role"].is_string() || !m["content"].is_string())
      throw std::invalid_argument("corpus line: each message needs string role and content");
    out.push_back({m["role"].get<std::string>(), m["content"].get<std::string>()});
  }
  return out;
}

std::string messages_to_json_line(const std::vector<ChatMessage>& messages) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ChatMessage& m : messages)
    arr.push_back(nlohmann::ordered_json{{"role", m.role}, {"content", m.content}});
  nlohmann::ordered_json j;
  j["messages"] = std::move(arr);
  return j.dump();
}

std::vector<SequentialTrace> generate_sequential_corpus(const TraceCorpusConfig& cfg) {
  if (cfg.traces < 0) throw std::invalid_argument("trace corpus: negative count");
  if (cfg.min_turns < 1 || cfg.max_turns < cfg.min_turns)
    throw std::invalid_argument("trace corpus: bad turn range");
  if (cfg.refine_p < 0.0 || cfg.refine_p > 1.0)
    throw std::invalid_argument("trace corpus: refine_p must lie in [0, 1]");
  static constexpr std::string_view kColors[] = {"red", "blue", "green", "amber"};
  std::vector<SequentialTrace> out;
  out.reserve(size_t(cfg.traces));
  for (int t = 0; t < cfg.traces; ++t) {
    Rng rng(mix_seed(cfg.seed, kSaltCorpus, uint64_t(t)));
    int turns = cfg.min_turns + int(rand_below(rng, uint64_t(cfg.max_turns - cfg.min_turns + 1)));
    SequentialTrace trace;
    double cursor = 10.0 + double(rand_below(rng, 30));
    for (int k = 0; k < turns; ++k) {
      SequentialTurn turn;
      double len = 5.0 + double(rand_below(rng, 16));
      double s = cursor;
      double e = s + len;
      cursor = e + 1.0 + double(rand_below(rng, 30));
      turn.think_text = "window " + std::to_string(k + 1) + " seems promising";
      turn.tool_call.name = "crop_video";
      turn.tool_call.video_ref = "clip.mp4";
      turn.tool_call.start_time = s;
      turn.tool_call.end_time = e;
      turn.tool_call.schema = CallSchema::NativeCall;
      turn.response_kind = ResponseKind::Frames;
      std::string payload = "frames: sampled [";
      append_double(payload, s);
      payload += ", ";
      append_double(payload, e);
      payload += ")";
      turn.response_payload = std::move(payload);
      std::string_view color = kColors[rand_below(rng, 4)];
      bool refine = k > 0 && rand_unit(rng) < cfg.refine_p;
      std::string cont;
      if (refine) {
        // Cites a timestamp inside the previous window, so the converter must
        // refuse to merge this turn with its predecessor.
        const ToolCallRecord& prev = trace.turns.back().tool_call;
        double x = 0.5 * (prev.start_time + prev.end_time);
        cont = "zooming in near t=";
        append_double(cont, x);
        cont += " sharpens the earlier hit.";
      } else {
        double mid = 0.5 * (s + e);
        cont = "frames show ";
        cont += color;
        cont += " around t=";
        append_double(cont, mid);
        cont += ".";
      }
      turn.continuation_text = std::move(cont);
      trace.turns.push_back(std::move(turn));
    }
    trace.final_answer = std::string("the flagged symbol is ") +
                         std::string(kColors[rand_below(rng, 4)]);
    out.push_back(std::move(trace));
  }
  return out;
}

}  // namespace vtlab
