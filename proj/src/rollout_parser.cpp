#include "vtlab/rollout_parser.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>

#include "json.hpp"
#include "vtlab/util.hpp"

namespace vtlab {
namespace {

// Tag ids. Scan states are per family; matching is FIFO (flat delimiters).
enum Tag {
  kThinkOpen,
  kThinkClose,
  kCallOpen,
  kCallClose,
  kCodeOpen,
  kCodeClose,
  kAnswerOpen,
  kAnswerClose,
  kTagCount,
};

constexpr std::string_view kTagText[kTagCount] = {
    "<think>", "</think>", "<tool_call>", "</tool_call>",
    "<tool_code>", "</tool_code>", "<answer>", "</answer>",
};

constexpr std::string_view kTurnMarker = "<|im_start|>";
constexpr std::string_view kResponseOpen = "<tool_response>";
constexpr std::string_view kResponseClose = "</tool_response>";

struct TagEvent {
  size_t pos;
  Tag tag;
};

// All tag occurrences in order of appearance.
std::vector<TagEvent> scan_tags(std::string_view text) {
  std::vector<TagEvent> events;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '<') continue;
    for (int t = 0; t < kTagCount; ++t) {
      std::string_view tag = kTagText[t];
      if (text.compare(i, tag.size(), tag) == 0) {
        events.push_back({i, Tag(t)});
        i += tag.size() - 1;
        break;
      }
    }
  }
  return events;
}

// Position just past the event's tag text.
size_t tag_end(const TagEvent& e) { return e.pos + kTagText[e.tag].size(); }

bool parse_number(std::string_view s, double* out) {
  std::string buf(trim_view(s));
  if (buf.empty()) return false;
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return false;
  *out = v;
  return true;
}

struct CallArgs {
  std::string name;
  std::string video_ref;
  double start = 0.0;
  double end = 0.0;
};

// Strict schema body: {"name": ..., "arguments": {"video_path": ..., "start_time": ..., "end_time": ...}}
bool parse_json_body(std::string_view body, CallArgs* out) {
  size_t open = body.find('{');
  size_t close = body.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close <= open)
    return false;
  auto j = nlohmann::json::parse(body.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  if (!j.contains("name") || !j["name"].is_string()) return false;
  if (!j.contains("arguments") || !j["arguments"].is_object()) return false;
  const auto& args = j["arguments"];
  if (!args.contains("video_path") || !args["video_path"].is_string()) return false;
  if (!args.contains("start_time") || !args["start_time"].is_number()) return false;
  if (!args.contains("end_time") || !args["end_time"].is_number()) return false;
  out->name = j["name"].get<std::string>();
  out->video_ref = args["video_path"].get<std::string>();
  out->start = args["start_time"].get<double>();
  out->end = args["end_time"].get<double>();
  return true;
}

// Function-call style body: crop_video("clip.mp4", 80, 150) or
// crop_video("clip.mp4", start=80, end=150), possibly wrapped in code chatter.
bool parse_call_body(std::string_view body, CallArgs* out) {
  size_t paren = body.find('(');
  if (paren == std::string_view::npos) return false;
  // Identifier directly before the parenthesis.
  size_t name_end = paren;
  while (name_end > 0 && std::isspace((unsigned char)body[name_end - 1])) --name_end;
  size_t name_begin = name_end;
  while (name_begin > 0) {
    char c = body[name_begin - 1];
    if (std::isalnum((unsigned char)c) || c == '_') --name_begin;
    else break;
  }
  if (name_begin == name_end) return false;
  out->name = std::string(body.substr(name_begin, name_end - name_begin));

  size_t close = body.find(')', paren);
  std::string_view inner =
      body.substr(paren + 1, (close == std::string_view::npos ? body.size() : close) - paren - 1);

  // First quoted string is the video reference.
  size_t q0 = inner.find('"');
  if (q0 != std::string_view::npos) {
    size_t q1 = inner.find('"', q0 + 1);
    if (q1 != std::string_view::npos) out->video_ref = std::string(inner.substr(q0 + 1, q1 - q0 - 1));
  }

  // Keyword arguments win over positional order when present.
  auto keyword = [&](std::string_view key, double* value) {
    size_t pos = 0;
    while ((pos = inner.find(key, pos)) != std::string_view::npos) {
      size_t after = pos + key.size();
      while (after < inner.size() && (std::isalnum((unsigned char)inner[after]) || inner[after] == '_'))
        ++after;  // skip the rest of a longer identifier such as start_time
      size_t eq = after;
      while (eq < inner.size() && std::isspace((unsigned char)inner[eq])) ++eq;
      if (eq < inner.size() && (inner[eq] == '=' || inner[eq] == ':')) {
        ++eq;
        while (eq < inner.size() && std::isspace((unsigned char)inner[eq])) ++eq;
        size_t num_end = eq;
        while (num_end < inner.size() &&
               (std::isdigit((unsigned char)inner[num_end]) || inner[num_end] == '.' ||
                inner[num_end] == '-' || inner[num_end] == '+'))
          ++num_end;
        if (num_end > eq && parse_number(inner.substr(eq, num_end - eq), value)) return true;
      }
      pos += key.size();
    }
    return false;
  };

  bool got_start = keyword("start", &out->start);
  bool got_end = keyword("end", &out->end);
  if (got_start && got_end) return true;

  // Positional: bare numbers outside quotes, in order.
  std::vector<double> numbers;
  bool in_quote = false;
  for (size_t i = 0; i < inner.size(); ++i) {
    char c = inner[i];
    if (c == '"') { in_quote = !in_quote; continue; }
    if (in_quote) continue;
    if (std::isdigit((unsigned char)c) ||
        ((c == '-' || c == '+') && i + 1 < inner.size() && std::isdigit((unsigned char)inner[i + 1]))) {
      size_t j = i + 1;
      while (j < inner.size() && (std::isdigit((unsigned char)inner[j]) || inner[j] == '.')) ++j;
      double v;
      if (parse_number(inner.substr(i, j - i), &v)) numbers.push_back(v);
      i = j - 1;
    }
  }
  if (numbers.size() < 2) return false;
  out->start = numbers[0];
  out->end = numbers[1];
  return true;
}

bool parse_call_args(std::string_view body, CallArgs* out) {
  if (parse_json_body(body, out)) return true;
  return parse_call_body(body, out);
}

struct Block {
  size_t open_pos;
  size_t body_begin;
  size_t body_end;
  bool native;
  bool closed;
};

// Per-family FIFO matching over the event stream; fills spans and blocks.
struct MatchState {
  std::vector<size_t> think_opens, answer_opens;
  size_t think_first_open = std::string_view::npos;
  size_t think_first_close_end = std::string_view::npos;  // end of the close matching the first open
  size_t think_first_open_end = 0;
  size_t answer_first_open = std::string_view::npos;
  size_t answer_first_open_end = 0;
  size_t answer_first_close_pos = std::string_view::npos;
  std::vector<Block> blocks;
  size_t unmatched_opens = 0;
};

MatchState match_events(std::string_view text, const std::vector<TagEvent>& events) {
  MatchState m;
  std::vector<size_t> think_q, answer_q;  // indices of unmatched opens (FIFO)
  std::vector<size_t> call_q, code_q;     // indices into m.blocks
  for (const TagEvent& e : events) {
    switch (e.tag) {
      case kThinkOpen:
        think_q.push_back(e.pos);
        if (m.think_first_open == std::string_view::npos) {
          m.think_first_open = e.pos;
          m.think_first_open_end = tag_end(e);
        }
        m.think_opens.push_back(e.pos);
        break;
      case kThinkClose:
        if (!think_q.empty()) {
          size_t open = think_q.front();
          think_q.erase(think_q.begin());
          if (open == m.think_first_open && m.think_first_close_end == std::string_view::npos)
            m.think_first_close_end = tag_end(e);
        }
        break;
      case kAnswerOpen:
        answer_q.push_back(e.pos);
        if (m.answer_first_open == std::string_view::npos) {
          m.answer_first_open = e.pos;
          m.answer_first_open_end = tag_end(e);
        }
        m.answer_opens.push_back(e.pos);
        break;
      case kAnswerClose:
        if (!answer_q.empty()) {
          size_t open = answer_q.front();
          answer_q.erase(answer_q.begin());
          if (open == m.answer_first_open && m.answer_first_close_pos == std::string_view::npos)
            m.answer_first_close_pos = e.pos;
        }
        break;
      case kCallOpen:
      case kCodeOpen:
        m.blocks.push_back({e.pos, tag_end(e), text.size(), e.tag == kCallOpen, false});
        (e.tag == kCallOpen ? call_q : code_q).push_back(m.blocks.size() - 1);
        break;
      case kCallClose:
      case kCodeClose: {
        auto& q = (e.tag == kCallClose) ? call_q : code_q;
        if (!q.empty()) {
          Block& b = m.blocks[q.front()];
          q.erase(q.begin());
          b.body_end = e.pos;
          b.closed = true;
        }
        break;
      }
      default:
        break;
    }
  }
  m.unmatched_opens = think_q.size() + answer_q.size() + call_q.size() + code_q.size();

  // An unclosed block's body runs to the next recognized tag or end of text.
  for (Block& b : m.blocks) {
    if (b.closed) continue;
    for (const TagEvent& e : events) {
      if (e.pos >= b.body_begin) { b.body_end = e.pos; break; }
    }
  }
  return m;
}

// Text after `pos` with tool blocks, tool responses, and stray tag literals removed.
std::string strip_tail(std::string_view text, size_t pos) {
  std::string out;
  out.reserve(text.size() - pos);
  size_t i = pos;
  while (i < text.size()) {
    if (text[i] == '<') {
      bool consumed = false;
      auto skip_span = [&](std::string_view open, std::string_view close) {
        if (text.compare(i, open.size(), open) != 0) return false;
        size_t end = text.find(close, i + open.size());
        if (end == std::string_view::npos) {
          // Unterminated: skip to the next recognized tag or end.
          size_t next = std::string_view::npos;
          for (int t = 0; t < kTagCount; ++t) {
            size_t p = text.find(kTagText[t], i + open.size());
            next = std::min(next, p);
          }
          i = (next == std::string_view::npos) ? text.size() : next;
        } else {
          i = end + close.size();
        }
        return true;
      };
      consumed = skip_span(kTagText[kCallOpen], kTagText[kCallClose]) ||
                 skip_span(kTagText[kCodeOpen], kTagText[kCodeClose]) ||
                 skip_span(kResponseOpen, kResponseClose);
      if (consumed) continue;
      for (int t = 0; t < kTagCount && !consumed; ++t) {
        if (text.compare(i, kTagText[t].size(), kTagText[t]) == 0) {
          i += kTagText[t].size();
          consumed = true;
        }
      }
      if (consumed) continue;
    }
    out.push_back(text[i]);
    ++i;
  }
  return out;
}


}  // namespace

std::string strip_tool_machinery(std::string_view text) { return strip_tail(text, 0); }

void append_double(std::string& out, double v) {
  // Shortest fixed-notation form that round-trips; timestamps and rewards
  // must stay plain decimals because the call parser does not read exponents.
  char buf[400];
  for (int prec = 0; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    if (std::strtod(buf, nullptr) == v) {
      out += buf;
      return;
    }
  }
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

ParsedRollout parse_rollout(std::string_view text) {
  ParsedRollout r;
  std::vector<TagEvent> events = scan_tags(text);
  MatchState m = match_events(text, events);

  r.think_opened = m.think_first_open != std::string_view::npos;
  r.think_closed = m.think_first_close_end != std::string_view::npos;
  if (r.think_opened) {
    size_t begin = m.think_first_open_end;
    size_t end;
    if (r.think_closed) {
      end = m.think_first_close_end - kTagText[kThinkClose].size();
    } else {
      end = text.size();
      for (const TagEvent& e : events)
        if (e.pos >= begin) { end = e.pos; break; }
    }
    r.think_content_length = end > begin ? end - begin : 0;
  }

  r.answer_opened = m.answer_first_open != std::string_view::npos;
  r.answer_closed = m.answer_first_close_pos != std::string_view::npos;
  if (r.answer_closed)
    r.answer_text = std::string(
        text.substr(m.answer_first_open_end, m.answer_first_close_pos - m.answer_first_open_end));

  bool block_before_close = false;
  for (const Block& b : m.blocks) {
    ToolCallRecord rec;
    CallArgs args;
    bool parsed = parse_call_args(text.substr(b.body_begin, b.body_end - b.body_begin), &args);
    if (parsed) {
      rec.name = args.name;
      rec.video_ref = args.video_ref;
      rec.start_time = args.start;
      rec.end_time = args.end;
    }
    if (b.closed && parsed && args.start < args.end)
      rec.schema = b.native ? CallSchema::NativeCall : CallSchema::LegacyCode;
    else
      rec.schema = CallSchema::Malformed;
    // Every block counts against the ordering, whatever its schema; a code
    // fence before the think close is exactly the habit the credit targets.
    if (r.think_closed && b.open_pos < m.think_first_close_end) block_before_close = true;
    r.tool_calls.push_back(std::move(rec));
  }

  if (r.think_closed) {
    r.think_before_tools = !block_before_close;
    r.answer_after_think = r.answer_opened && m.answer_first_open >= m.think_first_close_end;
  }

  r.balanced_pairs = m.unmatched_opens == 0;
  r.degenerate = detect_degenerate(text);
  return r;
}

std::string extract_answer(std::string_view text) {
  ParsedRollout r = parse_rollout(text);
  // Level 1: first complete answer span.
  if (r.answer_text) {
    std::string t = trim(*r.answer_text);
    if (!t.empty()) return t;
  }
  // Level 2: content after the first think close, tool machinery excised.
  size_t close = text.find(kTagText[kThinkClose]);
  if (close != std::string_view::npos) {
    std::string t = trim(strip_tail(text, close + kTagText[kThinkClose].size()));
    if (!t.empty()) return t;
  }
  // Level 3: last line with content once tag machinery is removed. Tag
  // literals never count as content, so closing a dangling tag at the end of
  // a transcript cannot change what this level extracts.
  auto lines = split_lines(text);
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::string t = trim(strip_tail(*it, 0));
    if (!t.empty()) return t;
  }
  // All lines are pure machinery: fall back to the raw last non-empty line so
  // only an all-whitespace transcript maps to the empty string.
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::string t = trim(*it);
    if (!t.empty()) return t;
  }
  return {};
}

bool detect_degenerate(std::string_view text) {
  std::vector<size_t> marks;
  size_t pos = 0;
  while ((pos = text.find(kTurnMarker, pos)) != std::string_view::npos) {
    marks.push_back(pos);
    pos += kTurnMarker.size();
  }
  for (size_t i = 0; i + 4 < marks.size(); ++i) {
    size_t span = marks[i + 4] + kTurnMarker.size() - marks[i];
    if (span < 300) return true;
  }
  return false;
}

ClosureStats closure_stats(const std::vector<std::string>& batch) {
  if (batch.empty()) throw std::invalid_argument("closure_stats: empty batch");
  ClosureStats s;
  for (const std::string& text : batch) {
    std::vector<TagEvent> events = scan_tags(text);
    std::vector<size_t> think_q, answer_q, call_q;
    for (const TagEvent& e : events) {
      switch (e.tag) {
        case kThinkOpen: s.think.opened++; think_q.push_back(e.pos); break;
        case kThinkClose:
          if (!think_q.empty()) { think_q.erase(think_q.begin()); s.think.closed++; }
          break;
        case kCallOpen: s.tool_call.opened++; call_q.push_back(e.pos); break;
        case kCallClose:
          if (!call_q.empty()) { call_q.erase(call_q.begin()); s.tool_call.closed++; }
          break;
        case kAnswerOpen: s.answer.opened++; answer_q.push_back(e.pos); break;
        case kAnswerClose:
          if (!answer_q.empty()) { answer_q.erase(answer_q.begin()); s.answer.closed++; }
          break;
        default: break;
      }
    }
    for (const ToolCallRecord& rec : parse_rollout(text).tool_calls) {
      if (rec.schema == CallSchema::NativeCall) s.native_calls++;
      if (rec.schema == CallSchema::LegacyCode) s.legacy_calls++;
    }
  }
  auto rate = [](TagFamilyStats& f) {
    f.closure_rate = f.opened == 0 ? 1.0 : double(f.closed) / double(f.opened);
  };
  rate(s.think);
  rate(s.tool_call);
  rate(s.answer);
  return s;
}

std::string native_call_body(const std::string& video_ref, double start, double end) {
  std::string out = "{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"";
  out += video_ref;
  out += "\", \"start_time\": ";
  append_double(out, start);
  out += ", \"end_time\": ";
  append_double(out, end);
  out += "}}";
  return out;
}

std::string legacy_call_body(const std::string& video_ref, double start, double end) {
  std::string out = "python\ncrop_video(\"";
  out += video_ref;
  out += "\", start=";
  append_double(out, start);
  out += ", end=";
  append_double(out, end);
  out += ")\n";
  return out;
}

std::string render_rollout(const ParsedRollout& rollout) {
  std::string out;
  if (rollout.think_opened) {
    out += "<think>";
    out.append(rollout.think_content_length, 'x');
    if (rollout.think_closed) out += "</think>\n";
  }
  for (const ToolCallRecord& rec : rollout.tool_calls) {
    bool native = rec.schema != CallSchema::LegacyCode;
    out += native ? "<tool_call>" : "<tool_code>";
    out += native ? native_call_body(rec.video_ref, rec.start_time, rec.end_time)
                  : legacy_call_body(rec.video_ref, rec.start_time, rec.end_time);
    out += native ? "</tool_call>\n" : "</tool_code>\n";
  }
  if (rollout.answer_opened) {
    out += "<answer>";
    if (rollout.answer_text) out += *rollout.answer_text;
    if (rollout.answer_closed) out += "</answer>";
  }
  return out;
}

}  // namespace vtlab
