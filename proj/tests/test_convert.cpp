#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cctype>
#include <random>
#include <regex>
#include <string>
#include <vector>

#include "doctest.h"
#include "vtlab/trace_convert.hpp"

using namespace vtlab;

namespace {

SequentialTurn turn(double s, double e, std::string cont,
                    ResponseKind kind = ResponseKind::Text,
                    std::string payload = "looked fine") {
  SequentialTurn t;
  t.think_text = "note";
  t.tool_call.name = "crop_video";
  t.tool_call.video_ref = "v.mp4";
  t.tool_call.start_time = s;
  t.tool_call.end_time = e;
  t.tool_call.schema = CallSchema::NativeCall;
  t.response_kind = kind;
  t.response_payload = std::move(payload);
  t.continuation_text = std::move(cont);
  return t;
}

SequentialTrace trace(std::vector<SequentialTurn> turns) {
  SequentialTrace t;
  t.turns = std::move(turns);
  t.final_answer = "the symbol is red";
  return t;
}

// Regex-based reimplementation of the timestamp scanner, independent of the
// hand-rolled one in the library.
std::vector<double> oracle_timestamps(const std::string& text) {
  std::vector<double> out;
  static const std::regex t_eq(R"((^|[^A-Za-z0-9_])t=(\d+(?:\.\d+)?))");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), t_eq);
       it != std::sregex_iterator(); ++it)
    out.push_back(std::stod((*it)[2].str()));
  static const std::regex mmss(R"((^|[^0-9:])(\d{1,4}):([0-5]\d)(?![0-9:]))");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), mmss);
       it != std::sregex_iterator(); ++it)
    out.push_back(60.0 * std::stod((*it)[2].str()) + std::stod((*it)[3].str()));
  return out;
}

bool oracle_crossref(const std::string& text, double s, double e, const ConvertOptions& opts) {
  for (double t : oracle_timestamps(text))
    if (t >= s && t <= e) return true;
  std::string low;
  for (char c : text) low.push_back(char(std::tolower((unsigned char)c)));
  for (const std::string& m : opts.refinement_markers)
    if (low.find(m) != std::string::npos) return true;
  return false;
}

bool oracle_pair(const SequentialTrace& seq, size_t i, size_t j, const ConvertOptions& opts) {
  const ToolCallRecord& a = seq.turns[i].tool_call;
  const ToolCallRecord& b = seq.turns[j].tool_call;
  bool disjoint = a.end_time < b.start_time || b.end_time < a.start_time;
  if (!disjoint) return false;
  return !oracle_crossref(seq.turns[j].continuation_text, a.start_time, a.end_time, opts);
}

// Exhaustive search over consecutive partitions: the reference answer is the
// lexicographically greatest valid run-length sequence, which is also a
// minimum-block partition because block validity is subset-closed.
std::vector<int> oracle_partition(const SequentialTrace& seq, const ConvertOptions& opts,
                                  int* min_blocks) {
  int T = int(seq.turns.size());
  std::vector<int> best;
  *min_blocks = T + 1;
  for (unsigned mask = 0; mask < (1u << (T - 1)); ++mask) {
    std::vector<int> runs;
    int start = 0;
    bool ok = true;
    for (int k = 0; k < T && ok; ++k) {
      bool cut = k == T - 1 || (mask >> k) & 1;
      if (!cut) continue;
      for (int x = start; x <= k && ok; ++x)
        for (int y = x + 1; y <= k && ok; ++y) ok = oracle_pair(seq, x, y, opts);
      runs.push_back(k - start + 1);
      start = k + 1;
    }
    if (!ok) continue;
    *min_blocks = std::min(*min_blocks, int(runs.size()));
    if (runs > best) best = runs;
  }
  return best;
}

std::vector<int> run_lengths(const ParallelTrace& par) {
  std::vector<int> out;
  for (const MergedTurn& m : par.merged_turns) out.push_back(int(m.calls.size()));
  return out;
}

}  // namespace

TEST_CASE("timestamp mentions cover both written forms") {
  CHECK(mentioned_timestamps("t=40") == std::vector<double>{40.0});
  CHECK(mentioned_timestamps("t=40.5 and 03:20") == std::vector<double>{40.5, 200.0});
  CHECK(mentioned_timestamps("start=30") == std::vector<double>{});
  CHECK(mentioned_timestamps("at 3:20.") == std::vector<double>{200.0});
  CHECK(mentioned_timestamps("12:75") == std::vector<double>{});
  CHECK(mentioned_timestamps("1:2:30") == std::vector<double>{});
  CHECK(mentioned_timestamps("123:45") == std::vector<double>{7425.0});
  CHECK(mentioned_timestamps("t=40, then t=50") == std::vector<double>{40.0, 50.0});
  CHECK(mentioned_timestamps("40:5") == std::vector<double>{});
  CHECK(mentioned_timestamps("plain words") == std::vector<double>{});
}

TEST_CASE("the scanner agrees with a regex oracle on random soup") {
  const char alphabet[] = "0123456789:. t=ax,";
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 3000; ++trial) {
    std::string text;
    int len = 1 + int(rng() % 24);
    for (int i = 0; i < len; ++i) text.push_back(alphabet[rng() % (sizeof(alphabet) - 1)]);
    std::vector<double> got = mentioned_timestamps(text);
    std::vector<double> want = oracle_timestamps(text);
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CAPTURE(text);
    CHECK(got == want);
  }
}

TEST_CASE("cross references catch in-window citations and refinement talk") {
  ConvertOptions opts;
  CHECK(cross_references("the hit at t=40 looks solid", 30, 50, opts));
  CHECK_FALSE(cross_references("the hit at t=55 looks solid", 30, 50, opts));
  CHECK(cross_references("boundary case t=50", 30, 50, opts));  // closed interval
  CHECK(cross_references("ZOOMING in on that region", 30, 50, opts));
  CHECK(cross_references("needs a closer look", 30, 50, opts));
  CHECK_FALSE(cross_references("nothing notable here", 30, 50, opts));
}

TEST_CASE("independence requires disjoint windows and no back-reference") {
  ConvertOptions opts;
  CHECK(independent(turn(30, 50, "fine"), turn(130, 145, "fine"), opts));
  CHECK_FALSE(independent(turn(30, 50, "fine"), turn(45, 70, "fine"), opts));
  CHECK_FALSE(independent(turn(30, 50, "fine"), turn(50, 60, "fine"), opts));
  CHECK_FALSE(independent(turn(30, 50, "fine"), turn(130, 145, "the earlier t=40 frame"), opts));
  // Only the later turn's continuation matters.
  CHECK(independent(turn(30, 50, "the t=40 frame"), turn(130, 145, "fine"), opts));

  SequentialTurn bad = turn(10, 20, "fine");
  bad.tool_call.schema = CallSchema::Malformed;
  CHECK_THROWS_AS(independent(bad, turn(30, 40, "fine"), opts), std::invalid_argument);
}

TEST_CASE("five independent probes merge into one parallel turn") {
  SequentialTrace seq = trace({turn(0, 10, "a"), turn(20, 30, "b"), turn(40, 50, "c"),
                               turn(60, 70, "d"), turn(80, 90, "e")});
  ParallelTrace par = convert(seq);
  REQUIRE(par.merged_turns.size() == 1);
  CHECK(par.merged_turns[0].calls.size() == 5);
  CHECK(par.merged_turns[0].think_text == "note\nnote\nnote\nnote\nnote");
  CHECK(par.final_answer == "the symbol is red");
  CHECK(validate_trace(par).valid);
}

TEST_CASE("a refinement splits the merge exactly where it appears") {
  SequentialTrace seq = trace({turn(0, 10, "a"), turn(20, 30, "zoom into the first window"),
                               turn(40, 50, "c")});
  ParallelTrace par = convert(seq);
  // Turn 2's continuation blocks its merge with turn 1; turn 3 is free again.
  REQUIRE(par.merged_turns.size() == 2);
  CHECK(par.merged_turns[0].calls.size() == 1);
  CHECK(par.merged_turns[1].calls.size() == 2);
}

TEST_CASE("window multiset is conserved") {
  SequentialTrace seq = trace({turn(0, 10, "a"), turn(5, 15, "b"), turn(40, 50, "c"),
                               turn(45, 55, "d")});
  ParallelTrace par = convert(seq);
  std::vector<std::pair<double, double>> in, out;
  for (const SequentialTurn& t : seq.turns) in.push_back({t.tool_call.start_time,
                                                          t.tool_call.end_time});
  for (const MergedTurn& m : par.merged_turns)
    for (const ToolCallRecord& c : m.calls) out.push_back({c.start_time, c.end_time});
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  CHECK(in == out);
}

TEST_CASE("greedy merging matches the exhaustive oracle") {
  ConvertOptions opts;
  std::mt19937_64 rng(1234);
  std::vector<std::string> conts = {
      "plain prose about the clip",
      "zooming in on that region",
      "the hit at t=%d looks right",
      "checked around 0:%02d",
      "all quiet",
  };
  for (int trial = 0; trial < 500; ++trial) {
    int T = 1 + int(rng() % 6);
    std::vector<SequentialTurn> turns;
    for (int k = 0; k < T; ++k) {
      double s = double(rng() % 200);
      double e = s + 5.0 + double(rng() % 30);
      std::string c = conts[rng() % conts.size()];
      char buf[96];
      if (c.find("%d") != std::string::npos) {
        snprintf(buf, sizeof(buf), c.c_str(), int(rng() % 240));
        c = buf;
      } else if (c.find("%02d") != std::string::npos) {
        snprintf(buf, sizeof(buf), c.c_str(), int(rng() % 60));
        c = buf;
      }
      turns.push_back(turn(s, e, c));
    }
    SequentialTrace seq = trace(std::move(turns));

    int min_blocks = 0;
    std::vector<int> want = oracle_partition(seq, opts, &min_blocks);
    ParallelTrace par = convert(seq, opts);
    std::vector<int> got = run_lengths(par);
    CAPTURE(trial);
    CHECK(got == want);
    CHECK(int(got.size()) == min_blocks);

    // Soundness: every merged block is pairwise independent.
    size_t base = 0;
    for (const MergedTurn& m : par.merged_turns) {
      for (size_t x = 0; x < m.calls.size(); ++x)
        for (size_t y = x + 1; y < m.calls.size(); ++y)
          CHECK(oracle_pair(seq, base + x, base + y, opts));
      base += m.calls.size();
    }
    CHECK(validate_trace(par).valid);
  }
}

TEST_CASE("frame responses become sentence or template summaries") {
  ConvertOptions opts;
  SequentialTrace seq = trace({
      turn(10, 15, "frames show red around t=12. moving on.", ResponseKind::Frames,
           "frames: sampled [10, 15)"),
      turn(30, 40, "nothing notable in this pass", ResponseKind::Frames,
           "frames: sampled [30, 40)"),
      turn(60, 70, "last check", ResponseKind::Text, "a verbatim text reply"),
  });
  ParallelTrace par = convert(seq, opts);
  std::vector<std::string> summaries;
  for (const MergedTurn& m : par.merged_turns)
    for (const std::string& s : m.summaries) summaries.push_back(s);
  REQUIRE(summaries.size() == 3);
  CHECK(summaries[0] == "frames show red around t=12.");
  CHECK(summaries[1].rfind("segment [30, 40]:", 0) == 0);
  CHECK(summaries[2] == "a verbatim text reply");
}

TEST_CASE("validation rejects the documented defects") {
  SequentialTrace inverted = trace({turn(50, 30, "x")});
  TraceDiagnostics d = validate_trace(inverted);
  CHECK_FALSE(d.valid);
  REQUIRE(!d.problems.empty());
  CHECK(d.problems[0].find("inverted") != std::string::npos);

  SequentialTrace empty_answer = trace({turn(0, 10, "x")});
  empty_answer.final_answer = "   ";
  CHECK_FALSE(validate_trace(empty_answer).valid);

  SequentialTrace bad_call = trace({turn(0, 10, "x")});
  bad_call.turns[0].tool_call.schema = CallSchema::Malformed;
  CHECK_FALSE(validate_trace(bad_call).valid);

  ParallelTrace overlap;
  MergedTurn m;
  m.calls = {turn(0, 10, "").tool_call, turn(5, 15, "").tool_call};
  m.summaries = {"a", "b"};
  overlap.merged_turns = {m};
  overlap.final_answer = "ok";
  CHECK_FALSE(validate_trace(overlap).valid);

  CHECK(validate_trace(trace({turn(0, 10, "x")})).valid);
}

TEST_CASE("chat messages round-trip the trace fields") {
  TraceCorpusConfig cfg;
  cfg.traces = 24;
  cfg.max_turns = 5;
  cfg.refine_p = 0.4;
  std::vector<SequentialTrace> corpus = generate_sequential_corpus(cfg);
  REQUIRE(corpus.size() == 24);
  std::vector<SequentialTrace> again = generate_sequential_corpus(cfg);

  for (size_t i = 0; i < corpus.size(); ++i) {
    const SequentialTrace& t = corpus[i];
    CHECK(t.turns.size() >= size_t(cfg.min_turns));
    CHECK(t.turns.size() <= size_t(cfg.max_turns));
    CHECK(validate_trace(t).valid);
    CHECK(again[i].final_answer == t.final_answer);

    std::vector<ChatMessage> msgs = sequential_to_messages(t);
    std::string line = messages_to_json_line(msgs);
    SequentialTrace back = sequential_from_messages(messages_from_json_line(line));
    REQUIRE(back.turns.size() == t.turns.size());
    CHECK(back.final_answer == t.final_answer);
    for (size_t k = 0; k < t.turns.size(); ++k) {
      CHECK(back.turns[k].think_text == t.turns[k].think_text);
      CHECK(back.turns[k].tool_call.start_time == t.turns[k].tool_call.start_time);
      CHECK(back.turns[k].tool_call.end_time == t.turns[k].tool_call.end_time);
      CHECK(back.turns[k].response_kind == t.turns[k].response_kind);
      CHECK(back.turns[k].response_payload == t.turns[k].response_payload);
      // Reconstructed continuations may gain the next think's words but must
      // keep the original prose, which carries the dependence signals.
      CHECK(back.turns[k].continuation_text.find(t.turns[k].continuation_text) !=
            std::string::npos);
    }
    CHECK_NOTHROW(convert(back));
  }
}

TEST_CASE("refinement turns never merge backward in generated corpora") {
  TraceCorpusConfig cfg;
  cfg.traces = 64;
  cfg.min_turns = 2;
  cfg.max_turns = 6;
  cfg.refine_p = 0.5;
  for (const SequentialTrace& t : generate_sequential_corpus(cfg)) {
    ParallelTrace par = convert(t);
    CHECK(validate_trace(par).valid);
    // Map each sequential index to its merged block.
    std::vector<int> block_of(t.turns.size());
    size_t idx = 0;
    for (size_t b = 0; b < par.merged_turns.size(); ++b)
      for (size_t c = 0; c < par.merged_turns[b].calls.size(); ++c) block_of[idx++] = int(b);
    REQUIRE(idx == t.turns.size());
    for (size_t k = 1; k < t.turns.size(); ++k) {
      bool refines = t.turns[k].continuation_text.find("zoom") != std::string::npos;
      if (refines) CHECK(block_of[k] != block_of[k - 1]);
    }
  }
}

TEST_CASE("message parsing rejects malformed shapes") {
  auto msg = [](const char* role, std::string content) {
    ChatMessage m;
    m.role = role;
    m.content = std::move(content);
    return m;
  };
  std::string call =
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v\", "
      "\"start_time\": 1, \"end_time\": 2}}</tool_call>";

  // Leading non-assistant context is skipped.
  std::vector<ChatMessage> ok = {msg("system", "be terse"), msg("user", "where is it?"),
                                 msg("assistant", "<think>look</think>" + call),
                                 msg("tool", "frames: sampled"),
                                 msg("assistant", "<answer>B</answer>")};
  SequentialTrace t = sequential_from_messages(ok);
  REQUIRE(t.turns.size() == 1);
  CHECK(t.turns[0].response_kind == ResponseKind::Frames);
  CHECK(t.final_answer == "B");

  CHECK_THROWS_AS(sequential_from_messages({msg("user", "hi")}), std::invalid_argument);
  CHECK_THROWS_AS(sequential_from_messages({msg("tool", "stray")}), std::invalid_argument);
  CHECK_THROWS_AS(sequential_from_messages(
                      {msg("assistant", "<think>no call</think>"), msg("tool", "r"),
                       msg("assistant", "<answer>B</answer>")}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sequential_from_messages({msg("assistant", call)}), std::invalid_argument);
  CHECK_THROWS_AS(sequential_from_messages(
                      {msg("assistant", call), msg("tool", "r"),
                       msg("assistant", call + "<answer>B</answer>")}),
                  std::invalid_argument);
  CHECK_THROWS_AS(messages_from_json_line("not json at all"), std::invalid_argument);
}
