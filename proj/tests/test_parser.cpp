#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <string>

#include "doctest.h"
#include "vtlab/rollout_parser.hpp"

using namespace vtlab;

TEST_CASE("flat FIFO pairing within a family") {
  ParsedRollout r = parse_rollout("<think>a<think>b</think>c</think>");
  CHECK(r.think_opened);
  CHECK(r.think_closed);
  // The first close pairs with the first open, so the span is "a<think>b".
  CHECK(r.think_content_length == 9);
  CHECK(r.balanced_pairs);

  r = parse_rollout("<think>dangling");
  CHECK(r.think_opened);
  CHECK_FALSE(r.think_closed);
  CHECK_FALSE(r.balanced_pairs);

  // A close with no prior open matches nothing.
  r = parse_rollout("</think><think>later");
  CHECK(r.think_opened);
  CHECK_FALSE(r.think_closed);
}

TEST_CASE("both call schemas classify and malformed bodies are kept as records") {
  std::string text =
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v.mp4\", "
      "\"start_time\": 30, \"end_time\": 50}}</tool_call>"
      "<tool_code>python\ncrop_video(\"v.mp4\", start=130, end=145)\n</tool_code>"
      "<tool_code>crop_video(\"v.mp4\", 7, 19)</tool_code>"
      "<tool_call>this is not a call</tool_call>"
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v.mp4\", "
      "\"start_time\": 50, \"end_time\": 30}}</tool_call>";
  ParsedRollout r = parse_rollout(text);
  REQUIRE(r.tool_calls.size() == 5);
  CHECK(r.tool_calls[0].schema == CallSchema::NativeCall);
  CHECK(r.tool_calls[0].start_time == 30.0);
  CHECK(r.tool_calls[0].end_time == 50.0);
  CHECK(r.tool_calls[0].video_ref == "v.mp4");
  CHECK(r.tool_calls[1].schema == CallSchema::LegacyCode);
  CHECK(r.tool_calls[1].start_time == 130.0);
  CHECK(r.tool_calls[2].schema == CallSchema::LegacyCode);
  CHECK(r.tool_calls[2].start_time == 7.0);
  CHECK(r.tool_calls[2].end_time == 19.0);
  CHECK(r.tool_calls[3].schema == CallSchema::Malformed);
  // Inverted window: parseable but not a legal call.
  CHECK(r.tool_calls[4].schema == CallSchema::Malformed);
}

TEST_CASE("answer extraction levels") {
  // Level 1: the first complete answer span wins no matter what follows.
  CHECK(extract_answer("<answer> B </answer> trailing chatter") == "B");
  CHECK(extract_answer("<think>x</think><answer>first</answer><answer>second</answer>") ==
        "first");
  // Level 2: no complete span, take what follows the think close.
  CHECK(extract_answer("<think>reasoning</think> The answer is B") == "The answer is B");
  CHECK(extract_answer("<think>r</think><tool_call>junk</tool_call>  B  ") == "B");
  // Level 3: no think close either, last contentful line after machinery.
  CHECK(extract_answer("some preamble\nthe answer is B\n<answer>") == "the answer is B");
  // Raw fallback: every line is pure machinery.
  CHECK(extract_answer("<answer>") == "<answer>");
  CHECK(extract_answer("   \n  ") == "");
}

TEST_CASE("an empty answer span falls through to later levels") {
  CHECK(extract_answer("<think>r</think>conclusion<answer>  </answer>") == "conclusion");
}

TEST_CASE("degenerate turn-marker pile-up is windowed") {
  std::string tight;
  for (int i = 0; i < 5; ++i) tight += "<|im_start|>" + std::string(40, 'x');
  CHECK(parse_rollout(tight).degenerate);

  std::string sparse;
  for (int i = 0; i < 5; ++i) sparse += "<|im_start|>" + std::string(100, 'x');
  CHECK_FALSE(parse_rollout(sparse).degenerate);

  std::string four;
  for (int i = 0; i < 4; ++i) four += "<|im_start|>";
  CHECK_FALSE(parse_rollout(four).degenerate);

  // Five markers anywhere inside one tight window trigger even in long text.
  std::string mixed = std::string(1000, 'y');
  for (int i = 0; i < 5; ++i) mixed += "<|im_start|>";
  mixed += std::string(1000, 'y');
  CHECK(parse_rollout(mixed).degenerate);
}

TEST_CASE("ordering flags") {
  ParsedRollout r = parse_rollout(
      "<think>plan</think>"
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v\", "
      "\"start_time\": 1, \"end_time\": 2}}</tool_call>"
      "<answer>B</answer>");
  CHECK(r.think_before_tools);
  CHECK(r.answer_after_think);

  // A native call before the think close breaks the ordering.
  r = parse_rollout(
      "<think>plan"
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v\", "
      "\"start_time\": 1, \"end_time\": 2}}</tool_call>"
      "more</think><answer>B</answer>");
  CHECK_FALSE(r.think_before_tools);

  // Any block before the close breaks the ordering, malformed or legacy alike.
  r = parse_rollout("<think>plan<tool_call>junk</tool_call></think><answer>B</answer>");
  CHECK_FALSE(r.think_before_tools);
  r = parse_rollout(
      "<tool_code>python\ncrop_video(\"v\", start=1, end=2)\n</tool_code>"
      "<think>plan</think><answer>B</answer>");
  CHECK_FALSE(r.think_before_tools);
  CHECK(r.tool_calls.size() == 1);
  CHECK(r.tool_calls[0].schema == CallSchema::LegacyCode);

  // Unclosed think: ordering flags stay down.
  r = parse_rollout("<think>plan<answer>B</answer>");
  CHECK_FALSE(r.think_before_tools);
  CHECK_FALSE(r.answer_after_think);
}

TEST_CASE("closure statistics over a batch") {
  std::vector<std::string> batch = {
      "<think>a</think><think>b",
      "<answer>done</answer>",
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v\", "
      "\"start_time\": 1, \"end_time\": 2}}</tool_call>"
      "<tool_code>crop_video(\"v\", 3, 4)</tool_code>",
  };
  ClosureStats s = closure_stats(batch);
  CHECK(s.think.opened == 2);
  CHECK(s.think.closed == 1);
  CHECK(s.think.closure_rate == 0.5);
  CHECK(s.answer.opened == 1);
  CHECK(s.answer.closed == 1);
  CHECK(s.answer.closure_rate == 1.0);
  CHECK(s.tool_call.opened == 1);
  CHECK(s.tool_call.closed == 1);
  CHECK(s.native_calls == 1);
  CHECK(s.legacy_calls == 1);

  // Nothing opened: vacuous closure is 1.0, not 0/0.
  ClosureStats empty = closure_stats({"no tags at all"});
  CHECK(empty.think.closure_rate == 1.0);
  CHECK(empty.tool_call.closure_rate == 1.0);
  CHECK(empty.answer.closure_rate == 1.0);
}

TEST_CASE("render and reparse preserve the structural summary") {
  std::string text =
      "<think>look at both halves</think>\n"
      "<tool_call>{\"name\": \"crop_video\", \"arguments\": {\"video_path\": \"v.mp4\", "
      "\"start_time\": 10, \"end_time\": 20}}</tool_call>\n"
      "<tool_code>crop_video(\"v.mp4\", 30, 40)</tool_code>\n"
      "<answer>B</answer>";
  ParsedRollout first = parse_rollout(text);
  ParsedRollout second = parse_rollout(render_rollout(first));
  CHECK(second.think_opened == first.think_opened);
  CHECK(second.think_closed == first.think_closed);
  CHECK(second.answer_opened == first.answer_opened);
  CHECK(second.answer_closed == first.answer_closed);
  CHECK(second.answer_text == first.answer_text);
  REQUIRE(second.tool_calls.size() == first.tool_calls.size());
  for (size_t i = 0; i < first.tool_calls.size(); ++i) {
    CHECK(second.tool_calls[i].schema == first.tool_calls[i].schema);
    CHECK(second.tool_calls[i].start_time == first.tool_calls[i].start_time);
    CHECK(second.tool_calls[i].end_time == first.tool_calls[i].end_time);
  }
}

TEST_CASE("shortest round-trip float formatting") {
  std::string s;
  append_double(s, 0.5);
  s += ",";
  append_double(s, 41928.75);
  s += ",";
  append_double(s, 1.0 / 3.0);
  CHECK(s == "0.5,41928.75,0.3333333333333333");
}
