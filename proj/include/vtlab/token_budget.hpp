#pragma once

namespace vtlab {

struct TokenBudgetParams {
  int visual_tokens_per_frame = 256;
  int overview_frames = 64;
  int sys_tokens = 300;
  int hist_tokens_per_call = 50;

  int visual_total() const { return visual_tokens_per_frame * overview_frames; }
};

// Input tokens for K dependent sequential calls: the visual context and
// system prompt are re-encoded every turn and each turn re-reads the growing
// call history. K is real-valued so averages like 2.5 plug in directly.
// Throws std::invalid_argument for K < 1.
double t_seq(double k, const TokenBudgetParams& p);

// Input tokens for K calls dispatched in one turn: one visual encoding, one
// system prompt, history linear in K. Throws std::invalid_argument for K < 0.
double t_par(double k, const TokenBudgetParams& p);

// 1 - t_par/t_seq, the fraction of input tokens avoided at batch size K.
double budget_savings(double k, const TokenBudgetParams& p);

}  // namespace vtlab
