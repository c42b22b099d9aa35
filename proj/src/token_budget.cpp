#include "vtlab/token_budget.hpp"

#include <stdexcept>

namespace vtlab {

double t_seq(double k, const TokenBudgetParams& p) {
  if (k < 1.0) throw std::invalid_argument("t_seq: K must be >= 1");
  double per_turn = double(p.visual_total() + p.sys_tokens);
  return k * per_turn + k * (k + 1.0) / 2.0 * double(p.hist_tokens_per_call);
}

double t_par(double k, const TokenBudgetParams& p) {
  if (k < 0.0) throw std::invalid_argument("t_par: K must be >= 0");
  return double(p.visual_total() + p.sys_tokens) + k * double(p.hist_tokens_per_call);
}

double budget_savings(double k, const TokenBudgetParams& p) {
  return 1.0 - t_par(k, p) / t_seq(k, p);
}

}  // namespace vtlab
