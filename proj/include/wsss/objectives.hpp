#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <string_view>

namespace wsss {

// Linear-ramp schedules from the training recipe: lambda_re 0->4 over
// the first half of training (constant 4 afterwards), lambda_cse
// 0.3->1 and lambda_noc 0->1 over all steps, learning rate decaying
// linearly to 0.
struct ScheduleSet {
  long total_steps = 0;
  double lambda_re_max = 4.0;
  double lambda_cse_start = 0.3;
  double lambda_cse_end = 1.0;
  double lambda_noc_end = 1.0;
  long k_noc = 1;
  double delta_noc = 0.2;
  double smoothing_eps = 0.1;
};

double schedule_value(const ScheduleSet& sched, std::string_view name,
                      long step);

struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;  // unweighted component values
  std::map<std::string, double> weights;     // lambda applied to each
};

// Multi-label soft margin loss with two-sided label smoothing
// t' = t(1-eps) + eps/2; mean reduction over B*C.
torch::Tensor soft_margin_loss(const torch::Tensor& logits,
                               const torch::Tensor& targets, double eps);

// y with the randomly drawn class r removed; r must be present in y.
torch::Tensor erase_target(const torch::Tensor& y, long r);
// Batched form: one r per row.
torch::Tensor erase_target_batch(const torch::Tensor& y,
                                 const torch::Tensor& r);

// Soft class-specific erasing: x o (1 - psi_r), psi upsampled bilinearly
// to image resolution. x: [B,3,H,W] (or [3,H,W]); psi_r: [B,h,w] ([h,w]).
torch::Tensor cse_soft_mask(const torch::Tensor& x, const torch::Tensor& psi_r);

// Hard erasing: pixels where psi_r > delta are fully zeroed.
torch::Tensor noc_hard_mask(const torch::Tensor& x, const torch::Tensor& psi_r,
                            double delta_noc);

// Mean L1 between raw map stacks, optionally restricted to the classes
// present in y (Puzzle-CAM convention).
torch::Tensor reconstruction_l1(const torch::Tensor& a, const torch::Tensor& a_re,
                                const torch::Tensor& y, bool restrict_to_present);

struct PocLossResult {
  torch::Tensor total;
  std::map<std::string, torch::Tensor> components;
  std::map<std::string, double> weights;
  LossReport report() const;
};

// L = l_cls(p,y) + l_cls(p_re,y) + lambda_re*|A - A_re| + lambda_cse*l_cls(p_oc, y\{r}).
// A_oc may be undefined, which drops the cse term (puzzle-only mode).
PocLossResult poc_loss(const torch::Tensor& a, const torch::Tensor& a_re,
                       const torch::Tensor& a_oc, const torch::Tensor& y,
                       const torch::Tensor& r, long step,
                       const ScheduleSet& sched,
                       bool restrict_re_to_present = true);

// lambda_noc(step) * l_cls(gap(A_noc), y).
torch::Tensor noc_loss(const torch::Tensor& a_noc, const torch::Tensor& y,
                       const ScheduleSet& sched, long step);

}  // namespace wsss
