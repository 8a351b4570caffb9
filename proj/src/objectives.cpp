#include "wsss/objectives.hpp"

#include "wsss/cam_core.hpp"
#include "wsss/errors.hpp"

namespace wsss {

namespace {

double lerp_sched(double v0, double v1, long step, long span) {
  if (span <= 0) return v1;
  if (step <= 0) return v0;
  if (step >= span) return v1;
  return v0 + (v1 - v0) * static_cast<double>(step) / static_cast<double>(span);
}

}  // namespace

double schedule_value(const ScheduleSet& sched, std::string_view name,
                      long step) {
  if (step < 0 || step > sched.total_steps)
    throw ConfigError("schedule_value: step out of range");
  if (name == "lambda_re")
    return lerp_sched(0.0, sched.lambda_re_max, step, sched.total_steps / 2);
  if (name == "lambda_cse")
    return lerp_sched(sched.lambda_cse_start, sched.lambda_cse_end, step,
                      sched.total_steps);
  if (name == "lambda_noc")
    return lerp_sched(0.0, sched.lambda_noc_end, step, sched.total_steps);
  if (name == "lr_decay")
    return lerp_sched(1.0, 0.0, step, sched.total_steps);
  throw ConfigError("schedule_value: unknown schedule " + std::string(name));
}

torch::Tensor soft_margin_loss(const torch::Tensor& logits,
                               const torch::Tensor& targets, double eps) {
  if (!logits.sizes().equals(targets.sizes()))
    throw DataError("soft_margin_loss: shape mismatch");
  if (eps < 0 || eps >= 0.5)
    throw ConfigError("soft_margin_loss: eps must be in [0, 0.5)");
  if (!logits.isfinite().all().item<bool>())
    throw DataError("soft_margin_loss: non-finite logits");
  auto t = targets * (1.0 - eps) + eps / 2.0;
  // -[t'*log sigma(z) + (1-t')*log sigma(-z)], numerically via softplus.
  auto loss = (1.0 - t) * logits + torch::softplus(-logits);
  return loss.mean();
}

torch::Tensor erase_target(const torch::Tensor& y, long r) {
  if (r < 0 || r >= y.size(-1) || y[r].item<double>() <= 0)
    throw DataError("erase_target: class " + std::to_string(r) +
                    " not present in target");
  auto out = y.clone();
  out[r] = 0;
  return out;
}

torch::Tensor erase_target_batch(const torch::Tensor& y,
                                 const torch::Tensor& r) {
  auto out = y.clone();
  for (long b = 0; b < y.size(0); ++b) {
    long cls = r[b].item<long>();
    if (cls < 0 || cls >= y.size(1) || y[b][cls].item<double>() <= 0)
      throw DataError("erase_target: class " + std::to_string(cls) +
                      " not present in sample " + std::to_string(b));
    out[b][cls] = 0;
  }
  return out;
}

namespace {

// Broadcast psi [B,h,w] (or [h,w]) to the image grid as [B,1,H,W].
torch::Tensor psi_to_image_grid(const torch::Tensor& x,
                                const torch::Tensor& psi_r) {
  auto psi = psi_r.dim() == 2 ? psi_r.unsqueeze(0) : psi_r;  // [B,h,w]
  psi = psi.unsqueeze(1);                                    // [B,1,h,w]
  return resize_bilinear(psi, x.size(-2), x.size(-1));
}

}  // namespace

torch::Tensor cse_soft_mask(const torch::Tensor& x, const torch::Tensor& psi_r) {
  auto xb = x.dim() == 3 ? x.unsqueeze(0) : x;
  auto psi = psi_to_image_grid(xb, psi_r);
  auto out = xb * (1.0 - psi);
  return x.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor noc_hard_mask(const torch::Tensor& x, const torch::Tensor& psi_r,
                            double delta_noc) {
  if (delta_noc <= 0 || delta_noc >= 1)
    throw ConfigError("noc_hard_mask: delta_noc must be in (0,1)");
  auto xb = x.dim() == 3 ? x.unsqueeze(0) : x;
  auto psi = psi_to_image_grid(xb, psi_r.detach());
  auto keep = (psi <= delta_noc).to(xb.dtype());
  auto out = xb * keep;
  return x.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor reconstruction_l1(const torch::Tensor& a, const torch::Tensor& a_re,
                                const torch::Tensor& y,
                                bool restrict_to_present) {
  auto diff = (a - a_re).abs();
  if (!restrict_to_present) return diff.mean();
  auto mask = y.to(a.dtype()).unsqueeze(-1).unsqueeze(-1);  // [B,C,1,1]
  auto denom = (mask * torch::ones_like(diff)).sum();
  if (denom.item<double>() <= 0) return diff.sum() * 0.0;
  return (diff * mask).sum() / denom;
}

LossReport PocLossResult::report() const {
  LossReport rep;
  rep.total = total.item<double>();
  for (const auto& [k, v] : components) rep.components[k] = v.item<double>();
  rep.weights = weights;
  return rep;
}

PocLossResult poc_loss(const torch::Tensor& a, const torch::Tensor& a_re,
                       const torch::Tensor& a_oc, const torch::Tensor& y,
                       const torch::Tensor& r, long step,
                       const ScheduleSet& sched, bool restrict_re_to_present) {
  PocLossResult res;
  double eps = sched.smoothing_eps;
  double lambda_re = schedule_value(sched, "lambda_re", step);
  double lambda_cse = schedule_value(sched, "lambda_cse", step);

  auto yt = y.to(a.dtype());
  res.components["cls"] = soft_margin_loss(gap_logits(a), yt, eps);
  res.components["re_cls"] = soft_margin_loss(gap_logits(a_re), yt, eps);
  res.components["re"] = reconstruction_l1(a, a_re, y, restrict_re_to_present);
  res.weights = {{"cls", 1.0}, {"re_cls", 1.0}, {"re", lambda_re}};

  res.total = res.components["cls"] + res.components["re_cls"] +
              lambda_re * res.components["re"];
  if (a_oc.defined()) {
    auto y_erased = erase_target_batch(yt, r);
    res.components["cse"] = soft_margin_loss(gap_logits(a_oc), y_erased, eps);
    res.weights["cse"] = lambda_cse;
    res.total = res.total + lambda_cse * res.components["cse"];
  }
  return res;
}

torch::Tensor noc_loss(const torch::Tensor& a_noc, const torch::Tensor& y,
                       const ScheduleSet& sched, long step) {
  double lambda_noc = schedule_value(sched, "lambda_noc", step);
  return lambda_noc * soft_margin_loss(gap_logits(a_noc), y.to(a_noc.dtype()),
                                       sched.smoothing_eps);
}

}  // namespace wsss
