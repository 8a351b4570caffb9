#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace testutil {

// Central finite-difference check of a scalar function against autograd.
// Inputs must be float64; returns the worst relative error over all
// elements of all inputs.
inline double fd_max_rel_err(
    const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& fn,
    std::vector<torch::Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) {
    t = t.detach().to(torch::kFloat64).contiguous();
    t.requires_grad_(true);
  }
  auto out = fn(inputs);
  auto grads = torch::autograd::grad({out}, inputs, {}, /*retain_graph=*/false,
                                     /*create_graph=*/false,
                                     /*allow_unused=*/true);
  double worst = 0.0;
  torch::NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto flat = inputs[k].flatten();
    torch::Tensor gflat = grads[k].defined()
                              ? grads[k].flatten()
                              : torch::zeros_like(flat);
    for (long i = 0; i < flat.numel(); ++i) {
      double orig = flat[i].item<double>();
      flat[i] = orig + h;
      double up = fn(inputs).item<double>();
      flat[i] = orig - h;
      double dn = fn(inputs).item<double>();
      flat[i] = orig;
      double numeric = (up - dn) / (2.0 * h);
      double analytic = gflat[i].item<double>();
      double err = std::abs(numeric - analytic) /
                   std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace testutil
