#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

namespace wsss {

constexpr long kUnknownLabel = 255;

// Per-pixel affinity training labels: 0=background, 1..C=class,
// 255=unknown.
struct SeedMap {
  torch::Tensor labels;  // int64 [h,w]
  double unknown_fraction() const;
};

// Threshold rule over the prior peak: below delta_bg -> background,
// above delta_fg -> argmax class, in between -> unknown.
SeedMap seeds_from_priors(const torch::Tensor& prior, double delta_bg,
                          double delta_fg);

// Saliency replaces the background rule: non-salient pixels (saliency
// below delta_sal) are confident background; the foreground rule is
// unchanged.
SeedMap seeds_with_saliency(const torch::Tensor& prior,
                            const torch::Tensor& saliency, double delta_fg,
                            double delta_sal);

// Sparse symmetric Gaussian feature affinity over pixel pairs within a
// disk of the given radius; w_ii = 1. Stands in for a learned affinity
// head at desk scale (same extension point, fixed kernel).
struct AffinityGraph {
  long h = 0, w = 0;
  std::vector<long> row_ptr;       // CSR over h*w pixels
  std::vector<int> col_index;
  std::vector<float> weight;
  double sigma = 0;
};

// features: [K,h,w]; sigma <= 0 selects the median within-radius feature
// distance.
AffinityGraph build_affinity(const torch::Tensor& features, int radius,
                             double sigma = 0);

// clamp(1 - max_c prior, 0, 1) prepended as channel 0.
torch::Tensor add_background_channel(const torch::Tensor& prior);

// T = row-normalize(W o beta); each channel smoothed t times by T, then
// the result is renormalized per pixel to sum 1.
torch::Tensor random_walk(const torch::Tensor& prior_with_bg,
                          const AffinityGraph& graph, double beta,
                          int t_iters);

// dCRF stands behind a plugin interface; without a registered plugin the
// identity fallback returns the input untouched.
using CrfPlugin = std::function<torch::Tensor(const torch::Tensor& image,
                                              const torch::Tensor& prob_map)>;

void register_crf_plugin(const std::string& name, CrfPlugin plugin);
std::vector<std::string> registered_crf_plugins();
torch::Tensor crf_refine(const torch::Tensor& image,
                         const torch::Tensor& prob_map,
                         const std::string& plugin_name);

}  // namespace wsss
