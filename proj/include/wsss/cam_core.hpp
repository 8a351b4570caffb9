#pragma once

#include <torch/torch.h>

#include <array>
#include <memory>
#include <vector>

namespace wsss {

constexpr double kNormEps = 1e-5;

enum class CamSource { main, reconstructed, oc, noc };

// Per-class activation maps: raw (pre-normalization) and the normalized
// form psi(A) in [0,1].
struct CamStack {
  torch::Tensor raw;         // [C,h,w]
  torch::Tensor normalized;  // [C,h,w] in [0,1]
  CamSource source = CamSource::main;
};

struct Posterior {
  torch::Tensor probs;  // [C] in (0,1)
};

// psi: per-class ReLU followed by division by (per-class max + eps).
// Accepts [C,h,w] or batched [B,C,h,w]; differentiable.
torch::Tensor normalize_cam(const torch::Tensor& raw);

CamStack make_cam_stack(const torch::Tensor& raw, CamSource source);

// Logits = spatial mean of the raw maps; probs = sigmoid(logits).
torch::Tensor gap_logits(const torch::Tensor& raw);  // [..,C,h,w] -> [..,C]
Posterior gap_posterior(const torch::Tensor& raw);

// Quadrant split in fixed order: top-left, top-right, bottom-left,
// bottom-right. Requires even spatial dims.
std::array<torch::Tensor, 4> tile(const torch::Tensor& x);
torch::Tensor merge(const std::array<torch::Tensor, 4>& pieces);

// Batched helper: [B,C,H,W] -> [4B,C,H/2,W/2] (quadrants stacked) and
// its inverse; used by the trainer to forward all tiles in one pass.
torch::Tensor tile_batch(const torch::Tensor& x);
torch::Tensor merge_batch(const torch::Tensor& pieces);

// Model contract: forward produces raw CAMs whose spatial dims are a
// fixed integer fraction of the input dims.
class ClassifierModel : public torch::nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& images) = 0;  // [B,3,H,W] -> [B,C,h,w]
  virtual long num_classes() const = 0;
  virtual long stride() const = 0;
  virtual ~ClassifierModel() = default;
};

// Multi-scale + horizontal-flip averaged prior at input resolution.
// Variants are evaluated and averaged in a fixed order (scales as given,
// unflipped before flipped) so results are reproducible.
torch::Tensor tta_prior(ClassifierModel& model, const torch::Tensor& image,
                        const std::vector<double>& scales, bool use_flip);

// Single-scale normalized CAM resized to [H,W] (no flip averaging).
torch::Tensor single_scale_prior(ClassifierModel& model,
                                 const torch::Tensor& image);

// Bilinear resize, corner alignment disabled; shared by all map resizing.
torch::Tensor resize_bilinear(const torch::Tensor& maps, long h, long w);

}  // namespace wsss
