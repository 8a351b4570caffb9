#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <utility>

#include "wsss/dataset.hpp"

namespace wsss {

struct C2amConfig {
  double alpha = 0.25;    // rank-weight decay
  double lambda_h = 1.0;  // hint loss weight
  double delta_fg = 0.4;
  double delta_bg = 0.1;
  int batch = 32;
  int epochs = 10;
  double lr = 0.05;
  // The trunk plays the role of the pretrained backbone and moves far
  // slower than the head: a freely trained trunk can invent a tiny
  // "background token" cluster that satisfies the contrastive loss with a
  // degenerate 99/1 partition instead of the appearance split.
  double trunk_lr_scale = 0.0;
  // CAM-classifier checkpoint whose first two trunk blocks seed the
  // disentangler trunk (empty = random init).
  std::string backbone_checkpoint;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  long image_size = 64;
  long feature_channels = 64;
  double delta_sal = 0.5;  // downstream binarization threshold
};

// Foreground/background disentangling network: a small conv trunk
// producing features [K,h,w] and a zero-initialized 1x1 head whose
// sigmoid output P starts at 0.5 everywhere.
class Disentangler : public torch::nn::Module {
 public:
  explicit Disentangler(long feature_channels);

  // -> (features [B,K,h,w], P [B,h,w] in (0,1))
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& images);
  long stride() const { return 4; }
  // Pin the trunk's norm statistics (used when the trunk acts as a
  // frozen pretrained backbone).
  void eval_trunk() { trunk_->eval(); }

 private:
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};

// Weighted mean pooling: v_f = mean_hw(P o A), v_b = mean_hw((1-P) o A).
// A: [K,hw] (or [B,K,hw]), P: [hw] ([B,hw]).
std::pair<torch::Tensor, torch::Tensor> fg_bg_features(const torch::Tensor& a,
                                                       const torch::Tensor& p);

// Pairwise cosines rectified to [0,1]: max(cos,0), then clamped into
// [eps, 1-eps] for log safety.
torch::Tensor cosine_matrix(const torch::Tensor& vectors);  // [n,K] -> [n,n]
torch::Tensor cosine_matrix_cross(const torch::Tensor& a,
                                  const torch::Tensor& b);  // fg vs bg

struct SimilarityTriple {
  torch::Tensor s_f;    // [n,n]
  torch::Tensor s_b;    // [n,n]
  torch::Tensor s_neg;  // [n,n], fg_i vs bg_j
};

// w_ij = exp(-alpha * rank(s_ij)) with rank 0 the largest off-diagonal
// similarity in row i; ties broken by column index.
torch::Tensor rank_weights(const torch::Tensor& s, double alpha);

// Negative log-likelihood form of the contrastive objective:
//   -mean_{i!=j} w_f log s_f - mean_{i!=j} w_b log s_b - mean log(1-s_neg).
torch::Tensor c2am_loss(const SimilarityTriple& trip, const torch::Tensor& w_f,
                        const torch::Tensor& w_b);

struct HintMask {
  torch::Tensor fg;  // bool [h,w]
  torch::Tensor bg;  // bool [h,w]; diagnostic only, excluded from the loss
  std::string source_prior_id;
};

// fg where the max normalized activation exceeds delta_fg, bg where it
// falls below delta_bg; the band in between belongs to neither.
HintMask extract_hints(const torch::Tensor& prior, const C2amConfig& cfg,
                       const std::string& prior_id = {});

// c2am_loss + lambda_h * mean over fg-hint pixels of BCE(P, target=1).
// Batches with no hint pixels contribute 0 to the hint term.
torch::Tensor c2amh_loss(const SimilarityTriple& trip, const torch::Tensor& w_f,
                         const torch::Tensor& w_b, const torch::Tensor& p_batch,
                         const torch::Tensor& fg_hints, double lambda_h);

// P upsampled bilinearly to the image size; fg = high values, which the
// hint anchoring guarantees for C2AM-H-trained models.
torch::Tensor emit_saliency(Disentangler& model, const torch::Tensor& image);

// Trains the disentangler; priors_dir empty trains the plain (no-hint)
// variant. Writes model.bin, config.snapshot and metrics.log under out.
std::shared_ptr<Disentangler> train_c2amh(
    const Dataset& dataset, const std::filesystem::path& priors_dir,
    const C2amConfig& cfg, const std::filesystem::path& out);

std::shared_ptr<Disentangler> load_disentangler(
    const std::filesystem::path& model_file, long feature_channels);

// Saliency maps for every sample: 8-bit PNG plus a float sidecar in the
// prior file format.
void make_saliency(Disentangler& model, const Dataset& dataset,
                   const std::filesystem::path& out_dir);

struct AnchorStats {
  double fraction_signed = 0;  // mean(P|fg) > mean(P|bg)
  double fraction_abs = 0;     // |difference| > 0 (flip-invariant form)
};

AnchorStats anchoring_stats(Disentangler& model, const Dataset& dataset);

}  // namespace wsss
