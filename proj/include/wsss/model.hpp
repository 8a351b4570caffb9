#pragma once

#include <memory>

#include "wsss/cam_core.hpp"

namespace wsss {

struct ToyCnnConfig {
  long num_classes = 5;
  long base_channels = 32;
  int blocks = 3;  // stride-2 conv blocks; output stride = 2^blocks
};

// Small CAM-producing CNN: stride-2 conv blocks with GroupNorm + ReLU
// followed by a bias-free 1x1 class head. Deterministic in both train
// and eval mode (no dropout, no batch statistics).
class ToyCnn : public ClassifierModel {
 public:
  explicit ToyCnn(const ToyCnnConfig& cfg);

  torch::Tensor forward(const torch::Tensor& images) override;
  long num_classes() const override { return cfg_.num_classes; }
  long stride() const override { return 1L << cfg_.blocks; }

  const ToyCnnConfig& config() const { return cfg_; }

  std::shared_ptr<ToyCnn> deep_copy() const;

  // Flat parameter list in registration order; shared by the optimizer
  // and checkpointing so the ordering is stable.
  std::vector<torch::Tensor> trainable_parameters();

 private:
  ToyCnnConfig cfg_;
  torch::nn::Sequential trunk_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};

std::shared_ptr<ToyCnn> make_toy_cnn(const ToyCnnConfig& cfg, uint64_t seed);

}  // namespace wsss
