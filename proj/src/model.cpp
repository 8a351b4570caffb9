#include "wsss/model.hpp"

namespace wsss {

ToyCnn::ToyCnn(const ToyCnnConfig& cfg) : cfg_(cfg) {
  torch::nn::Sequential trunk;
  long in = 3;
  long out = cfg.base_channels;
  for (int b = 0; b < cfg.blocks; ++b) {
    // Batch norm: its statistics are batch-aggregated, so a tiled forward
    // pass sees nearly the same normalization as the full image (exactly
    // the same in eval mode) — which the tile/merge reconstruction
    // objective relies on. Per-image norms make the reconstruction
    // mismatch irreducible and push the activation maps toward zero.
    trunk->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    trunk->push_back(torch::nn::BatchNorm2d(out));
    trunk->push_back(torch::nn::ReLU());
    trunk->push_back(torch::nn::Conv2d(
        torch::nn::Conv2dOptions(out, out, 3).stride(1).padding(1)));
    trunk->push_back(torch::nn::BatchNorm2d(out));
    trunk->push_back(torch::nn::ReLU());
    in = out;
    out = std::min<long>(out * 2, 128);
  }
  trunk_ = register_module("trunk", trunk);
  head_ = register_module(
      "head", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(in, cfg.num_classes, 1).bias(false)));
}

torch::Tensor ToyCnn::forward(const torch::Tensor& images) {
  return head_->forward(trunk_->forward(images));
}

std::shared_ptr<ToyCnn> ToyCnn::deep_copy() const {
  auto copy = std::make_shared<ToyCnn>(cfg_);
  torch::NoGradGuard no_grad;
  auto src = named_parameters();
  auto dst = copy->named_parameters();
  for (const auto& item : src) dst[item.key()].copy_(item.value());
  auto src_buf = named_buffers();
  auto dst_buf = copy->named_buffers();
  for (const auto& item : src_buf) dst_buf[item.key()].copy_(item.value());
  return copy;
}

std::vector<torch::Tensor> ToyCnn::trainable_parameters() {
  return parameters();
}

std::shared_ptr<ToyCnn> make_toy_cnn(const ToyCnnConfig& cfg, uint64_t seed) {
  torch::manual_seed(seed);
  return std::make_shared<ToyCnn>(cfg);
}

}  // namespace wsss
