#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace wsss {

// Prior / activation-map file format: magic "CAMS", version u16, then
// C,h,w as u32 followed by C*h*w little-endian float32 values.
// Bit-exact across pipeline stages.
void save_cams(const std::filesystem::path& file, const torch::Tensor& maps);
torch::Tensor load_cams(const std::filesystem::path& file);

// Named-tensor archive used for checkpoints (parameters, momentum
// buffers). float32/float64, little-endian, deterministic layout.
struct TensorArchive {
  std::vector<std::pair<std::string, torch::Tensor>> entries;

  void add(const std::string& name, const torch::Tensor& t);
  torch::Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;

  void save(const std::filesystem::path& file) const;
  static TensorArchive load(const std::filesystem::path& file);
};

}  // namespace wsss
