#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace wsss {

struct ImageSample {
  std::string id;
  torch::Tensor image;    // [3,H,W] float in [0,1]
  torch::Tensor labels;   // [C] binary float
  torch::Tensor gt_mask;  // [H,W] int64, 255=ignore; undefined when absent
};

// VOC-style layout: images/<id>.png, masks/<id>.png (8-bit, 255=ignore)
// and labels.txt with lines "<id> <class>,<class>,..." (1-based ids).
struct Dataset {
  std::filesystem::path root;
  long num_classes = 0;
  std::vector<std::string> ids;
  std::map<std::string, std::vector<int>> labels;

  std::size_t size() const { return ids.size(); }
  bool has_mask(const std::string& id) const;
  ImageSample load(std::size_t index, bool with_mask = false) const;
  torch::Tensor label_vector(const std::string& id) const;

 private:
  // Decoded-image cache; the training loop revisits every sample each
  // epoch and PNG decoding dominates step time otherwise.
  struct Cache {
    std::mutex mu;
    std::map<std::size_t, std::pair<torch::Tensor, torch::Tensor>> entries;
  };
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

Dataset load_voc(const std::filesystem::path& root);

// Desk-scale synthetic shapes set. Class design mirrors the group axes
// used by the reports: a large, rarely co-occurring blob class; a pair
// of frequently co-occurring classes; a thin-structure class; and a
// mid-sized ring class. Every shape carries a small saturated core so
// classifiers can succeed while attending to only part of the object.
struct SyntheticSpec {
  int n_images = 200;
  int num_classes = 5;
  int image_size = 64;
  int min_shapes = 1;
  int max_shapes = 3;
  double co_occurrence = 0.6;  // probability of multi-class scenes
  double noise = 0.06;
  uint64_t seed = 1;
};

void generate_synthetic(const SyntheticSpec& spec,
                        const std::filesystem::path& dir);

enum class AugmentPolicy { none, color_jitter };

// Random resize in [0.5, 2.0] + random crop to out_size (reflect-padded
// when the resized image is smaller), optional color jitter. The GT
// mask, when present, is transformed identically (nearest neighbor).
ImageSample augment(const ImageSample& sample, AugmentPolicy policy,
                    long out_size, std::mt19937_64& rng);

// Image file helpers (PNG via OpenCV, RGB in [0,1]).
torch::Tensor read_image(const std::filesystem::path& file);
void write_image(const std::filesystem::path& file, const torch::Tensor& image);
torch::Tensor read_mask(const std::filesystem::path& file);
void write_mask(const std::filesystem::path& file, const torch::Tensor& mask);
// 8-bit single channel map in [0,1] (saliency).
void write_gray(const std::filesystem::path& file, const torch::Tensor& map01);
torch::Tensor read_gray(const std::filesystem::path& file);

}  // namespace wsss
