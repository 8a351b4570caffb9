#include "wsss/cam_core.hpp"

#include <string>

#include "wsss/errors.hpp"

namespace wsss {

torch::Tensor normalize_cam(const torch::Tensor& raw) {
  if (raw.dim() != 3 && raw.dim() != 4)
    throw DataError("normalize_cam: expected [C,h,w] or [B,C,h,w]");
  if (!raw.isfinite().all().item<bool>()) {
    // Name the first offending class for the diagnostic.
    auto bad = raw.isfinite().logical_not();
    auto per_class = bad.flatten(raw.dim() - 2).any(-1);
    auto idx = per_class.flatten().nonzero();
    long cls = idx.numel() > 0 ? idx[0].item<long>() : -1;
    throw DataError("normalize_cam: non-finite activation in class map " +
                    std::to_string(cls));
  }
  auto relu = torch::relu(raw);
  auto maxes = std::get<0>(relu.flatten(raw.dim() - 2).max(-1));
  maxes = maxes.unsqueeze(-1).unsqueeze(-1);
  return relu / (maxes + kNormEps);
}

CamStack make_cam_stack(const torch::Tensor& raw, CamSource source) {
  return CamStack{raw, normalize_cam(raw), source};
}

torch::Tensor gap_logits(const torch::Tensor& raw) {
  if (raw.size(-1) < 1 || raw.size(-2) < 1)
    throw DataError("gap_logits: empty spatial dims");
  return raw.mean({-2, -1});
}

Posterior gap_posterior(const torch::Tensor& raw) {
  return Posterior{torch::sigmoid(gap_logits(raw))};
}

namespace {

void check_even(const torch::Tensor& x) {
  if (x.size(-2) % 2 != 0 || x.size(-1) % 2 != 0)
    throw DataError("tile: spatial dims must be even, got " +
                    std::to_string(x.size(-2)) + "x" +
                    std::to_string(x.size(-1)));
}

}  // namespace

std::array<torch::Tensor, 4> tile(const torch::Tensor& x) {
  check_even(x);
  long h = x.size(-2) / 2, w = x.size(-1) / 2;
  using torch::indexing::Slice;
  return {x.index({torch::indexing::Ellipsis, Slice(0, h), Slice(0, w)}),
          x.index({torch::indexing::Ellipsis, Slice(0, h), Slice(w, 2 * w)}),
          x.index({torch::indexing::Ellipsis, Slice(h, 2 * h), Slice(0, w)}),
          x.index({torch::indexing::Ellipsis, Slice(h, 2 * h), Slice(w, 2 * w)})};
}

torch::Tensor merge(const std::array<torch::Tensor, 4>& pieces) {
  for (int i = 1; i < 4; ++i)
    if (!pieces[i].sizes().equals(pieces[0].sizes()))
      throw DataError("merge: piece shapes differ");
  auto top = torch::cat({pieces[0], pieces[1]}, -1);
  auto bottom = torch::cat({pieces[2], pieces[3]}, -1);
  return torch::cat({top, bottom}, -2);
}

torch::Tensor tile_batch(const torch::Tensor& x) {
  auto q = tile(x);
  return torch::cat({q[0], q[1], q[2], q[3]}, 0);
}

torch::Tensor merge_batch(const torch::Tensor& pieces) {
  long b = pieces.size(0) / 4;
  if (b * 4 != pieces.size(0))
    throw DataError("merge_batch: batch not divisible by 4");
  return merge({pieces.narrow(0, 0, b), pieces.narrow(0, b, b),
                pieces.narrow(0, 2 * b, b), pieces.narrow(0, 3 * b, b)});
}

torch::Tensor resize_bilinear(const torch::Tensor& maps, long h, long w) {
  auto x = maps.dim() == 3 ? maps.unsqueeze(0) : maps;
  auto out = torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions()
             .size(std::vector<long>{h, w})
             .mode(torch::kBilinear)
             .align_corners(false));
  return maps.dim() == 3 ? out.squeeze(0) : out;
}

torch::Tensor tta_prior(ClassifierModel& model, const torch::Tensor& image,
                        const std::vector<double>& scales, bool use_flip) {
  if (scales.empty()) throw DataError("tta_prior: scales must be non-empty");
  for (double s : scales)
    if (s <= 0) throw DataError("tta_prior: scale must be positive");
  torch::NoGradGuard no_grad;
  long h = image.size(-2), w = image.size(-1);
  torch::Tensor sum;
  long count = 0;
  for (double s : scales) {
    long sh = std::max<long>(8, std::lround(h * s));
    long sw = std::max<long>(8, std::lround(w * s));
    auto scaled = resize_bilinear(image, sh, sw).unsqueeze(0);
    for (int flip = 0; flip < (use_flip ? 2 : 1); ++flip) {
      auto input = flip ? scaled.flip(-1) : scaled;
      auto cam = model.forward(input);
      if (flip) cam = cam.flip(-1);
      auto up = resize_bilinear(cam, h, w).squeeze(0);
      sum = count == 0 ? up : sum + up;
      ++count;
    }
  }
  return normalize_cam(sum / static_cast<double>(count));
}

torch::Tensor single_scale_prior(ClassifierModel& model,
                                 const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  auto cam = model.forward(image.unsqueeze(0));
  auto up = resize_bilinear(cam, image.size(-2), image.size(-1)).squeeze(0);
  return normalize_cam(up);
}

}  // namespace wsss
