#include "doctest.h"

#include <torch/torch.h>

#include "wsss/cam_core.hpp"
#include "wsss/errors.hpp"
#include "wsss/model.hpp"

using namespace wsss;

TEST_SUITE("cam_core") {

TEST_CASE("normalize_cam maps each class into [0,1] with max 1") {
  torch::manual_seed(11);
  auto raw = torch::randn({4, 8, 8});
  auto psi = normalize_cam(raw);
  CHECK(psi.min().item<double>() >= 0.0);
  CHECK(psi.max().item<double>() <= 1.0);
  for (long c = 0; c < 4; ++c) {
    double mx = raw[c].max().item<double>();
    if (mx > 0)
      CHECK(psi[c].max().item<double>() ==
            doctest::Approx(mx / (mx + kNormEps)).epsilon(1e-6));
  }
}

TEST_CASE("normalize_cam: all-negative channel becomes zeros") {
  auto raw = torch::full({2, 4, 4}, -3.0);
  auto psi = normalize_cam(raw);
  CHECK(psi.abs().max().item<double>() == 0.0);
}

TEST_CASE("normalize_cam known oracle values") {
  auto raw = torch::tensor({{{2.0f, -1.0f}, {0.0f, 1.0f}}});
  auto psi = normalize_cam(raw);
  double denom = 2.0 + kNormEps;
  CHECK(psi[0][0][0].item<double>() == doctest::Approx(2.0 / denom));
  CHECK(psi[0][0][1].item<double>() == doctest::Approx(0.0));
  CHECK(psi[0][1][1].item<double>() == doctest::Approx(1.0 / denom));
}

TEST_CASE("normalize_cam rejects NaN naming the class") {
  auto raw = torch::zeros({3, 2, 2});
  raw[1][0][0] = std::nan("");
  CHECK_THROWS_WITH_AS(normalize_cam(raw),
                       doctest::Contains("class map 1"), DataError);
}

TEST_CASE("normalize_cam batched matches per-sample") {
  torch::manual_seed(3);
  auto raw = torch::randn({2, 3, 4, 4});
  auto batched = normalize_cam(raw);
  for (long b = 0; b < 2; ++b)
    CHECK(torch::allclose(batched[b], normalize_cam(raw[b])));
}

TEST_CASE("gap_logits is the spatial mean of raw maps") {
  auto raw = torch::arange(0, 16, torch::kFloat32).reshape({1, 1, 4, 4});
  CHECK(gap_logits(raw).item<double>() == doctest::Approx(7.5));
  auto post = gap_posterior(raw.squeeze(0));
  CHECK(post.probs[0].item<double>() ==
        doctest::Approx(1.0 / (1.0 + std::exp(-7.5))));
}

TEST_CASE("merge(tile(x)) is bit-exact") {
  torch::manual_seed(5);
  auto x = torch::randn({3, 16, 20});
  CHECK(torch::equal(merge(tile(x)), x));
}

TEST_CASE("tile order is TL, TR, BL, BR") {
  auto x = torch::zeros({1, 4, 4});
  x.index_put_({0, torch::indexing::Slice(0, 2), torch::indexing::Slice(0, 2)}, 1.0);
  x.index_put_({0, torch::indexing::Slice(0, 2), torch::indexing::Slice(2, 4)}, 2.0);
  x.index_put_({0, torch::indexing::Slice(2, 4), torch::indexing::Slice(0, 2)}, 3.0);
  x.index_put_({0, torch::indexing::Slice(2, 4), torch::indexing::Slice(2, 4)}, 4.0);
  auto parts = tile(x);
  for (int q = 0; q < 4; ++q)
    CHECK(parts[q].mean().item<double>() == doctest::Approx(q + 1.0));
}

TEST_CASE("tile rejects odd spatial dims") {
  CHECK_THROWS_AS(tile(torch::zeros({1, 5, 4})), DataError);
  CHECK_THROWS_AS(tile(torch::zeros({1, 4, 7})), DataError);
}

TEST_CASE("tile_batch/merge_batch round-trip and agree with tile") {
  torch::manual_seed(9);
  auto x = torch::randn({2, 3, 8, 8});
  auto tiles = tile_batch(x);
  CHECK(tiles.sizes() == torch::IntArrayRef({8, 3, 4, 4}));
  CHECK(torch::equal(merge_batch(tiles), x));
  auto single = tile(x[0]);
  for (int q = 0; q < 4; ++q)
    CHECK(torch::equal(tiles[q * 2 + 0], single[q]));
}

TEST_CASE("resize_bilinear keeps constants and shapes") {
  auto m = torch::full({2, 3, 5}, 0.7);
  auto up = resize_bilinear(m, 9, 11);
  CHECK(up.sizes() == torch::IntArrayRef({2, 9, 11}));
  CHECK(torch::allclose(up, torch::full({2, 9, 11}, 0.7)));
}

// Flip-equivariant stand-in model: per-channel 2x2 average pooling, so
// prior(flip(x)) unflipped equals prior(x) exactly.
struct AvgPoolModel : ClassifierModel {
  torch::Tensor forward(const torch::Tensor& images) override {
    return torch::avg_pool2d(images, 2);
  }
  long num_classes() const override { return 3; }
  long stride() const override { return 2; }
};

TEST_CASE("tta_prior: flip averaging is exact for an equivariant model") {
  torch::manual_seed(21);
  auto img = torch::rand({3, 16, 16});
  AvgPoolModel model;
  auto with_flip = tta_prior(model, img, {1.0}, true);
  auto without = tta_prior(model, img, {1.0}, false);
  CHECK(torch::allclose(with_flip, without, 1e-5, 1e-6));
  CHECK(with_flip.sizes() == torch::IntArrayRef({3, 16, 16}));
}

TEST_CASE("tta_prior is deterministic and normalized") {
  torch::manual_seed(13);
  auto cnn = make_toy_cnn({3, 8, 2}, 77);
  auto img = torch::rand({3, 32, 32});
  auto a = tta_prior(*cnn, img, {0.5, 1.0, 2.0}, true);
  auto b = tta_prior(*cnn, img, {0.5, 1.0, 2.0}, true);
  CHECK(torch::equal(a, b));
  CHECK(a.min().item<double>() >= 0.0);
  CHECK(a.max().item<double>() <= 1.0);
}

TEST_CASE("single_scale_prior has image resolution") {
  auto cnn = make_toy_cnn({4, 8, 2}, 5);
  auto img = torch::rand({3, 24, 24});
  auto p = single_scale_prior(*cnn, img);
  CHECK(p.sizes() == torch::IntArrayRef({4, 24, 24}));
}

}  // TEST_SUITE
