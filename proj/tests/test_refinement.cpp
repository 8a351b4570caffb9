#include "doctest.h"

#include <torch/torch.h>

#include <cmath>
#include <vector>

#include "wsss/errors.hpp"
#include "wsss/refinement.hpp"

using namespace wsss;

TEST_SUITE("refinement") {

TEST_CASE("seeds_from_priors threshold rule") {
  // Single class; peaks 0.05 / 0.25 / 0.5.
  auto prior = torch::tensor({{{0.05f, 0.25f, 0.5f}}});
  auto seeds = seeds_from_priors(prior, 0.1, 0.4);
  auto labels = seeds.labels.flatten();
  CHECK(labels[0].item<long>() == 0);
  CHECK(labels[1].item<long>() == 255);
  CHECK(labels[2].item<long>() == 1);
  CHECK(seeds.unknown_fraction() == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(seeds_from_priors(prior, 0.5, 0.4), ConfigError);
}

TEST_CASE("seeds_from_priors labels argmax class + 1") {
  auto prior = torch::zeros({4, 1, 1});
  prior[2][0][0] = 0.5;
  auto seeds = seeds_from_priors(prior, 0.1, 0.4);
  CHECK(seeds.labels[0][0].item<long>() == 3);
}

TEST_CASE("seeds_with_saliency: saliency owns the background rule") {
  auto prior = torch::full({1, 2, 2}, 0.9f);
  auto low_sal = torch::full({2, 2}, 0.1f);
  auto s1 = seeds_with_saliency(prior, low_sal, 0.4, 0.5);
  CHECK(torch::equal(s1.labels, torch::zeros({2, 2}, torch::kInt64)));

  auto high_sal = torch::full({2, 2}, 0.9f);
  auto s2 = seeds_with_saliency(prior, high_sal, 0.4, 0.5);
  CHECK(torch::equal(s2.labels, torch::ones({2, 2}, torch::kInt64)));

  auto weak_prior = torch::full({1, 2, 2}, 0.2f);
  auto s3 = seeds_with_saliency(weak_prior, high_sal, 0.4, 0.5);
  CHECK((s3.labels == 255).all().item<bool>());

  CHECK_THROWS_AS(seeds_with_saliency(prior, torch::rand({3, 3}), 0.4, 0.5),
                  DataError);
}

TEST_CASE("seeds are pointwise: permuting pixels permutes outputs") {
  torch::manual_seed(51);
  auto prior = torch::rand({3, 4, 5});
  auto direct = seeds_from_priors(prior, 0.2, 0.6).labels;
  auto transposed = seeds_from_priors(prior.transpose(1, 2), 0.2, 0.6).labels;
  CHECK(torch::equal(direct.t(), transposed));
}

TEST_CASE("build_affinity: constant image gives unit weights") {
  auto img = torch::full({3, 4, 4}, 0.5);
  auto g = build_affinity(img, 1, 1.0);
  CHECK(g.h == 4);
  CHECK(g.w == 4);
  for (float w : g.weight) CHECK(w == doctest::Approx(1.0));
  CHECK_THROWS_AS(build_affinity(img, 0, 1.0), ConfigError);
}

TEST_CASE("build_affinity radius 1 on 2x2 is the 4-neighborhood + self") {
  auto img = torch::rand({1, 2, 2});
  auto g = build_affinity(img, 1, 1.0);
  // Each pixel: itself + 2 in-bounds axial neighbors.
  for (long i = 0; i < 4; ++i)
    CHECK(g.row_ptr[i + 1] - g.row_ptr[i] == 3);
  // Self-weight w_ii = 1 (zero feature distance).
  for (long i = 0; i < 4; ++i) {
    bool found_self = false;
    for (long e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e)
      if (g.col_index[e] == i) {
        found_self = true;
        CHECK(g.weight[e] == doctest::Approx(1.0));
      }
    CHECK(found_self);
  }
}

TEST_CASE("build_affinity: cross-edge weights fall below within-region") {
  // 6x6 two-region image with a sharp vertical edge.
  auto img = torch::zeros({1, 6, 6});
  img.index_put_({0, torch::indexing::Slice(),
                  torch::indexing::Slice(3, 6)}, 1.0);
  auto g = build_affinity(img, 1, 0.5);
  double within = -1, cross = -1;
  for (long y = 0; y < 6; ++y) {
    long left = y * 6 + 2, right = y * 6 + 3;  // straddle the edge
    for (long e = g.row_ptr[left]; e < g.row_ptr[left + 1]; ++e) {
      if (g.col_index[e] == right) cross = g.weight[e];
      if (g.col_index[e] == left - 6 || g.col_index[e] == left + 6)
        within = g.weight[e];
    }
  }
  CHECK(within == doctest::Approx(1.0));
  CHECK(cross == doctest::Approx(std::exp(-1.0 / (2.0 * 0.25))));
  CHECK(cross < within);
}

TEST_CASE("build_affinity is symmetric") {
  torch::manual_seed(53);
  auto img = torch::rand({3, 5, 5});
  auto g = build_affinity(img, 2, 0.0);  // median sigma heuristic
  CHECK(g.sigma > 0);
  auto weight_of = [&](long i, long j) -> double {
    for (long e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e)
      if (g.col_index[e] == j) return g.weight[e];
    return -1;
  };
  for (long i = 0; i < 25; ++i)
    for (long e = g.row_ptr[i]; e < g.row_ptr[i + 1]; ++e)
      CHECK(weight_of(g.col_index[e], i) ==
            doctest::Approx(g.weight[e]).epsilon(1e-6));
}

TEST_CASE("add_background_channel is clamp(1-max)") {
  auto prior = torch::tensor({{{0.2f, 0.9f}}, {{0.7f, 0.3f}}});
  auto with_bg = add_background_channel(prior);
  CHECK(with_bg.size(0) == 3);
  CHECK(with_bg[0][0][0].item<double>() == doctest::Approx(0.3));
  CHECK(with_bg[0][0][1].item<double>() == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(torch::equal(with_bg[1], prior[0]));
}

TEST_CASE("random_walk: t=0 and identity graph leave the prior unchanged") {
  torch::manual_seed(57);
  auto prior = torch::rand({3, 4, 4});
  prior = prior / prior.sum(0, true);

  AffinityGraph ident;
  ident.h = 4;
  ident.w = 4;
  for (long i = 0; i < 16; ++i) {
    ident.row_ptr.push_back(i);
    ident.col_index.push_back(static_cast<int>(i));
    ident.weight.push_back(1.0f);
  }
  ident.row_ptr.push_back(16);

  auto same_t0 = random_walk(prior, ident, 8.0, 0);
  CHECK(torch::allclose(same_t0, prior, 1e-6, 1e-7));
  auto same_ident = random_walk(prior, ident, 8.0, 17);
  CHECK(torch::allclose(same_ident, prior, 1e-6, 1e-7));
  CHECK_THROWS_AS(random_walk(prior, ident, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(random_walk(prior, ident, 8.0, -1), ConfigError);
}

TEST_CASE("random_walk 1x3 chain matches the dense matrix-power oracle") {
  // Features 0, 1, 3 with radius 1 and sigma 1.
  auto feat = torch::tensor({{{0.0f, 1.0f, 3.0f}}});
  auto g = build_affinity(feat, 1, 1.0);
  auto prior = torch::tensor({{{0.6f, 0.1f, 0.2f}}, {{0.4f, 0.9f, 0.8f}}});

  const double beta = 2.0;
  const int t = 2;
  auto out = random_walk(prior, g, beta, t);

  // Dense oracle: W from the formula, elementwise power, row-normalize,
  // two explicit 3x3 multiplications, per-pixel renormalization.
  double w01 = std::exp(-1.0 / 2.0), w12 = std::exp(-4.0 / 2.0);
  double W[3][3] = {{1, w01, 0}, {w01, 1, w12}, {0, w12, 1}};
  double T[3][3];
  for (int i = 0; i < 3; ++i) {
    double row = 0;
    for (int j = 0; j < 3; ++j) row += std::pow(W[i][j], beta);
    for (int j = 0; j < 3; ++j) T[i][j] = std::pow(W[i][j], beta) / row;
  }
  double u[2][3];
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i) u[c][i] = prior[c][0][i].item<double>();
  for (int it = 0; it < t; ++it) {
    double next[2][3] = {};
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) next[c][i] += T[i][j] * u[c][j];
    std::copy(&next[0][0], &next[0][0] + 6, &u[0][0]);
  }
  for (int i = 0; i < 3; ++i) {
    double col = u[0][i] + u[1][i];
    for (int c = 0; c < 2; ++c)
      CHECK(out[c][0][i].item<double>() ==
            doctest::Approx(u[c][i] / col).epsilon(1e-6));
  }
}

TEST_CASE("random_walk conserves per-pixel mass") {
  torch::manual_seed(61);
  auto img = torch::rand({3, 8, 8});
  auto g = build_affinity(img, 2, 0.0);
  auto prior = torch::rand({4, 8, 8});
  prior = prior / prior.sum(0, true);
  auto out = random_walk(prior, g, 8.0, 32);
  auto sums = out.sum(0);
  CHECK(torch::allclose(sums, torch::ones({8, 8}), 1e-6, 1e-6));
}

TEST_CASE("random_walk smoothing limit on a constant-affinity 8x8") {
  auto img = torch::zeros({1, 8, 8});
  auto g = build_affinity(img, 3, 1.0);
  torch::manual_seed(63);
  auto prior = torch::rand({2, 8, 8});
  prior = prior / prior.sum(0, true);
  auto out = random_walk(prior, g, 1.0, 500);
  for (long c = 0; c < 2; ++c) {
    double spread =
        (out[c].max() - out[c].min()).item<double>();
    CHECK(spread < 1e-3);
  }
}

TEST_CASE("crf plugin registry and fallbacks") {
  auto img = torch::rand({3, 4, 4});
  auto probs = torch::rand({2, 4, 4});

  SUBCASE("identity fallback returns input bit-exact") {
    CHECK(torch::equal(crf_refine(img, probs, "identity"), probs));
    CHECK(torch::equal(crf_refine(img, probs, ""), probs));
  }

  SUBCASE("unknown plugin errors, listing what is registered") {
    register_crf_plugin("halve", [](const torch::Tensor&,
                                    const torch::Tensor& p) { return p / 2; });
    CHECK_THROWS_WITH_AS(crf_refine(img, probs, "missing"),
                         doctest::Contains("halve"), ConfigError);
    CHECK(torch::equal(crf_refine(img, probs, "halve"), probs / 2));
  }

  SUBCASE("throwing plugin falls back to identity") {
    register_crf_plugin("broken",
                        [](const torch::Tensor&, const torch::Tensor&)
                            -> torch::Tensor {
                          throw std::runtime_error("boom");
                        });
    CHECK(torch::equal(crf_refine(img, probs, "broken"), probs));
  }

  SUBCASE("argmax-preserving plugin contract") {
    register_crf_plugin("sharpen",
                        [](const torch::Tensor&, const torch::Tensor& p) {
                          return torch::softmax(p * 4.0, 0);
                        });
    auto confident = torch::full({2, 2, 2}, 0.05);
    confident[1] = 0.95;
    auto refined = crf_refine(img, confident, "sharpen");
    CHECK(torch::equal(refined.argmax(0), confident.argmax(0)));
  }
}

}  // TEST_SUITE
