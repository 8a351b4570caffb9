#include "doctest.h"

#include <torch/torch.h>

#include <cmath>

#include "fd_check.hpp"
#include "wsss/errors.hpp"
#include "wsss/objectives.hpp"

using namespace wsss;

namespace {

ScheduleSet sched_of(long total) {
  ScheduleSet s;
  s.total_steps = total;
  return s;
}

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("schedule endpoints are exact") {
  auto s = sched_of(1000);
  CHECK(schedule_value(s, "lambda_re", 0) == 0.0);
  CHECK(schedule_value(s, "lambda_re", 500) == 4.0);
  CHECK(schedule_value(s, "lambda_re", 1000) == 4.0);
  CHECK(schedule_value(s, "lambda_cse", 0) == 0.3);
  CHECK(schedule_value(s, "lambda_cse", 1000) == 1.0);
  CHECK(schedule_value(s, "lambda_noc", 0) == 0.0);
  CHECK(schedule_value(s, "lambda_noc", 1000) == 1.0);
  CHECK(schedule_value(s, "lr_decay", 0) == 1.0);
  CHECK(schedule_value(s, "lr_decay", 1000) == 0.0);
}

TEST_CASE("schedules are piecewise linear and monotone") {
  auto s = sched_of(1000);
  CHECK(schedule_value(s, "lambda_re", 250) == doctest::Approx(2.0));
  CHECK(schedule_value(s, "lambda_re", 750) == doctest::Approx(4.0));
  CHECK(schedule_value(s, "lambda_cse", 500) == doctest::Approx(0.65));
  CHECK(schedule_value(s, "lambda_noc", 250) == doctest::Approx(0.25));
  CHECK(schedule_value(s, "lr_decay", 400) == doctest::Approx(0.6));
  double prev = -1;
  for (long t = 0; t <= 1000; t += 100) {
    double v = schedule_value(s, "lambda_noc", t);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(schedule_value(s, "nonsense", 0), ConfigError);
}

TEST_CASE("soft_margin at zero logits equals ln 2, smoothing-invariant") {
  auto z = torch::zeros({1, 2}, torch::kFloat64);
  auto y = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
  CHECK(soft_margin_loss(z, y, 0.0).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(soft_margin_loss(z, y, 0.1).item<double>() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("soft_margin closed-form oracle z=[2,-1] y=[1,0]") {
  auto z = torch::tensor({{2.0, -1.0}}, torch::kFloat64);
  auto y = torch::tensor({{1.0, 0.0}}, torch::kFloat64);
  double expect = (softplus(-2.0) + softplus(-1.0)) / 2.0;
  CHECK(soft_margin_loss(z, y, 0.0).item<double>() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("soft_margin rejects NaN logits") {
  auto z = torch::tensor({{std::nan(""), 0.0}});
  auto y = torch::tensor({{1.0f, 0.0f}});
  CHECK_THROWS_AS(soft_margin_loss(z, y, 0.0), DataError);
}

TEST_CASE("erase_target removes exactly the drawn class") {
  auto y = torch::tensor({1.0f, 1.0f, 0.0f});
  auto e = erase_target(y, 0);
  CHECK(torch::equal(e, torch::tensor({0.0f, 1.0f, 0.0f})));
  CHECK(torch::equal(erase_target(torch::tensor({1.0f, 0.0f}), 0),
                     torch::tensor({0.0f, 0.0f})));
  CHECK_THROWS_AS(erase_target(y, 2), DataError);
}

TEST_CASE("all-zero erased target still yields a finite loss") {
  auto y = erase_target(torch::tensor({{1.0, 0.0}}, torch::kFloat64)[0], 0);
  auto z = torch::tensor({{0.5, -0.5}}, torch::kFloat64);
  auto loss = soft_margin_loss(z, y.unsqueeze(0), 0.0);
  CHECK(std::isfinite(loss.item<double>()));
  double expect = (softplus(0.5) + softplus(-0.5)) / 2.0;
  CHECK(loss.item<double>() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cse_soft_mask identity / erasure / half oracle") {
  torch::manual_seed(2);
  auto x = torch::rand({3, 4, 4});
  CHECK(torch::allclose(cse_soft_mask(x, torch::zeros({4, 4})), x));
  CHECK(cse_soft_mask(x, torch::ones({4, 4})).abs().max().item<double>() ==
        doctest::Approx(0.0));
  auto psi = torch::zeros({4, 4});
  psi.index_put_({torch::indexing::Slice(), torch::indexing::Slice(0, 2)}, 0.5);
  auto out = cse_soft_mask(x, psi);
  auto left = x.index({torch::indexing::Slice(), torch::indexing::Slice(),
                       torch::indexing::Slice(0, 2)});
  auto out_left = out.index({torch::indexing::Slice(), torch::indexing::Slice(),
                             torch::indexing::Slice(0, 2)});
  CHECK(torch::allclose(out_left, left * 0.5));
}

TEST_CASE("noc_hard_mask thresholds exactly") {
  auto x = torch::ones({3, 1, 2});
  auto psi = torch::tensor({{0.1f, 0.3f}}).reshape({1, 2});
  auto out = noc_hard_mask(x, psi, 0.2);
  CHECK(out.index({0, 0, 0}).item<float>() == 1.0f);
  CHECK(out.index({0, 0, 1}).item<float>() == 0.0f);
  CHECK(torch::allclose(noc_hard_mask(x, torch::zeros({1, 2}), 0.2), x));
  CHECK(noc_hard_mask(x, torch::full({1, 2}, 0.5f), 0.2)
            .abs().max().item<double>() == 0.0);
}

TEST_CASE("reconstruction_l1 with and without class restriction") {
  auto a = torch::tensor({{{1.0}}, {{3.0}}});     // [2,1,1]
  auto a_re = torch::tensor({{{2.0}}, {{0.0}}});  // class 0 diff 1, class 1 diff 3
  auto y = torch::tensor({1.0, 0.0});
  CHECK(reconstruction_l1(a.unsqueeze(0), a_re.unsqueeze(0), y.unsqueeze(0),
                          false)
            .item<double>() == doctest::Approx(2.0));
  CHECK(reconstruction_l1(a.unsqueeze(0), a_re.unsqueeze(0), y.unsqueeze(0),
                          true)
            .item<double>() == doctest::Approx(1.0));
}

TEST_CASE("poc_loss report total equals weighted component sum") {
  torch::manual_seed(4);
  auto a = torch::randn({2, 3, 4, 4});
  auto a_re = torch::randn({2, 3, 4, 4});
  auto a_oc = torch::randn({2, 3, 4, 4});
  auto y = torch::tensor({{1.0f, 0.0f, 1.0f}, {0.0f, 1.0f, 0.0f}});
  auto r = torch::tensor({0L, 1L});
  auto s = sched_of(100);
  auto res = poc_loss(a, a_re, a_oc, y, r, 40, s);
  auto rep = res.report();
  double sum = 0;
  for (const auto& [k, v] : rep.components) sum += rep.weights.at(k) * v;
  CHECK(rep.total == doctest::Approx(sum).epsilon(1e-6));
  CHECK(rep.components.count("cls") == 1);
  CHECK(rep.components.count("re_cls") == 1);
  CHECK(rep.components.count("re") == 1);
  CHECK(rep.components.count("cse") == 1);
  CHECK(rep.weights.at("re") ==
        doctest::Approx(schedule_value(s, "lambda_re", 40)));
  CHECK(rep.weights.at("cse") ==
        doctest::Approx(schedule_value(s, "lambda_cse", 40)));
}

TEST_CASE("poc_loss without an erasing stack drops the cse term") {
  torch::manual_seed(6);
  auto a = torch::randn({1, 2, 4, 4});
  auto a_re = torch::randn({1, 2, 4, 4});
  auto y = torch::tensor({{1.0f, 1.0f}});
  auto res = poc_loss(a, a_re, torch::Tensor(), y, torch::Tensor(), 10,
                      sched_of(100));
  CHECK(res.components.count("cse") == 0);
}

TEST_CASE("noc_loss equals schedule times classification loss") {
  torch::manual_seed(8);
  auto a = torch::randn({2, 3, 4, 4}).to(torch::kFloat64);
  auto y = torch::tensor({{1.0, 0.0, 0.0}, {0.0, 1.0, 1.0}}, torch::kFloat64);
  auto s = sched_of(200);
  auto direct = noc_loss(a, y, s, 50).item<double>();
  double lam = schedule_value(s, "lambda_noc", 50);
  auto cls = soft_margin_loss(a.mean({-2, -1}), y, s.smoothing_eps);
  CHECK(direct == doctest::Approx(lam * cls.item<double>()).epsilon(1e-9));
}

TEST_CASE("finite-difference spot checks") {
  torch::manual_seed(42);
  auto y = torch::tensor({{1.0, 0.0, 1.0}}, torch::kFloat64);

  auto err_sm = testutil::fd_max_rel_err(
      [&](const std::vector<torch::Tensor>& in) {
        return soft_margin_loss(in[0], y, 0.1);
      },
      {torch::randn({1, 3}, torch::kFloat64)});
  CHECK(err_sm < 1e-4);

  auto err_re = testutil::fd_max_rel_err(
      [&](const std::vector<torch::Tensor>& in) {
        return reconstruction_l1(in[0], in[1], y, true);
      },
      {torch::randn({1, 3, 3, 3}, torch::kFloat64),
       torch::randn({1, 3, 3, 3}, torch::kFloat64)});
  CHECK(err_re < 1e-4);

  auto r = torch::tensor({0L});
  auto s = sched_of(100);
  auto err_poc = testutil::fd_max_rel_err(
      [&](const std::vector<torch::Tensor>& in) {
        return poc_loss(in[0], in[1], in[2], y, r, 30, s).total;
      },
      {torch::randn({1, 3, 2, 2}, torch::kFloat64),
       torch::randn({1, 3, 2, 2}, torch::kFloat64),
       torch::randn({1, 3, 2, 2}, torch::kFloat64)});
  CHECK(err_poc < 1e-4);
}

}  // TEST_SUITE
