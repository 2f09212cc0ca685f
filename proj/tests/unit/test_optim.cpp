#include <doctest.h>

#include <cmath>

#include "protlang/optim.hpp"
#include "protlang/tensor.hpp"

using namespace protlang;

TEST_CASE("adamw first step matches the closed form") {
  auto p = Tensor<double>::from_data({1}, {0.0}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({{"p", p}}, cfg);
  backward(sum_all(p));  // grad = 1
  opt.step(0.1);
  // m-hat = 1, v-hat = 1 -> theta = -lr / (1 + eps)
  CHECK(std::abs(p.data()[0] + 0.1) <= 1e-8);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw decay-only step scales by (1 - lr*wd)") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.05;
  AdamW<double> opt({{"p", p}}, cfg);
  opt.step(0.1);  // no grad at all
  CHECK(p.data()[0] == doctest::Approx(0.995).epsilon(1e-15));
}

TEST_CASE("adamw with zero grad and zero decay is the identity") {
  auto p = Tensor<double>::from_data({2, 2}, {1.5, -2.5, 0.25, 9.0}, true);
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt({{"p", p}}, cfg);
  auto before = p.detach();
  opt.step(0.1);
  opt.step(0.1);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.data()[i] == before.data()[i]);
}

TEST_CASE("adamw skips frozen parameters") {
  auto p = Tensor<double>::from_data({1}, {1.0}, true);
  AdamW<double> opt({{"p", p}});
  backward(sum_all(p));
  p.set_requires_grad(false);
  opt.step(0.1);
  CHECK(p.data()[0] == 1.0);
}

TEST_CASE("adamw state round trip resumes identically") {
  auto make_param = [] { return Tensor<double>::from_data({3}, {0.3, -0.7, 1.1}, true); };
  auto run_steps = [](Tensor<double>& p, AdamW<double>& opt, int n) {
    for (int i = 0; i < n; ++i) {
      p.zero_grad();
      backward(sum_all(mul(p, p)));
      opt.step(1e-2);
    }
  };
  auto p1 = make_param();
  AdamW<double> opt1({{"p", p1}});
  run_steps(p1, opt1, 7);

  // split run: 4 steps, transfer state, 3 more
  auto p2 = make_param();
  AdamW<double> opt2({{"p", p2}});
  run_steps(p2, opt2, 4);
  auto p3 = p2.detach();
  p3.set_requires_grad(true);
  AdamW<double> opt3({{"p", p3}});
  opt3.load_state(opt2.state());
  opt3.set_step_count(opt2.step_count());
  run_steps(p3, opt3, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(p3.data()[i] == p1.data()[i]);

  AdamW<double> opt4({{"q", make_param()}});
  CHECK_THROWS_AS(opt4.load_state(opt2.state()), NotFoundError);
}

TEST_CASE("cosine schedule boundary anchors") {
  const double peak = 1e-4, lo = 8e-5;
  CHECK(cosine_lr(0, 100, peak, lo, 10) == 0.0);
  CHECK(cosine_lr(5, 100, peak, lo, 10) == doctest::Approx(peak * 0.5));
  CHECK(cosine_lr(10, 100, peak, lo, 10) == doctest::Approx(peak));
  CHECK(cosine_lr(55, 100, peak, lo, 10) == doctest::Approx(lo + 0.5 * (peak - lo)));
  CHECK(cosine_lr(100, 100, peak, lo, 10) == doctest::Approx(lo));
  CHECK(cosine_lr(5000, 100, peak, lo, 10) == doctest::Approx(lo));
  CHECK_THROWS_AS(cosine_lr(0, 100, lo, peak, 10), ContractError);
  CHECK_THROWS_AS(cosine_lr(0, 10, peak, lo, 20), ContractError);
}
