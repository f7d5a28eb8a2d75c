#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "slidelm/optim.hpp"
#include "testutil.hpp"

using namespace slidelm;
using namespace slidelm::nn;

TEST_CASE("adamw leaves parameters alone under zero gradient and zero decay") {
  auto p = Tensor<float>::from({2, 2}, {1, 2, 3, 4}, true);
  std::vector<Tensor<float>> params = {p};
  AdamW<float> opt(0.9, 0.999, 1e-8, 0.0);
  opt.register_params(params);
  for (int i = 0; i < 5; ++i) opt.step(params, 1e-2);
  CHECK(p.data()[0] == 1.0f);
  CHECK(p.data()[3] == 4.0f);
}

TEST_CASE("adamw single step moves by about -lr*sign(g)") {
  auto p = Tensor<float>::from({3}, {0.5f, -0.25f, 2.0f}, true);
  p.grad()[0] = 0.3f;
  p.grad()[1] = -1.7f;
  p.grad()[2] = 0.002f;
  std::vector<Tensor<float>> params = {p};
  AdamW<float> opt(0.9, 0.999, 1e-8, 0.0);
  opt.register_params(params);
  const double lr = 1e-3;
  opt.step(params, lr);
  CHECK(p.data()[0] == doctest::Approx(0.5 - lr).epsilon(1e-4));
  CHECK(p.data()[1] == doctest::Approx(-0.25 + lr).epsilon(1e-4));
  CHECK(p.data()[2] == doctest::Approx(2.0 - lr).epsilon(1e-3));
}

// Straightforward reference AdamW, written independently of optim.hpp.
namespace {
struct RefAdamW {
  double b1, b2, eps, wd;
  int64_t t = 0;
  std::vector<double> m, v;
  void init(size_t n) { m.assign(n, 0), v.assign(n, 0); }
  void step(std::vector<double>& w, const std::vector<double>& g, double lr) {
    ++t;
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      w[i] = w[i] - lr * wd * w[i] - lr * mh / (std::sqrt(vh) + eps);
    }
  }
};
}  // namespace

TEST_CASE("adamw agrees with an independent reference over 10 steps") {
  Rng rng(31);
  const int64_t n = 12;
  auto p = Tensor<double>::randn({n}, rng, 1.0, true);
  std::vector<double> wref(p.data(), p.data() + n);

  std::vector<Tensor<double>> params = {p};
  AdamW<double> opt(0.9, 0.999, 1e-8, 1e-6);
  opt.register_params(params);
  RefAdamW ref{0.9, 0.999, 1e-8, 1e-6};
  ref.init(n);

  for (int s = 0; s < 10; ++s) {
    std::vector<double> g(n);
    for (auto& x : g) x = rng.normal();
    for (int64_t i = 0; i < n; ++i) p.grad()[i] = g[i];
    opt.step(params, 3e-3);
    ref.step(wref, g, 3e-3);
    p.zero_grad();
  }
  for (int64_t i = 0; i < n; ++i)
    CHECK(std::abs(p.data()[i] - wref[i]) < 1e-7);
}

TEST_CASE("clip_grad_norm scales and is a no-op under the threshold") {
  auto p = Tensor<float>::from({2}, {0, 0}, true);
  p.grad()[0] = 6.0f;  // global norm 6
  p.grad()[1] = 0.0f;
  std::vector<Tensor<float>> params = {p};
  CHECK(clip_grad_norm(params, 3.0) == doctest::Approx(0.5));
  CHECK(p.grad()[0] == doctest::Approx(3.0f));

  p.grad()[0] = 1.0f;
  p.grad()[1] = 0.0f;
  CHECK(clip_grad_norm(params, 3.0) == doctest::Approx(1.0));
  CHECK(p.grad()[0] == 1.0f);
}

TEST_CASE("post-clip global norm stays at or under the threshold") {
  Rng rng(32);
  std::vector<Tensor<float>> params;
  for (int k = 0; k < 4; ++k) {
    auto p = Tensor<float>::zeros({5, 3}, true);
    for (int64_t i = 0; i < p.numel(); ++i) p.grad()[i] = static_cast<float>(rng.normal() * 4);
    params.push_back(p);
  }
  clip_grad_norm(params, 3.0);
  CHECK(grad_global_norm(params) <= 3.0 + 1e-6);
}

TEST_CASE("cosine schedule ramp, peak, midpoint, tail") {
  LrSchedule sched{2e-4, 2000, 24000};
  CHECK(cosine_lr(0, sched) == 0.0);
  CHECK(cosine_lr(2000, sched) == doctest::Approx(2e-4));
  CHECK(cosine_lr(1000, sched) == doctest::Approx(1e-4));
  CHECK(cosine_lr(13000, sched) == doctest::Approx(1e-4));  // midpoint of decay
  CHECK(cosine_lr(24000, sched) == 0.0);
  CHECK(cosine_lr(30000, sched) == 0.0);
  CHECK_THROWS_AS(cosine_lr(-1, sched), std::invalid_argument);
}

TEST_CASE("cosine schedule is non-increasing after warmup") {
  LrSchedule sched{2e-4, 100, 1500};
  double prev = cosine_lr(100, sched);
  for (int64_t s = 101; s <= 1600; ++s) {
    const double cur = cosine_lr(s, sched);
    CHECK(cur <= prev + 1e-15);
    CHECK(cur >= 0.0);
    prev = cur;
  }
}
