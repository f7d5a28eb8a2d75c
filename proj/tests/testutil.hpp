#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "slidelm/rng.hpp"
#include "slidelm/tensor.hpp"

namespace testutil {

using slidelm::Rng;
using slidelm::nn::Tape;
using slidelm::nn::Tensor;

// Central finite-difference gradient oracle in double precision.
// build() must construct a fresh scalar graph from the current parameter
// values; it is invoked with a null tape for the perturbed evaluations.
inline void gradcheck(const std::function<Tensor<double>(Tape<double>*)>& build,
                      std::vector<Tensor<double>> params, Rng& rng,
                      double h = 1e-3, double tol = 1e-3,
                      int64_t max_coords_per_param = 24) {
  Tape<double> tape;
  for (auto& p : params) p.zero_grad();
  Tensor<double> loss = build(&tape);
  REQUIRE(loss.numel() == 1);
  tape.backward(loss);

  for (size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    const int64_t n = p.numel();
    std::vector<int64_t> coords;
    if (n <= max_coords_per_param) {
      for (int64_t i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int64_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(rng.uniform_int(n));
    }
    for (int64_t idx : coords) {
      const double orig = p.data()[idx];
      p.data()[idx] = orig + h;
      const double fp = build(nullptr).item();
      p.data()[idx] = orig - h;
      const double fm = build(nullptr).item();
      p.data()[idx] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = p.grad()[idx];
      // the 1e-2 floor absorbs O(h^2 f''') truncation on near-zero gradients
      const double err =
          std::abs(an - fd) / std::max({1e-2, std::abs(an), std::abs(fd)});
      INFO("param ", k, " coord ", idx, " analytic ", an, " fd ", fd);
      CHECK(err < tol);
    }
  }
}

inline Tensor<double> randn64(std::vector<int64_t> shape, Rng& rng,
                              double stddev = 1.0, bool rg = true) {
  return Tensor<double>::randn(std::move(shape), rng, stddev, rg);
}

inline Tensor<float> randn32(std::vector<int64_t> shape, Rng& rng,
                             float stddev = 1.0f, bool rg = false) {
  return Tensor<float>::randn(std::move(shape), rng, stddev, rg);
}

}  // namespace testutil
