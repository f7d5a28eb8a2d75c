#pragma once

// Dense fp tensors with reverse-mode automatic differentiation.
//
// Operations record backward closures onto a Tape; Tape::backward() replays
// them in exact reverse recording order and accumulates (sums) gradients into
// every tensor that requires them. The scalar type is a template parameter:
// the model runs in float, gradient checking instantiates the same graphs in
// double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidelm/gemm.hpp"
#include "slidelm/rng.hpp"

namespace slidelm::nn {

// When enabled, every op verifies that its outputs are finite and throws
// otherwise. Off by default in the training hot path; the trainer still
// validates the loss and gradient norm on every step.
inline bool& finite_checks() {
  static bool enabled = false;
  return enabled;
}

template <class S>
struct TensorObj {
  std::vector<int64_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // sized like value iff requires_grad
  bool requires_grad = false;
};

template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false) {
    Tensor t;
    t.obj_ = std::make_shared<TensorObj<S>>();
    t.obj_->shape = std::move(shape);
    int64_t n = 1;
    for (int64_t e : t.obj_->shape) {
      if (e < 0) throw std::invalid_argument("tensor: negative extent");
      n *= e;
    }
    t.obj_->value.assign(static_cast<size_t>(n), S(0));
    t.obj_->requires_grad = requires_grad;
    if (requires_grad) t.obj_->grad.assign(static_cast<size_t>(n), S(0));
    return t;
  }

  static Tensor from(std::vector<int64_t> shape, std::vector<S> data,
                     bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    if (data.size() != t.obj_->value.size())
      throw std::invalid_argument("tensor: data length does not match shape");
    t.obj_->value = std::move(data);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(std::vector<int64_t> shape, Rng& rng, S stddev,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.obj_->value) v = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  bool defined() const { return obj_ != nullptr; }
  const std::vector<int64_t>& shape() const { return obj_->shape; }
  int64_t numel() const { return static_cast<int64_t>(obj_->value.size()); }
  int64_t rows() const { return obj_->shape.at(0); }
  int64_t cols() const { return obj_->shape.at(1); }
  bool is_matrix() const { return obj_->shape.size() == 2; }

  S* data() { return obj_->value.data(); }
  const S* data() const { return obj_->value.data(); }
  S* grad() { return obj_->grad.data(); }
  const S* grad() const { return obj_->grad.data(); }
  std::vector<S>& value_vec() { return obj_->value; }
  const std::vector<S>& value_vec() const { return obj_->value; }
  std::vector<S>& grad_vec() { return obj_->grad; }
  const std::vector<S>& grad_vec() const { return obj_->grad; }

  bool requires_grad() const { return obj_->requires_grad; }
  void set_requires_grad(bool rg) {
    obj_->requires_grad = rg;
    if (rg)
      obj_->grad.assign(obj_->value.size(), S(0));
    else
      obj_->grad.clear();
  }
  void zero_grad() {
    if (obj_->requires_grad) std::fill(obj_->grad.begin(), obj_->grad.end(), S(0));
  }

  S item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor is not a scalar");
    return obj_->value[0];
  }

  std::shared_ptr<TensorObj<S>> obj() const { return obj_; }

 private:
  std::shared_ptr<TensorObj<S>> obj_;
};

template <class S>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  // Seeds d(root)/d(root) = 1 and replays every recorded step in reverse.
  // The tape is cleared afterwards; one tape serves one forward pass.
  void backward(Tensor<S>& root) {
    if (!root.requires_grad())
      throw std::invalid_argument("backward: root does not require grad");
    for (int64_t i = 0; i < root.numel(); ++i) root.grad()[i] += S(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

  void clear() { steps_.clear(); }
  size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
};

// ---------------------------------------------------------------------------
// helpers

namespace detail {

template <class S>
bool wants_grad(const Tape<S>* tape, std::initializer_list<const Tensor<S>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

template <class S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!finite_checks()) return;
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(static_cast<double>(t.data()[i])))
      throw std::runtime_error(std::string(op) + ": non-finite value in output");
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise

template <class S>
Tensor<S> add(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "add: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(a.shape(), detail::wants_grad(tape, {&a, &b}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::check_finite(out, "add");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), bo = b.obj(), oo = out.obj()] {
      const int64_t n = static_cast<int64_t>(oo->value.size());
      if (ao->requires_grad)
        for (int64_t i = 0; i < n; ++i) ao->grad[i] += oo->grad[i];
      if (bo->requires_grad)
        for (int64_t i = 0; i < n; ++i) bo->grad[i] += oo->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(a.shape(), detail::wants_grad(tape, {&a, &b}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  detail::check_finite(out, "mul");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), bo = b.obj(), oo = out.obj()] {
      const int64_t n = static_cast<int64_t>(oo->value.size());
      if (ao->requires_grad)
        for (int64_t i = 0; i < n; ++i) ao->grad[i] += oo->grad[i] * bo->value[i];
      if (bo->requires_grad)
        for (int64_t i = 0; i < n; ++i) bo->grad[i] += oo->grad[i] * ao->value[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(Tape<S>* tape, const Tensor<S>& a, S factor) {
  Tensor<S> out = Tensor<S>::zeros(a.shape(), detail::wants_grad(tape, {&a}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * factor;
  detail::check_finite(out, "scale");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), oo = out.obj(), factor] {
      const int64_t n = static_cast<int64_t>(oo->value.size());
      for (int64_t i = 0; i < n; ++i) ao->grad[i] += oo->grad[i] * factor;
    });
  }
  return out;
}

// alpha*a + beta*b
template <class S>
Tensor<S> add_scaled(Tape<S>* tape, const Tensor<S>& a, S alpha, const Tensor<S>& b,
                     S beta) {
  detail::require(a.shape() == b.shape(), "add_scaled: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(a.shape(), detail::wants_grad(tape, {&a, &b}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i)
    out.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
  detail::check_finite(out, "add_scaled");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), bo = b.obj(), oo = out.obj(), alpha, beta] {
      const int64_t n = static_cast<int64_t>(oo->value.size());
      if (ao->requires_grad)
        for (int64_t i = 0; i < n; ++i) ao->grad[i] += alpha * oo->grad[i];
      if (bo->requires_grad)
        for (int64_t i = 0; i < n; ++i) bo->grad[i] += beta * oo->grad[i];
    });
  }
  return out;
}

// x[R x C] + bias[C] broadcast over rows
template <class S>
Tensor<S> add_bias(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& bias) {
  detail::require(x.is_matrix() && bias.shape().size() == 1 &&
                      bias.shape()[0] == x.cols(),
                  "add_bias: shape mismatch");
  Tensor<S> out = Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x, &bias}));
  const int64_t R = x.rows(), C = x.cols();
  for (int64_t i = 0; i < R; ++i)
    for (int64_t j = 0; j < C; ++j)
      out.data()[i * C + j] = x.data()[i * C + j] + bias.data()[j];
  detail::check_finite(out, "add_bias");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), bo = bias.obj(), oo = out.obj(), R, C] {
      if (xo->requires_grad)
        for (int64_t i = 0; i < R * C; ++i) xo->grad[i] += oo->grad[i];
      if (bo->requires_grad)
        for (int64_t i = 0; i < R; ++i)
          for (int64_t j = 0; j < C; ++j) bo->grad[j] += oo->grad[i * C + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matmul

// a[m x k] * b[k x n]. wide_accum selects double-precision accumulation in the
// forward product (used where the reduction runs over the tile axis).
template <class S>
Tensor<S> matmul(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b,
                 bool wide_accum = false) {
  detail::require(a.is_matrix() && b.is_matrix(), "matmul: inputs must be 2-d");
  detail::require(a.cols() == b.rows(), "matmul: inner extents disagree");
  const int64_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<S> out = Tensor<S>::zeros({m, n}, detail::wants_grad(tape, {&a, &b}));
  if (wide_accum)
    gemm_nn_wide(a.data(), b.data(), out.data(), m, k, n);
  else
    gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  detail::check_finite(out, "matmul");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), bo = b.obj(), oo = out.obj(), m, k, n] {
      if (ao->requires_grad)  // dA = dC * B^T
        gemm_nt(oo->grad.data(), bo->value.data(), ao->grad.data(), m, n, k);
      if (bo->requires_grad)  // dB = A^T * dC
        gemm_tn(ao->value.data(), oo->grad.data(), bo->grad.data(), k, m, n);
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T
template <class S>
Tensor<S> matmul_nt(Tape<S>* tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::require(a.is_matrix() && b.is_matrix(), "matmul_nt: inputs must be 2-d");
  detail::require(a.cols() == b.cols(), "matmul_nt: inner extents disagree");
  const int64_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor<S> out = Tensor<S>::zeros({m, n}, detail::wants_grad(tape, {&a, &b}));
  gemm_nt(a.data(), b.data(), out.data(), m, k, n);
  detail::check_finite(out, "matmul_nt");
  if (out.requires_grad()) {
    tape->record([ao = a.obj(), bo = b.obj(), oo = out.obj(), m, k, n] {
      if (ao->requires_grad)  // dA = dC * B
        gemm_nn(oo->grad.data(), bo->value.data(), ao->grad.data(), m, n, k);
      if (bo->requires_grad)  // dB = dC^T * A
        gemm_tn(oo->grad.data(), ao->value.data(), bo->grad.data(), n, m, k);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization and activations

template <class S>
Tensor<S> layer_norm(Tape<S>* tape, const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-5)) {
  detail::require(x.is_matrix(), "layer_norm: input must be 2-d");
  const int64_t R = x.rows(), C = x.cols();
  detail::require(gain.numel() == C && bias.numel() == C,
                  "layer_norm: gain/bias length mismatch");
  Tensor<S> out =
      Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x, &gain, &bias}));
  std::vector<S> inv_std(static_cast<size_t>(R));
  std::vector<S> xhat(static_cast<size_t>(R * C));
  for (int64_t i = 0; i < R; ++i) {
    const S* xr = x.data() + i * C;
    double mean = 0;
    for (int64_t j = 0; j < C; ++j) mean += static_cast<double>(xr[j]);
    mean /= static_cast<double>(C);
    double var = 0;
    for (int64_t j = 0; j < C; ++j) {
      const double d = static_cast<double>(xr[j]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const S is = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[static_cast<size_t>(i)] = is;
    for (int64_t j = 0; j < C; ++j) {
      const S h = (xr[j] - static_cast<S>(mean)) * is;
      xhat[static_cast<size_t>(i * C + j)] = h;
      out.data()[i * C + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  detail::check_finite(out, "layer_norm");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), go = gain.obj(), bo = bias.obj(), oo = out.obj(),
                  inv_std = std::move(inv_std), xhat = std::move(xhat), R, C] {
      for (int64_t i = 0; i < R; ++i) {
        const S* dy = oo->grad.data() + i * C;
        const S* xh = xhat.data() + i * C;
        if (go->requires_grad)
          for (int64_t j = 0; j < C; ++j) go->grad[j] += dy[j] * xh[j];
        if (bo->requires_grad)
          for (int64_t j = 0; j < C; ++j) bo->grad[j] += dy[j];
        if (xo->requires_grad) {
          double sum_g = 0, sum_gx = 0;
          for (int64_t j = 0; j < C; ++j) {
            const double g = static_cast<double>(dy[j]) * static_cast<double>(go->value[j]);
            sum_g += g;
            sum_gx += g * static_cast<double>(xh[j]);
          }
          const double mg = sum_g / static_cast<double>(C);
          const double mgx = sum_gx / static_cast<double>(C);
          const double is = static_cast<double>(inv_std[static_cast<size_t>(i)]);
          for (int64_t j = 0; j < C; ++j) {
            const double g = static_cast<double>(dy[j]) * static_cast<double>(go->value[j]);
            xo->grad[i * C + j] +=
                static_cast<S>((g - mg - static_cast<double>(xh[j]) * mgx) * is);
          }
        }
      }
    });
  }
  return out;
}

// Row softmax of x/temperature, max-subtracted. Row sums are accumulated in
// double so tile-order permutations only move the result by final rounding.
template <class S>
Tensor<S> softmax_rows(Tape<S>* tape, const Tensor<S>& x, S temperature = S(1)) {
  detail::require(x.is_matrix(), "softmax: input must be 2-d");
  if (!(temperature > S(0)))
    throw std::invalid_argument("softmax: temperature must be positive");
  const int64_t R = x.rows(), C = x.cols();
  Tensor<S> out = Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x}));
  for (int64_t i = 0; i < R; ++i) {
    const S* xr = x.data() + i * C;
    S* yr = out.data() + i * C;
    S mx = xr[0];
    for (int64_t j = 1; j < C; ++j) mx = std::max(mx, xr[j]);
    double denom = 0;
    for (int64_t j = 0; j < C; ++j) {
      const double e = std::exp(static_cast<double>((xr[j] - mx) / temperature));
      yr[j] = static_cast<S>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int64_t j = 0; j < C; ++j)
      yr[j] = static_cast<S>(static_cast<double>(yr[j]) * inv);
  }
  detail::check_finite(out, "softmax");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), R, C, temperature] {
      for (int64_t i = 0; i < R; ++i) {
        const S* y = oo->value.data() + i * C;
        const S* dy = oo->grad.data() + i * C;
        double dot = 0;
        for (int64_t j = 0; j < C; ++j)
          dot += static_cast<double>(dy[j]) * static_cast<double>(y[j]);
        for (int64_t j = 0; j < C; ++j)
          xo->grad[i * C + j] += static_cast<S>(
              static_cast<double>(y[j]) *
              (static_cast<double>(dy[j]) - dot) / static_cast<double>(temperature));
      }
    });
  }
  return out;
}

namespace detail {
template <class S>
inline S gelu_erf(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.70710678118654752440)));
}
template <class S>
inline S gelu_erf_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.70710678118654752440)));
  const S pdf = std::exp(S(-0.5) * x * x) * S(0.39894228040143267794);
  return cdf + x * pdf;
}
}  // namespace detail

template <class S>
Tensor<S> gelu(Tape<S>* tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x}));
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = detail::gelu_erf(x.data()[i]);
  detail::check_finite(out, "gelu");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), n] {
      for (int64_t i = 0; i < n; ++i)
        xo->grad[i] += oo->grad[i] * detail::gelu_erf_grad(xo->value[i]);
    });
  }
  return out;
}

// Gated unit over the last axis: out = value_half * gelu(gate_half).
// Input columns [0, h) carry the value half and [h, 2h) the gating half.
template <class S>
Tensor<S> geglu(Tape<S>* tape, const Tensor<S>& x) {
  detail::require(x.is_matrix(), "geglu: input must be 2-d");
  detail::require(x.cols() % 2 == 0, "geglu: last extent must be even");
  const int64_t R = x.rows(), H = x.cols() / 2;
  Tensor<S> out = Tensor<S>::zeros({R, H}, detail::wants_grad(tape, {&x}));
  for (int64_t i = 0; i < R; ++i) {
    const S* v = x.data() + i * 2 * H;
    const S* g = v + H;
    for (int64_t j = 0; j < H; ++j)
      out.data()[i * H + j] = v[j] * detail::gelu_erf(g[j]);
  }
  detail::check_finite(out, "geglu");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), R, H] {
      for (int64_t i = 0; i < R; ++i) {
        const S* v = xo->value.data() + i * 2 * H;
        const S* g = v + H;
        const S* dy = oo->grad.data() + i * H;
        S* dv = xo->grad.data() + i * 2 * H;
        S* dg = dv + H;
        for (int64_t j = 0; j < H; ++j) {
          dv[j] += dy[j] * detail::gelu_erf(g[j]);
          dg[j] += dy[j] * v[j] * detail::gelu_erf_grad(g[j]);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses and norms

enum class Reduction { Mean, Sum };

// Mean (or sum) negative log-likelihood over non-ignored positions.
template <class S>
Tensor<S> cross_entropy(Tape<S>* tape, const Tensor<S>& logits,
                        const std::vector<int64_t>& targets, int64_t ignore_id = -1,
                        Reduction reduction = Reduction::Mean) {
  detail::require(logits.is_matrix(), "cross_entropy: logits must be 2-d");
  const int64_t T = logits.rows(), V = logits.cols();
  detail::require(static_cast<int64_t>(targets.size()) == T,
                  "cross_entropy: target length mismatch");
  for (int64_t t : targets)
    if (t != ignore_id && (t < 0 || t >= V))
      throw std::invalid_argument("cross_entropy: target id out of range");

  int64_t active = 0;
  for (int64_t t : targets) active += (t != ignore_id);
  detail::require(active > 0, "cross_entropy: no non-ignored targets");

  std::vector<S> probs(static_cast<size_t>(T * V));
  double total = 0;
  for (int64_t i = 0; i < T; ++i) {
    const S* z = logits.data() + i * V;
    S mx = z[0];
    for (int64_t j = 1; j < V; ++j) mx = std::max(mx, z[j]);
    double denom = 0;
    for (int64_t j = 0; j < V; ++j) {
      const double e = std::exp(static_cast<double>(z[j] - mx));
      probs[static_cast<size_t>(i * V + j)] = static_cast<S>(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int64_t j = 0; j < V; ++j)
      probs[static_cast<size_t>(i * V + j)] =
          static_cast<S>(static_cast<double>(probs[static_cast<size_t>(i * V + j)]) * inv);
    if (targets[static_cast<size_t>(i)] != ignore_id) {
      const double lse = std::log(denom) + static_cast<double>(mx);
      total += lse - static_cast<double>(z[targets[static_cast<size_t>(i)]]);
    }
  }
  const S w = reduction == Reduction::Mean ? S(1) / static_cast<S>(active) : S(1);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total) * w,
                                    detail::wants_grad(tape, {&logits}));
  detail::check_finite(out, "cross_entropy");
  if (out.requires_grad()) {
    tape->record([lo = logits.obj(), oo = out.obj(), probs = std::move(probs), targets,
                  ignore_id, w, T, V] {
      const S dy = oo->grad[0] * w;
      for (int64_t i = 0; i < T; ++i) {
        const int64_t t = targets[static_cast<size_t>(i)];
        if (t == ignore_id) continue;
        for (int64_t j = 0; j < V; ++j)
          lo->grad[i * V + j] += dy * probs[static_cast<size_t>(i * V + j)];
        lo->grad[i * V + t] -= dy;
      }
    });
  }
  return out;
}

// Row-wise projection onto the unit sphere. Zero rows are an error.
template <class S>
Tensor<S> l2_normalize_rows(Tape<S>* tape, const Tensor<S>& x) {
  detail::require(x.is_matrix(), "l2_normalize: input must be 2-d");
  const int64_t R = x.rows(), C = x.cols();
  Tensor<S> out = Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x}));
  std::vector<S> inv_norm(static_cast<size_t>(R));
  for (int64_t i = 0; i < R; ++i) {
    const S* xr = x.data() + i * C;
    double sq = 0;
    for (int64_t j = 0; j < C; ++j)
      sq += static_cast<double>(xr[j]) * static_cast<double>(xr[j]);
    if (sq <= 0.0) throw std::invalid_argument("l2_normalize: zero-norm row");
    const S inv = static_cast<S>(1.0 / std::sqrt(sq));
    inv_norm[static_cast<size_t>(i)] = inv;
    for (int64_t j = 0; j < C; ++j) out.data()[i * C + j] = xr[j] * inv;
  }
  detail::check_finite(out, "l2_normalize");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), inv_norm = std::move(inv_norm), R, C] {
      for (int64_t i = 0; i < R; ++i) {
        const S* y = oo->value.data() + i * C;
        const S* dy = oo->grad.data() + i * C;
        double dot = 0;
        for (int64_t j = 0; j < C; ++j)
          dot += static_cast<double>(dy[j]) * static_cast<double>(y[j]);
        const S inv = inv_norm[static_cast<size_t>(i)];
        for (int64_t j = 0; j < C; ++j)
          xo->grad[i * C + j] +=
              (dy[j] - static_cast<S>(dot) * y[j]) * inv;
      }
    });
  }
  return out;
}

// out = x * exp(-log_scale[0]); gradients flow to both. Used for logits/tau.
template <class S>
Tensor<S> scale_by_neg_exp(Tape<S>* tape, const Tensor<S>& x,
                           const Tensor<S>& log_scale) {
  detail::require(log_scale.numel() == 1, "scale_by_neg_exp: scale must be scalar");
  const S e = std::exp(-log_scale.item());
  Tensor<S> out = Tensor<S>::zeros(x.shape(), detail::wants_grad(tape, {&x, &log_scale}));
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * e;
  detail::check_finite(out, "scale_by_neg_exp");
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), so = log_scale.obj(), oo = out.obj(), e, n] {
      if (xo->requires_grad)
        for (int64_t i = 0; i < n; ++i) xo->grad[i] += oo->grad[i] * e;
      if (so->requires_grad) {
        double acc = 0;
        for (int64_t i = 0; i < n; ++i)
          acc += static_cast<double>(oo->grad[i]) * static_cast<double>(oo->value[i]);
        so->grad[0] -= static_cast<S>(acc);
      }
    });
  }
  return out;
}

// Mean binary cross-entropy with logits over a column vector.
template <class S>
Tensor<S> bce_with_logits(Tape<S>* tape, const Tensor<S>& logits,
                          const std::vector<S>& labels) {
  const int64_t n = logits.numel();
  detail::require(static_cast<int64_t>(labels.size()) == n,
                  "bce_with_logits: label count mismatch");
  detail::require(n > 0, "bce_with_logits: empty batch");
  double total = 0;
  std::vector<S> sig(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const double z = static_cast<double>(logits.data()[i]);
    const double y = static_cast<double>(labels[static_cast<size_t>(i)]);
    // log(1+exp(z)) - y*z, computed stably
    total += std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
    sig[static_cast<size_t>(i)] = static_cast<S>(1.0 / (1.0 + std::exp(-z)));
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n)),
                                    detail::wants_grad(tape, {&logits}));
  detail::check_finite(out, "bce_with_logits");
  if (out.requires_grad()) {
    tape->record([lo = logits.obj(), oo = out.obj(), sig = std::move(sig), labels, n] {
      const S dy = oo->grad[0] / static_cast<S>(n);
      for (int64_t i = 0; i < n; ++i)
        lo->grad[i] += dy * (sig[static_cast<size_t>(i)] - labels[static_cast<size_t>(i)]);
    });
  }
  return out;
}

template <class S>
Tensor<S> sum_all(Tape<S>* tape, const Tensor<S>& x) {
  double total = 0;
  for (int64_t i = 0; i < x.numel(); ++i) total += static_cast<double>(x.data()[i]);
  Tensor<S> out =
      Tensor<S>::scalar(static_cast<S>(total), detail::wants_grad(tape, {&x}));
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj()] {
      for (auto& g : xo->grad) g += oo->grad[0];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// indexing / assembly

// Gathers rows of table[V x d] at ids; backward scatter-adds.
template <class S>
Tensor<S> embedding(Tape<S>* tape, const Tensor<S>& table,
                    const std::vector<int64_t>& ids) {
  detail::require(table.is_matrix(), "embedding: table must be 2-d");
  const int64_t V = table.rows(), d = table.cols();
  const int64_t T = static_cast<int64_t>(ids.size());
  for (int64_t id : ids)
    if (id < 0 || id >= V) throw std::invalid_argument("embedding: id out of range");
  Tensor<S> out = Tensor<S>::zeros({T, d}, detail::wants_grad(tape, {&table}));
  for (int64_t i = 0; i < T; ++i)
    std::memcpy(out.data() + i * d, table.data() + ids[static_cast<size_t>(i)] * d,
                sizeof(S) * static_cast<size_t>(d));
  if (out.requires_grad()) {
    tape->record([to = table.obj(), oo = out.obj(), ids, d, T] {
      for (int64_t i = 0; i < T; ++i) {
        const S* dy = oo->grad.data() + i * d;
        S* dst = to->grad.data() + ids[static_cast<size_t>(i)] * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += dy[j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_rows(Tape<S>* tape, const Tensor<S>& x, int64_t r0, int64_t r1) {
  detail::require(x.is_matrix(), "slice_rows: input must be 2-d");
  detail::require(0 <= r0 && r0 <= r1 && r1 <= x.rows(), "slice_rows: range");
  const int64_t C = x.cols(), R = r1 - r0;
  Tensor<S> out = Tensor<S>::zeros({R, C}, detail::wants_grad(tape, {&x}));
  std::memcpy(out.data(), x.data() + r0 * C, sizeof(S) * static_cast<size_t>(R * C));
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), r0, R, C] {
      for (int64_t i = 0; i < R * C; ++i) xo->grad[r0 * C + i] += oo->grad[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(Tape<S>* tape, const std::vector<Tensor<S>>& xs) {
  detail::require(!xs.empty(), "concat_rows: empty input list");
  const int64_t C = xs[0].cols();
  int64_t R = 0;
  bool rg = false;
  for (const auto& x : xs) {
    detail::require(x.is_matrix() && x.cols() == C, "concat_rows: column mismatch");
    R += x.rows();
    rg = rg || (tape && x.requires_grad());
  }
  Tensor<S> out = Tensor<S>::zeros({R, C}, rg);
  int64_t r = 0;
  for (const auto& x : xs) {
    std::memcpy(out.data() + r * C, x.data(),
                sizeof(S) * static_cast<size_t>(x.rows() * C));
    r += x.rows();
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorObj<S>>> objs;
    objs.reserve(xs.size());
    for (const auto& x : xs) objs.push_back(x.obj());
    tape->record([objs = std::move(objs), oo = out.obj(), C] {
      int64_t r = 0;
      for (auto& xo : objs) {
        const int64_t n = static_cast<int64_t>(xo->value.size());
        if (xo->requires_grad)
          for (int64_t i = 0; i < n; ++i) xo->grad[i] += oo->grad[r * C + i];
        r += n / C;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(Tape<S>* tape, const Tensor<S>& x, int64_t c0, int64_t c1) {
  detail::require(x.is_matrix(), "slice_cols: input must be 2-d");
  detail::require(0 <= c0 && c0 <= c1 && c1 <= x.cols(), "slice_cols: range");
  const int64_t R = x.rows(), C = x.cols(), W = c1 - c0;
  Tensor<S> out = Tensor<S>::zeros({R, W}, detail::wants_grad(tape, {&x}));
  for (int64_t i = 0; i < R; ++i)
    std::memcpy(out.data() + i * W, x.data() + i * C + c0,
                sizeof(S) * static_cast<size_t>(W));
  if (out.requires_grad()) {
    tape->record([xo = x.obj(), oo = out.obj(), c0, R, C, W] {
      for (int64_t i = 0; i < R; ++i)
        for (int64_t j = 0; j < W; ++j)
          xo->grad[i * C + c0 + j] += oo->grad[i * W + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(Tape<S>* tape, const std::vector<Tensor<S>>& xs) {
  detail::require(!xs.empty(), "concat_cols: empty input list");
  const int64_t R = xs[0].rows();
  int64_t C = 0;
  bool rg = false;
  for (const auto& x : xs) {
    detail::require(x.is_matrix() && x.rows() == R, "concat_cols: row mismatch");
    C += x.cols();
    rg = rg || (tape && x.requires_grad());
  }
  Tensor<S> out = Tensor<S>::zeros({R, C}, rg);
  int64_t c = 0;
  for (const auto& x : xs) {
    const int64_t W = x.cols();
    for (int64_t i = 0; i < R; ++i)
      std::memcpy(out.data() + i * C + c, x.data() + i * W,
                  sizeof(S) * static_cast<size_t>(W));
    c += W;
  }
  if (rg) {
    std::vector<std::shared_ptr<TensorObj<S>>> objs;
    objs.reserve(xs.size());
    for (const auto& x : xs) objs.push_back(x.obj());
    tape->record([objs = std::move(objs), oo = out.obj(), R, C] {
      int64_t c = 0;
      for (auto& xo : objs) {
        const int64_t W = static_cast<int64_t>(xo->value.size()) / R;
        if (xo->requires_grad)
          for (int64_t i = 0; i < R; ++i)
            for (int64_t j = 0; j < W; ++j)
              xo->grad[i * W + j] += oo->grad[i * C + c + j];
        c += W;
      }
    });
  }
  return out;
}

}  // namespace slidelm::nn
