#pragma once

// Shared building blocks for the slide encoder and the language decoder:
// linear layers, multi-head scaled dot-product attention, GEGLU/GELU MLPs.

#include <cmath>
#include <string>
#include <vector>

#include "slidelm/tensor.hpp"

namespace slidelm {

template <class S>
struct Linear {
  nn::Tensor<S> w;  // [in x out]
  nn::Tensor<S> b;  // [out], optional (undefined means no bias)

  void init(int64_t in, int64_t out, Rng& rng, S stddev, bool bias) {
    w = nn::Tensor<S>::randn({in, out}, rng, stddev, true);
    if (bias) b = nn::Tensor<S>::zeros({out}, true);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x) const {
    auto y = nn::matmul(tape, x, w);
    if (b.defined()) y = nn::add_bias(tape, y, b);
    return y;
  }
};

template <class S>
struct LayerNormParams {
  nn::Tensor<S> g;
  nn::Tensor<S> b;

  void init(int64_t dim) {
    g = nn::Tensor<S>::zeros({dim}, true);
    for (int64_t i = 0; i < dim; ++i) g.data()[i] = S(1);
    b = nn::Tensor<S>::zeros({dim}, true);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x) const {
    return nn::layer_norm(tape, x, g, b);
  }
};

// Scaled dot-product attention over pre-projected q/k/v, split into heads
// along the feature axis. additive_mask (optional) is added to every head's
// score matrix. wide_accum selects double accumulation over the key axis.
template <class S>
nn::Tensor<S> multi_head_attention(nn::Tape<S>* tape, const nn::Tensor<S>& q,
                                   const nn::Tensor<S>& k, const nn::Tensor<S>& v,
                                   int heads, const nn::Tensor<S>* additive_mask,
                                   bool wide_accum = false) {
  const int64_t d = q.cols();
  if (d % heads != 0)
    throw std::invalid_argument("attention: feature dim not divisible by head count");
  const int64_t hd = d / heads;
  const S temp = static_cast<S>(std::sqrt(static_cast<double>(hd)));
  std::vector<nn::Tensor<S>> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : nn::slice_cols(tape, q, h * hd, (h + 1) * hd);
    auto kh = heads == 1 ? k : nn::slice_cols(tape, k, h * hd, (h + 1) * hd);
    auto vh = heads == 1 ? v : nn::slice_cols(tape, v, h * hd, (h + 1) * hd);
    auto scores = nn::matmul_nt(tape, qh, kh);
    if (additive_mask) scores = nn::add(tape, scores, *additive_mask);
    auto attn = nn::softmax_rows(tape, scores, temp);
    ctx.push_back(nn::matmul(tape, attn, vh, wide_accum));
  }
  return heads == 1 ? ctx[0] : nn::concat_cols(tape, ctx);
}

// Two-layer MLP with a GEGLU gate: x -> W_in -> geglu -> W_out.
// W_in maps to twice the inner width (value half and gating half).
template <class S>
struct GegluMlp {
  Linear<S> in;   // [d x 2*inner]
  Linear<S> out;  // [inner x d]

  void init(int64_t d, int64_t inner, Rng& rng, S stddev, bool bias) {
    in.init(d, 2 * inner, rng, stddev, bias);
    out.init(inner, d, rng, stddev, bias);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x) const {
    return out.forward(tape, nn::geglu(tape, in.forward(tape, x)));
  }
};

// GPT-style MLP: x -> W_in -> gelu -> W_out with ratio*d inner width.
template <class S>
struct GeluMlp {
  Linear<S> in;
  Linear<S> out;

  void init(int64_t d, int64_t inner, Rng& rng, S stddev, bool bias) {
    in.init(d, inner, rng, stddev, bias);
    out.init(inner, d, rng, stddev, bias);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x) const {
    return out.forward(tape, nn::gelu(tape, in.forward(tape, x)));
  }
};

// Parameter registry entry; registries are built in a fixed declaration
// order so checkpoints are deterministic.
template <class S>
struct NamedParam {
  std::string name;
  nn::Tensor<S> tensor;
};

template <class S>
void push_linear(std::vector<NamedParam<S>>& out, const std::string& prefix,
                 const Linear<S>& lin) {
  out.push_back({prefix + ".w", lin.w});
  if (lin.b.defined()) out.push_back({prefix + ".b", lin.b});
}

template <class S>
void push_layer_norm(std::vector<NamedParam<S>>& out, const std::string& prefix,
                     const LayerNormParams<S>& ln) {
  out.push_back({prefix + ".g", ln.g});
  out.push_back({prefix + ".b", ln.b});
}

template <class S>
void push_geglu(std::vector<NamedParam<S>>& out, const std::string& prefix,
                const GegluMlp<S>& mlp) {
  push_linear(out, prefix + ".in", mlp.in);
  push_linear(out, prefix + ".out", mlp.out);
}

template <class S>
void push_gelu_mlp(std::vector<NamedParam<S>>& out, const std::string& prefix,
                   const GeluMlp<S>& mlp) {
  push_linear(out, prefix + ".in", mlp.in);
  push_linear(out, prefix + ".out", mlp.out);
}

}  // namespace slidelm
