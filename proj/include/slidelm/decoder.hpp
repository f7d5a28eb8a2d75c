#pragma once

// Causal text decoder with a trailing CLS readout token. The lower
// (uni-modal) half runs causal self-attention over tokens plus the CLS row;
// the CLS state is then split off as the whole-report embedding and the
// remaining hidden states continue through the multi-modal half, whose layers
// insert a cross-attention over the slide encoder's context latents between
// self-attention and the MLP. Output projection is tied to the token
// embedding matrix.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slidelm/layers.hpp"
#include "slidelm/tensor.hpp"
#include "slidelm/tokenizer.hpp"

namespace slidelm {

struct DecoderConfig {
  int64_t vocab_size = 0;
  int width = 64;
  int layers = 8;
  int unimodal = 4;  // layers 0..unimodal-1 are uni-modal
  int heads = 4;
  int mlp_ratio = 4;
  int latent_dim = 64;  // context latent width seen by cross-attention
  int max_seq_len = 48;
  bool qkv_bias = true;
};

// (T+1) x (T+1) boolean attention pattern: language row i sees columns <= i,
// the trailing CLS row sees every language column and itself, and no language
// row sees the CLS column.
struct AttentionMask {
  int64_t T = 0;
  std::vector<uint8_t> allowed;  // (T+1)^2, row-major
  bool at(int64_t i, int64_t j) const {
    return allowed[static_cast<size_t>(i * (T + 1) + j)] != 0;
  }
};

inline AttentionMask build_mask(int64_t T) {
  if (T < 0) throw std::invalid_argument("build_mask: negative length");
  AttentionMask m;
  m.T = T;
  m.allowed.assign(static_cast<size_t>((T + 1) * (T + 1)), 0);
  for (int64_t i = 0; i < T; ++i)
    for (int64_t j = 0; j <= i; ++j)
      m.allowed[static_cast<size_t>(i * (T + 1) + j)] = 1;
  for (int64_t j = 0; j <= T; ++j)
    m.allowed[static_cast<size_t>(T * (T + 1) + j)] = 1;
  return m;
}

namespace detail {
// Additive form: 0 where allowed, a large negative number where blocked.
template <class S>
nn::Tensor<S> additive_mask(const AttentionMask& m) {
  const int64_t n = m.T + 1;
  auto t = nn::Tensor<S>::zeros({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j)
      if (!m.at(i, j)) t.data()[i * n + j] = S(-1e30);
  return t;
}

template <class S>
nn::Tensor<S> additive_causal(int64_t T) {
  auto t = nn::Tensor<S>::zeros({T, T});
  for (int64_t i = 0; i < T; ++i)
    for (int64_t j = i + 1; j < T; ++j) t.data()[i * T + j] = S(-1e30);
  return t;
}
}  // namespace detail

template <class S>
struct DecoderLayer {
  LayerNormParams<S> ln1;
  Linear<S> q, k, v, o;
  bool has_xattn = false;
  LayerNormParams<S> lnx;
  Linear<S> xq, xk, xv, xo;
  LayerNormParams<S> ln2;
  GeluMlp<S> mlp;
  int heads = 4;

  void init(const DecoderConfig& cfg, bool with_xattn, Rng& rng, S stddev) {
    heads = cfg.heads;
    has_xattn = with_xattn;
    ln1.init(cfg.width);
    q.init(cfg.width, cfg.width, rng, stddev, cfg.qkv_bias);
    k.init(cfg.width, cfg.width, rng, stddev, cfg.qkv_bias);
    v.init(cfg.width, cfg.width, rng, stddev, cfg.qkv_bias);
    o.init(cfg.width, cfg.width, rng, stddev, true);
    if (with_xattn) {
      lnx.init(cfg.width);
      xq.init(cfg.width, cfg.width, rng, stddev, cfg.qkv_bias);
      xk.init(cfg.latent_dim, cfg.width, rng, stddev, cfg.qkv_bias);
      xv.init(cfg.latent_dim, cfg.width, rng, stddev, cfg.qkv_bias);
      xo.init(cfg.width, cfg.width, rng, stddev, true);
    }
    ln2.init(cfg.width);
    mlp.init(cfg.width, cfg.mlp_ratio * cfg.width, rng, stddev, true);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x,
                        const nn::Tensor<S>* mask,
                        const nn::Tensor<S>* context) const {
    auto h = ln1.forward(tape, x);
    auto ctx = multi_head_attention<S>(tape, q.forward(tape, h), k.forward(tape, h),
                                    v.forward(tape, h), heads, mask);
    auto y = nn::add(tape, x, o.forward(tape, ctx));
    if (has_xattn) {
      if (!context)
        throw std::invalid_argument("decoder: multi-modal layer needs context latents");
      auto hx = lnx.forward(tape, y);
      auto xc = multi_head_attention<S>(tape, xq.forward(tape, hx),
                                     xk.forward(tape, *context),
                                     xv.forward(tape, *context), heads, nullptr);
      y = nn::add(tape, y, xo.forward(tape, xc));
    }
    auto m = mlp.forward(tape, ln2.forward(tape, y));
    return nn::add(tape, y, m);
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) const {
    push_layer_norm(out, prefix + ".ln1", ln1);
    push_linear(out, prefix + ".q", q);
    push_linear(out, prefix + ".k", k);
    push_linear(out, prefix + ".v", v);
    push_linear(out, prefix + ".o", o);
    if (has_xattn) {
      push_layer_norm(out, prefix + ".xattn.ln", lnx);
      push_linear(out, prefix + ".xattn.q", xq);
      push_linear(out, prefix + ".xattn.k", xk);
      push_linear(out, prefix + ".xattn.v", xv);
      push_linear(out, prefix + ".xattn.o", xo);
    }
    push_layer_norm(out, prefix + ".ln2", ln2);
    push_gelu_mlp(out, prefix + ".mlp", mlp);
  }
};

template <class S>
struct UnimodalOut {
  nn::Tensor<S> hidden;  // [T x width] language states after the uni-modal half
  nn::Tensor<S> cls;     // [1 x width] report embedding
};

template <class S>
class TextDecoder {
 public:
  TextDecoder() = default;
  explicit TextDecoder(const DecoderConfig& cfg) : cfg_(cfg) {}

  void init(Rng& rng, S stddev = S(0.02)) {
    tok_emb_ = nn::Tensor<S>::randn({cfg_.vocab_size, cfg_.width}, rng, stddev, true);
    pos_emb_ = nn::Tensor<S>::randn({cfg_.max_seq_len, cfg_.width}, rng, stddev, true);
    layers_.resize(static_cast<size_t>(cfg_.layers));
    for (int i = 0; i < cfg_.layers; ++i)
      layers_[static_cast<size_t>(i)].init(cfg_, /*with_xattn=*/i >= cfg_.unimodal, rng,
                                           stddev);
    ln_f_.init(cfg_.width);
  }

  // ids are language tokens only; the CLS token is appended internally.
  // Token rows get learned positions; the CLS row does not.
  UnimodalOut<S> unimodal_forward(nn::Tape<S>* tape,
                                  const std::vector<int64_t>& ids) const {
    const int64_t T = static_cast<int64_t>(ids.size());
    if (T + 1 > cfg_.max_seq_len)
      throw std::invalid_argument("decoder: sequence exceeds max length");
    std::vector<int64_t> with_cls = ids;
    with_cls.push_back(Vocabulary::kCls);
    auto x = nn::embedding(tape, tok_emb_, with_cls);
    if (T > 0) {
      std::vector<int64_t> pos_ids(static_cast<size_t>(T));
      for (int64_t i = 0; i < T; ++i) pos_ids[static_cast<size_t>(i)] = i;
      auto pos = nn::embedding(tape, pos_emb_, pos_ids);
      auto pos_full =
          nn::concat_rows(tape, {pos, nn::Tensor<S>::zeros({1, cfg_.width})});
      x = nn::add(tape, x, pos_full);
    }
    auto mask = detail::additive_mask<S>(build_mask(T));
    for (int i = 0; i < cfg_.unimodal; ++i)
      x = layers_[static_cast<size_t>(i)].forward(tape, x, &mask, nullptr);
    UnimodalOut<S> out;
    out.hidden = nn::slice_rows(tape, x, 0, T);
    out.cls = nn::slice_rows(tape, x, T, T + 1);
    return out;
  }

  // hidden: [T x width]; context: [L x latent_dim]. Returns logits [T x V].
  nn::Tensor<S> multimodal_forward(nn::Tape<S>* tape, const nn::Tensor<S>& hidden,
                                   const nn::Tensor<S>& context) const {
    if (hidden.cols() != cfg_.width)
      throw std::invalid_argument("decoder: hidden width mismatch");
    if (context.cols() != cfg_.latent_dim)
      throw std::invalid_argument("decoder: context latent width mismatch");
    const int64_t T = hidden.rows();
    auto mask = detail::additive_causal<S>(T);
    auto x = hidden;
    for (int i = cfg_.unimodal; i < cfg_.layers; ++i)
      x = layers_[static_cast<size_t>(i)].forward(tape, x, &mask, &context);
    x = ln_f_.forward(tape, x);
    return nn::matmul_nt(tape, x, tok_emb_);  // tied output projection
  }

  const DecoderConfig& config() const { return cfg_; }
  nn::Tensor<S>& token_embedding() { return tok_emb_; }
  nn::Tensor<S>& position_embedding() { return pos_emb_; }
  std::vector<DecoderLayer<S>>& layers() { return layers_; }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) const {
    out.push_back({prefix + ".tok_emb", tok_emb_});
    out.push_back({prefix + ".pos_emb", pos_emb_});
    for (size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(out, prefix + ".layer." + std::to_string(i));
    push_layer_norm(out, prefix + ".final_ln", ln_f_);
  }

 private:
  DecoderConfig cfg_;
  nn::Tensor<S> tok_emb_;
  nn::Tensor<S> pos_emb_;
  std::vector<DecoderLayer<S>> layers_;
  LayerNormParams<S> ln_f_;
};

}  // namespace slidelm
