#pragma once

// Latent-resampling slide encoder: `depth` blocks of (cross-attention over
// tile embeddings -> latent self-attention transformer). Two cross-attention
// weight sets exist: block 0 uses the first; block 1 uses the second and
// computes a key/value cache from the tile embeddings; every later block
// reuses the second weight set together with that cache, so the tiles are
// projected exactly twice per forward regardless of depth. One latent
// transformer weight set serves all blocks. Latent row 0 is the slide
// embedding; rows 1.. are the context latents handed to the language decoder.

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slidelm/layers.hpp"
#include "slidelm/tensor.hpp"

namespace slidelm {

struct PerceiverConfig {
  int depth = 8;
  int n_latents = 513;  // context latents + 1 slide-embedding latent
  int latent_dim = 1280;
  int kqv_dim = 1280;
  int embed_dim = 2560;  // tile embedding width
  int lt_layers = 6;
  int lt_heads = 8;
  int mlp_inner = 1280;
  bool qkv_bias = true;
};

template <class S>
struct KVCache {
  nn::Tensor<S> k;  // [N x kqv]
  nn::Tensor<S> v;
  bool defined() const { return k.defined(); }
};

// Cross-attention module: layer norm on the latents only (tile embeddings
// enter the K/V projections raw), single-head attention, residual, then a
// layer-normed GEGLU MLP with residual.
template <class S>
struct CrossAttnBlock {
  LayerNormParams<S> ln_q;
  Linear<S> q;  // latent_dim -> kqv
  Linear<S> k;  // embed_dim -> kqv
  Linear<S> v;  // embed_dim -> kqv
  Linear<S> o;  // kqv -> latent_dim
  LayerNormParams<S> ln_mlp;
  GegluMlp<S> mlp;

  void init(const PerceiverConfig& cfg, Rng& rng, S stddev) {
    ln_q.init(cfg.latent_dim);
    q.init(cfg.latent_dim, cfg.kqv_dim, rng, stddev, cfg.qkv_bias);
    k.init(cfg.embed_dim, cfg.kqv_dim, rng, stddev, cfg.qkv_bias);
    v.init(cfg.embed_dim, cfg.kqv_dim, rng, stddev, cfg.qkv_bias);
    o.init(cfg.kqv_dim, cfg.latent_dim, rng, stddev, true);
    ln_mlp.init(cfg.latent_dim);
    mlp.init(cfg.latent_dim, cfg.mlp_inner, rng, stddev, true);
  }

  struct Out {
    nn::Tensor<S> latents;
    nn::Tensor<S> attn;  // [(L+1) x N] softmax weights
    KVCache<S> cache;
  };

  // Exactly one of context (tile embeddings) or cache must be supplied.
  Out forward(nn::Tape<S>* tape, const nn::Tensor<S>& latents,
              const nn::Tensor<S>* context, const KVCache<S>* cache,
              int* kv_projection_counter) const {
    if ((context != nullptr) == (cache != nullptr))
      throw std::invalid_argument(
          "cross-attention: exactly one of context/cache must be supplied");
    KVCache<S> kv;
    if (context) {
      kv.k = k.forward(tape, *context);
      kv.v = v.forward(tape, *context);
      if (kv_projection_counter) ++*kv_projection_counter;
    } else {
      kv = *cache;
    }
    auto queries = q.forward(tape, ln_q.forward(tape, latents));
    auto scores = nn::matmul_nt(tape, queries, kv.k);
    const S temp = static_cast<S>(std::sqrt(static_cast<double>(queries.cols())));
    auto attn = nn::softmax_rows(tape, scores, temp);
    // double accumulation over the tile axis keeps the output stable under
    // tile-order permutation
    auto ctx = nn::matmul(tape, attn, kv.v, /*wide_accum=*/true);
    auto x = nn::add(tape, latents, o.forward(tape, ctx));
    auto h = mlp.forward(tape, ln_mlp.forward(tape, x));
    return {nn::add(tape, x, h), attn, kv};
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) const {
    push_layer_norm(out, prefix + ".ln_q", ln_q);
    push_linear(out, prefix + ".q", q);
    push_linear(out, prefix + ".k", k);
    push_linear(out, prefix + ".v", v);
    push_linear(out, prefix + ".o", o);
    push_layer_norm(out, prefix + ".ln_mlp", ln_mlp);
    push_geglu(out, prefix + ".mlp", mlp);
  }
};

// Pre-norm transformer encoder layer over the latents (no positional
// encoding; the latent set is order-equivariant).
template <class S>
struct LatentTransformerLayer {
  LayerNormParams<S> ln1;
  Linear<S> q, k, v, o;
  LayerNormParams<S> ln2;
  GegluMlp<S> mlp;
  int heads = 8;

  void init(const PerceiverConfig& cfg, Rng& rng, S stddev) {
    heads = cfg.lt_heads;
    ln1.init(cfg.latent_dim);
    q.init(cfg.latent_dim, cfg.latent_dim, rng, stddev, cfg.qkv_bias);
    k.init(cfg.latent_dim, cfg.latent_dim, rng, stddev, cfg.qkv_bias);
    v.init(cfg.latent_dim, cfg.latent_dim, rng, stddev, cfg.qkv_bias);
    o.init(cfg.latent_dim, cfg.latent_dim, rng, stddev, true);
    ln2.init(cfg.latent_dim);
    mlp.init(cfg.latent_dim, cfg.mlp_inner, rng, stddev, true);
  }

  nn::Tensor<S> forward(nn::Tape<S>* tape, const nn::Tensor<S>& x) const {
    auto h = ln1.forward(tape, x);
    auto ctx = multi_head_attention<S>(tape, q.forward(tape, h), k.forward(tape, h),
                                    v.forward(tape, h), heads, nullptr);
    auto y = nn::add(tape, x, o.forward(tape, ctx));
    auto m = mlp.forward(tape, ln2.forward(tape, y));
    return nn::add(tape, y, m);
  }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) const {
    push_layer_norm(out, prefix + ".ln1", ln1);
    push_linear(out, prefix + ".q", q);
    push_linear(out, prefix + ".k", k);
    push_linear(out, prefix + ".v", v);
    push_linear(out, prefix + ".o", o);
    push_layer_norm(out, prefix + ".ln2", ln2);
    push_geglu(out, prefix + ".mlp", mlp);
  }
};

template <class S>
struct SlideEncoding {
  nn::Tensor<S> slide_embedding;   // [1 x latent_dim]
  nn::Tensor<S> context_latents;   // [L x latent_dim]
  std::vector<S> last_xattn;       // [(L+1) x N] attention weights, row-major
  int64_t n_tiles = 0;
  int kv_projections = 0;          // tiles->K/V projection invocations
};

template <class S>
class SlideEncoder {
 public:
  SlideEncoder() = default;
  explicit SlideEncoder(const PerceiverConfig& cfg) : cfg_(cfg) {}

  void init(Rng& rng, S stddev = S(0.02)) {
    latents_ = nn::Tensor<S>::randn({cfg_.n_latents, cfg_.latent_dim}, rng, stddev, true);
    xattn0_.init(cfg_, rng, stddev);
    xattn1_.init(cfg_, rng, stddev);
    lt_.resize(static_cast<size_t>(cfg_.lt_layers));
    for (auto& layer : lt_) layer.init(cfg_, rng, stddev);
  }

  // tiles: [N x embed_dim]. reproject_each_block disables the KV cache and
  // re-projects the tiles in every block; it exists as the oracle route for
  // cache-equivalence checks.
  SlideEncoding<S> encode(nn::Tape<S>* tape, const nn::Tensor<S>& tiles,
                          bool reproject_each_block = false) const {
    if (tiles.rows() < 1) throw std::invalid_argument("encode: empty specimen bag");
    if (tiles.cols() != cfg_.embed_dim)
      throw std::invalid_argument("encode: tile embedding width mismatch");

    SlideEncoding<S> enc;
    enc.n_tiles = tiles.rows();
    nn::Tensor<S> x = latents_;
    KVCache<S> cache;
    typename CrossAttnBlock<S>::Out last;
    for (int block = 0; block < cfg_.depth; ++block) {
      if (block == 0) {
        last = xattn0_.forward(tape, x, &tiles, nullptr, &enc.kv_projections);
      } else if (block == 1 || reproject_each_block) {
        last = xattn1_.forward(tape, x, &tiles, nullptr, &enc.kv_projections);
        cache = last.cache;
      } else {
        last = xattn1_.forward(tape, x, nullptr, &cache, &enc.kv_projections);
      }
      x = last.latents;
      for (const auto& layer : lt_) x = layer.forward(tape, x);
    }
    enc.slide_embedding = nn::slice_rows(tape, x, 0, 1);
    enc.context_latents = nn::slice_rows(tape, x, 1, cfg_.n_latents);
    enc.last_xattn = last.attn.value_vec();
    return enc;
  }

  const PerceiverConfig& config() const { return cfg_; }
  nn::Tensor<S>& latent_bank() { return latents_; }
  CrossAttnBlock<S>& xattn0() { return xattn0_; }
  CrossAttnBlock<S>& xattn1() { return xattn1_; }
  std::vector<LatentTransformerLayer<S>>& latent_transformer() { return lt_; }

  void collect(std::vector<NamedParam<S>>& out, const std::string& prefix) const {
    out.push_back({prefix + ".latents", latents_});
    xattn0_.collect(out, prefix + ".xattn0");
    xattn1_.collect(out, prefix + ".xattn1");
    for (size_t i = 0; i < lt_.size(); ++i)
      lt_[i].collect(out, prefix + ".lt." + std::to_string(i));
  }

 private:
  PerceiverConfig cfg_;
  nn::Tensor<S> latents_;
  CrossAttnBlock<S> xattn0_;
  CrossAttnBlock<S> xattn1_;
  std::vector<LatentTransformerLayer<S>> lt_;
};

// The k tiles with the largest attention weight in the slide-embedding
// latent's row of the final cross-attention, descending; ties break toward
// the lower tile index.
template <class S>
std::vector<std::pair<int64_t, S>> top_attended_tiles(const SlideEncoding<S>& enc,
                                                      int64_t k = 16) {
  const int64_t n = enc.n_tiles;
  if (k > n) throw std::invalid_argument("top_attended_tiles: k exceeds tile count");
  std::vector<std::pair<int64_t, S>> entries;
  entries.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i)
    entries.emplace_back(i, enc.last_xattn[static_cast<size_t>(i)]);  // row 0 = slide latent
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  entries.resize(static_cast<size_t>(k));
  return entries;
}

}  // namespace slidelm
