#pragma once

// The combined slide/text model: slide encoder, language decoder, the two
// contrastive projection heads and the learned temperature, plus the
// parameter registry, freeze masking and checkpoint IO.

#include <array>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slidelm/binio.hpp"
#include "slidelm/config.hpp"
#include "slidelm/decoder.hpp"
#include "slidelm/layers.hpp"
#include "slidelm/optim.hpp"
#include "slidelm/perceiver.hpp"

namespace slidelm {

struct ModelConfig {
  PerceiverConfig perceiver;
  DecoderConfig decoder;
  int proj_dim = 128;
  double tau_init = 0.07;
};

inline ModelConfig model_config_from(const RunConfig& cfg, int64_t vocab_size) {
  ModelConfig mc;
  mc.perceiver.depth = cfg.perceiver_depth;
  mc.perceiver.n_latents = cfg.n_latents;
  mc.perceiver.latent_dim = cfg.latent_dim;
  mc.perceiver.kqv_dim = cfg.kqv_dim;
  mc.perceiver.embed_dim = cfg.embed_dim;
  mc.perceiver.lt_layers = cfg.lt_layers;
  mc.perceiver.lt_heads = cfg.lt_heads;
  mc.perceiver.mlp_inner = cfg.mlp_inner;
  mc.perceiver.qkv_bias = cfg.qkv_bias;
  mc.decoder.vocab_size = vocab_size;
  mc.decoder.width = cfg.dec_width;
  mc.decoder.layers = cfg.dec_layers;
  mc.decoder.unimodal = cfg.dec_unimodal;
  mc.decoder.heads = cfg.dec_heads;
  mc.decoder.mlp_ratio = cfg.dec_mlp_ratio;
  mc.decoder.latent_dim = cfg.latent_dim;
  mc.decoder.max_seq_len = cfg.max_seq_len;
  mc.decoder.qkv_bias = cfg.qkv_bias;
  mc.proj_dim = cfg.proj_dim;
  mc.tau_init = cfg.tau_init;
  return mc;
}

template <class S>
class Model {
 public:
  Model() = default;
  explicit Model(const ModelConfig& cfg)
      : cfg_(cfg), encoder_(cfg.perceiver), decoder_(cfg.decoder) {}

  void init(uint64_t seed) {
    Rng enc_rng = substream(seed, "init-encoder");
    encoder_.init(enc_rng);
    Rng dec_rng = substream(seed, "init-decoder");
    decoder_.init(dec_rng);
    Rng head_rng = substream(seed, "init-heads");
    vision_proj_.init(cfg_.perceiver.latent_dim, cfg_.proj_dim, head_rng, S(0.02), true);
    text_proj_.init(cfg_.decoder.width, cfg_.proj_dim, head_rng, S(0.02), true);
    log_tau_ = nn::Tensor<S>::scalar(static_cast<S>(std::log(cfg_.tau_init)), true);
  }

  // slide embedding [1 x latent_dim] -> normalized projection [1 x proj_dim]
  nn::Tensor<S> project_slide(nn::Tape<S>* tape, const nn::Tensor<S>& slide_emb) const {
    return nn::l2_normalize_rows(tape, vision_proj_.forward(tape, slide_emb));
  }

  // CLS state [1 x width] -> normalized projection [1 x proj_dim]
  nn::Tensor<S> project_text(nn::Tape<S>* tape, const nn::Tensor<S>& cls) const {
    return nn::l2_normalize_rows(tape, text_proj_.forward(tape, cls));
  }

  std::vector<NamedParam<S>> named_params() const {
    std::vector<NamedParam<S>> out;
    encoder_.collect(out, "perceiver");
    decoder_.collect(out, "decoder");
    push_linear(out, "vision_proj", vision_proj_);
    push_linear(out, "text_proj", text_proj_);
    out.push_back({"log_tau", log_tau_});
    return out;
  }

  std::vector<nn::Tensor<S>> parameters() const {
    std::vector<nn::Tensor<S>> out;
    for (auto& np : named_params()) out.push_back(np.tensor);
    return out;
  }

  std::vector<nn::Tensor<S>> trainable_parameters() const {
    std::vector<nn::Tensor<S>> out;
    for (auto& np : named_params())
      if (np.tensor.requires_grad()) out.push_back(np.tensor);
    return out;
  }

  // "none": everything trainable. "paper": the decoder's base self-attention,
  // MLP, positional and final-norm parameters are frozen; the word embedding
  // table (which carries the CLS row), every decoder cross-attention module,
  // the slide encoder, the projection heads and the temperature stay
  // trainable.
  void apply_freeze_mask(const std::string& mode) {
    for (auto& np : named_params()) {
      bool trainable = true;
      if (mode == "paper") {
        const auto& n = np.name;
        const bool is_decoder = n.rfind("decoder.", 0) == 0;
        if (is_decoder) {
          const bool is_word_emb = n == "decoder.tok_emb";
          const bool is_xattn = n.find(".xattn.") != std::string::npos;
          trainable = is_word_emb || is_xattn;
        }
      } else if (mode != "none") {
        throw std::invalid_argument("freeze mask: unknown mode '" + mode + "'");
      }
      np.tensor.set_requires_grad(trainable);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  SlideEncoder<S>& encoder() { return encoder_; }
  const SlideEncoder<S>& encoder() const { return encoder_; }
  TextDecoder<S>& decoder() { return decoder_; }
  const TextDecoder<S>& decoder() const { return decoder_; }
  Linear<S>& vision_proj() { return vision_proj_; }
  Linear<S>& text_proj() { return text_proj_; }
  nn::Tensor<S>& log_tau() { return log_tau_; }
  const nn::Tensor<S>& log_tau() const { return log_tau_; }
  double temperature() const { return std::exp(static_cast<double>(log_tau_.item())); }

 private:
  ModelConfig cfg_;
  SlideEncoder<S> encoder_;
  TextDecoder<S> decoder_;
  Linear<S> vision_proj_;
  Linear<S> text_proj_;
  nn::Tensor<S> log_tau_;
};

// ---------------------------------------------------------------------------
// checkpoint format: magic, version, digests, named fp32 parameter blobs,
// optional optimizer state and named RNG states. Resume is bit-exact.

struct CheckpointMeta {
  uint64_t config_digest = 0;
  uint64_t model_digest = 0;
  uint64_t store_digest = 0;
  uint64_t step = 0;
  std::string config_text;  // canonical key=value form of the producing config
  std::vector<std::pair<std::string, std::array<uint64_t, 4>>> rng_states;
};

namespace detail {
inline constexpr char kCkptMagic[4] = {'S', 'L', 'M', 'C'};
inline constexpr uint32_t kCkptVersion = 1;
}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model<float>& model,
                            const nn::AdamW<float>* opt, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(detail::kCkptMagic, 4);
  binio::put_u32(out, detail::kCkptVersion);
  binio::put_u64(out, meta.config_digest);
  binio::put_u64(out, meta.model_digest);
  binio::put_u64(out, meta.store_digest);
  binio::put_u64(out, meta.step);
  binio::put_string(out, meta.config_text);

  auto params = model.named_params();
  binio::put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& np : params) {
    binio::put_string(out, np.name);
    binio::put_u32(out, static_cast<uint32_t>(np.tensor.shape().size()));
    for (int64_t d : np.tensor.shape()) binio::put_u64(out, static_cast<uint64_t>(d));
    binio::put_f32_array(out, np.tensor.data(), static_cast<size_t>(np.tensor.numel()));
  }

  binio::put_u32(out, opt ? 1u : 0u);
  if (opt) {
    auto* mut = const_cast<nn::AdamW<float>*>(opt);
    binio::put_u64(out, static_cast<uint64_t>(mut->step_count()));
    binio::put_u32(out, static_cast<uint32_t>(mut->moments_m().size()));
    for (size_t i = 0; i < mut->moments_m().size(); ++i) {
      binio::put_u64(out, mut->moments_m()[i].size());
      binio::put_f32_array(out, mut->moments_m()[i].data(), mut->moments_m()[i].size());
      binio::put_f32_array(out, mut->moments_v()[i].data(), mut->moments_v()[i].size());
    }
  }

  binio::put_u32(out, static_cast<uint32_t>(meta.rng_states.size()));
  for (const auto& [name, state] : meta.rng_states) {
    binio::put_string(out, name);
    for (uint64_t w : state) binio::put_u64(out, w);
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

// Header-only read: digests, step and config text, no parameters.
inline CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("peek_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw std::runtime_error("peek_checkpoint: bad magic");
  if (binio::get_u32(in) != detail::kCkptVersion)
    throw std::runtime_error("peek_checkpoint: unsupported version");
  CheckpointMeta meta;
  meta.config_digest = binio::get_u64(in);
  meta.model_digest = binio::get_u64(in);
  meta.store_digest = binio::get_u64(in);
  meta.step = binio::get_u64(in);
  meta.config_text = binio::get_string(in);
  return meta;
}

// Scans the parameter records for the token-embedding table and returns its
// row count (the vocabulary size the checkpoint was trained with).
inline int64_t checkpoint_vocab_size(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint_vocab_size: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw std::runtime_error("checkpoint_vocab_size: bad magic");
  binio::get_u32(in);  // version
  binio::get_u64(in);
  binio::get_u64(in);
  binio::get_u64(in);
  binio::get_u64(in);
  binio::get_string(in);  // config text
  const uint32_t count = binio::get_u32(in);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::get_string(in);
    const uint32_t ndim = binio::get_u32(in);
    std::vector<int64_t> dims(ndim);
    int64_t numel = 1;
    for (auto& d : dims) {
      d = static_cast<int64_t>(binio::get_u64(in));
      numel *= d;
    }
    if (name == "decoder.tok_emb") return dims.at(0);
    in.seekg(static_cast<std::streamoff>(numel * 4), std::ios::cur);
  }
  throw std::runtime_error("checkpoint_vocab_size: no token embedding record");
}

// Model must already be constructed with matching shapes; parameters are
// loaded by name and every registered parameter must be present.
inline CheckpointMeta load_checkpoint(const std::string& path, Model<float>& model,
                                      nn::AdamW<float>* opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: bad magic");
  if (binio::get_u32(in) != detail::kCkptVersion)
    throw std::runtime_error("load_checkpoint: unsupported version");
  CheckpointMeta meta;
  meta.config_digest = binio::get_u64(in);
  meta.model_digest = binio::get_u64(in);
  meta.store_digest = binio::get_u64(in);
  meta.step = binio::get_u64(in);
  meta.config_text = binio::get_string(in);

  auto params = model.named_params();
  const uint32_t count = binio::get_u32(in);
  if (count != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = binio::get_string(in);
    if (name != params[i].name)
      throw std::runtime_error("load_checkpoint: parameter order mismatch at " + name);
    const uint32_t ndim = binio::get_u32(in);
    std::vector<int64_t> dims(ndim);
    for (auto& d : dims) d = static_cast<int64_t>(binio::get_u64(in));
    if (dims != params[i].tensor.shape())
      throw std::runtime_error("load_checkpoint: shape mismatch at " + name);
    binio::get_f32_array(in, params[i].tensor.data(),
                         static_cast<size_t>(params[i].tensor.numel()));
  }

  const uint32_t has_opt = binio::get_u32(in);
  if (has_opt) {
    const uint64_t step_count = binio::get_u64(in);
    const uint32_t n = binio::get_u32(in);
    if (opt) {
      if (n != opt->moments_m().size())
        throw std::runtime_error("load_checkpoint: optimizer state count mismatch");
      opt->set_step_count(static_cast<int64_t>(step_count));
      for (uint32_t i = 0; i < n; ++i) {
        const uint64_t len = binio::get_u64(in);
        opt->moments_m()[i].resize(len);
        opt->moments_v()[i].resize(len);
        binio::get_f32_array(in, opt->moments_m()[i].data(), len);
        binio::get_f32_array(in, opt->moments_v()[i].data(), len);
      }
    } else {
      for (uint32_t i = 0; i < n; ++i) {
        const uint64_t len = binio::get_u64(in);
        in.seekg(static_cast<std::streamoff>(len * 8), std::ios::cur);
      }
    }
  }

  const uint32_t n_rng = binio::get_u32(in);
  for (uint32_t i = 0; i < n_rng; ++i) {
    std::pair<std::string, std::array<uint64_t, 4>> entry;
    entry.first = binio::get_string(in);
    for (auto& w : entry.second) w = binio::get_u64(in);
    meta.rng_states.push_back(std::move(entry));
  }
  if (!in) throw std::runtime_error("load_checkpoint: truncated file");
  return meta;
}

}  // namespace slidelm
