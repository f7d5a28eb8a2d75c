#pragma once

// Flat key=value run configuration with two shipped presets. The full digest
// is embedded in every artifact a run produces; the model digest covers only
// the keys that fix parameter shapes and is used for cross-artifact
// compatibility checks.

#include <cstdint>
#include <string>

namespace slidelm {

struct RunConfig {
  std::string preset = "desk";
  uint64_t seed = 7;

  // synthetic tile embeddings
  int embed_dim = 64;
  double signal_strength = 4.0;
  int max_concepts = 16;

  // slide encoder
  int perceiver_depth = 4;
  int n_latents = 17;  // context latents + 1 slide-embedding latent
  int latent_dim = 64;
  int kqv_dim = 64;
  int lt_layers = 6;
  int lt_heads = 8;
  int mlp_inner = 64;
  bool qkv_bias = true;

  // language decoder
  int dec_width = 64;
  int dec_layers = 8;
  int dec_unimodal = 4;
  int dec_heads = 4;
  int dec_mlp_ratio = 4;
  int max_seq_len = 48;
  std::string freeze_mode = "none";  // none | paper

  // training
  int proj_dim = 128;
  int batch_size = 8;
  int grad_accum = 2;
  double base_lr = 1e-3;
  int warmup_steps = 100;
  int total_steps = 1200;
  int train_steps = 0;  // 0 means total_steps
  double weight_decay = 1e-6;
  double clip_norm = 3.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda_con = 1.0;
  double lambda_rep = 2.0;
  std::string caption_reduction = "mean";  // mean | sum
  double tau_init = 0.07;

  // synthetic corpus
  int concepts = 4;
  int specimens_per_concept = 32;
  int heldout_per_concept = 16;
  int tiles_min = 8;
  int tiles_max = 16;
  int secondary_attributes = 4;
  double attribute_strength = 2.0;
  int nuisance_dims = 6;
  double nuisance_strength = 2.0;
  double tissue_fraction_min = 0.25;
  double tissue_fraction_max = 1.0;

  static RunConfig preset_desk();
  static RunConfig preset_paper();
  static RunConfig from_preset(const std::string& name);

  // key=value text, '#' comments; a preset key is applied first, then overrides
  static RunConfig load(const std::string& path);
  static RunConfig from_text(const std::string& text);
  void save(const std::string& path) const;

  std::string canonical_text() const;
  uint64_t digest() const;
  uint64_t model_digest() const;

  int effective_train_steps() const { return train_steps > 0 ? train_steps : total_steps; }
  void validate() const;
};

}  // namespace slidelm
