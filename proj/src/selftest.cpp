#include "slidelm/selftest.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <sstream>

#include "slidelm/corpus.hpp"
#include "slidelm/evalkit.hpp"
#include "slidelm/tiling.hpp"
#include "slidelm/trainer.hpp"

namespace slidelm {

namespace {

using nn::Tape;
using nn::Tensor;

bool check_gradients() {
  Rng rng(101);
  auto a = Tensor<double>::randn({3, 4}, rng, 1.0, true);
  auto b = Tensor<double>::randn({4, 3}, rng, 1.0, true);
  auto g = Tensor<double>::randn({3}, rng, 1.0, true);
  auto bias = Tensor<double>::randn({3}, rng, 1.0, true);
  auto logt = Tensor<double>::scalar(std::log(0.2), true);

  auto build = [&](Tape<double>* t) {
    auto h = nn::layer_norm(t, nn::matmul(t, a, b), g, bias);
    auto s = nn::softmax_rows(t, nn::scale_by_neg_exp(t, h, logt), 1.3);
    auto v = nn::l2_normalize_rows(t, nn::geglu(t, nn::concat_cols(
                                          t, std::vector<Tensor<double>>{h, s})));
    return nn::cross_entropy(t, v, {0, 1, 2}, -1);
  };

  Tape<double> tape;
  for (auto* p : {&a, &b, &g, &bias, &logt}) p->zero_grad();
  auto loss = build(&tape);
  tape.backward(loss);

  for (auto* p : {&a, &b, &g, &bias, &logt}) {
    for (int64_t i = 0; i < std::min<int64_t>(p->numel(), 6); ++i) {
      const double orig = p->data()[i];
      const double h = 1e-3;
      p->data()[i] = orig + h;
      const double fp = build(nullptr).item();
      p->data()[i] = orig - h;
      const double fm = build(nullptr).item();
      p->data()[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double an = p->grad()[i];
      if (std::abs(an - fd) / std::max({1e-2, std::abs(an), std::abs(fd)}) > 1e-3)
        return false;
    }
  }
  return true;
}

bool check_cache_equivalence() {
  Rng rng(102);
  PerceiverConfig cfg;
  cfg.depth = 8;
  cfg.n_latents = 9;
  cfg.latent_dim = 24;
  cfg.kqv_dim = 24;
  cfg.embed_dim = 24;
  cfg.lt_layers = 2;
  cfg.lt_heads = 4;
  cfg.mlp_inner = 24;
  SlideEncoder<float> enc(cfg);
  enc.init(rng);
  auto tiles = Tensor<float>::randn({11, cfg.embed_dim}, rng, 1.0f);
  auto cached = enc.encode(nullptr, tiles, false);
  auto reproj = enc.encode(nullptr, tiles, true);
  if (cached.kv_projections != 2 || reproj.kv_projections != cfg.depth) return false;
  for (int64_t i = 0; i < cached.context_latents.numel(); ++i)
    if (std::abs(cached.context_latents.data()[i] - reproj.context_latents.data()[i]) >
        1e-6)
      return false;
  return true;
}

bool check_permutation_invariance() {
  Rng rng(103);
  PerceiverConfig cfg;
  cfg.depth = 4;
  cfg.n_latents = 9;
  cfg.latent_dim = 32;
  cfg.kqv_dim = 32;
  cfg.embed_dim = 32;
  cfg.lt_layers = 2;
  cfg.lt_heads = 4;
  cfg.mlp_inner = 32;
  SlideEncoder<float> enc(cfg);
  enc.init(rng);
  const int64_t n = 17;
  auto tiles = Tensor<float>::randn({n, cfg.embed_dim}, rng, 1.0f);
  auto reversed = Tensor<float>::zeros({n, cfg.embed_dim});
  for (int64_t i = 0; i < n; ++i)
    std::copy_n(tiles.data() + (n - 1 - i) * cfg.embed_dim, cfg.embed_dim,
                reversed.data() + i * cfg.embed_dim);
  auto a = enc.encode(nullptr, tiles);
  auto b = enc.encode(nullptr, reversed);
  for (int64_t i = 0; i < a.slide_embedding.numel(); ++i)
    if (std::abs(a.slide_embedding.data()[i] - b.slide_embedding.data()[i]) > 1e-5)
      return false;
  return true;
}

bool check_tiling_rules() {
  const auto hsv = wsi::rgb_to_hsv(200, 120, 160);
  if (hsv.h != 165 || hsv.s != 102 || hsv.v != 200) return false;
  const auto white = wsi::rgb_to_hsv(255, 255, 255);
  if (white.s != 0 || white.v != 255) return false;

  wsi::SlideImage img;
  img.width = wsi::kTileSize;
  img.height = wsi::kTileSize;
  img.pixels.assign(static_cast<size_t>(img.width) * img.height * 3, 255);
  // paint exactly a quarter of the cells
  for (int cy = 0; cy < wsi::kCellsPerTile / 2; ++cy)
    for (int cx = 0; cx < wsi::kCellsPerTile / 2; ++cx)
      for (int y = cy * 16; y < cy * 16 + 16; ++y)
        for (int x = cx * 16; x < cx * 16 + 16; ++x) {
          uint8_t* p = img.at(x, y);
          p[0] = 150, p[1] = 100, p[2] = 160;
        }
  auto tiles =
      wsi::tile_and_filter(img, wsi::foreground_mask(wsi::downsample_16x(img)), "s");
  return tiles.size() == 1 && tiles[0].tissue_fraction >= 0.25;
}

bool check_store_roundtrip() {
  Rng rng(104);
  EmbeddingStore store;
  store.dim = 8;
  store.config_digest = 77;
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 8; ++j) store.vectors.push_back(static_cast<float>(rng.normal()));
    store.provenance.push_back({"s" + std::to_string(i % 4),
                                static_cast<uint32_t>(i), 0});
  }
  const auto path =
      (std::filesystem::temp_directory_path() / "slidelm_selftest_store.bin").string();
  write_store(path, store);
  auto back = read_store(path);
  std::filesystem::remove(path);
  return back.dim == store.dim && back.vectors == store.vectors &&
         back.config_digest == store.config_digest;
}

bool check_training_determinism() {
  auto run = [] {
    RunConfig cfg;
    cfg.embed_dim = 16;
    cfg.max_concepts = 8;
    cfg.secondary_attributes = 0;
    cfg.nuisance_dims = 0;
    cfg.perceiver_depth = 2;
    cfg.n_latents = 5;
    cfg.latent_dim = 16;
    cfg.kqv_dim = 16;
    cfg.lt_layers = 2;
    cfg.lt_heads = 4;
    cfg.mlp_inner = 16;
    cfg.dec_width = 16;
    cfg.dec_layers = 4;
    cfg.dec_unimodal = 2;
    cfg.dec_heads = 2;
    cfg.dec_mlp_ratio = 2;
    cfg.max_seq_len = 24;
    cfg.proj_dim = 16;
    cfg.batch_size = 4;
    cfg.grad_accum = 2;
    cfg.concepts = 2;
    cfg.specimens_per_concept = 6;
    cfg.heldout_per_concept = 2;
    cfg.tiles_min = 4;
    cfg.tiles_max = 5;
    auto corpus = gen_corpus(CorpusSpec::from(cfg));
    std::vector<std::string> texts;
    for (const auto& r : corpus.train_reports)
      for (const auto& s : r.rewrites) texts.push_back(s);
    auto vocab = Vocabulary::build(texts);
    Model<float> model(model_config_from(cfg, vocab.size()));
    model.init(cfg.seed);
    Trainer trainer(model, cfg, 0);
    trainer.set_items(build_train_items(corpus.train_manifest, corpus.store,
                                        corpus.train_reports, vocab, cfg.max_seq_len));
    std::ostringstream os;
    for (int i = 0; i < 3; ++i) {
      auto m = trainer.step();
      os << m.l_tot << "," << m.grad_norm << ";";
    }
    return os.str();
  };
  return run() == run();
}

}  // namespace

int run_selftest(std::ostream& out) {
  struct Check {
    const char* name;
    std::function<bool()> fn;
  };
  const Check checks[] = {
      {"gradient spot checks", check_gradients},
      {"kv-cache equivalence and projection count", check_cache_equivalence},
      {"tile permutation invariance", check_permutation_invariance},
      {"hsv window and tile threshold", check_tiling_rules},
      {"embedding store round trip", check_store_roundtrip},
      {"training determinism", check_training_determinism},
  };
  int failures = 0;
  for (const auto& c : checks) {
    bool ok = false;
    std::string err;
    try {
      ok = c.fn();
    } catch (const std::exception& e) {
      err = e.what();
    }
    out << (ok ? "[PASS] " : "[FAIL] ") << c.name;
    if (!ok && !err.empty()) out << " (" << err << ")";
    out << "\n";
    if (!ok) ++failures;
  }
  return failures;
}

}  // namespace slidelm
