#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "slidelm/decoder.hpp"
#include "testutil.hpp"

using namespace slidelm;
using namespace slidelm::nn;
using testutil::gradcheck;

namespace {
DecoderConfig tiny_cfg(int64_t vocab = 11) {
  DecoderConfig cfg;
  cfg.vocab_size = vocab;
  cfg.width = 16;
  cfg.layers = 4;
  cfg.unimodal = 2;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.latent_dim = 12;
  cfg.max_seq_len = 16;
  return cfg;
}
}  // namespace

TEST_CASE("build_mask structure for T=3 and T=0") {
  auto m = build_mask(3);
  // language rows: strict lower triangle plus diagonal
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(m.at(i, j) == (j <= i));
  // no language row sees the CLS column
  for (int64_t i = 0; i < 3; ++i) CHECK_FALSE(m.at(i, 3));
  // the CLS row sees everything including itself
  for (int64_t j = 0; j <= 3; ++j) CHECK(m.at(3, j));

  auto m0 = build_mask(0);
  CHECK(m0.at(0, 0));
}

TEST_CASE("mask matches its closed form exhaustively for T<=8") {
  for (int64_t T = 0; T <= 8; ++T) {
    auto m = build_mask(T);
    for (int64_t i = 0; i <= T; ++i)
      for (int64_t j = 0; j <= T; ++j) {
        const bool language_row = i < T;
        const bool want = language_row ? (j <= i) : true;
        CHECK(m.at(i, j) == want);
        if (language_row && j > i) CHECK_FALSE(m.at(i, j));
      }
  }
}

TEST_CASE("identical prefixes yield identical unimodal states") {
  Rng rng(71);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  auto a = dec.unimodal_forward(nullptr, {5, 6, 7, 9});
  auto b = dec.unimodal_forward(nullptr, {5, 6, 7, 10});
  const int64_t W = dec.config().width;
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < W; ++j)
      CHECK(a.hidden.data()[i * W + j] == b.hidden.data()[i * W + j]);
  // the CLS embedding sees the whole sequence and must differ
  double diff = 0;
  for (int64_t j = 0; j < W; ++j)
    diff += std::abs(a.cls.data()[j] - b.cls.data()[j]);
  CHECK(diff > 0);
}

TEST_CASE("appending a suffix never changes earlier hidden rows") {
  Rng rng(72);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  auto shorter = dec.unimodal_forward(nullptr, {4, 8});
  auto longer = dec.unimodal_forward(nullptr, {4, 8, 2, 6, 9});
  const int64_t W = dec.config().width;
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < W; ++j)
      CHECK(shorter.hidden.data()[i * W + j] == longer.hidden.data()[i * W + j]);
}

TEST_CASE("empty sequence still produces a CLS embedding") {
  Rng rng(73);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  auto out = dec.unimodal_forward(nullptr, {});
  CHECK(out.hidden.rows() == 0);
  CHECK(out.cls.rows() == 1);
  for (int64_t j = 0; j < out.cls.numel(); ++j)
    CHECK(std::isfinite(out.cls.data()[j]));
}

TEST_CASE("overlong sequences are rejected") {
  Rng rng(74);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  std::vector<int64_t> ids(16, 1);  // 16 + CLS > max_seq_len
  CHECK_THROWS_AS(dec.unimodal_forward(nullptr, ids), std::invalid_argument);
}

TEST_CASE("zeroed cross-attention output projection ignores the latents") {
  Rng rng(75);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  for (auto& layer : dec.layers()) {
    if (!layer.has_xattn) continue;
    std::fill(layer.xo.w.value_vec().begin(), layer.xo.w.value_vec().end(), 0.0f);
    std::fill(layer.xo.b.value_vec().begin(), layer.xo.b.value_vec().end(), 0.0f);
  }
  auto uni = dec.unimodal_forward(nullptr, {1, 5, 9});
  auto ctx_a = Tensor<float>::randn({6, 12}, rng, 1.0f);
  auto ctx_b = Tensor<float>::randn({6, 12}, rng, 1.0f);
  auto la = dec.multimodal_forward(nullptr, uni.hidden, ctx_a);
  auto lb = dec.multimodal_forward(nullptr, uni.hidden, ctx_b);
  for (int64_t i = 0; i < la.numel(); ++i) CHECK(la.data()[i] == lb.data()[i]);
}

TEST_CASE("latents change logits once cross-attention is active") {
  Rng rng(76);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  // push the output projections away from zero so the pathway is live
  for (auto& layer : dec.layers()) {
    if (!layer.has_xattn) continue;
    for (auto& v : layer.xo.w.value_vec()) v += 0.3f;
  }
  auto uni = dec.unimodal_forward(nullptr, {1, 5, 9});
  auto ctx_a = Tensor<float>::randn({6, 12}, rng, 1.0f);
  auto ctx_b = Tensor<float>::randn({6, 12}, rng, 1.0f);
  auto la = dec.multimodal_forward(nullptr, uni.hidden, ctx_a);
  auto lb = dec.multimodal_forward(nullptr, uni.hidden, ctx_b);
  double diff = 0;
  for (int64_t i = 0; i < la.numel(); ++i) diff += std::abs(la.data()[i] - lb.data()[i]);
  CHECK(diff > 0);
}

TEST_CASE("end-to-end causality: suffix perturbation leaves earlier logits alone") {
  Rng rng(77);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  auto ctx = Tensor<float>::randn({6, 12}, rng, 1.0f);

  std::vector<int64_t> base = {3, 7, 2, 8, 5};
  auto uni = dec.unimodal_forward(nullptr, base);
  auto logits = dec.multimodal_forward(nullptr, uni.hidden, ctx);

  for (size_t flip = 2; flip < base.size(); ++flip) {
    auto mutated = base;
    mutated[flip] = (mutated[flip] + 1) % dec.config().vocab_size;
    auto uni2 = dec.unimodal_forward(nullptr, mutated);
    auto logits2 = dec.multimodal_forward(nullptr, uni2.hidden, ctx);
    const int64_t V = dec.config().vocab_size;
    for (size_t t = 0; t < flip; ++t)
      for (int64_t j = 0; j < V; ++j)
        CHECK(logits.data()[static_cast<int64_t>(t) * V + j] ==
              logits2.data()[static_cast<int64_t>(t) * V + j]);
  }
}

TEST_CASE("language logits are independent of the CLS embedding value") {
  Rng rng(78);
  TextDecoder<float> dec(tiny_cfg());
  dec.init(rng);
  auto ctx = Tensor<float>::randn({6, 12}, rng, 1.0f);
  std::vector<int64_t> ids = {3, 7, 2};

  auto uni = dec.unimodal_forward(nullptr, ids);
  auto logits = dec.multimodal_forward(nullptr, uni.hidden, ctx);

  // perturb the CLS row of the token embedding table
  const int64_t W = dec.config().width;
  for (int64_t j = 0; j < W; ++j)
    dec.token_embedding().data()[Vocabulary::kCls * W + j] += 1.5f;
  auto uni2 = dec.unimodal_forward(nullptr, ids);
  auto logits2 = dec.multimodal_forward(nullptr, uni2.hidden, ctx);

  for (int64_t i = 0; i < 3 * W; ++i)
    CHECK(uni.hidden.data()[i] == uni2.hidden.data()[i]);
  // tied output projection never reads the CLS row for language tokens
  for (int64_t i = 0; i < logits.rows(); ++i)
    for (int64_t j = 0; j < logits.cols(); ++j)
      if (j != Vocabulary::kCls)
        CHECK(logits.data()[i * logits.cols() + j] ==
              logits2.data()[i * logits.cols() + j]);

  double cls_diff = 0;
  for (int64_t j = 0; j < W; ++j)
    cls_diff += std::abs(uni.cls.data()[j] - uni2.cls.data()[j]);
  CHECK(cls_diff > 0);
}

TEST_CASE("decoder gradients match finite differences") {
  Rng rng(79);
  auto cfg = tiny_cfg(9);
  cfg.width = 8;
  cfg.layers = 3;
  cfg.unimodal = 1;
  cfg.heads = 2;
  cfg.latent_dim = 6;
  TextDecoder<double> dec(cfg);
  dec.init(rng, 0.05);
  auto ctx = Tensor<double>::randn({3, 6}, rng, 1.0);
  std::vector<int64_t> ids = {4, 7, 1};
  std::vector<int64_t> targets = {7, 1, 2};

  std::vector<NamedParam<double>> named;
  dec.collect(named, "decoder");
  std::vector<Tensor<double>> checked;
  for (auto& np : named) checked.push_back(np.tensor);

  gradcheck(
      [&](Tape<double>* t) {
        auto uni = dec.unimodal_forward(t, ids);
        auto logits = dec.multimodal_forward(t, uni.hidden, ctx);
        auto rep = cross_entropy(t, logits, targets, Vocabulary::kPad);
        auto cls_probe = sum_all(t, gelu(t, uni.cls));
        return add(t, rep, cls_probe);
      },
      checked, rng, 1e-3, 1e-3, 3);
}
