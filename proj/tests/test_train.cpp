#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "slidelm/evalkit.hpp"
#include "slidelm/trainer.hpp"
#include "testutil.hpp"

using namespace slidelm;
using namespace slidelm::nn;

namespace {

RunConfig tiny_run_config() {
  RunConfig cfg;
  cfg.seed = 7;
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
  cfg.base_lr = 3e-3;
  cfg.warmup_steps = 10;
  cfg.total_steps = 400;
  cfg.concepts = 2;
  cfg.specimens_per_concept = 8;
  cfg.heldout_per_concept = 4;
  cfg.tiles_min = 4;
  cfg.tiles_max = 6;
  cfg.validate();
  return cfg;
}

struct Fixture {
  RunConfig cfg;
  GeneratedCorpus corpus;
  Vocabulary vocab;
  Model<float> model;
  std::vector<TrainItem> items;

  explicit Fixture(RunConfig c = tiny_run_config()) : cfg(std::move(c)) {
    corpus = gen_corpus(CorpusSpec::from(cfg));
    std::vector<std::string> texts;
    for (const auto& r : corpus.train_reports)
      for (const auto& s : r.rewrites) texts.push_back(s);
    vocab = Vocabulary::build(texts);
    model = Model<float>(model_config_from(cfg, vocab.size()));
    model.init(cfg.seed);
    items = build_train_items(corpus.train_manifest, corpus.store,
                              corpus.train_reports, vocab, cfg.max_seq_len);
  }
};

}  // namespace

TEST_CASE("parameter registry is stable and checkpoints round trip bit-exactly") {
  Fixture f;
  auto names = f.model.named_params();
  REQUIRE(!names.empty());
  CHECK(names.front().name == "perceiver.latents");
  CHECK(names.back().name == "log_tau");
  // registry order repeats
  auto again = f.model.named_params();
  for (size_t i = 0; i < names.size(); ++i) CHECK(names[i].name == again[i].name);

  const auto dir = std::filesystem::temp_directory_path() / "slidelm_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.ckpt").string();

  CheckpointMeta meta;
  meta.config_digest = f.cfg.digest();
  meta.model_digest = f.cfg.model_digest();
  meta.step = 17;
  save_checkpoint(path, f.model, nullptr, meta);

  Model<float> fresh(model_config_from(f.cfg, f.vocab.size()));
  fresh.init(f.cfg.seed + 1);  // different init, must be fully overwritten
  auto back = load_checkpoint(path, fresh, nullptr);
  CHECK(back.step == 17);
  CHECK(back.config_digest == f.cfg.digest());

  auto a = f.model.named_params();
  auto b = fresh.named_params();
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].tensor.numel() == b[i].tensor.numel());
    CHECK(std::memcmp(a[i].tensor.data(), b[i].tensor.data(),
                      sizeof(float) * static_cast<size_t>(a[i].tensor.numel())) == 0);
  }

  const auto path2 = (dir / "m2.ckpt").string();
  save_checkpoint(path2, fresh, nullptr, meta);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  std::filesystem::remove_all(dir);
}

TEST_CASE("freeze mask separates trainable groups in paper mode") {
  Fixture f;
  f.model.apply_freeze_mask("paper");
  for (const auto& np : f.model.named_params()) {
    const bool frozen = !np.tensor.requires_grad();
    const bool is_decoder = np.name.rfind("decoder.", 0) == 0;
    const bool is_xattn = np.name.find(".xattn.") != std::string::npos;
    const bool is_tok = np.name == "decoder.tok_emb";
    if (is_decoder && !is_xattn && !is_tok) {
      CHECK(frozen);
      CHECK(np.tensor.grad_vec().empty());  // no gradient buffer on frozen groups
    } else {
      CHECK_FALSE(frozen);
    }
  }
  f.model.apply_freeze_mask("none");
  for (const auto& np : f.model.named_params()) CHECK(np.tensor.requires_grad());
  CHECK_THROWS_AS(f.model.apply_freeze_mask("half"), std::invalid_argument);
}

TEST_CASE("every parameter receives gradient on a desk-mode batch") {
  Fixture f;
  Trainer trainer(f.model, f.cfg, 0);
  trainer.set_items(f.items);

  Tape<float> tape;
  std::vector<int64_t> idx = {0, 5, 9, 12};
  std::vector<int> rw = {0, 1, 2, 3};
  auto loss = micro_batch_loss(&tape, f.model, f.items, idx, rw,
                               LossWeights{1.0, 2.0}, Reduction::Mean);
  tape.backward(loss.total);
  for (const auto& np : f.model.named_params()) {
    double g = 0;
    for (int64_t i = 0; i < np.tensor.numel(); ++i)
      g += std::abs(static_cast<double>(np.tensor.grad()[i]));
    INFO("param ", np.name);
    CHECK(g > 0);
  }
}

TEST_CASE("frozen parameters stay bit-identical across steps") {
  auto cfg = tiny_run_config();
  cfg.freeze_mode = "paper";
  Fixture f(cfg);
  std::vector<std::vector<float>> before;
  f.model.apply_freeze_mask("paper");
  for (const auto& np : f.model.named_params())
    if (!np.tensor.requires_grad()) before.push_back(np.tensor.value_vec());

  Trainer trainer(f.model, f.cfg, 0);
  trainer.set_items(f.items);
  for (int i = 0; i < 5; ++i) trainer.step();

  size_t k = 0;
  for (const auto& np : f.model.named_params())
    if (!np.tensor.requires_grad()) {
      CHECK(np.tensor.value_vec() == before[k]);
      ++k;
    }
  CHECK(k > 0);
}

TEST_CASE("identical seeds produce identical loss curves") {
  auto run = [] {
    Fixture f;
    Trainer trainer(f.model, f.cfg, 0);
    trainer.set_items(f.items);
    std::vector<double> losses;
    for (int i = 0; i < 6; ++i) losses.push_back(trainer.step().l_tot);
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("gradient accumulation equals a jointly averaged batch step") {
  Fixture f;
  const LossWeights w{1.0, 2.0};
  const int accum = 4;
  std::vector<std::vector<int64_t>> micro_idx = {{0, 1}, {2, 3}, {4, 5}, {6, 7}};
  std::vector<std::vector<int>> micro_rw = {{0, 1}, {2, 3}, {4, 0}, {1, 2}};

  // route A: accumulate over separate backward passes, scaling each by 1/accum
  auto grads_of = [&](bool joint) {
    Fixture g;  // fresh identical model
    std::vector<double> flat;
    if (joint) {
      Tape<float> tape;
      Tensor<float> avg;
      for (int m = 0; m < accum; ++m) {
        auto loss = micro_batch_loss(&tape, g.model, g.items, micro_idx[m],
                                     micro_rw[m], w, Reduction::Mean);
        auto scaled = scale(&tape, loss.total, 1.0f / accum);
        avg = avg.defined() ? add(&tape, avg, scaled) : scaled;
      }
      tape.backward(avg);
    } else {
      for (int m = 0; m < accum; ++m) {
        Tape<float> tape;
        auto loss = micro_batch_loss(&tape, g.model, g.items, micro_idx[m],
                                     micro_rw[m], w, Reduction::Mean);
        auto scaled = scale(&tape, loss.total, 1.0f / accum);
        tape.backward(scaled);
      }
    }
    for (const auto& np : g.model.named_params())
      for (int64_t i = 0; i < np.tensor.numel(); ++i)
        flat.push_back(static_cast<double>(np.tensor.grad()[i]));
    return flat;
  };

  auto a = grads_of(false);
  auto b = grads_of(true);
  REQUIRE(a.size() == b.size());
  double scale_ref = 0;
  for (double v : b) scale_ref = std::max(scale_ref, std::abs(v));
  for (size_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i] - b[i]) <= 1e-5 * std::max(1.0, scale_ref));
}

TEST_CASE("resumed training replays the uninterrupted run bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_resume_test";
  std::filesystem::create_directories(dir);
  const auto ckpt = (dir / "mid.ckpt").string();

  std::vector<StepMetrics> uninterrupted;
  {
    Fixture f;
    Trainer trainer(f.model, f.cfg, 123);
    trainer.set_items(f.items);
    for (int i = 0; i < 10; ++i) uninterrupted.push_back(trainer.step());
  }

  std::vector<StepMetrics> resumed;
  {
    Fixture f;
    Trainer trainer(f.model, f.cfg, 123);
    trainer.set_items(f.items);
    for (int i = 0; i < 5; ++i) trainer.step();
    trainer.save(ckpt);
  }
  {
    Fixture f;
    Trainer trainer(f.model, f.cfg, 123);
    trainer.set_items(f.items);
    trainer.resume(ckpt);
    CHECK(trainer.steps_done() == 5);
    for (int i = 0; i < 5; ++i) resumed.push_back(trainer.step());
  }
  for (int i = 0; i < 5; ++i) {
    CHECK(resumed[i].step == uninterrupted[i + 5].step);
    CHECK(resumed[i].l_tot == uninterrupted[i + 5].l_tot);
    CHECK(resumed[i].l_con == uninterrupted[i + 5].l_con);
    CHECK(resumed[i].grad_norm == uninterrupted[i + 5].grad_norm);
  }

  // config-digest mismatch fails loudly
  {
    auto cfg2 = tiny_run_config();
    cfg2.base_lr *= 2;
    Fixture f(cfg2);
    Trainer trainer(f.model, f.cfg, 123);
    trainer.set_items(f.items);
    CHECK_THROWS_WITH_AS(trainer.resume(ckpt), doctest::Contains("config-digest"),
                         std::runtime_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss decreases while overfitting a small set") {
  auto cfg = tiny_run_config();
  cfg.specimens_per_concept = 8;  // 16 specimens total
  Fixture f(cfg);
  Trainer trainer(f.model, f.cfg, 0);
  trainer.set_items(f.items);

  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(trainer.step().l_tot);

  // 50-step moving averages must decrease monotonically
  auto avg = [&](int from) {
    double s = 0;
    for (int i = from; i < from + 50; ++i) s += losses[static_cast<size_t>(i)];
    return s / 50;
  };
  const double a0 = avg(0), a1 = avg(50), a2 = avg(100), a3 = avg(150);
  CHECK(a1 < a0);
  CHECK(a2 < a1);
  CHECK(a3 < a2);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
  Fixture f;
  // poison one parameter
  f.model.encoder().latent_bank().data()[0] =
      std::numeric_limits<float>::quiet_NaN();
  Trainer trainer(f.model, f.cfg, 0);
  trainer.set_items(f.items);
  CHECK_THROWS_WITH_AS(trainer.step(), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("sample_rewrite is uniform, deterministic and rejects empties") {
  SpecimenRecord r;
  r.specimen_id = "s";
  r.concept_id = 0;
  r.rewrites = {"a", "b", "c", "d", "e"};

  Rng rng(3);
  std::map<std::string, int> freq;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) freq[sample_rewrite(r, rng)]++;
  for (const auto& [_, count] : freq)
    CHECK(std::abs(count / static_cast<double>(draws) - 0.2) < 0.02);

  SpecimenRecord single = r;
  single.rewrites = {"only"};
  Rng rng2(4);
  for (int i = 0; i < 5; ++i) CHECK(sample_rewrite(single, rng2) == "only");

  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) CHECK(sample_rewrite(r, a) == sample_rewrite(r, b));

  SpecimenRecord none = r;
  none.rewrites.clear();
  Rng rng3(5);
  CHECK_THROWS_AS(sample_rewrite(none, rng3), std::invalid_argument);
}

TEST_CASE("metrics writer emits the digest header and one line per step") {
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_metrics_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "metrics.jsonl").string();
  {
    MetricsWriter w(path, 42);
    w.write({1, 1e-4, 0.5, 2.0, 4.5, 1.2});
    w.write({2, 2e-4, 0.4, 1.9, 4.2, 1.1});
  }
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    if (lines == 1) CHECK(line.find("config_digest") != std::string::npos);
    if (lines == 2) {
      CHECK(line.find("\"step\":1") != std::string::npos);
      CHECK(line.find("l_con") != std::string::npos);
      CHECK(line.find("grad_norm") != std::string::npos);
    }
  }
  CHECK(lines == 3);
  std::filesystem::remove_all(dir);
}
