#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slidelm/evalkit.hpp"
#include "slidelm/trainer.hpp"
#include "testutil.hpp"

using namespace slidelm;
using namespace slidelm::nn;

TEST_CASE("auroc unit values") {
  CHECK(auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(auroc({}, {}), std::invalid_argument);
}

TEST_CASE("auroc matches pairwise brute force with ties") {
  Rng rng(91);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) {
    // coarse quantization forces plenty of ties
    scores.push_back(std::round(rng.normal() * 3) / 3.0);
    labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
  }
  labels[0] = 1;
  labels[1] = 0;

  double wins = 0;
  int64_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i)
    for (size_t j = 0; j < scores.size(); ++j) {
      if (!(labels[i] == 1 && labels[j] == 0)) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  const double brute = wins / static_cast<double>(pairs);
  CHECK(std::abs(auroc(scores, labels) - brute) < 1e-12);
}

TEST_CASE("auroc is invariant under strictly monotone transforms") {
  Rng rng(92);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    scores.push_back(rng.normal());
    labels.push_back(i % 3 == 0 ? 1 : 0);
  }
  const double base = auroc(scores, labels);
  auto transformed = scores;
  for (auto& s : transformed) s = std::exp(0.7 * s) + 3;
  CHECK(auroc(transformed, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("prompt files round trip and validate") {
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_prompt_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "prompts.txt").string();
  PromptSet set;
  set.classes = {{"benign", {"benign", "inflammation", "normal"}},
                 {"cancer", {"carcinoma", "malignant"}}};
  save_prompts(path, set);
  auto back = load_prompts(path);
  REQUIRE(back.classes.size() == 2);
  CHECK(back.classes[0].first == "benign");
  CHECK(back.classes[0].second.size() == 3);
  CHECK(back.classes[1].second[1] == "malignant");

  PromptSet empty_class;
  empty_class.classes = {{"a", {"x"}}, {"b", {}}};
  CHECK_THROWS_AS(validate_prompts(empty_class), std::invalid_argument);

  PromptSet dup;
  dup.classes = {{"a", {"x", "x"}}, {"b", {"y"}}};
  CHECK_THROWS_AS(validate_prompts(dup), std::invalid_argument);

  PromptSet one;
  one.classes = {{"a", {"x"}}};
  CHECK_THROWS_AS(validate_prompts(one), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

namespace {

RunConfig eval_cfg() {
  RunConfig cfg;
  cfg.seed = 21;
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
  cfg.validate();
  return cfg;
}

struct EvalFixture {
  RunConfig cfg = eval_cfg();
  Vocabulary vocab;
  Model<float> model;
  Tensor<float> tiles;

  EvalFixture() {
    vocab = Vocabulary::build({"benign tissue", "carcinoma present", "normal",
                               "malignant cells", "inflammation"});
    model = Model<float>(model_config_from(cfg, vocab.size()));
    model.init(cfg.seed);
    Rng rng(5);
    tiles = Tensor<float>::randn({6, cfg.embed_dim}, rng, 1.0f);
  }
};

}  // namespace

TEST_CASE("embed_prompt returns deterministic unit vectors") {
  EvalFixture f;
  auto a = embed_prompt(f.model, f.vocab, "carcinoma present");
  auto b = embed_prompt(f.model, f.vocab, "carcinoma present");
  double norm = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a.data()[i] == b.data()[i]);
    norm += static_cast<double>(a.data()[i]) * a.data()[i];
  }
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);

  auto c = embed_prompt(f.model, f.vocab, "benign tissue");
  double cosine = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    cosine += static_cast<double>(a.data()[i]) * c.data()[i];
  CHECK(cosine < 1.0 - 1e-6);

  CHECK_THROWS_AS(embed_prompt(f.model, f.vocab, ""), std::invalid_argument);
}

TEST_CASE("zero-shot probabilities sum to one and respect prompt order invariance") {
  EvalFixture f;
  PromptSet set;
  set.classes = {{"benign", {"benign tissue", "normal"}},
                 {"cancer", {"carcinoma present", "malignant cells"}}};
  auto r = zero_shot_classify(f.model, f.vocab, f.tiles, set);
  REQUIRE(r.probabilities.size() == 2);
  CHECK(std::abs(r.probabilities[0] + r.probabilities[1] - 1.0) < 1e-6);

  PromptSet shuffled;
  shuffled.classes = {{"benign", {"normal", "benign tissue"}},
                      {"cancer", {"malignant cells", "carcinoma present"}}};
  auto r2 = zero_shot_classify(f.model, f.vocab, f.tiles, shuffled);
  CHECK(r2.probabilities[0] == doctest::Approx(r.probabilities[0]).epsilon(1e-9));
  CHECK(r2.predicted_class == r.predicted_class);
}

TEST_CASE("marginalization: an extra matching prompt raises the class probability") {
  EvalFixture f;
  PromptSet base;
  base.classes = {{"benign", {"benign tissue"}}, {"cancer", {"carcinoma present"}}};
  auto r1 = zero_shot_classify(f.model, f.vocab, f.tiles, base);

  PromptSet more = base;
  more.classes[1].second.push_back("malignant cells");
  auto r2 = zero_shot_classify(f.model, f.vocab, f.tiles, more);
  CHECK(r2.probabilities[1] > r1.probabilities[1]);

  // an exact duplicate also strictly increases the marginalized mass
  PromptSet dup = base;
  dup.classes[1].second.push_back("carcinoma present");
  auto r3 = zero_shot_classify(f.model, f.vocab, f.tiles, dup);
  CHECK(r3.probabilities[1] > r1.probabilities[1]);
}

TEST_CASE("identical prompts across classes split evenly") {
  EvalFixture f;
  PromptSet set;
  set.classes = {{"a", {"normal"}}, {"b", {"normal"}}};
  auto r = zero_shot_classify(f.model, f.vocab, f.tiles, set);
  CHECK(r.probabilities[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.probabilities[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(r.predicted_class == 0);  // lexicographic tie-break
}

TEST_CASE("greedy generation is deterministic and flags truncation") {
  EvalFixture f;
  auto g1 = generate_report(f.model, f.vocab, f.tiles, 1);
  CHECK(g1.truncated);
  CHECK(g1.ids.size() == 1);

  auto a = generate_report(f.model, f.vocab, f.tiles, 10);
  auto b = generate_report(f.model, f.vocab, f.tiles, 10);
  CHECK(a.text == b.text);
  CHECK(a.ids == b.ids);
  CHECK(a.truncated == b.truncated);
}

TEST_CASE("linear probe separates a separable toy and nothing else") {
  Rng rng(93);
  std::vector<std::vector<double>> x, xh;
  std::vector<int> y, yh;
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    std::vector<double> row = {rng.normal() + (label ? 3.0 : -3.0), rng.normal()};
    (i < 28 ? x : xh).push_back(row);
    (i < 28 ? y : yh).push_back(label);
  }
  ProbeConfig cfg;
  cfg.seed = 5;
  auto res = linear_probe(x, y, xh, yh, cfg);
  CHECK(res.heldout_auroc == doctest::Approx(1.0));
  CHECK(res.cv_mean_auroc.size() == 7);

  // the permutation baseline: shuffling every label (train and held-out)
  // erases the task, landing the probe near chance
  Rng shuffle_rng(94);
  auto shuffle = [&shuffle_rng](std::vector<int>& v) {
    for (size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[static_cast<size_t>(shuffle_rng.uniform_int(
                    static_cast<int64_t>(i)))]);
  };
  std::vector<int> y_shuffled = y, yh_shuffled = yh;
  shuffle(y_shuffled);
  shuffle(yh_shuffled);
  auto chance = linear_probe(x, y_shuffled, xh, yh_shuffled, cfg);
  CHECK(std::abs(chance.heldout_auroc - 0.5) < 0.25);
}

TEST_CASE("probe decisions match a brute-force search over 2-d weights") {
  Rng rng(95);
  // two tight clusters, a few points each
  std::vector<std::vector<double>> x, xh;
  std::vector<int> y, yh;
  for (int i = 0; i < 12; ++i) {
    const int label = i % 2;
    x.push_back({(label ? 1.0 : -1.0) + 0.1 * rng.normal(),
                 (label ? -0.5 : 0.5) + 0.1 * rng.normal()});
    y.push_back(label);
  }
  for (int i = 0; i < 8; ++i) {
    const int label = i % 2;
    xh.push_back({(label ? 1.0 : -1.0) + 0.1 * rng.normal(),
                  (label ? -0.5 : 0.5) + 0.1 * rng.normal()});
    yh.push_back(label);
  }
  ProbeConfig cfg;
  cfg.standardize = false;
  auto res = linear_probe(x, y, xh, yh, cfg);

  // brute force the same regularized objective over a weight/bias grid
  const double c = res.chosen_coefficient;
  double best_obj = 1e18;
  double bw1 = 0, bw2 = 0, bb = 0;
  for (double w1 = -3; w1 <= 3; w1 += 0.05)
    for (double w2 = -3; w2 <= 3; w2 += 0.05)
      for (double b = -1; b <= 1; b += 0.25) {
        double obj = (w1 * w1 + w2 * w2) / (2 * c * static_cast<double>(x.size()));
        for (size_t i = 0; i < x.size(); ++i) {
          const double z = w1 * x[i][0] + w2 * x[i][1] + b;
          obj += (std::max(z, 0.0) - (y[i] ? z : 0.0) + std::log1p(std::exp(-std::abs(z)))) /
                 static_cast<double>(x.size());
        }
        if (obj < best_obj) {
          best_obj = obj;
          bw1 = w1, bw2 = w2, bb = b;
        }
      }
  REQUIRE(res.heldout_scores.size() == xh.size());
  for (size_t i = 0; i < xh.size(); ++i) {
    const double brute_dec = bw1 * xh[i][0] + bw2 * xh[i][1] + bb;
    // the probe's refit decision must agree with the brute-force optimum
    CHECK((res.heldout_scores[i] > 0) == (brute_dec > 0));
  }
  CHECK(res.heldout_auroc == doctest::Approx(1.0));
}

TEST_CASE("probe rejects thin data and single-class folds") {
  std::vector<std::vector<double>> x(6, {0.0, 1.0});
  std::vector<int> y = {0, 1, 0, 1, 0, 1};
  ProbeConfig cfg;
  CHECK_THROWS_AS(linear_probe(x, y, x, y, cfg), std::invalid_argument);

  std::vector<std::vector<double>> x2(12, {0.0, 1.0});
  std::vector<int> y2(12, 1);
  y2[0] = 0;  // one negative cannot reach every fold
  CHECK_THROWS_AS(linear_probe(x2, y2, x2, y2, cfg), std::invalid_argument);
}

TEST_CASE("fine-tune: zero steps lands near chance, fixed seed reproduces") {
  PerceiverConfig pcfg;
  pcfg.depth = 2;
  pcfg.n_latents = 5;
  pcfg.latent_dim = 16;
  pcfg.kqv_dim = 16;
  pcfg.embed_dim = 16;
  pcfg.lt_layers = 2;
  pcfg.lt_heads = 4;
  pcfg.mlp_inner = 16;

  TaskSpec task;
  task.embed_dim = 16;
  task.max_concepts = 8;
  task.nuisance_dims = 0;
  task.negative = {0, 1.2, 4, 0.0};
  task.positive = {1, 1.2, 5, 0.0};
  task.n_train_per_class = 12;
  task.n_heldout_per_class = 16;
  task.tiles_min = 4;
  task.tiles_max = 6;
  task.seed = 31;
  auto data = gen_task(task);

  std::vector<Tensor<float>> train_bags, heldout_bags;
  for (const auto& b : data.train_bags) train_bags.push_back(bag_to_tensor(b));
  for (const auto& b : data.heldout_bags) heldout_bags.push_back(bag_to_tensor(b));

  FineTuneOptions opt;
  opt.steps = 0;
  opt.seed = 17;
  const double a0 = fine_tune(pcfg, nullptr, train_bags, data.train_labels,
                              heldout_bags, data.heldout_labels, opt);
  CHECK(std::abs(a0 - 0.5) < 0.25);

  opt.steps = 40;
  opt.lr = 1e-3;
  const double a1 = fine_tune(pcfg, nullptr, train_bags, data.train_labels,
                              heldout_bags, data.heldout_labels, opt);
  const double a2 = fine_tune(pcfg, nullptr, train_bags, data.train_labels,
                              heldout_bags, data.heldout_labels, opt);
  CHECK(a1 == a2);
  CHECK(a1 > a0 - 0.1);  // training should not collapse

  std::vector<int> single(train_bags.size(), 1);
  CHECK_THROWS_AS(fine_tune(pcfg, nullptr, train_bags, single, heldout_bags,
                            data.heldout_labels, opt),
                  std::invalid_argument);
}

TEST_CASE("subset harness emits the full table and honors fraction 1.0") {
  PerceiverConfig pcfg;
  pcfg.depth = 2;
  pcfg.n_latents = 5;
  pcfg.latent_dim = 16;
  pcfg.kqv_dim = 16;
  pcfg.embed_dim = 16;
  pcfg.lt_layers = 2;
  pcfg.lt_heads = 4;
  pcfg.mlp_inner = 16;

  SlideEncoder<float> pretrained(pcfg);
  Rng rng(41);
  pretrained.init(rng);

  TaskSpec task;
  task.embed_dim = 16;
  task.max_concepts = 8;
  task.nuisance_dims = 0;
  task.negative = {0, 1.5, 4, 0.0};
  task.positive = {1, 1.5, 5, 0.0};
  task.n_train_per_class = 10;
  task.n_heldout_per_class = 10;
  task.tiles_min = 4;
  task.tiles_max = 5;
  task.seed = 33;
  auto data = gen_task(task);

  FineTuneOptions ft;
  ft.steps = 15;
  ft.batch = 4;
  const std::vector<double> fractions = {0.5, 1.0};
  auto result = subset_fraction_harness(pcfg, pretrained, data, fractions, 2, ft, 77);
  CHECK(result.cells.size() == fractions.size() * 2 * 2);
  CHECK(result.summary.size() == fractions.size() * 2);
  CHECK(result.scratch_full_mean > 0);

  CHECK_THROWS_AS(
      subset_fraction_harness(pcfg, pretrained, data, {0.5}, 2, ft, 77),
      std::invalid_argument);
}
