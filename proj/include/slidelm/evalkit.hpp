#pragma once

// Evaluation modes over a frozen model: greedy report generation, zero-shot
// prompting with per-class probability marginalization, linear probing with
// 5-fold cross-validated l2 search, fine-tuning with a linear task head, the
// subset-fraction label-efficiency harness, and rank-based AUROC.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "slidelm/corpus.hpp"
#include "slidelm/model.hpp"
#include "slidelm/tokenizer.hpp"

namespace slidelm {

struct GeneratedReport {
  std::string text;
  std::vector<int64_t> ids;  // language tokens, no specials
  bool truncated = false;    // hit max_len before EOS
};

// Greedy decode from BOS; argmax ties break toward the lowest token id; stops
// at EOS or max_len.
GeneratedReport generate_report(const Model<float>& model, const Vocabulary& vocab,
                                const nn::Tensor<float>& tiles, int max_len);

// tokenize -> uni-modal forward -> CLS -> text projection -> unit norm.
nn::Tensor<float> embed_prompt(const Model<float>& model, const Vocabulary& vocab,
                               const std::string& text);

// Ordered class -> prompt list mapping. File format: one [class] section per
// class, one prompt per line.
struct PromptSet {
  std::vector<std::pair<std::string, std::vector<std::string>>> classes;
};

PromptSet load_prompts(const std::string& path);
void save_prompts(const std::string& path, const PromptSet& prompts);
void validate_prompts(const PromptSet& prompts);

struct ZeroShotResult {
  std::vector<double> probabilities;  // per class, sums to 1
  int predicted_class = -1;
};

// One softmax over the union of prompts at the learned temperature, then
// per-class summation; argmax ties break toward the lexicographically
// smaller class label.
ZeroShotResult zero_shot_classify(const Model<float>& model, const Vocabulary& vocab,
                                  const nn::Tensor<float>& tiles,
                                  const PromptSet& prompts);

// Mann-Whitney rank AUROC; tied scores receive average ranks.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ProbeConfig {
  int folds = 5;
  std::vector<double> grid = {1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
  bool standardize = true;
  uint64_t seed = 7;
  int max_iter = 10000;
  double tol = 1e-6;  // gradient-norm stopping criterion
};

struct ProbeResult {
  double heldout_auroc = 0;
  double chosen_coefficient = 0;
  std::vector<double> cv_mean_auroc;   // one per grid entry
  std::vector<double> heldout_scores;  // refit-model logits per held-out row
};

// Stratified K-fold CV over the coefficient grid (larger coefficient =
// weaker regularization; ties prefer the stronger regularization), refit on
// the full training set, score the held-out split.
ProbeResult linear_probe(const std::vector<std::vector<double>>& x,
                         const std::vector<int>& y,
                         const std::vector<std::vector<double>>& x_heldout,
                         const std::vector<int>& y_heldout, const ProbeConfig& cfg);

struct FineTuneOptions {
  int steps = 300;
  int batch = 4;
  double lr = 3e-4;
  double weight_decay = 1e-6;
  double clip_norm = 3.0;
  uint64_t seed = 7;
};

// Trains (a copy of) the slide encoder plus a linear head with BCE and
// reports held-out AUROC. init_from == nullptr means random initialization
// (the supervised-from-scratch baseline).
double fine_tune(const PerceiverConfig& cfg, const SlideEncoder<float>* init_from,
                 const std::vector<nn::Tensor<float>>& train_bags,
                 const std::vector<int>& train_labels,
                 const std::vector<nn::Tensor<float>>& heldout_bags,
                 const std::vector<int>& heldout_labels, const FineTuneOptions& opt);

struct SubsetCell {
  double fraction = 0;
  int run = 0;
  bool pretrained = false;
  double auroc_value = 0;
};

struct SubsetSummaryRow {
  double fraction = 0;
  bool pretrained = false;
  double mean = 0;
  double stddev = 0;  // sample standard deviation over runs
};

struct HarnessResult {
  std::vector<SubsetCell> cells;
  std::vector<SubsetSummaryRow> summary;
  double scratch_full_mean = 0;
  // smallest fraction where the pretrained mean reaches 99.5% of the
  // scratch-on-full-data mean; -1 when no fraction qualifies
  double minimal_sufficient_fraction = -1;
};

// A fresh stratified subset is drawn for every (fraction, run) cell; both
// init modes train on the same subset. fractions must include 1.0 (the
// scratch-full-data reference).
HarnessResult subset_fraction_harness(const PerceiverConfig& cfg,
                                      const SlideEncoder<float>& pretrained,
                                      const TaskData& task,
                                      const std::vector<double>& fractions, int runs,
                                      const FineTuneOptions& ft, uint64_t master_seed);

// Slide embeddings of a frozen encoder, as double rows (probe/export input).
std::vector<std::vector<double>> slide_embeddings(const SlideEncoder<float>& encoder,
                                                  const std::vector<nn::Tensor<float>>& bags);

}  // namespace slidelm
