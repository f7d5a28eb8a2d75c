#pragma once

// Optimization loop: micro-batch forward/backward with gradient
// accumulation, global-norm clipping, AdamW under the cosine schedulel,
// line-delimited metrics and bit-exact resumable checkpoints. Batch
// composition and rewrite choices are pure functions of (seed, step), so a
// resumed run replays exactly the schedule of an uninterrupted one.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "slidelm/corpus.hpp"
#include "slidelm/losses.hpp"
#include "slidelm/model.hpp"
#include "slidelm/tokenizer.hpp"

namespace slidelm {

nn::Tensor<float> bag_to_tensor(const SpecimenBag& bag);

struct TrainItem {
  std::string specimen_id;
  int concept_id = 0;
  nn::Tensor<float> tiles;                        // [n x embed_dim]
  std::vector<std::vector<int64_t>> rewrites;     // tokenized, unframed
};

// Groups the manifest by specimen (first-seen order), assembles bags from the
// store and tokenizes every rewrite.
std::vector<TrainItem> build_train_items(const std::vector<wsi::ManifestEntry>& manifest,
                                         const EmbeddingStore& store,
                                         const std::vector<SpecimenRecord>& reports,
                                         const Vocabulary& vocab, int max_seq_len);

struct StepMetrics {
  int64_t step = 0;
  double lr = 0;
  double l_con = 0;
  double l_rep = 0;
  double l_tot = 0;
  double grad_norm = 0;  // pre-clip global norm
};

struct MicroBatchLoss {
  nn::Tensor<float> total;
  double l_con = 0;
  double l_rep = 0;
};

// Forward pass of one micro-batch; shared by the trainer and by the
// accumulation-equivalence tests.
MicroBatchLoss micro_batch_loss(nn::Tape<float>* tape, Model<float>& model,
                                const std::vector<TrainItem>& items,
                                const std::vector<int64_t>& indices,
                                const std::vector<int>& rewrite_choice,
                                const LossWeights& weights, nn::Reduction reduction);

// Deterministic distinct-index sample (partial Fisher-Yates).
std::vector<int64_t> sample_indices(int64_t n, int64_t k, Rng rng);

class Trainer {
 public:
  Trainer(Model<float>& model, const RunConfig& cfg, uint64_t store_digest);

  void set_items(std::vector<TrainItem> items) { items_ = std::move(items); }
  const std::vector<TrainItem>& items() const { return items_; }

  StepMetrics step();
  int64_t steps_done() const { return opt_.step_count(); }

  void save(const std::string& path) const;
  // Throws on a config-digest mismatch.
  void resume(const std::string& path);

  nn::AdamW<float>& optimizer() { return opt_; }
  const RunConfig& config() const { return cfg_; }

 private:
  Model<float>& model_;
  RunConfig cfg_;
  uint64_t store_digest_;
  std::vector<TrainItem> items_;
  std::vector<nn::Tensor<float>> trainable_;
  nn::AdamW<float> opt_;
  nn::LrSchedule sched_;
};

class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, uint64_t config_digest, bool append = false);
  void write(const StepMetrics& m);

 private:
  std::ofstream out_;
};

}  // namespace slidelm
