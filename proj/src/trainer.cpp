#include "slidelm/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace slidelm {

nn::Tensor<float> bag_to_tensor(const SpecimenBag& bag) {
  return nn::Tensor<float>::from({bag.tile_count(), static_cast<int64_t>(bag.dim)},
                                 bag.embeddings);
}

std::vector<TrainItem> build_train_items(const std::vector<wsi::ManifestEntry>& manifest,
                                         const EmbeddingStore& store,
                                         const std::vector<SpecimenRecord>& reports,
                                         const Vocabulary& vocab, int max_seq_len) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<wsi::ManifestEntry>> groups;
  for (const auto& e : manifest) {
    if (!groups.count(e.specimen_id)) order.push_back(e.specimen_id);
    groups[e.specimen_id].push_back(e);
  }
  std::map<std::string, const SpecimenRecord*> by_id;
  for (const auto& r : reports) by_id[r.specimen_id] = &r;

  std::vector<TrainItem> items;
  for (const auto& id : order) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw std::runtime_error("build_train_items: no report record for specimen " + id);
    TrainItem item;
    item.specimen_id = id;
    item.concept_id = it->second->concept_id;
    item.tiles = bag_to_tensor(assemble_specimen(groups[id], store));
    for (const auto& text : it->second->rewrites) {
      auto ids = tokenize(vocab, text);
      const size_t cap = static_cast<size_t>(max_seq_len) - 2;  // room for BOS and CLS
      if (ids.size() > cap) ids.resize(cap);
      item.rewrites.push_back(std::move(ids));
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<int64_t> sample_indices(int64_t n, int64_t k, Rng rng) {
  if (k > n) throw std::invalid_argument("sample_indices: k exceeds population");
  std::vector<int64_t> pool(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    const int64_t j = i + rng.uniform_int(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    out.push_back(pool[static_cast<size_t>(i)]);
  }
  return out;
}

MicroBatchLoss micro_batch_loss(nn::Tape<float>* tape, Model<float>& model,
                                const std::vector<TrainItem>& items,
                                const std::vector<int64_t>& indices,
                                const std::vector<int>& rewrite_choice,
                                const LossWeights& weights, nn::Reduction reduction) {
  if (indices.empty()) throw std::invalid_argument("micro_batch_loss: empty batch");
  if (rewrite_choice.size() != indices.size())
    throw std::invalid_argument("micro_batch_loss: rewrite choice size mismatch");

  std::vector<nn::Tensor<float>> vprojs, tprojs;
  nn::Tensor<float> caption_sum;
  for (size_t j = 0; j < indices.size(); ++j) {
    const TrainItem& item = items[static_cast<size_t>(indices[j])];
    const auto& tokens = item.rewrites[static_cast<size_t>(rewrite_choice[j])];

    auto enc = model.encoder().encode(tape, item.tiles);
    vprojs.push_back(model.project_slide(tape, enc.slide_embedding));

    std::vector<int64_t> input = {Vocabulary::kBos};
    input.insert(input.end(), tokens.begin(), tokens.end());
    std::vector<int64_t> targets = tokens;
    targets.push_back(Vocabulary::kEos);

    auto uni = model.decoder().unimodal_forward(tape, input);
    tprojs.push_back(model.project_text(tape, uni.cls));
    auto logits = model.decoder().multimodal_forward(tape, uni.hidden, enc.context_latents);
    auto cap = caption_loss(tape, logits, targets, reduction);
    caption_sum = caption_sum.defined() ? nn::add(tape, caption_sum, cap) : cap;
  }
  const float inv_batch = 1.0f / static_cast<float>(indices.size());
  auto l_rep = nn::scale(tape, caption_sum, inv_batch);
  auto v = nn::concat_rows(tape, vprojs);
  auto t = nn::concat_rows(tape, tprojs);
  auto l_con = contrastive_loss(tape, v, t, model.log_tau());

  MicroBatchLoss out;
  out.total = total_loss(tape, l_con, l_rep, weights);
  out.l_con = static_cast<double>(l_con.item());
  out.l_rep = static_cast<double>(l_rep.item());
  return out;
}

Trainer::Trainer(Model<float>& model, const RunConfig& cfg, uint64_t store_digest)
    : model_(model), cfg_(cfg), store_digest_(store_digest) {
  model_.apply_freeze_mask(cfg_.freeze_mode);
  trainable_ = model_.trainable_parameters();
  opt_ = nn::AdamW<float>(cfg_.beta1, cfg_.beta2, 1e-8, cfg_.weight_decay);
  opt_.register_params(trainable_);
  sched_ = nn::LrSchedule{cfg_.base_lr, cfg_.warmup_steps, cfg_.total_steps};
}

StepMetrics Trainer::step() {
  if (items_.empty()) throw std::runtime_error("trainer: no training items");
  const int64_t s = opt_.step_count();  // completed optimizer steps
  const double lr = nn::cosine_lr(s + 1, sched_);
  const LossWeights weights{cfg_.lambda_con, cfg_.lambda_rep};
  const nn::Reduction reduction = cfg_.caption_reduction == "sum"
                                      ? nn::Reduction::Sum
                                      : nn::Reduction::Mean;
  const int64_t batch =
      std::min<int64_t>(cfg_.batch_size, static_cast<int64_t>(items_.size()));

  StepMetrics m;
  for (int micro = 0; micro < cfg_.grad_accum; ++micro) {
    auto indices = sample_indices(static_cast<int64_t>(items_.size()), batch,
                                  substream(cfg_.seed, "batch", static_cast<uint64_t>(s),
                                            static_cast<uint64_t>(micro)));
    Rng rw = substream(cfg_.seed, "rewrite", static_cast<uint64_t>(s),
                       static_cast<uint64_t>(micro));
    std::vector<int> rewrite_choice;
    for (size_t j = 0; j < indices.size(); ++j)
      rewrite_choice.push_back(static_cast<int>(rw.uniform_int(
          static_cast<int64_t>(items_[static_cast<size_t>(indices[j])].rewrites.size()))));

    nn::Tape<float> tape;
    auto loss = micro_batch_loss(&tape, model_, items_, indices, rewrite_choice,
                                 weights, reduction);
    const double l_tot = static_cast<double>(loss.total.item());
    if (!std::isfinite(l_tot)) {
      std::ostringstream os;
      os << "trainer: non-finite loss at step " << s + 1 << " (l_con=" << loss.l_con
         << ", l_rep=" << loss.l_rep << "); aborting";
      throw std::runtime_error(os.str());
    }
    m.l_con += loss.l_con / cfg_.grad_accum;
    m.l_rep += loss.l_rep / cfg_.grad_accum;
    m.l_tot += l_tot / cfg_.grad_accum;

    // averaging across micro-batches happens at the loss level
    auto scaled = nn::scale(&tape, loss.total, 1.0f / static_cast<float>(cfg_.grad_accum));
    tape.backward(scaled);
  }

  m.grad_norm = nn::grad_global_norm(trainable_);
  if (!std::isfinite(m.grad_norm))
    throw std::runtime_error("trainer: non-finite gradient norm; aborting");
  nn::clip_grad_norm(trainable_, cfg_.clip_norm);
  opt_.step(trainable_, lr);
  for (auto& p : trainable_) p.zero_grad();

  m.step = opt_.step_count();
  m.lr = lr;
  return m;
}

void Trainer::save(const std::string& path) const {
  CheckpointMeta meta;
  meta.config_digest = cfg_.digest();
  meta.model_digest = cfg_.model_digest();
  meta.store_digest = store_digest_;
  meta.step = static_cast<uint64_t>(opt_.step_count());
  meta.config_text = cfg_.canonical_text();
  save_checkpoint(path, model_, &opt_, meta);
}

void Trainer::resume(const std::string& path) {
  auto meta = load_checkpoint(path, model_, &opt_);
  if (meta.config_digest != cfg_.digest())
    throw std::runtime_error("trainer: config-digest mismatch on resume");
}

MetricsWriter::MetricsWriter(const std::string& path, uint64_t config_digest,
                             bool append)
    : out_(path, append ? std::ios::app : std::ios::out) {
  if (!out_) throw std::runtime_error("metrics: cannot open " + path);
  if (!append) {
    nlohmann::json j;
    j["config_digest"] = config_digest;
    out_ << j.dump() << "\n";
  }
}

void MetricsWriter::write(const StepMetrics& m) {
  nlohmann::json j;
  j["step"] = m.step;
  j["lr"] = m.lr;
  j["l_con"] = m.l_con;
  j["l_rep"] = m.l_rep;
  j["l_tot"] = m.l_tot;
  j["grad_norm"] = m.grad_norm;
  out_ << j.dump() << "\n";
}

}  // namespace slidelm
