// slidelm command-line surface. Every subcommand maps one-to-one onto a
// library operation; failures exit nonzero with a machine-readable JSON error
// record on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "slidelm/config.hpp"
#include "slidelm/corpus.hpp"
#include "slidelm/evalkit.hpp"
#include "slidelm/selftest.hpp"
#include "slidelm/tiling.hpp"
#include "slidelm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace slidelm;

namespace {

uint64_t env_seed_override(uint64_t fallback) {
  if (const char* env = std::getenv("SLIDELM_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return v;
    throw std::runtime_error("SLIDELM_SEED is not an integer");
  }
  return fallback;
}

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig::preset_desk() : RunConfig::load(path);
  cfg.seed = env_seed_override(cfg.seed);
  cfg.validate();
  return cfg;
}

struct CorpusPaths {
  std::string store, manifest, heldout_manifest, reports, heldout_reports, vocab;

  static CorpusPaths from_dir(const std::string& dir) {
    const fs::path d(dir);
    return {(d / "store.bin").string(),
            (d / "manifest.jsonl").string(),
            (d / "heldout_manifest.jsonl").string(),
            (d / "reports.jsonl").string(),
            (d / "heldout_reports.jsonl").string(),
            (d / "vocab.txt").string()};
  }
};

struct LoadedModel {
  RunConfig cfg;
  Model<float> model;
  CheckpointMeta meta;
};

LoadedModel load_model(const std::string& ckpt, int64_t vocab_size) {
  auto meta = peek_checkpoint(ckpt);
  RunConfig cfg = RunConfig::from_text(meta.config_text);
  LoadedModel lm{cfg, Model<float>(model_config_from(cfg, vocab_size)), {}};
  lm.model.init(cfg.seed);  // allocates the registry; values are overwritten
  lm.meta = load_checkpoint(ckpt, lm.model, nullptr);
  return lm;
}

// Specimen bags from a manifest + store, first-seen specimen order.
std::vector<std::pair<std::string, nn::Tensor<float>>> load_bags(
    const std::string& manifest_path, const EmbeddingStore& store) {
  auto manifest = wsi::read_manifest(manifest_path);
  std::vector<std::string> order;
  std::map<std::string, std::vector<wsi::ManifestEntry>> groups;
  for (const auto& e : manifest) {
    if (!groups.count(e.specimen_id)) order.push_back(e.specimen_id);
    groups[e.specimen_id].push_back(e);
  }
  std::vector<std::pair<std::string, nn::Tensor<float>>> bags;
  for (const auto& id : order)
    bags.emplace_back(id, bag_to_tensor(assemble_specimen(groups[id], store)));
  return bags;
}

void write_labels(const std::string& path,
                  const std::vector<std::pair<std::string, int>>& labels) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  for (const auto& [id, label] : labels) {
    json j;
    j["specimen_id"] = id;
    j["label"] = label;
    out << j.dump() << "\n";
  }
}

std::map<std::string, int> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = json::parse(line);
    out[j.at("specimen_id").get<std::string>()] = j.at("label").get<int>();
  }
  return out;
}

struct TaskFiles {
  std::vector<std::string> train_ids, heldout_ids;
  std::vector<nn::Tensor<float>> train_bags, heldout_bags;
  std::vector<int> train_labels, heldout_labels;
  uint32_t dim = 0;
};

TaskFiles load_task_dir(const std::string& dir) {
  const fs::path d(dir);
  auto store = read_store((d / "store.bin").string());
  auto train_labels = read_labels((d / "labels.jsonl").string());
  auto heldout_labels = read_labels((d / "heldout_labels.jsonl").string());
  TaskFiles out;
  out.dim = store.dim;
  for (auto& [id, bag] : load_bags((d / "manifest.jsonl").string(), store)) {
    out.train_ids.push_back(id);
    out.train_bags.push_back(bag);
    out.train_labels.push_back(train_labels.at(id));
  }
  for (auto& [id, bag] : load_bags((d / "heldout_manifest.jsonl").string(), store)) {
    out.heldout_ids.push_back(id);
    out.heldout_bags.push_back(bag);
    out.heldout_labels.push_back(heldout_labels.at(id));
  }
  return out;
}

void check_store_compat(const EmbeddingStore& store, const RunConfig& cfg) {
  if (static_cast<int>(store.dim) != cfg.embed_dim)
    throw std::runtime_error("store embedding dim " + std::to_string(store.dim) +
                             " does not match configured dim " +
                             std::to_string(cfg.embed_dim));
}

int cmd_tile(const std::string& input, double mpp, const std::string& out_path,
             std::string slide_id, double min_tissue) {
  auto img = wsi::read_ppm(input);
  img.microns_per_pixel = mpp;
  if (slide_id.empty()) slide_id = fs::path(input).stem().string();
  auto mask = wsi::foreground_mask(wsi::downsample_16x(img));
  auto tiles = wsi::tile_and_filter(img, mask, slide_id, min_tissue);
  std::vector<wsi::ManifestEntry> entries;
  for (const auto& t : tiles)
    entries.push_back({slide_id, t.slide_id, t.grid_x, t.grid_y, t.tissue_fraction});
  wsi::write_manifest(out_path, entries);
  std::cout << json{{"tiles_kept", tiles.size()}, {"slide_id", slide_id}}.dump()
            << "\n";
  return 0;
}

int cmd_embed(const std::string& manifest_path, int dim, double signal, uint64_t seed,
              const std::string& out_path, int concept_id, int max_concepts) {
  auto manifest = wsi::read_manifest(manifest_path);
  if (manifest.empty()) throw std::runtime_error("embed: empty manifest");
  SyntheticEncoder enc(static_cast<uint32_t>(dim), seed, signal, max_concepts);
  EmbeddingStore store;
  store.dim = static_cast<uint32_t>(dim);
  store.config_digest = fnv1a64_u64(seed, fnv1a64("embed-cli"));
  for (const auto& e : manifest) {
    auto v = enc.encode(e.slide_id, static_cast<uint32_t>(e.grid_x),
                        static_cast<uint32_t>(e.grid_y), concept_id);
    store.vectors.insert(store.vectors.end(), v.begin(), v.end());
    store.provenance.push_back({e.slide_id, static_cast<uint32_t>(e.grid_x),
                                static_cast<uint32_t>(e.grid_y)});
  }
  write_store(out_path, store);
  std::cout << json{{"vectors", store.count()}, {"dim", dim}}.dump() << "\n";
  return 0;
}

int cmd_gen_corpus(const RunConfig& cfg, const std::string& out_dir) {
  auto corpus = gen_corpus(CorpusSpec::from(cfg));
  write_corpus(out_dir, corpus);

  // one prompt per concept (its diagnostic keyword), for zero-shot runs
  PromptSet prompts;
  for (int k = 0; k < cfg.concepts; ++k)
    prompts.classes.emplace_back(concept_keyword(k),
                                 std::vector<std::string>{concept_keyword(k)});
  save_prompts((fs::path(out_dir) / "prompts.txt").string(), prompts);

  std::cout << json{{"train_specimens", corpus.train_reports.size()},
                    {"heldout_specimens", corpus.heldout_reports.size()},
                    {"store_vectors", corpus.store.count()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_gen_task(const RunConfig& cfg, const std::string& out_dir, int neg_morph,
                 int pos_morph, int neg_marker, int pos_marker, double morph_strength,
                 double marker_strength, int train_per_class, int heldout_per_class) {
  TaskSpec task;
  task.negative = {neg_morph, morph_strength, neg_marker, marker_strength};
  task.positive = {pos_morph, morph_strength, pos_marker, marker_strength};
  task.n_train_per_class = train_per_class;
  task.n_heldout_per_class = heldout_per_class;
  task.tiles_min = cfg.tiles_min;
  task.tiles_max = cfg.tiles_max;
  task.embed_dim = cfg.embed_dim;
  task.max_concepts = cfg.max_concepts;
  task.seed = cfg.seed;
  auto data = gen_task(task);

  fs::create_directories(out_dir);
  const fs::path d(out_dir);
  EmbeddingStore store;
  store.dim = static_cast<uint32_t>(cfg.embed_dim);
  store.config_digest = cfg.digest();
  std::vector<wsi::ManifestEntry> train_manifest, heldout_manifest;
  std::vector<std::pair<std::string, int>> train_labels, heldout_labels;

  auto emit = [&](const std::vector<SpecimenBag>& bags, const std::vector<int>& labels,
                  std::vector<wsi::ManifestEntry>& manifest,
                  std::vector<std::pair<std::string, int>>& out_labels) {
    for (size_t i = 0; i < bags.size(); ++i) {
      const auto& bag = bags[i];
      for (int64_t t = 0; t < bag.tile_count(); ++t) {
        store.vectors.insert(store.vectors.end(),
                             bag.embeddings.begin() + t * bag.dim,
                             bag.embeddings.begin() + (t + 1) * bag.dim);
        store.provenance.push_back(bag.tiles[static_cast<size_t>(t)]);
        manifest.push_back({bag.specimen_id, bag.tiles[static_cast<size_t>(t)].slide_id,
                            static_cast<int>(bag.tiles[static_cast<size_t>(t)].grid_x),
                            static_cast<int>(bag.tiles[static_cast<size_t>(t)].grid_y),
                            1.0});
      }
      out_labels.emplace_back(bag.specimen_id, labels[i]);
    }
  };
  emit(data.train_bags, data.train_labels, train_manifest, train_labels);
  emit(data.heldout_bags, data.heldout_labels, heldout_manifest, heldout_labels);

  write_store((d / "store.bin").string(), store);
  wsi::write_manifest((d / "manifest.jsonl").string(), train_manifest);
  wsi::write_manifest((d / "heldout_manifest.jsonl").string(), heldout_manifest);
  write_labels((d / "labels.jsonl").string(), train_labels);
  write_labels((d / "heldout_labels.jsonl").string(), heldout_labels);
  std::cout << json{{"train_specimens", data.train_bags.size()},
                    {"heldout_specimens", data.heldout_bags.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& corpus_dir,
              const std::string& ckpt_out, const std::string& metrics_path,
              const std::string& resume_path, int steps_override) {
  const auto paths = CorpusPaths::from_dir(corpus_dir);
  auto store = read_store(paths.store);
  check_store_compat(store, cfg);
  if (store.config_digest != cfg.digest())
    throw std::runtime_error(
        "train: corpus store was produced by a different config (digest mismatch)");
  auto vocab = Vocabulary::load(paths.vocab);
  auto reports = read_reports(paths.reports);
  auto manifest = wsi::read_manifest(paths.manifest);

  Model<float> model(model_config_from(cfg, vocab.size()));
  model.init(cfg.seed);
  Trainer trainer(model, cfg, store.config_digest);
  trainer.set_items(build_train_items(manifest, store, reports, vocab, cfg.max_seq_len));
  const bool resuming = !resume_path.empty();
  if (resuming) trainer.resume(resume_path);

  const int total = steps_override > 0 ? steps_override : cfg.effective_train_steps();
  MetricsWriter metrics(metrics_path, cfg.digest(), /*append=*/resuming);
  StepMetrics last;
  while (trainer.steps_done() < total) {
    last = trainer.step();
    metrics.write(last);
    if (last.step % 50 == 0 || last.step == total)
      std::cerr << "step " << last.step << "/" << total << " l_tot=" << last.l_tot
                << " l_con=" << last.l_con << " l_rep=" << last.l_rep << "\n";
  }
  trainer.save(ckpt_out);
  std::cout << json{{"steps", trainer.steps_done()},
                    {"final_l_tot", last.l_tot},
                    {"checkpoint", ckpt_out}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& corpus_dir,
                 const std::string& split, int max_len, int top_tiles,
                 const std::string& out_path) {
  const auto paths = CorpusPaths::from_dir(corpus_dir);
  auto vocab = Vocabulary::load(paths.vocab);
  auto lm = load_model(ckpt, vocab.size());
  auto store = read_store(paths.store);
  check_store_compat(store, lm.cfg);

  const bool heldout = split == "heldout";
  auto bags = load_bags(heldout ? paths.heldout_manifest : paths.manifest, store);
  auto reports = read_reports(heldout ? paths.heldout_reports : paths.reports);
  std::map<std::string, int> concept_of;
  for (const auto& r : reports) concept_of[r.specimen_id] = r.concept_id;

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";
  int64_t hits = 0, total = 0;
  for (auto& [id, tiles] : bags) {
    auto rep = generate_report(lm.model, vocab, tiles, max_len);
    json j;
    j["specimen_id"] = id;
    j["text"] = rep.text;
    j["truncated"] = rep.truncated;
    if (concept_of.count(id)) {
      const auto& kw = concept_keyword(concept_of[id]);
      const bool hit = rep.text.find(kw) != std::string::npos;
      j["keyword"] = kw;
      j["keyword_hit"] = hit;
      hits += hit;
      ++total;
    }
    if (top_tiles > 0) {
      auto enc = lm.model.encoder().encode(nullptr, tiles);
      auto top = top_attended_tiles(enc, std::min<int64_t>(top_tiles, enc.n_tiles));
      json arr = json::array();
      for (auto& [idx, w] : top) arr.push_back({{"tile", idx}, {"weight", w}});
      j["top_tiles"] = arr;
    }
    out << j.dump() << "\n";
  }
  json summary{{"specimens", bags.size()}};
  if (total > 0)
    summary["keyword_accuracy"] = static_cast<double>(hits) / static_cast<double>(total);
  out << summary.dump() << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_zeroshot(const std::string& ckpt, const std::string& prompts_path,
                 const std::string& store_path, const std::string& manifest_path,
                 const std::string& vocab_path, const std::string& reports_path,
                 const std::string& out_path) {
  auto vocab = Vocabulary::load(vocab_path);
  auto lm = load_model(ckpt, vocab.size());
  auto store = read_store(store_path);
  check_store_compat(store, lm.cfg);
  auto prompts = load_prompts(prompts_path);
  auto bags = load_bags(manifest_path, store);

  std::map<std::string, int> concept_of;
  if (!reports_path.empty())
    for (const auto& r : read_reports(reports_path)) concept_of[r.specimen_id] = r.concept_id;

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";

  std::vector<std::vector<double>> class_scores(prompts.classes.size());
  std::vector<std::vector<int>> class_labels(prompts.classes.size());
  for (auto& [id, tiles] : bags) {
    auto r = zero_shot_classify(lm.model, vocab, tiles, prompts);
    json probs;
    for (size_t c = 0; c < prompts.classes.size(); ++c)
      probs[prompts.classes[c].first] = r.probabilities[c];
    json j{{"specimen_id", id},
           {"probabilities", probs},
           {"predicted", prompts.classes[static_cast<size_t>(r.predicted_class)].first}};
    if (concept_of.count(id)) {
      const auto& kw = concept_keyword(concept_of[id]);
      j["label"] = kw;
      for (size_t c = 0; c < prompts.classes.size(); ++c) {
        class_scores[c].push_back(r.probabilities[c]);
        class_labels[c].push_back(prompts.classes[c].first == kw ? 1 : 0);
      }
    }
    out << j.dump() << "\n";
  }

  json summary{{"specimens", bags.size()}};
  if (!class_scores.empty() && !class_scores[0].empty()) {
    double macro = 0;
    int counted = 0;
    for (size_t c = 0; c < class_scores.size(); ++c) {
      bool has_pos = false, has_neg = false;
      for (int l : class_labels[c]) (l ? has_pos : has_neg) = true;
      if (has_pos && has_neg) {
        macro += auroc(class_scores[c], class_labels[c]);
        ++counted;
      }
    }
    if (counted > 0) summary["macro_auroc_ovr"] = macro / counted;
  }
  out << summary.dump() << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_linprobe(const std::string& ckpt, const std::string& task_dir, uint64_t seed,
                 bool random_encoder, const std::string& out_path) {
  auto task = load_task_dir(task_dir);
  auto lm = load_model(ckpt, checkpoint_vocab_size(ckpt));

  SlideEncoder<float>* encoder = &lm.model.encoder();
  SlideEncoder<float> random_enc(lm.model.config().perceiver);
  if (random_encoder) {
    Rng rng = substream(seed, "probe-random-encoder");
    random_enc.init(rng);
    encoder = &random_enc;
  }
  auto x = slide_embeddings(*encoder, task.train_bags);
  auto xh = slide_embeddings(*encoder, task.heldout_bags);

  ProbeConfig pcfg;
  pcfg.seed = seed;
  auto res = linear_probe(x, task.train_labels, xh, task.heldout_labels, pcfg);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";
  for (size_t i = 0; i < task.heldout_ids.size(); ++i)
    out << json{{"specimen_id", task.heldout_ids[i]},
                {"score", res.heldout_scores[i]},
                {"label", task.heldout_labels[i]}}
               .dump()
        << "\n";
  json summary{{"heldout_auroc", res.heldout_auroc},
               {"chosen_coefficient", res.chosen_coefficient},
               {"random_encoder", random_encoder}};
  out << summary.dump() << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_finetune(const std::string& ckpt, const std::string& task_dir,
                 const std::string& init, int steps, double lr, uint64_t seed,
                 const std::string& out_path) {
  auto task = load_task_dir(task_dir);
  auto lm = load_model(ckpt, checkpoint_vocab_size(ckpt));
  FineTuneOptions opt;
  opt.steps = steps;
  opt.lr = lr;
  opt.seed = seed;
  const bool pretrained = init == "pretrained";
  if (!pretrained && init != "scratch")
    throw std::runtime_error("finetune: --init must be pretrained|scratch");
  const double auc =
      fine_tune(lm.model.config().perceiver, pretrained ? &lm.model.encoder() : nullptr,
                task.train_bags, task.train_labels, task.heldout_bags,
                task.heldout_labels, opt);
  json summary{{"heldout_auroc", auc}, {"init", init}, {"steps", steps}};
  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";
  out << summary.dump() << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_subset_harness(const std::string& ckpt, const std::string& task_dir,
                       const std::string& fractions_csv, int runs, int steps,
                       double lr, uint64_t seed, const std::string& out_path) {
  auto files = load_task_dir(task_dir);
  auto lm = load_model(ckpt, checkpoint_vocab_size(ckpt));

  TaskData task;
  for (size_t i = 0; i < files.train_bags.size(); ++i) {
    SpecimenBag bag;
    bag.specimen_id = files.train_ids[i];
    bag.dim = files.dim;
    const auto& t = files.train_bags[i];
    bag.embeddings.assign(t.data(), t.data() + t.numel());
    task.train_bags.push_back(std::move(bag));
  }
  task.train_labels = files.train_labels;
  for (size_t i = 0; i < files.heldout_bags.size(); ++i) {
    SpecimenBag bag;
    bag.specimen_id = files.heldout_ids[i];
    bag.dim = files.dim;
    const auto& t = files.heldout_bags[i];
    bag.embeddings.assign(t.data(), t.data() + t.numel());
    task.heldout_bags.push_back(std::move(bag));
  }
  task.heldout_labels = files.heldout_labels;

  std::vector<double> fractions;
  std::stringstream ss(fractions_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) fractions.push_back(std::stod(tok));

  FineTuneOptions ft;
  ft.steps = steps;
  ft.lr = lr;
  auto result = subset_fraction_harness(lm.model.config().perceiver,
                                        lm.model.encoder(), task, fractions, runs, ft,
                                        seed);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";
  for (const auto& c : result.cells)
    out << json{{"fraction", c.fraction},
                {"run", c.run},
                {"init", c.pretrained ? "pretrained" : "scratch"},
                {"auroc", c.auroc_value}}
               .dump()
        << "\n";
  for (const auto& s : result.summary)
    out << json{{"fraction", s.fraction},
                {"init", s.pretrained ? "pretrained" : "scratch"},
                {"mean", s.mean},
                {"std", s.stddev}}
               .dump()
        << "\n";
  json summary{{"scratch_full_mean", result.scratch_full_mean},
               {"minimal_sufficient_fraction", result.minimal_sufficient_fraction}};
  out << summary.dump() << "\n";
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_export_embeddings(const std::string& ckpt, const std::string& corpus_dir,
                          const std::string& split, const std::string& out_path) {
  const auto paths = CorpusPaths::from_dir(corpus_dir);
  auto vocab = Vocabulary::load(paths.vocab);
  auto lm = load_model(ckpt, vocab.size());
  auto store = read_store(paths.store);
  check_store_compat(store, lm.cfg);

  std::ofstream out(out_path);
  if (!out) throw std::runtime_error("cannot open " + out_path);
  out << json{{"config_digest", lm.cfg.digest()}}.dump() << "\n";

  auto dump_split = [&](const std::string& manifest_path,
                        const std::string& reports_path, const std::string& name) {
    auto bags = load_bags(manifest_path, store);
    std::map<std::string, int> concept_of;
    for (const auto& r : read_reports(reports_path))
      concept_of[r.specimen_id] = r.concept_id;
    for (auto& [id, tiles] : bags) {
      auto enc = lm.model.encoder().encode(nullptr, tiles);
      std::vector<double> emb(enc.slide_embedding.data(),
                              enc.slide_embedding.data() + enc.slide_embedding.numel());
      json j{{"specimen_id", id}, {"split", name}, {"embedding", emb}};
      if (concept_of.count(id)) j["concept"] = concept_of[id];
      out << j.dump() << "\n";
    }
    return bags.size();
  };

  size_t n = 0;
  if (split == "train" || split == "both")
    n += dump_split(paths.manifest, paths.reports, "train");
  if (split == "heldout" || split == "both")
    n += dump_split(paths.heldout_manifest, paths.heldout_reports, "heldout");
  std::cout << json{{"specimens", n}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slide-level vision-language model: synthetic corpus, training and "
               "evaluation toolkit"};
  app.require_subcommand(1);

  // tile
  auto* tile = app.add_subcommand("tile", "tile a raster into foreground 224x224 tiles");
  std::string tile_input, tile_out, tile_slide_id;
  double tile_mpp = 0.5, tile_min_tissue = 0.25;
  tile->add_option("--input", tile_input, "input PPM raster")->required();
  tile->add_option("--mpp", tile_mpp, "microns per pixel");
  tile->add_option("--out", tile_out, "output manifest path")->required();
  tile->add_option("--slide-id", tile_slide_id, "slide id (default: file stem)");
  tile->add_option("--min-tissue", tile_min_tissue, "tissue fraction threshold");

  // embed
  auto* embed = app.add_subcommand("embed", "synthetic tile embeddings for a manifest");
  std::string embed_manifest, embed_out;
  int embed_dim = 64, embed_concept = -1, embed_max_concepts = 16;
  double embed_signal = 4.0;
  uint64_t embed_seed = 7;
  embed->add_option("--manifest", embed_manifest)->required();
  embed->add_option("--dim", embed_dim);
  embed->add_option("--signal", embed_signal);
  embed->add_option("--seed", embed_seed);
  embed->add_option("--out", embed_out)->required();
  embed->add_option("--concept", embed_concept,
                    "concept id for every tile (-1 = noise only)");
  embed->add_option("--max-concepts", embed_max_concepts);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus or task");
  std::string gen_config, gen_out;
  bool gen_task_mode = false;
  int gt_neg_morph = 0, gt_pos_morph = 1, gt_neg_marker = 4, gt_pos_marker = 5;
  double gt_morph_strength = 1.0, gt_marker_strength = 1.0;
  int gt_train_per_class = 48, gt_heldout_per_class = 32;
  gen->add_option("--config", gen_config, "run config file (default: desk preset)");
  gen->add_option("--out", gen_out)->required();
  gen->add_flag("--task", gen_task_mode, "generate a binary task corpus instead");
  gen->add_option("--neg-morph", gt_neg_morph);
  gen->add_option("--pos-morph", gt_pos_morph);
  gen->add_option("--neg-marker", gt_neg_marker);
  gen->add_option("--pos-marker", gt_pos_marker);
  gen->add_option("--morph-strength", gt_morph_strength);
  gen->add_option("--marker-strength", gt_marker_strength);
  gen->add_option("--train-per-class", gt_train_per_class);
  gen->add_option("--heldout-per-class", gt_heldout_per_class);

  // train
  auto* train = app.add_subcommand("train", "train on a generated corpus");
  std::string train_config, train_corpus, train_out = "model.ckpt",
              train_metrics = "metrics.jsonl", train_resume;
  int train_steps = 0;
  train->add_option("--config", train_config);
  train->add_option("--corpus", train_corpus)->required();
  train->add_option("--out", train_out);
  train->add_option("--metrics", train_metrics);
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_option("--steps", train_steps, "override the configured step count");

  // generate
  auto* generate = app.add_subcommand("generate", "greedy report generation");
  std::string gen_ckpt, gen_corpus_dir, gen_split = "train", gen_out_path;
  int gen_max_len = 32, gen_top_tiles = 0;
  generate->add_option("--ckpt", gen_ckpt)->required();
  generate->add_option("--corpus", gen_corpus_dir)->required();
  generate->add_option("--split", gen_split)->check(CLI::IsMember({"train", "heldout"}));
  generate->add_option("--max-len", gen_max_len);
  generate->add_option("--top-tiles", gen_top_tiles,
                       "also export the k most attended tiles");
  generate->add_option("--out", gen_out_path)->required();

  // zeroshot
  auto* zeroshot = app.add_subcommand("zeroshot", "zero-shot prompt classification");
  std::string zs_ckpt, zs_prompts, zs_corpus, zs_store, zs_manifest, zs_vocab,
      zs_reports, zs_out, zs_split = "heldout";
  zeroshot->add_option("--ckpt", zs_ckpt)->required();
  zeroshot->add_option("--prompts", zs_prompts)->required();
  zeroshot->add_option("--corpus", zs_corpus, "corpus dir (fills store/manifest/vocab)");
  zeroshot->add_option("--split", zs_split)->check(CLI::IsMember({"train", "heldout"}));
  zeroshot->add_option("--store", zs_store);
  zeroshot->add_option("--manifest", zs_manifest);
  zeroshot->add_option("--vocab", zs_vocab);
  zeroshot->add_option("--reports", zs_reports, "optional labels for AUROC");
  zeroshot->add_option("--out", zs_out)->required();

  // linprobe
  auto* linprobe = app.add_subcommand("linprobe", "linear probe on slide embeddings");
  std::string lp_ckpt, lp_task, lp_out;
  uint64_t lp_seed = 7;
  bool lp_random = false;
  linprobe->add_option("--ckpt", lp_ckpt)->required();
  linprobe->add_option("--task", lp_task)->required();
  linprobe->add_option("--seed", lp_seed);
  linprobe->add_flag("--random-encoder", lp_random,
                     "probe a randomly initialized encoder instead");
  linprobe->add_option("--out", lp_out)->required();

  // finetune
  auto* finetune = app.add_subcommand("finetune", "fine-tune the slide encoder");
  std::string ft_ckpt, ft_task, ft_init = "pretrained", ft_out;
  int ft_steps = 300;
  double ft_lr = 3e-4;
  uint64_t ft_seed = 7;
  finetune->add_option("--ckpt", ft_ckpt)->required();
  finetune->add_option("--task", ft_task)->required();
  finetune->add_option("--init", ft_init)->check(CLI::IsMember({"pretrained", "scratch"}));
  finetune->add_option("--steps", ft_steps);
  finetune->add_option("--lr", ft_lr);
  finetune->add_option("--seed", ft_seed);
  finetune->add_option("--out", ft_out)->required();

  // subset-harness
  auto* harness = app.add_subcommand("subset-harness", "label-efficiency curves");
  std::string sh_ckpt, sh_task, sh_fractions = "0.1,0.2,0.35,0.5,1.0", sh_out;
  int sh_runs = 3, sh_steps = 150;
  double sh_lr = 3e-4;
  uint64_t sh_seed = 7;
  harness->add_option("--ckpt", sh_ckpt)->required();
  harness->add_option("--task", sh_task)->required();
  harness->add_option("--fractions", sh_fractions);
  harness->add_option("--runs", sh_runs);
  harness->add_option("--steps", sh_steps);
  harness->add_option("--lr", sh_lr);
  harness->add_option("--seed", sh_seed);
  harness->add_option("--out", sh_out)->required();

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "dump slide embeddings");
  std::string ex_ckpt, ex_corpus, ex_split = "both", ex_out;
  exp->add_option("--ckpt", ex_ckpt)->required();
  exp->add_option("--corpus", ex_corpus)->required();
  exp->add_option("--split", ex_split)
      ->check(CLI::IsMember({"train", "heldout", "both"}));
  exp->add_option("--out", ex_out)->required();

  // selftest
  auto* selftest = app.add_subcommand("selftest", "run the fast invariant suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (tile->parsed())
      return cmd_tile(tile_input, tile_mpp, tile_out, tile_slide_id, tile_min_tissue);
    if (embed->parsed())
      return cmd_embed(embed_manifest, embed_dim, embed_signal,
                       env_seed_override(embed_seed), embed_out, embed_concept,
                       embed_max_concepts);
    if (gen->parsed()) {
      auto cfg = load_config(gen_config);
      if (gen_task_mode)
        return cmd_gen_task(cfg, gen_out, gt_neg_morph, gt_pos_morph, gt_neg_marker,
                            gt_pos_marker, gt_morph_strength, gt_marker_strength,
                            gt_train_per_class, gt_heldout_per_class);
      return cmd_gen_corpus(cfg, gen_out);
    }
    if (train->parsed())
      return cmd_train(load_config(train_config), train_corpus, train_out,
                       train_metrics, train_resume, train_steps);
    if (generate->parsed())
      return cmd_generate(gen_ckpt, gen_corpus_dir, gen_split, gen_max_len,
                          gen_top_tiles, gen_out_path);
    if (zeroshot->parsed()) {
      if (!zs_corpus.empty()) {
        const auto paths = CorpusPaths::from_dir(zs_corpus);
        const bool heldout = zs_split == "heldout";
        if (zs_store.empty()) zs_store = paths.store;
        if (zs_manifest.empty())
          zs_manifest = heldout ? paths.heldout_manifest : paths.manifest;
        if (zs_vocab.empty()) zs_vocab = paths.vocab;
        if (zs_reports.empty())
          zs_reports = heldout ? paths.heldout_reports : paths.reports;
      }
      if (zs_store.empty() || zs_manifest.empty() || zs_vocab.empty())
        throw std::runtime_error("zeroshot: need --corpus or --store/--manifest/--vocab");
      return cmd_zeroshot(zs_ckpt, zs_prompts, zs_store, zs_manifest, zs_vocab,
                          zs_reports, zs_out);
    }
    if (linprobe->parsed())
      return cmd_linprobe(lp_ckpt, lp_task, lp_seed, lp_random, lp_out);
    if (finetune->parsed())
      return cmd_finetune(ft_ckpt, ft_task, ft_init, ft_steps, ft_lr, ft_seed, ft_out);
    if (harness->parsed())
      return cmd_subset_harness(sh_ckpt, sh_task, sh_fractions, sh_runs, sh_steps,
                                sh_lr, sh_seed, sh_out);
    if (exp->parsed())
      return cmd_export_embeddings(ex_ckpt, ex_corpus, ex_split, ex_out);
    if (selftest->parsed()) {
      const int failures = run_selftest(std::cout);
      if (failures > 0) {
        std::cerr << json{{"error", std::to_string(failures) + " selftest check(s) failed"}}
                         .dump()
                  << "\n";
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
