#include "slidelm/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "slidelm/tokenizer.hpp"

namespace slidelm {

namespace {

const std::vector<std::string>& keywords() {
  static const std::vector<std::string> k = {
      "adenocarcinoma", "melanoma",       "lymphoma",  "fibrosis",
      "carcinoid",      "osteosarcoma",   "glioma",    "leiomyoma",
      "hyperplasia",    "granuloma",      "seminoma",  "mesothelioma",
      "chondrosarcoma", "papilloma",      "angiosarcoma", "thymoma"};
  return k;
}

const std::vector<std::string>& sites() {
  static const std::vector<std::string> s = {"breast", "lung",   "colon",
                                             "skin",   "liver",  "prostate",
                                             "kidney", "bladder"};
  return s;
}

const std::vector<std::string>& attributes() {
  static const std::vector<std::string> a = {"inflammation", "necrosis",
                                             "calcification", "ulceration"};
  return a;
}

}  // namespace

const std::string& concept_keyword(int concept_id) {
  const auto& k = keywords();
  if (concept_id < 0 || concept_id >= static_cast<int>(k.size()))
    throw std::invalid_argument("concept_keyword: id out of range");
  return k[static_cast<size_t>(concept_id)];
}

int num_known_concepts() { return static_cast<int>(keywords().size()); }

const std::string& attribute_keyword(int attribute_index) {
  const auto& a = attributes();
  if (attribute_index < 0 || attribute_index >= static_cast<int>(a.size()))
    throw std::invalid_argument("attribute_keyword: index out of range");
  return a[static_cast<size_t>(attribute_index)];
}

int num_known_attributes() { return static_cast<int>(attributes().size()); }

std::vector<std::string> rewrite_templates(int concept_id, const std::string& site,
                                           int attribute_index) {
  const std::string& kw = concept_keyword(concept_id);
  if (attribute_index < 0) {
    return {
        "specimen from the " + site + " shows " + kw + " .",
        "findings are consistent with " + kw + " .",
        "sections of the " + site + " demonstrate " + kw +
            " without additional abnormality .",
        "morphology is compatible with " + kw + " .",
        "final diagnosis : " + kw + " identified in the " + site + " sample .",
    };
  }
  const std::string& at = attribute_keyword(attribute_index);
  return {
      "specimen from the " + site + " shows " + kw + " with " + at + " .",
      "findings are consistent with " + kw + " accompanied by " + at + " .",
      "sections of the " + site + " demonstrate " + kw + " and focal " + at + " .",
      "morphology is compatible with " + kw + " ; " + at + " is present .",
      "final diagnosis : " + kw + " with " + at + " in the " + site + " sample .",
  };
}

namespace {

struct SpecimenPlan {
  std::string specimen_id;
  int concept_id;
  int attribute_index = -1;   // index into the attribute list, -1 = none
  int attribute_concept = -1; // direction id carrying the attribute
  int n_tiles;
  int n_slides;
  std::string site;
  std::vector<double> tile_fractions;  // per-tile tissue fraction
  // (direction id, coefficient) pairs shared by every tile of the specimen
  std::vector<std::pair<int, double>> nuisance;
};

void emit_specimen(const SpecimenPlan& plan, const SyntheticEncoder& enc,
                   double signal_strength, double attribute_strength,
                   GeneratedCorpus& out, bool heldout) {
  auto& manifest = heldout ? out.heldout_manifest : out.train_manifest;
  auto& reports = heldout ? out.heldout_reports : out.train_reports;

  for (int t = 0; t < plan.n_tiles; ++t) {
    const int slide = plan.n_slides == 2 && t >= plan.n_tiles / 2 ? 1 : 0;
    const std::string slide_id = plan.specimen_id + "_sl" + std::to_string(slide);
    const uint32_t gx = static_cast<uint32_t>(t % 8);
    const uint32_t gy = static_cast<uint32_t>(t / 8);
    const double fraction = plan.tile_fractions[static_cast<size_t>(t)];
    std::vector<std::pair<int, double>> mix = {
        {plan.concept_id, signal_strength * fraction}};
    if (plan.attribute_concept >= 0)
      mix.emplace_back(plan.attribute_concept, attribute_strength * fraction);
    // nuisance does not scale with tissue: it models slide-wide acquisition
    // variation rather than morphology
    mix.insert(mix.end(), plan.nuisance.begin(), plan.nuisance.end());
    auto v = enc.encode_mixture(slide_id, gx, gy, mix);
    out.store.vectors.insert(out.store.vectors.end(), v.begin(), v.end());
    out.store.provenance.push_back({slide_id, gx, gy});
    manifest.push_back({plan.specimen_id, slide_id, static_cast<int>(gx),
                        static_cast<int>(gy), fraction});
  }
  reports.push_back({plan.specimen_id, plan.concept_id,
                     rewrite_templates(plan.concept_id, plan.site,
                                       plan.attribute_index)});
}

}  // namespace

GeneratedCorpus gen_corpus(const CorpusSpec& spec) {
  if (spec.concepts < 2) throw std::invalid_argument("gen_corpus: need K >= 2");
  if (spec.concept_offset + spec.concepts > spec.max_concepts)
    throw std::invalid_argument("gen_corpus: concept range exceeds max_concepts");
  if (spec.secondary_attributes < 0 ||
      spec.secondary_attributes > num_known_attributes())
    throw std::invalid_argument("gen_corpus: bad secondary attribute count");
  if (spec.secondary_attributes > 0 &&
      spec.concept_offset + spec.concepts >
          spec.max_concepts - spec.secondary_attributes)
    throw std::invalid_argument(
        "gen_corpus: concepts overlap the attribute direction range");
  const int nuisance_offset = 6;
  if (spec.nuisance_dims < 0 ||
      (spec.nuisance_dims > 0 &&
       nuisance_offset + spec.nuisance_dims >
           spec.max_concepts - spec.secondary_attributes))
    throw std::invalid_argument("gen_corpus: nuisance range overlaps attributes");
  if (spec.tiles_min < 1 || spec.tiles_max < spec.tiles_min)
    throw std::invalid_argument("gen_corpus: bad tile range");

  if (spec.tissue_fraction_min <= 0 || spec.tissue_fraction_max < spec.tissue_fraction_min ||
      spec.tissue_fraction_max > 1.0)
    throw std::invalid_argument("gen_corpus: bad tissue fraction range");
  SyntheticEncoder enc(static_cast<uint32_t>(spec.embed_dim), spec.seed,
                       spec.signal_strength, spec.max_concepts);
  GeneratedCorpus out;
  out.store.dim = static_cast<uint32_t>(spec.embed_dim);
  out.store.config_digest = spec.config_digest;

  Rng rng = substream(spec.seed, "corpus");
  auto plan_one = [&](int concept_id, int index, bool heldout) {
    SpecimenPlan plan;
    plan.concept_id = concept_id;
    plan.specimen_id = "c" + std::to_string(concept_id) +
                       (heldout ? "_h" : "_s") + std::to_string(index);
    plan.n_tiles = spec.tiles_min +
                   static_cast<int>(rng.uniform_int(spec.tiles_max - spec.tiles_min + 1));
    plan.n_slides = (index % 2 == 0) ? 2 : 1;
    if (plan.n_tiles < 2) plan.n_slides = 1;
    plan.site = sites()[static_cast<size_t>(rng.uniform_int(
        static_cast<int64_t>(sites().size())))];
    if (spec.secondary_attributes > 0) {
      plan.attribute_index =
          static_cast<int>(rng.uniform_int(spec.secondary_attributes));
      plan.attribute_concept = spec.max_concepts - 1 - plan.attribute_index;
    }
    for (int j = 0; j < spec.nuisance_dims; ++j)
      plan.nuisance.emplace_back(nuisance_offset + j,
                                 spec.nuisance_strength * rng.normal());
    for (int t = 0; t < plan.n_tiles; ++t)
      plan.tile_fractions.push_back(
          spec.tissue_fraction_min +
          (spec.tissue_fraction_max - spec.tissue_fraction_min) * rng.uniform());
    return plan;
  };

  for (int k = 0; k < spec.concepts; ++k) {
    const int concept_id = spec.concept_offset + k;
    for (int i = 0; i < spec.specimens_per_concept; ++i)
      emit_specimen(plan_one(concept_id, i, false), enc, spec.signal_strength,
                    spec.attribute_strength, out, false);
  }
  for (int k = 0; k < spec.concepts; ++k) {
    const int concept_id = spec.concept_offset + k;
    for (int i = 0; i < spec.heldout_per_concept; ++i)
      emit_specimen(plan_one(concept_id, i, true), enc, spec.signal_strength,
                    spec.attribute_strength, out, true);
  }
  return out;
}

void write_reports(const std::string& path, const std::vector<SpecimenRecord>& reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_reports: cannot open " + path);
  for (const auto& r : reports) {
    if (r.rewrites.size() != 5)
      throw std::invalid_argument("write_reports: record must carry 5 rewrites");
    nlohmann::json j;
    j["specimen_id"] = r.specimen_id;
    j["concept"] = r.concept_id;
    j["rewrites"] = r.rewrites;
    out << j.dump() << "\n";
  }
}

std::vector<SpecimenRecord> read_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_reports: cannot open " + path);
  std::vector<SpecimenRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    SpecimenRecord r;
    r.specimen_id = j.at("specimen_id").get<std::string>();
    r.concept_id = j.at("concept").get<int>();
    r.rewrites = j.at("rewrites").get<std::vector<std::string>>();
    if (r.rewrites.size() != 5)
      throw std::runtime_error("read_reports: record without 5 rewrites");
    out.push_back(std::move(r));
  }
  return out;
}

void write_corpus(const std::string& dir, const GeneratedCorpus& corpus) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  wsi::write_manifest((d / "manifest.jsonl").string(), corpus.train_manifest);
  wsi::write_manifest((d / "heldout_manifest.jsonl").string(), corpus.heldout_manifest);
  write_store((d / "store.bin").string(), corpus.store);
  write_reports((d / "reports.jsonl").string(), corpus.train_reports);
  write_reports((d / "heldout_reports.jsonl").string(), corpus.heldout_reports);

  std::vector<std::string> texts;
  for (const auto& r : corpus.train_reports)
    for (const auto& s : r.rewrites) texts.push_back(s);
  Vocabulary::build(texts).save((d / "vocab.txt").string());
}

const std::string& sample_rewrite(const SpecimenRecord& specimen, Rng& rng) {
  if (specimen.rewrites.empty())
    throw std::invalid_argument("sample_rewrite: specimen has no rewrites");
  return specimen.rewrites[static_cast<size_t>(
      rng.uniform_int(static_cast<int64_t>(specimen.rewrites.size())))];
}

TaskData gen_task(const TaskSpec& spec) {
  if (spec.tiles_min < 1 || spec.tiles_max < spec.tiles_min)
    throw std::invalid_argument("gen_task: bad tile range");
  if (spec.nuisance_dims < 0 ||
      (spec.nuisance_dims > 0 &&
       spec.nuisance_offset + spec.nuisance_dims > spec.max_concepts))
    throw std::invalid_argument("gen_task: nuisance range exceeds direction table");
  SyntheticEncoder enc(static_cast<uint32_t>(spec.embed_dim), spec.seed, 0.0,
                       spec.max_concepts);
  Rng rng = substream(spec.seed, "task");

  TaskData out;
  auto emit = [&](int label, int index, bool heldout) {
    const TaskClassDef& def = label ? spec.positive : spec.negative;
    SpecimenBag bag;
    bag.specimen_id = spec.id_prefix + (label ? "_pos" : "_neg") +
                      (heldout ? "_h" : "_t") + std::to_string(index);
    bag.dim = static_cast<uint32_t>(spec.embed_dim);
    const int n_tiles =
        spec.tiles_min +
        static_cast<int>(rng.uniform_int(spec.tiles_max - spec.tiles_min + 1));
    std::vector<std::pair<int, double>> nuisance;
    for (int j = 0; j < spec.nuisance_dims; ++j)
      nuisance.emplace_back(spec.nuisance_offset + j,
                            spec.nuisance_strength * rng.normal());
    for (int t = 0; t < n_tiles; ++t) {
      const uint32_t gx = static_cast<uint32_t>(t % 8);
      const uint32_t gy = static_cast<uint32_t>(t / 8);
      const double fraction =
          spec.tissue_fraction_min +
          (spec.tissue_fraction_max - spec.tissue_fraction_min) * rng.uniform();
      std::vector<std::pair<int, double>> mix;
      if (def.morph_strength > 0)
        mix.emplace_back(def.morph_concept, def.morph_strength * fraction);
      if (def.marker_strength > 0)
        mix.emplace_back(def.marker_concept, def.marker_strength * fraction);
      mix.insert(mix.end(), nuisance.begin(), nuisance.end());
      auto v = enc.encode_mixture(bag.specimen_id, gx, gy, mix);
      bag.embeddings.insert(bag.embeddings.end(), v.begin(), v.end());
      bag.tiles.push_back({bag.specimen_id, gx, gy});
    }
    if (heldout) {
      out.heldout_bags.push_back(std::move(bag));
      out.heldout_labels.push_back(label);
    } else {
      out.train_bags.push_back(std::move(bag));
      out.train_labels.push_back(label);
    }
  };

  for (int i = 0; i < spec.n_train_per_class; ++i) {
    emit(0, i, false);
    emit(1, i, false);
  }
  for (int i = 0; i < spec.n_heldout_per_class; ++i) {
    emit(0, i, true);
    emit(1, i, true);
  }
  return out;
}

}  // namespace slidelm
