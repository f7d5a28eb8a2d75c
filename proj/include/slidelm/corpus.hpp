#pragma once

// Synthetic specimen corpus: per-concept tile embeddings via the synthetic
// encoder, five templated report paraphrases per specimen, and a held-out
// split. Everything derives from the master seed.

#include <cstdint>
#include <string>
#include <vector>

#include "slidelm/config.hpp"
#include "slidelm/embed_store.hpp"
#include "slidelm/rng.hpp"
#include "slidelm/tiling.hpp"

namespace slidelm {

struct CorpusSpec {
  int concepts = 4;  // K caption concepts, ids [concept_offset, concept_offset+K)
  int concept_offset = 0;
  // secondary findings: each specimen carries one attribute alongside its
  // primary concept, in the tiles and in the rewrites. Attribute directions
  // are allocated from the top of the direction table so they never collide
  // with primary or transfer concepts. 0 disables them.
  int secondary_attributes = 4;
  double attribute_strength = 2.0;
  // slide-level nuisance (the synthetic analog of stain/scanner variation):
  // every specimen draws one coefficient per nuisance direction, shared by
  // all of its tiles. Nuisance directions sit between the user concept range
  // and the attribute range. 0 disables.
  int nuisance_dims = 6;
  double nuisance_strength = 2.0;
  int specimens_per_concept = 32;
  int heldout_per_concept = 16;
  int tiles_min = 8;
  int tiles_max = 16;
  double signal_strength = 4.0;
  // per-tile tissue fraction is drawn uniformly from this range and scales
  // the tile's signal, mirroring how partial-tissue tiles carry weaker
  // morphology than full ones (the tiler admits tiles from 25% up)
  double tissue_fraction_min = 0.25;
  double tissue_fraction_max = 1.0;
  int embed_dim = 64;
  int max_concepts = 16;
  uint64_t seed = 7;
  uint64_t config_digest = 0;  // stamped into the store

  static CorpusSpec from(const RunConfig& cfg) {
    CorpusSpec s;
    s.concepts = cfg.concepts;
    s.specimens_per_concept = cfg.specimens_per_concept;
    s.heldout_per_concept = cfg.heldout_per_concept;
    s.tiles_min = cfg.tiles_min;
    s.tiles_max = cfg.tiles_max;
    s.signal_strength = cfg.signal_strength;
    s.secondary_attributes = cfg.secondary_attributes;
    s.attribute_strength = cfg.attribute_strength;
    s.nuisance_dims = cfg.nuisance_dims;
    s.nuisance_strength = cfg.nuisance_strength;
    s.tissue_fraction_min = cfg.tissue_fraction_min;
    s.tissue_fraction_max = cfg.tissue_fraction_max;
    s.embed_dim = cfg.embed_dim;
    s.max_concepts = cfg.max_concepts;
    s.seed = cfg.seed;
    s.config_digest = cfg.digest();
    return s;
  }
};

struct SpecimenRecord {
  std::string specimen_id;
  int concept_id = 0;
  std::vector<std::string> rewrites;  // exactly 5
};

struct GeneratedCorpus {
  std::vector<wsi::ManifestEntry> train_manifest;
  std::vector<wsi::ManifestEntry> heldout_manifest;
  EmbeddingStore store;  // covers train and held-out tiles
  std::vector<SpecimenRecord> train_reports;
  std::vector<SpecimenRecord> heldout_reports;
};

// The diagnostic keyword shared by every rewrite of a concept.
const std::string& concept_keyword(int concept_id);
int num_known_concepts();

// Secondary finding vocabulary (index into the attribute list, not a
// concept id).
const std::string& attribute_keyword(int attribute_index);
int num_known_attributes();

// Five paraphrase templates instantiated for (concept, site, attribute);
// attribute < 0 leaves the secondary finding out.
std::vector<std::string> rewrite_templates(int concept_id, const std::string& site,
                                           int attribute_index = -1);

GeneratedCorpus gen_corpus(const CorpusSpec& spec);

// Serialization: reports as line-delimited JSON {specimen_id, concept, rewrites}.
void write_reports(const std::string& path, const std::vector<SpecimenRecord>& reports);
std::vector<SpecimenRecord> read_reports(const std::string& path);

// Writes manifest/store/reports (+ held-out variants) and the corpus-built
// vocabulary under dir.
void write_corpus(const std::string& dir, const GeneratedCorpus& corpus);

// Rewrite sampling during training: uniform over the record's rewrites.
const std::string& sample_rewrite(const SpecimenRecord& specimen, Rng& rng);

// ---------------------------------------------------------------------------
// Downstream task corpora (fine-tune / linear probe): binary-labeled bags
// whose tiles mix a low-amplitude morphology concept with a marker concept
// that never appears in any caption.

struct TaskClassDef {
  int morph_concept = 0;
  double morph_strength = 1.0;
  int marker_concept = 4;
  double marker_strength = 1.0;
};

struct TaskSpec {
  TaskClassDef negative;
  TaskClassDef positive;
  int n_train_per_class = 48;
  int n_heldout_per_class = 32;
  int tiles_min = 8;
  int tiles_max = 16;
  double tissue_fraction_min = 0.25;
  double tissue_fraction_max = 1.0;
  int nuisance_dims = 6;        // drawn from the same direction pool as the
  double nuisance_strength = 2.0;  // pretraining corpus
  int nuisance_offset = 6;      // first nuisance direction id
  int embed_dim = 64;
  int max_concepts = 16;
  uint64_t seed = 7;
  std::string id_prefix = "task";
};

struct TaskData {
  std::vector<SpecimenBag> train_bags;
  std::vector<int> train_labels;
  std::vector<SpecimenBag> heldout_bags;
  std::vector<int> heldout_labels;
};

TaskData gen_task(const TaskSpec& spec);

}  // namespace slidelm
