#pragma once

// Persistent tile-embedding store, the deterministic synthetic tile encoder
// that stands in for a heavyweight tile-level vision model, and specimen
// assembly.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "slidelm/tiling.hpp"

namespace slidelm {

inline constexpr int64_t kSpecimenTileCap = 100000;

struct TileKey {
  std::string slide_id;
  uint32_t grid_x = 0;
  uint32_t grid_y = 0;
  auto operator<=>(const TileKey&) const = default;
};

// Binary layout: magic "PRSM", version u32, dim u32, count u64,
// count*dim little-endian fp32 vectors, then a provenance index
// (config digest u64 followed by one {slide_id, grid_x, grid_y} per vector).
struct EmbeddingStore {
  uint32_t dim = 0;
  uint64_t config_digest = 0;
  std::vector<float> vectors;  // count x dim, row-major
  std::vector<TileKey> provenance;

  uint64_t count() const { return dim == 0 ? 0 : vectors.size() / dim; }
  const float* vector_at(size_t i) const { return vectors.data() + i * dim; }

  // (slide_id, grid) -> vector index; built on demand, deterministic order
  const std::map<TileKey, size_t>& index() const;

 private:
  mutable std::map<TileKey, size_t> index_;
};

void write_store(const std::string& path, const EmbeddingStore& store);
EmbeddingStore read_store(const std::string& path);

struct SpecimenBag {
  std::string specimen_id;
  uint32_t dim = 0;
  std::vector<float> embeddings;  // tile_count x dim
  std::vector<TileKey> tiles;     // provenance, in manifest order

  int64_t tile_count() const { return dim == 0 ? 0 : static_cast<int64_t>(embeddings.size() / dim); }
};

struct SpecimenOverCap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Concatenates the specimen's tiles in manifest order. Throws on a missing
// tile, an empty manifest, or a specimen over the tile cap (exclusion, not
// truncation).
SpecimenBag assemble_specimen(const std::vector<wsi::ManifestEntry>& entries,
                              const EmbeddingStore& store,
                              int64_t cap = kSpecimenTileCap);

// Deterministic synthetic tile embeddings: unit Gaussian noise seeded by
// hash(slide_id, grid coords, seed) plus signal_strength times a fixed
// per-concept direction. Concept directions are Gram-Schmidt orthonormalized
// seeded Gaussians, so class separability is controlled purely by the signal
// strength.
class SyntheticEncoder {
 public:
  static constexpr int kNoConcept = -1;

  SyntheticEncoder(uint32_t dim, uint64_t seed, double signal_strength,
                   int max_concepts = 16);

  // noise + signal_strength * direction(concept_id); concept kNoConcept = noise only
  std::vector<float> encode(const std::string& slide_id, uint32_t grid_x,
                            uint32_t grid_y, int concept_id) const;

  // noise + sum_j strength_j * direction(concept_j); used by task corpora
  // whose specimens mix a morphology component with a marker component
  std::vector<float> encode_mixture(
      const std::string& slide_id, uint32_t grid_x, uint32_t grid_y,
      const std::vector<std::pair<int, double>>& components) const;

  const std::vector<float>& direction(int concept_id) const;
  uint32_t dim() const { return dim_; }
  double signal_strength() const { return signal_strength_; }
  uint64_t seed() const { return seed_; }

 private:
  uint32_t dim_;
  uint64_t seed_;
  double signal_strength_;
  std::vector<std::vector<float>> directions_;  // orthonormal rows
};

}  // namespace slidelm
