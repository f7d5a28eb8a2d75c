#include "slidelm/embed_store.hpp"

#include <cmath>
#include <fstream>

#include "slidelm/binio.hpp"
#include "slidelm/rng.hpp"

namespace slidelm {

namespace {
constexpr char kMagic[4] = {'P', 'R', 'S', 'M'};
constexpr uint32_t kVersion = 1;
}  // namespace

const std::map<TileKey, size_t>& EmbeddingStore::index() const {
  if (index_.empty() && !provenance.empty()) {
    for (size_t i = 0; i < provenance.size(); ++i) index_[provenance[i]] = i;
  }
  return index_;
}

void write_store(const std::string& path, const EmbeddingStore& store) {
  if (store.dim == 0) throw std::invalid_argument("write_store: dim is zero");
  if (store.vectors.size() % store.dim != 0)
    throw std::invalid_argument("write_store: payload not a multiple of dim");
  if (store.provenance.size() != store.count())
    throw std::invalid_argument("write_store: provenance count mismatch");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_store: cannot open " + path);
  out.write(kMagic, 4);
  binio::put_u32(out, kVersion);
  binio::put_u32(out, store.dim);
  binio::put_u64(out, store.count());
  binio::put_f32_array(out, store.vectors.data(), store.vectors.size());
  binio::put_u64(out, store.config_digest);
  for (const auto& p : store.provenance) {
    binio::put_string(out, p.slide_id);
    binio::put_u32(out, p.grid_x);
    binio::put_u32(out, p.grid_y);
  }
  if (!out) throw std::runtime_error("write_store: write failed: " + path);
}

EmbeddingStore read_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_store: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("read_store: bad magic in " + path);
  const uint32_t version = binio::get_u32(in);
  if (version != kVersion)
    throw std::runtime_error("read_store: unsupported format version");
  EmbeddingStore store;
  store.dim = binio::get_u32(in);
  if (store.dim == 0) throw std::runtime_error("read_store: zero dim");
  const uint64_t count = binio::get_u64(in);
  store.vectors.resize(static_cast<size_t>(count) * store.dim);
  binio::get_f32_array(in, store.vectors.data(), store.vectors.size());
  if (!in) throw std::runtime_error("read_store: truncated payload");
  store.config_digest = binio::get_u64(in);
  store.provenance.resize(static_cast<size_t>(count));
  for (auto& p : store.provenance) {
    p.slide_id = binio::get_string(in);
    p.grid_x = binio::get_u32(in);
    p.grid_y = binio::get_u32(in);
  }
  if (!in) throw std::runtime_error("read_store: truncated provenance index");
  return store;
}

SpecimenBag assemble_specimen(const std::vector<wsi::ManifestEntry>& entries,
                              const EmbeddingStore& store, int64_t cap) {
  if (entries.empty())
    throw std::invalid_argument("assemble_specimen: empty manifest");
  if (static_cast<int64_t>(entries.size()) > cap)
    throw SpecimenOverCap("assemble_specimen: specimen exceeds tile cap of " +
                          std::to_string(cap));
  SpecimenBag bag;
  bag.specimen_id = entries.front().specimen_id;
  bag.dim = store.dim;
  bag.embeddings.reserve(entries.size() * store.dim);
  bag.tiles.reserve(entries.size());
  const auto& index = store.index();
  for (const auto& e : entries) {
    TileKey key{e.slide_id, static_cast<uint32_t>(e.grid_x),
                static_cast<uint32_t>(e.grid_y)};
    auto it = index.find(key);
    if (it == index.end())
      throw std::runtime_error("assemble_specimen: tile not in store: " + e.slide_id +
                               " (" + std::to_string(e.grid_x) + "," +
                               std::to_string(e.grid_y) + ")");
    const float* v = store.vector_at(it->second);
    bag.embeddings.insert(bag.embeddings.end(), v, v + store.dim);
    bag.tiles.push_back(std::move(key));
  }
  return bag;
}

SyntheticEncoder::SyntheticEncoder(uint32_t dim, uint64_t seed, double signal_strength,
                                   int max_concepts)
    : dim_(dim), seed_(seed), signal_strength_(signal_strength) {
  if (signal_strength < 0)
    throw std::invalid_argument("synthetic encoder: negative signal strength");
  if (max_concepts > static_cast<int>(dim))
    throw std::invalid_argument(
        "synthetic encoder: more concepts than embedding dimensions");
  Rng rng = substream(seed, "concept-dirs");
  directions_.assign(static_cast<size_t>(max_concepts), std::vector<float>(dim));
  std::vector<std::vector<double>> basis(static_cast<size_t>(max_concepts),
                                         std::vector<double>(dim));
  for (auto& row : basis)
    for (auto& v : row) v = rng.normal();
  // Gram-Schmidt with unit normalization
  for (size_t k = 0; k < basis.size(); ++k) {
    for (size_t j = 0; j < k; ++j) {
      double dot = 0;
      for (uint32_t i = 0; i < dim; ++i) dot += basis[k][i] * basis[j][i];
      for (uint32_t i = 0; i < dim; ++i) basis[k][i] -= dot * basis[j][i];
    }
    double norm = 0;
    for (uint32_t i = 0; i < dim; ++i) norm += basis[k][i] * basis[k][i];
    norm = std::sqrt(norm);
    if (norm < 1e-9)
      throw std::runtime_error("synthetic encoder: degenerate concept basis");
    for (uint32_t i = 0; i < dim; ++i) {
      basis[k][i] /= norm;
      directions_[k][i] = static_cast<float>(basis[k][i]);
    }
  }
}

const std::vector<float>& SyntheticEncoder::direction(int concept_id) const {
  if (concept_id < 0 || concept_id >= static_cast<int>(directions_.size()))
    throw std::invalid_argument("synthetic encoder: concept id out of range");
  return directions_[static_cast<size_t>(concept_id)];
}

std::vector<float> SyntheticEncoder::encode(const std::string& slide_id,
                                            uint32_t grid_x, uint32_t grid_y,
                                            int concept_id) const {
  std::vector<std::pair<int, double>> components;
  if (concept_id != kNoConcept) components.emplace_back(concept_id, signal_strength_);
  return encode_mixture(slide_id, grid_x, grid_y, components);
}

std::vector<float> SyntheticEncoder::encode_mixture(
    const std::string& slide_id, uint32_t grid_x, uint32_t grid_y,
    const std::vector<std::pair<int, double>>& components) const {
  uint64_t h = fnv1a64(slide_id);
  h = fnv1a64_u64(grid_x, h);
  h = fnv1a64_u64(grid_y, h);
  h = fnv1a64_u64(seed_, h);
  Rng rng(h);
  std::vector<float> e(dim_);
  for (auto& v : e) v = static_cast<float>(rng.normal());
  for (const auto& [concept_id, strength] : components) {
    const auto& dir = direction(concept_id);
    for (uint32_t i = 0; i < dim_; ++i)
      e[i] += static_cast<float>(strength) * dir[i];
  }
  return e;
}

}  // namespace slidelm
