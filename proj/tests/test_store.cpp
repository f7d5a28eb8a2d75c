#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "slidelm/embed_store.hpp"
#include "slidelm/rng.hpp"

using namespace slidelm;

namespace {
std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "slidelm_store_test";
  std::filesystem::create_directories(dir);
  return dir;
}

EmbeddingStore random_store(Rng& rng, uint32_t dim, size_t count) {
  EmbeddingStore s;
  s.dim = dim;
  s.config_digest = 0xabcdef0123456789ULL;
  s.vectors.resize(count * dim);
  for (auto& v : s.vectors) v = static_cast<float>(rng.normal());
  for (size_t i = 0; i < count; ++i)
    s.provenance.push_back({"slide" + std::to_string(i % 3),
                            static_cast<uint32_t>(i / 3), static_cast<uint32_t>(i % 7)});
  return s;
}
}  // namespace

TEST_CASE("store round trip is byte-exact") {
  Rng rng(42);
  auto store = random_store(rng, 16, 1000);
  const auto path = (temp_dir() / "rt.bin").string();
  write_store(path, store);
  auto back = read_store(path);
  CHECK(back.dim == store.dim);
  CHECK(back.config_digest == store.config_digest);
  CHECK(back.count() == store.count());
  REQUIRE(back.vectors.size() == store.vectors.size());
  for (size_t i = 0; i < store.vectors.size(); ++i) {
    // bit-exact, not approximately equal
    uint32_t a, b;
    std::memcpy(&a, &store.vectors[i], 4);
    std::memcpy(&b, &back.vectors[i], 4);
    CHECK(a == b);
  }
  for (size_t i = 0; i < store.provenance.size(); ++i)
    CHECK(back.provenance[i] == store.provenance[i]);

  // writing the same store twice produces identical files
  const auto path2 = (temp_dir() / "rt2.bin").string();
  write_store(path2, store);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("store rejects bad magic and truncated payload") {
  Rng rng(43);
  auto store = random_store(rng, 8, 20);
  const auto path = (temp_dir() / "bad.bin").string();
  write_store(path, store);

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH_AS(read_store(path), doctest::Contains("bad magic"),
                       std::runtime_error);

  // rewrite, then truncate the payload so count disagrees with the bytes
  write_store(path, store);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full / 2);
  CHECK_THROWS_AS(read_store(path), std::runtime_error);
}

TEST_CASE("assemble_specimen concatenates in manifest order") {
  Rng rng(44);
  EmbeddingStore store;
  store.dim = 4;
  std::vector<wsi::ManifestEntry> entries;
  for (int slide = 0; slide < 2; ++slide)
    for (int t = 0; t < 3; ++t) {
      const std::string sid = "slide" + std::to_string(slide);
      store.provenance.push_back({sid, static_cast<uint32_t>(t), 0});
      for (int j = 0; j < 4; ++j)
        store.vectors.push_back(static_cast<float>(slide * 100 + t * 10 + j));
      entries.push_back({"spec", sid, t, 0, 1.0});
    }
  auto bag = assemble_specimen(entries, store);
  CHECK(bag.specimen_id == "spec");
  CHECK(bag.tile_count() == 6);
  CHECK(bag.embeddings[0] == 0.0f);
  CHECK(bag.embeddings[4] == 10.0f);   // second tile of slide0
  CHECK(bag.embeddings[12] == 100.0f); // first tile of slide1
}

TEST_CASE("assemble_specimen rejects empty, missing and over-cap input") {
  EmbeddingStore store;
  store.dim = 2;
  store.vectors = {1, 2};
  store.provenance = {{"a", 0, 0}};

  CHECK_THROWS_AS(assemble_specimen({}, store), std::invalid_argument);

  std::vector<wsi::ManifestEntry> missing = {{"spec", "a", 5, 5, 1.0}};
  CHECK_THROWS_AS(assemble_specimen(missing, store), std::runtime_error);

  std::vector<wsi::ManifestEntry> three(3, wsi::ManifestEntry{"spec", "a", 0, 0, 1.0});
  CHECK_THROWS_AS(assemble_specimen(three, store, 2), SpecimenOverCap);
  CHECK_NOTHROW(assemble_specimen(three, store, 3));
}

TEST_CASE("synthetic encoder is deterministic and direction-orthonormal") {
  SyntheticEncoder enc(64, 7, 4.0, 16);
  auto a = enc.encode("slideX", 3, 5, 2);
  auto b = enc.encode("slideX", 3, 5, 2);
  CHECK(a == b);
  auto c = enc.encode("slideX", 3, 6, 2);
  CHECK(a != c);

  for (int i = 0; i < 16; ++i)
    for (int j = 0; j <= i; ++j) {
      double dot = 0;
      for (int k = 0; k < 64; ++k)
        dot += static_cast<double>(enc.direction(i)[k]) * enc.direction(j)[k];
      if (i == j)
        CHECK(dot == doctest::Approx(1.0).epsilon(1e-5));
      else
        CHECK(std::abs(dot) < 1e-5);
    }

  SyntheticEncoder enc2(64, 8, 4.0, 16);
  CHECK(enc.encode("s", 0, 0, 0) != enc2.encode("s", 0, 0, 0));
}

TEST_CASE("zero signal leaves concepts statistically indistinguishable") {
  const uint32_t d = 64;
  SyntheticEncoder enc(d, 11, 0.0, 8);
  // mean cosine of class embeddings to their concept direction ~ 0 +- 3/sqrt(d)
  for (int concept_id = 0; concept_id < 2; ++concept_id) {
    double mean_cos = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
      auto e = enc.encode("s" + std::to_string(i), 0, 0, concept_id);
      double dot = 0, norm = 0;
      for (uint32_t k = 0; k < d; ++k) {
        dot += static_cast<double>(e[k]) * enc.direction(concept_id)[k];
        norm += static_cast<double>(e[k]) * e[k];
      }
      mean_cos += dot / std::sqrt(norm);
    }
    mean_cos /= n;
    CHECK(std::abs(mean_cos) < 3.0 / std::sqrt(static_cast<double>(d)));
  }
}

TEST_CASE("signal 4 separates concepts for a linear classifier") {
  const uint32_t d = 64;
  SyntheticEncoder enc(d, 13, 4.0, 8);
  // train: mean-difference direction; test: AUROC of the projection
  std::vector<std::vector<float>> train0, train1, test0, test1;
  for (int i = 0; i < 60; ++i) {
    auto e0 = enc.encode("tr0_" + std::to_string(i), 0, 0, 0);
    auto e1 = enc.encode("tr1_" + std::to_string(i), 0, 0, 1);
    (i < 30 ? train0 : test0).push_back(e0);
    (i < 30 ? train1 : test1).push_back(e1);
  }
  std::vector<double> w(d, 0.0);
  for (uint32_t k = 0; k < d; ++k) {
    double m0 = 0, m1 = 0;
    for (const auto& e : train0) m0 += e[k];
    for (const auto& e : train1) m1 += e[k];
    w[k] = m1 / train1.size() - m0 / train0.size();
  }
  auto score = [&](const std::vector<float>& e) {
    double s = 0;
    for (uint32_t k = 0; k < d; ++k) s += w[k] * e[k];
    return s;
  };
  // pairwise AUROC
  int64_t wins = 0, total = 0;
  for (const auto& e1 : test1)
    for (const auto& e0 : test0) {
      const double s1 = score(e1), s0 = score(e0);
      wins += (s1 > s0) ? 2 : (s1 == s0 ? 1 : 0);
      total += 2;
    }
  const double auroc = static_cast<double>(wins) / static_cast<double>(total);
  CHECK(auroc > 0.99);
}
