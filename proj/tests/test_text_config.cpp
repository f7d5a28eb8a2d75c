#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "slidelm/config.hpp"
#include "slidelm/tokenizer.hpp"

using namespace slidelm;

TEST_CASE("tokenize round trip and unknown handling") {
  Vocabulary vocab = Vocabulary::build({"benign breast tissue", "sections show tumor ."});
  auto ids = tokenize(vocab, "benign breast tissue");
  CHECK(ids.size() == 3);
  for (int64_t id : ids) CHECK(id != Vocabulary::kUnk);
  CHECK(detokenize(vocab, ids) == "benign breast tissue");

  auto unk = tokenize(vocab, "unheard word breast");
  CHECK(unk[0] == Vocabulary::kUnk);
  CHECK(unk[1] == Vocabulary::kUnk);
  CHECK(unk[2] != Vocabulary::kUnk);

  CHECK(tokenize(vocab, "").empty());
  CHECK(tokenize(vocab, "   \t\n").empty());
}

TEST_CASE("punctuation splits into standalone tokens") {
  auto words = word_split("diagnosis : tumor, margins clear.");
  const std::vector<std::string> want = {"diagnosis", ":", "tumor", ",",
                                         "margins", "clear", "."};
  CHECK(words == want);
}

TEST_CASE("special ids are stable and distinct") {
  Vocabulary v = Vocabulary::build({"alpha"});
  CHECK(v.token_of(Vocabulary::kPad) == "<pad>");
  CHECK(v.token_of(Vocabulary::kBos) == "<bos>");
  CHECK(v.token_of(Vocabulary::kEos) == "<eos>");
  CHECK(v.token_of(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token_of(Vocabulary::kCls) == "<cls>");
  CHECK(v.size() == 6);
  CHECK(v.id_of("alpha") == 5);
}

TEST_CASE("vocabulary save/load round trip") {
  Vocabulary v = Vocabulary::build({"among the words", "zeta alpha"});
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_vocab_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "vocab.txt").string();
  v.save(path);
  Vocabulary w = Vocabulary::load(path);
  CHECK(w.size() == v.size());
  for (int64_t i = 0; i < v.size(); ++i) CHECK(w.token_of(i) == v.token_of(i));
  std::filesystem::remove_all(dir);
}

TEST_CASE("config presets validate and differ in digest") {
  auto desk = RunConfig::preset_desk();
  auto paper = RunConfig::preset_paper();
  desk.validate();
  paper.validate();
  CHECK(desk.digest() != paper.digest());
  CHECK(desk.model_digest() != paper.model_digest());
}

TEST_CASE("config file round trip preserves the digest") {
  auto cfg = RunConfig::preset_desk();
  cfg.seed = 1234;
  cfg.base_lr = 7.5e-4;
  cfg.concepts = 6;
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_cfg_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "run.cfg").string();
  cfg.save(path);
  auto back = RunConfig::load(path);
  CHECK(back.digest() == cfg.digest());
  CHECK(back.seed == 1234);
  CHECK(back.base_lr == doctest::Approx(7.5e-4));
  CHECK(back.concepts == 6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config rejects unknown keys and bad values") {
  const auto dir = std::filesystem::temp_directory_path() / "slidelm_cfg_test2";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "bad.cfg").string();
  {
    std::ofstream out(path);
    out << "preset=desk\nnot_a_key=3\n";
  }
  CHECK_THROWS_AS(RunConfig::load(path), std::runtime_error);
  {
    std::ofstream out(path);
    out << "preset=desk\ndec_heads=5\n";  // 64 % 5 != 0
  }
  CHECK_THROWS_AS(RunConfig::load(path), std::invalid_argument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("seed does not alter the model digest but alters the full digest") {
  auto a = RunConfig::preset_desk();
  auto b = RunConfig::preset_desk();
  b.seed = a.seed + 1;
  CHECK(a.model_digest() == b.model_digest());
  CHECK(a.digest() != b.digest());
}
