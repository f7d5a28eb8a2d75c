#pragma once

// Word-level tokenizer over a corpus-built vocabulary with the special ids
// the decoder needs. Vocabulary file: line-delimited tokens, id = line
// number, specials declared in a leading header block.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace slidelm {

class Vocabulary {
 public:
  static constexpr int64_t kPad = 0;
  static constexpr int64_t kBos = 1;
  static constexpr int64_t kEos = 2;
  static constexpr int64_t kUnk = 3;
  static constexpr int64_t kCls = 4;

  Vocabulary();

  // Collects every word of every text (sorted, deduplicated) after the specials.
  static Vocabulary build(const std::vector<std::string>& texts);

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  int64_t id_of(const std::string& token) const;  // kUnk when unknown
  const std::string& token_of(int64_t id) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int64_t> ids_;
  void add(const std::string& token);
};

// Whitespace-plus-punctuation word splitting; punctuation marks become
// standalone tokens.
std::vector<std::string> word_split(const std::string& text);

// No specials are added here; callers frame sequences themselves.
std::vector<int64_t> tokenize(const Vocabulary& vocab, const std::string& text);

// Space-joined tokens; special ids are skipped.
std::string detokenize(const Vocabulary& vocab, const std::vector<int64_t>& ids);

}  // namespace slidelm
