#include "slidelm/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace slidelm {

namespace {
const char* kSpecialNames[] = {"<pad>", "<bos>", "<eos>", "<unk>", "<cls>"};
bool is_punct(char c) {
  return c == '.' || c == ',' || c == ':' || c == ';' || c == '?' || c == '!' ||
         c == '(' || c == ')';
}
}  // namespace

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialNames) add(s);
}

void Vocabulary::add(const std::string& token) {
  ids_[token] = static_cast<int64_t>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : word_split(t)) words.insert(w);
  Vocabulary v;
  for (const auto& w : words)
    if (!v.ids_.count(w)) v.add(w);
  return v;
}

int64_t Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int64_t id) const {
  if (id < 0 || id >= size()) throw std::invalid_argument("vocabulary: id out of range");
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot open " + path);
  out << "# slidelm vocabulary v1\n";
  out << "# special pad " << kPad << "\n";
  out << "# special bos " << kBos << "\n";
  out << "# special eos " << kEos << "\n";
  out << "# special unk " << kUnk << "\n";
  out << "# special cls " << kCls << "\n";
  for (const auto& t : tokens_) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path);
  Vocabulary v;
  v.tokens_.clear();
  v.ids_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;  // header block
    v.add(line);
  }
  if (v.size() < 5 || v.tokens_[static_cast<size_t>(kCls)] != "<cls>")
    throw std::runtime_error("vocabulary: malformed file " + path);
  return v;
}

std::vector<std::string> word_split(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::exchange(cur, {}));
    } else if (is_punct(c)) {
      if (!cur.empty()) out.push_back(std::exchange(cur, {}));
      out.push_back(std::string(1, c));
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<int64_t> tokenize(const Vocabulary& vocab, const std::string& text) {
  std::vector<int64_t> ids;
  for (const auto& w : word_split(text)) ids.push_back(vocab.id_of(w));
  return ids;
}

std::string detokenize(const Vocabulary& vocab, const std::vector<int64_t>& ids) {
  std::string out;
  for (int64_t id : ids) {
    if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos ||
        id == Vocabulary::kCls)
      continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_of(id);
  }
  return out;
}

}  // namespace slidelm
