#include "vislex/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "vislex/digest.hpp"
#include "vislex/errors.hpp"

namespace vislex {

namespace {

constexpr std::string_view kPunct = ".,!?;:";

}  // namespace

Vocabulary::Vocabulary() {
  for (const char* t : {"<bos>", "<eos>", "<pad>", "<unk>"}) insert(t);
}

void Vocabulary::insert(const std::string& token) {
  if (token_to_id_.contains(token)) return;
  token_to_id_.emplace(token, size());
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus) {
  std::set<std::string> words;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) words.insert(std::move(w));
  Vocabulary v;
  for (const auto& w : words) v.insert(w);
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ArgumentError("token id out of range");
  return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.contains(token); }

std::string Vocabulary::serialize() const {
  std::ostringstream out;
  for (int i = 0; i < size(); ++i) out << id_to_token_[static_cast<size_t>(i)] << '\t' << i << '\n';
  return out.str();
}

std::string Vocabulary::hash() const { return sha256_hex(serialize()); }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write vocabulary " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read vocabulary " + path.string());
  Vocabulary v;
  v.token_to_id_.clear();
  v.id_to_token_.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw FormatError("vocabulary line without tab: " + line);
    const std::string tok = line.substr(0, tab);
    const int id = std::stoi(line.substr(tab + 1));
    if (id != v.size() || v.token_to_id_.contains(tok))
      throw FormatError("vocabulary ids must be dense and unique near '" + tok + "'");
    v.insert(tok);
  }
  if (v.size() < 4 || v.token(kBos) != "<bos>" || v.token(kEos) != "<eos>" ||
      v.token(kPad) != "<pad>" || v.token(kUnk) != "<unk>")
    throw FormatError("vocabulary is missing reserved tokens");
  return v;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (kPunct.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur += static_cast<char>(std::tolower(c));
    }
  }
  flush();
  return out;
}

bool is_punctuation(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return kPunct.find(c) != std::string_view::npos;
  });
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  if (vocab.empty()) throw ConfigError("tokenize: vocabulary has no words");
  TokenSequence seq;
  seq.ids.push_back(Vocabulary::kBos);
  for (const auto& w : split_words(text)) seq.ids.push_back(vocab.id(w));
  return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
  std::string out;
  for (int id : seq.ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

int word_count(const TokenSequence& seq, const Vocabulary& vocab) {
  int n = 0;
  for (int id : seq.ids) {
    if (id == Vocabulary::kBos || id == Vocabulary::kEos || id == Vocabulary::kPad) continue;
    if (!is_punctuation(vocab.token(id))) ++n;
  }
  return n;
}

}  // namespace vislex
