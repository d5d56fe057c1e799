#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace vislex {

/// Word-level vocabulary with four reserved ids.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;

  Vocabulary();
  /// Reserved tokens plus every distinct word of the corpus, ids assigned in
  /// lexicographic word order.
  static Vocabulary build(const std::vector<std::string>& corpus);

  int size() const { return static_cast<int>(id_to_token_.size()); }
  /// True when only the reserved tokens are present.
  bool empty() const { return size() <= 4; }
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(std::string_view token) const;

  /// SHA-256 over the serialised form.
  std::string hash() const;

  /// One "token<TAB>id" line per entry, sorted by id (equivalently by token
  /// for all non-reserved entries).
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  std::string serialize() const;

  bool operator==(const Vocabulary& o) const { return id_to_token_ == o.id_to_token_; }

 private:
  void insert(const std::string& token);
  std::map<std::string, int, std::less<>> token_to_id_;
  std::vector<std::string> id_to_token_;
};

/// Token ids. A sequence starts with kBos; kEos, if present, is last.
struct TokenSequence {
  std::vector<int> ids;
  bool operator==(const TokenSequence&) const = default;
};

/// Lowercases and splits on whitespace; each of . , ! ? ; : becomes its own token.
std::vector<std::string> split_words(std::string_view text);
/// True for tokens made only of punctuation (they do not count as words).
bool is_punctuation(std::string_view token);

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);
/// Space-joined tokens, reserved markers dropped.
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);
/// Word count of a sequence: non-reserved, non-punctuation tokens.
int word_count(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace vislex
