#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tsa/corpus.hpp"

namespace tsa {

inline constexpr int kClsId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kReservedTokens = 3;

// One dense id space holds the reserved tokens, the kept word types, and the
// subword pieces. Piece entries are stored with a "##" prefix so the
// one-token-per-line vocabulary file stays self-describing.
struct Vocabulary {
  std::vector<std::string> id_to_token;
  std::map<std::string, int> word_to_id;   // whole-word entries only
  std::map<std::string, int> piece_to_id;  // bare piece string -> id
  bool lowercase = false;

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool subword_mode() const { return !piece_to_id.empty(); }
  int lookup_word(const std::string& word) const;  // kUnkId when absent
  int add_word(const std::string& word);
  int add_piece(const std::string& piece);
};

struct TokenizedSentence {
  std::vector<int> token_ids;                            // [CLS] ... [SEP]
  std::vector<int> token_to_word;                        // -1 at framing positions
  std::vector<std::pair<int, int>> word_to_token_range;  // inclusive token range

  int token_count() const { return static_cast<int>(token_ids.size()); }
  int word_count() const { return static_cast<int>(word_to_token_range.size()); }
};

struct TokenizerConfig {
  int max_size = 1 << 20;
  bool subword = false;
  bool lowercase = false;
  int max_tokens = 128;  // longer sequences are rejected, never truncated
};

// Keeps the most frequent word types (frequency desc, then lexicographic).
// In subword mode the distinct characters of the corpus join the table first
// so every seen word stays representable; OOV words are then split by greedy
// longest match over the piece inventory.
Vocabulary build_vocab(const Corpus& c, const TokenizerConfig& cfg);

TokenizedSentence tokenize(const AnnotatedSentence& s, const Vocabulary& v, int max_tokens = 128);

// Word-span (inclusive) to token-span (inclusive) and back. Framing positions
// are rejected.
std::pair<int, int> word_span_to_token_span(const TokenizedSentence& ts, int a, int b);
std::pair<int, int> token_span_to_word_span(const TokenizedSentence& ts, int ts_start, int ts_end);

// One token per line, line number = id, reserved tokens first; '#' alone
// starts a comment line. Piece entries keep their "##" prefix.
void write_vocab(const Vocabulary& v, const std::string& path);
std::string vocab_to_text(const Vocabulary& v);
Vocabulary vocab_from_text(const std::string& text);
Vocabulary read_vocab(const std::string& path);

}  // namespace tsa
