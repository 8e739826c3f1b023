#include "tsa/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tsa {

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return out;
}

}  // namespace

int Vocabulary::lookup_word(const std::string& word) const {
  auto it = word_to_id.find(lowercase ? lower(word) : word);
  return it == word_to_id.end() ? kUnkId : it->second;
}

int Vocabulary::add_word(const std::string& word) {
  auto it = word_to_id.find(word);
  if (it != word_to_id.end()) return it->second;
  int id = size();
  id_to_token.push_back(word);
  word_to_id.emplace(word, id);
  return id;
}

int Vocabulary::add_piece(const std::string& piece) {
  auto it = piece_to_id.find(piece);
  if (it != piece_to_id.end()) return it->second;
  int id = size();
  id_to_token.push_back("##" + piece);
  piece_to_id.emplace(piece, id);
  return id;
}

Vocabulary build_vocab(const Corpus& c, const TokenizerConfig& cfg) {
  if (cfg.max_size < kReservedTokens + 1)
    throw std::invalid_argument("build_vocab: max_size cannot hold reserved tokens plus content");
  if (c.sentences.empty()) throw std::invalid_argument("build_vocab: empty corpus");

  Vocabulary v;
  v.lowercase = cfg.lowercase;
  v.id_to_token = {"[CLS]", "[SEP]", "[UNK]"};

  std::map<std::string, long> freq;
  for (const AnnotatedSentence& s : c.sentences)
    for (const std::string& w : s.words) ++freq[cfg.lowercase ? lower(w) : w];

  int budget = cfg.max_size - kReservedTokens;
  if (cfg.subword) {
    // Characters first: they guarantee coverage of every seen word.
    std::set<std::string> chars;
    for (const auto& [word, count] : freq)
      for (char ch : word) chars.insert(std::string(1, ch));
    for (const std::string& ch : chars) {
      if (budget == 0) break;
      v.add_piece(ch);
      --budget;
    }
  }

  std::vector<std::pair<std::string, long>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [word, count] : ranked) {
    if (budget == 0) break;
    v.add_word(word);
    --budget;
  }
  return v;
}

namespace {

// Greedy longest match over the piece inventory; empty result means the word
// cannot be covered and falls back to a single [UNK].
std::vector<int> split_into_pieces(const std::string& word, const Vocabulary& v) {
  std::vector<int> ids;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t best_len = 0;
    int best_id = -1;
    for (std::size_t len = word.size() - pos; len >= 1; --len) {
      auto it = v.piece_to_id.find(word.substr(pos, len));
      if (it != v.piece_to_id.end()) {
        best_len = len;
        best_id = it->second;
        break;
      }
    }
    if (best_id < 0) return {};
    ids.push_back(best_id);
    pos += best_len;
  }
  return ids;
}

}  // namespace

TokenizedSentence tokenize(const AnnotatedSentence& s, const Vocabulary& v, int max_tokens) {
  TokenizedSentence ts;
  ts.token_ids.push_back(kClsId);
  ts.token_to_word.push_back(-1);
  for (int w = 0; w < s.word_count(); ++w) {
    std::string word = v.lowercase ? lower(s.words[w]) : s.words[w];
    int first = ts.token_count();
    auto it = v.word_to_id.find(word);
    if (it != v.word_to_id.end()) {
      ts.token_ids.push_back(it->second);
      ts.token_to_word.push_back(w);
    } else if (v.subword_mode()) {
      std::vector<int> piece_ids = split_into_pieces(word, v);
      if (piece_ids.empty()) piece_ids.push_back(kUnkId);
      for (int id : piece_ids) {
        ts.token_ids.push_back(id);
        ts.token_to_word.push_back(w);
      }
    } else {
      ts.token_ids.push_back(kUnkId);
      ts.token_to_word.push_back(w);
    }
    ts.word_to_token_range.emplace_back(first, ts.token_count() - 1);
  }
  ts.token_ids.push_back(kSepId);
  ts.token_to_word.push_back(-1);
  if (ts.token_count() > max_tokens)
    throw std::runtime_error("tokenize: sequence of " + std::to_string(ts.token_count()) +
                             " tokens exceeds the maximum of " + std::to_string(max_tokens));
  return ts;
}

std::pair<int, int> word_span_to_token_span(const TokenizedSentence& ts, int a, int b) {
  if (a > b || a < 0 || b >= ts.word_count())
    throw std::invalid_argument("word_span_to_token_span: invalid word span");
  return {ts.word_to_token_range[a].first, ts.word_to_token_range[b].second};
}

std::pair<int, int> token_span_to_word_span(const TokenizedSentence& ts, int ts_start, int ts_end) {
  if (ts_start > ts_end || ts_start < 0 || ts_end >= ts.token_count())
    throw std::invalid_argument("token_span_to_word_span: invalid token span");
  if (ts.token_to_word[ts_start] < 0 || ts.token_to_word[ts_end] < 0)
    throw std::invalid_argument("token_span_to_word_span: span touches a framing position");
  return {ts.token_to_word[ts_start], ts.token_to_word[ts_end]};
}

std::string vocab_to_text(const Vocabulary& v) {
  std::string out = "# one token per line; line order = id; reserved tokens first\n";
  if (v.lowercase) out = "# lowercase\n" + out;
  for (const std::string& t : v.id_to_token) {
    out += t;
    out += '\n';
  }
  return out;
}

void write_vocab(const Vocabulary& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  out << vocab_to_text(v);
}

Vocabulary vocab_from_text(const std::string& text) {
  Vocabulary v;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("##", 0) == 0 && line.size() > 2) {
      v.add_piece(line.substr(2));
      continue;
    }
    if (!line.empty() && line[0] == '#') {
      if (line == "# lowercase") v.lowercase = true;
      continue;
    }
    if (line.empty()) continue;
    if (static_cast<int>(v.id_to_token.size()) < kReservedTokens) {
      v.id_to_token.push_back(line);
      continue;
    }
    v.add_word(line);
  }
  if (v.id_to_token.size() < kReservedTokens ||
      v.id_to_token[kClsId] != "[CLS]" || v.id_to_token[kSepId] != "[SEP]" ||
      v.id_to_token[kUnkId] != "[UNK]")
    throw std::runtime_error("vocabulary file: reserved tokens [CLS] [SEP] [UNK] must come first");
  return v;
}

Vocabulary read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return vocab_from_text(buf.str());
}

}  // namespace tsa
