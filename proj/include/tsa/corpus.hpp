#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tsa {

enum class Polarity { Positive, Negative, Neutral };
inline constexpr int kNumPolarities = 3;

const char* polarity_symbol(Polarity p);                 // "+", "-", "0"
std::optional<Polarity> polarity_from_symbol(const std::string& s);

// One opinion target: word-level span, 0-based inclusive on both ends.
// The polarity is absent only for spans recovered from plain BIO tags;
// gold data always carries one.
struct TargetAnnotation {
  int start_word = 0;
  int end_word = 0;
  std::optional<Polarity> polarity;

  bool operator==(const TargetAnnotation& o) const {
    return start_word == o.start_word && end_word == o.end_word && polarity == o.polarity;
  }
};

struct AnnotatedSentence {
  std::vector<std::string> words;
  std::vector<TargetAnnotation> targets;

  int word_count() const { return static_cast<int>(words.size()); }
};

struct Corpus {
  std::string name;
  std::vector<AnnotatedSentence> sentences;
};

enum class TagScheme { Bio, BioPolarity, Collapsed };

// Per-word tag. `boundary` is one of 'B', 'I', 'O'; `polarity` is set on
// target words for the polarity-bearing schemes.
struct Tag {
  char boundary = 'O';
  std::optional<Polarity> polarity;

  bool operator==(const Tag& o) const { return boundary == o.boundary && polarity == o.polarity; }
};

struct TagSequence {
  TagScheme scheme = TagScheme::Bio;
  std::vector<Tag> tags;
};

std::string render_tag(const Tag& t, TagScheme scheme);
std::string render_tag_sequence(const TagSequence& seq);

// Returns a human-readable violation per broken invariant; empty means valid.
std::vector<std::string> validate_sentence(const AnnotatedSentence& s);

TagSequence spans_to_tags(const AnnotatedSentence& s, TagScheme scheme);

// Inverse of spans_to_tags. Plain BIO yields polarity-free spans. Throws on a
// malformed continuation (I after O or at sentence start), naming the position.
std::vector<TargetAnnotation> tags_to_spans(const TagSequence& seq);

// JSONL corpus I/O. One object per line: {"words":[...],"targets":[{"start":..,
// "end":..,"polarity":"+"|"-"|"0"}]}. Errors carry 1-based line numbers.
Corpus parse_corpus(const std::string& path);
Corpus parse_corpus_text(const std::string& text, const std::string& name);

// Collects one issue per bad line instead of stopping at the first.
struct LineIssue {
  int line = 0;
  std::string message;
};
std::vector<LineIssue> lint_corpus_text(const std::string& text);
std::string corpus_to_jsonl(const Corpus& c);
void write_corpus(const Corpus& c, const std::string& path);

struct SynthConfig {
  int sentences = 50;
  int filler_words = 30;       // size of the non-target vocabulary
  int target_words = 12;       // size of the target-noun vocabulary
  int min_sentence_len = 5;
  int max_sentence_len = 12;
  // Index = count; weight of drawing that many targets per sentence.
  std::vector<double> targets_per_sentence = {0.0, 0.55, 0.35, 0.10};
  // Index = length in words; weight of drawing a target that long.
  std::vector<double> target_length = {0.0, 0.75, 0.25};
  // Probability that a 2+-target sentence uses the "<marker> X and Y" pattern
  // (two same-polarity targets separated by exactly one word).
  double adjacency_rate = 0.3;
  // Marker word placed directly before each target; fixes its polarity.
  std::map<std::string, Polarity> marker_lexicon = {
      {"love", Polarity::Positive},  {"great", Polarity::Positive},
      {"perfect", Polarity::Positive}, {"hate", Polarity::Negative},
      {"dreadful", Polarity::Negative}, {"awful", Polarity::Negative},
      {"saw", Polarity::Neutral},    {"used", Polarity::Neutral},
      {"tried", Polarity::Neutral}};
};

// Deterministic per (config, seed). Every sentence is valid; polarity is tied
// to the marker directly before each target so a desk-scale model can learn
// the task. Not a property of the original datasets; scaffolding only.
Corpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

struct Fold {
  Corpus train;
  Corpus test;
};

// Disjoint folds covering the corpus, sizes differing by at most one.
std::vector<Fold> kfold_split(const Corpus& c, int k, std::uint64_t seed);

}  // namespace tsa
