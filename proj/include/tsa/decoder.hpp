#pragma once

#include <array>
#include <optional>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/heads.hpp"
#include "tsa/tokenizer.hpp"

namespace tsa {

struct DecodeConfig {
  int top_m = 20;      // candidate boundary indices per side
  int max_spans = 10;  // K, proposals kept per sentence
  double gamma = 0.0;  // minimum start+end score
  bool length_penalty = true;
  bool nms = true;
  // Collapsed variant only: keep the higher-u span on cross-polarity overlap.
  bool resolve_cross_polarity = true;
};

// Token-coordinate candidate. raw = g_s[start] + g_e[end]; u subtracts the
// token length when the penalty is on.
struct CandidateSpan {
  int start = 0;
  int end = 0;
  double raw = 0.0;
  double u = 0.0;
};

// Word-coordinate decoded span, in selection order.
struct DecodedSpan {
  int start_word = 0;
  int end_word = 0;
  double raw = 0.0;
  double u = 0.0;
  std::optional<Polarity> polarity;

  bool operator==(const DecodedSpan& o) const {
    return start_word == o.start_word && end_word == o.end_word && polarity == o.polarity;
  }
};

// Indices with score != kMaskScore, best first; ties go to the lower index.
// Returns min(m, unmasked count) entries.
std::vector<int> top_m_indices(const std::vector<double>& scores, int m);

std::vector<CandidateSpan> generate_candidates(const std::vector<double>& g_start,
                                               const std::vector<double>& g_end,
                                               const DecodeConfig& cfg);

// Word-level overlap F1 between two token spans; 0 iff word-disjoint.
double word_f1(const CandidateSpan& a, const CandidateSpan& b, const TokenizedSentence& ts);

// Greedy non-maximum suppression: repeatedly keep the max-u span (ties:
// earlier start, then earlier end) and drop everything word-overlapping it.
std::vector<CandidateSpan> nms_select(const std::vector<CandidateSpan>& candidates, int max_spans,
                                      const TokenizedSentence& ts);

std::vector<DecodedSpan> decode(const BoundaryScores& scores, const DecodeConfig& cfg,
                                const TokenizedSentence& ts);

// Independent re-derivation of decode by exhaustive scans; used as the
// correctness oracle. Must match decode span-for-span, order included.
std::vector<DecodedSpan> oracle_decode(const BoundaryScores& scores, const DecodeConfig& cfg,
                                       const TokenizedSentence& ts);

// Runs decode per polarity score set and aggregates. With
// resolve_cross_polarity the higher-u span wins any word overlap across sets;
// otherwise the union is returned, grouped by polarity.
std::vector<DecodedSpan> decode_collapsed(const std::array<BoundaryScores, kNumPolarities>& scores,
                                          const DecodeConfig& cfg, const TokenizedSentence& ts);

}  // namespace tsa
