#pragma once

#include <array>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/linalg.hpp"
#include "tsa/tokenizer.hpp"

namespace tsa {

// Framing positions ([CLS], [SEP]) carry this score so they can never win a
// softmax or enter decoding; finite to keep the arithmetic NaN-free. exp of
// it underflows to exactly zero in double precision.
inline constexpr double kMaskScore = -1e4;

struct ExtractorParams {
  Mat w_start;  // 1 x h
  Mat w_end;    // 1 x h
};

struct CollapsedExtractorParams {
  std::array<ExtractorParams, kNumPolarities> per_polarity;
};

struct PolarityParams {
  Mat w_attn;   // 1 x h
  Mat w_hidden; // h x h
  Mat w_out;    // k x h
};

ExtractorParams init_extractor(int hidden, std::uint64_t seed);
CollapsedExtractorParams init_collapsed_extractor(int hidden, std::uint64_t seed);
PolarityParams init_polarity(int hidden, std::uint64_t seed);

ExtractorParams zeros_like(const ExtractorParams& p);
CollapsedExtractorParams zeros_like(const CollapsedExtractorParams& p);
PolarityParams zeros_like(const PolarityParams& p);

// Multi-hot start/end indicators over token positions, never at framing.
struct BoundaryLabels {
  std::vector<int> start;  // 0/1 per token position
  std::vector<int> end;
};

BoundaryLabels boundary_labels(const TokenizedSentence& ts,
                               const std::vector<TargetAnnotation>& targets);
// Per-polarity labels for the collapsed variant.
std::array<BoundaryLabels, kNumPolarities> collapsed_boundary_labels(
    const TokenizedSentence& ts, const std::vector<TargetAnnotation>& targets);

struct BoundaryScores {
  std::vector<double> start;  // length n+2, framing positions = kMaskScore
  std::vector<double> end;
};

BoundaryScores boundary_scores(const Mat& H, const ExtractorParams& p);
std::array<BoundaryScores, kNumPolarities> collapsed_boundary_scores(
    const Mat& H, const CollapsedExtractorParams& p);

// Sum of negative log probabilities of the labeled starts and ends under one
// shared softmax per side. Gradients are with respect to the raw scores;
// masked positions get exact zeros.
struct ExtractionLossResult {
  double value = 0.0;
  std::vector<double> d_start;
  std::vector<double> d_end;
};

ExtractionLossResult extraction_loss(const BoundaryScores& scores, const BoundaryLabels& labels);

// Accumulates head gradients and dH from score gradients.
void boundary_scores_backward(const Mat& H, const ExtractorParams& p,
                              const std::vector<double>& d_start,
                              const std::vector<double>& d_end, Mat& dH, ExtractorParams& grads);

// Attention-pooled span summary: alpha = softmax(w_attn . H[rows]), v = sum
// alpha_t H[t]. The span is in token coordinates and may not touch framing.
struct SpanRepresentation {
  std::vector<double> value;  // h
  std::vector<double> alpha;  // span length, sums to 1
};

SpanRepresentation span_representation(const Mat& H, int token_start, int token_end,
                                       const PolarityParams& p);
void span_representation_backward(const Mat& H, int token_start, int token_end,
                                  const PolarityParams& p, const SpanRepresentation& rep,
                                  const std::vector<double>& d_value, Mat& dH,
                                  PolarityParams& grads);

struct PolarityScoresResult {
  std::array<double, kNumPolarities> scores;  // g_p
  std::array<double, kNumPolarities> probs;   // softmax(g_p)
  std::vector<double> hidden;                 // tanh(w_hidden v)
};

PolarityScoresResult polarity_scores(const std::vector<double>& v, const PolarityParams& p);
void polarity_scores_backward(const std::vector<double>& v, const PolarityParams& p,
                              const PolarityScoresResult& fwd,
                              const std::array<double, kNumPolarities>& d_scores,
                              std::vector<double>& d_v, PolarityParams& grads);

struct ClassificationLossResult {
  double value = 0.0;
  std::array<double, kNumPolarities> d_scores;  // w.r.t. g_p
};

ClassificationLossResult classification_loss(const PolarityScoresResult& fwd, Polarity gold);

}  // namespace tsa
