#include "tsa/heads.hpp"

#include <cmath>
#include <stdexcept>

#include "tsa/rng.hpp"

namespace tsa {

namespace {

Mat glorot(int rows, int cols, Rng& rng) {
  Mat m(rows, cols);
  double s = std::sqrt(6.0 / (rows + cols));
  for (double& x : m.a) x = rng.uniform(-s, s);
  return m;
}

}  // namespace

ExtractorParams init_extractor(int hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "extractor-init"));
  return {glorot(1, hidden, rng), glorot(1, hidden, rng)};
}

CollapsedExtractorParams init_collapsed_extractor(int hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "collapsed-extractor-init"));
  CollapsedExtractorParams p;
  for (auto& e : p.per_polarity) e = {glorot(1, hidden, rng), glorot(1, hidden, rng)};
  return p;
}

PolarityParams init_polarity(int hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "polarity-init"));
  PolarityParams p;
  p.w_attn = glorot(1, hidden, rng);
  p.w_hidden = glorot(hidden, hidden, rng);
  p.w_out = glorot(kNumPolarities, hidden, rng);
  return p;
}

ExtractorParams zeros_like(const ExtractorParams& p) {
  return {Mat(p.w_start.rows, p.w_start.cols), Mat(p.w_end.rows, p.w_end.cols)};
}

CollapsedExtractorParams zeros_like(const CollapsedExtractorParams& p) {
  CollapsedExtractorParams z;
  for (int i = 0; i < kNumPolarities; ++i) z.per_polarity[i] = zeros_like(p.per_polarity[i]);
  return z;
}

PolarityParams zeros_like(const PolarityParams& p) {
  PolarityParams z;
  z.w_attn = Mat(p.w_attn.rows, p.w_attn.cols);
  z.w_hidden = Mat(p.w_hidden.rows, p.w_hidden.cols);
  z.w_out = Mat(p.w_out.rows, p.w_out.cols);
  return z;
}

BoundaryLabels boundary_labels(const TokenizedSentence& ts,
                               const std::vector<TargetAnnotation>& targets) {
  BoundaryLabels labels;
  labels.start.assign(ts.token_count(), 0);
  labels.end.assign(ts.token_count(), 0);
  for (const TargetAnnotation& t : targets) {
    auto [a, b] = word_span_to_token_span(ts, t.start_word, t.end_word);
    labels.start[a] = 1;
    labels.end[b] = 1;
  }
  return labels;
}

std::array<BoundaryLabels, kNumPolarities> collapsed_boundary_labels(
    const TokenizedSentence& ts, const std::vector<TargetAnnotation>& targets) {
  std::array<BoundaryLabels, kNumPolarities> out;
  for (int pol = 0; pol < kNumPolarities; ++pol) {
    std::vector<TargetAnnotation> subset;
    for (const TargetAnnotation& t : targets) {
      if (!t.polarity)
        throw std::invalid_argument("collapsed labels need polarity-bearing targets");
      if (static_cast<int>(*t.polarity) == pol) subset.push_back(t);
    }
    out[pol] = boundary_labels(ts, subset);
  }
  return out;
}

BoundaryScores boundary_scores(const Mat& H, const ExtractorParams& p) {
  check_shape(p.w_start, 1, H.cols, "boundary_scores w_start");
  check_shape(p.w_end, 1, H.cols, "boundary_scores w_end");
  int T = H.rows;
  BoundaryScores s;
  s.start.resize(T);
  s.end.resize(T);
  for (int t = 0; t < T; ++t) {
    s.start[t] = dot(H.row(t), p.w_start.row(0), H.cols);
    s.end[t] = dot(H.row(t), p.w_end.row(0), H.cols);
  }
  s.start[0] = s.end[0] = kMaskScore;
  s.start[T - 1] = s.end[T - 1] = kMaskScore;
  return s;
}

std::array<BoundaryScores, kNumPolarities> collapsed_boundary_scores(
    const Mat& H, const CollapsedExtractorParams& p) {
  std::array<BoundaryScores, kNumPolarities> out;
  for (int pol = 0; pol < kNumPolarities; ++pol)
    out[pol] = boundary_scores(H, p.per_polarity[pol]);
  return out;
}

namespace {

// One side of the loss: L = -sum_i y_i log softmax(g)_i, dg = (sum y) p - y.
double nll_side(const std::vector<double>& g, const std::vector<int>& y, std::vector<double>& dg) {
  int T = static_cast<int>(g.size());
  int total = 0;
  for (int t = 0; t < T; ++t) {
    if (y[t] && g[t] == kMaskScore)
      throw std::invalid_argument("extraction_loss: label on a masked position");
    total += y[t];
  }
  dg.assign(T, 0.0);
  if (total == 0) return 0.0;  // zero-target sentences contribute nothing
  double lse = log_sum_exp(g.data(), T);
  double loss = 0.0;
  for (int t = 0; t < T; ++t) {
    double p = std::exp(g[t] - lse);
    dg[t] = total * p - y[t];
    if (y[t]) loss -= g[t] - lse;
  }
  // Masked positions have p = 0 exactly, so their gradient is already 0.
  return loss;
}

}  // namespace

ExtractionLossResult extraction_loss(const BoundaryScores& scores, const BoundaryLabels& labels) {
  if (scores.start.size() != labels.start.size() || scores.end.size() != labels.end.size())
    throw std::invalid_argument("extraction_loss: shape mismatch");
  ExtractionLossResult r;
  r.value = nll_side(scores.start, labels.start, r.d_start) +
            nll_side(scores.end, labels.end, r.d_end);
  return r;
}

void boundary_scores_backward(const Mat& H, const ExtractorParams& p,
                              const std::vector<double>& d_start,
                              const std::vector<double>& d_end, Mat& dH, ExtractorParams& grads) {
  int T = H.rows, h = H.cols;
  for (int t = 0; t < T; ++t) {
    // Masked positions are constants; their score gradient is zero by
    // construction of the loss, and framing rows get no contribution.
    if (t == 0 || t == T - 1) continue;
    double ds = d_start[t], de = d_end[t];
    if (ds == 0.0 && de == 0.0) continue;
    const double* hrow = H.row(t);
    double* dhrow = dH.row(t);
    for (int j = 0; j < h; ++j) {
      dhrow[j] += ds * p.w_start(0, j) + de * p.w_end(0, j);
      grads.w_start(0, j) += ds * hrow[j];
      grads.w_end(0, j) += de * hrow[j];
    }
  }
}

SpanRepresentation span_representation(const Mat& H, int token_start, int token_end,
                                       const PolarityParams& p) {
  if (token_start > token_end || token_start < 1 || token_end >= H.rows - 1)
    throw std::invalid_argument("span_representation: invalid span (framing excluded)");
  int len = token_end - token_start + 1;
  int h = H.cols;
  SpanRepresentation rep;
  rep.alpha.resize(len);
  for (int i = 0; i < len; ++i)
    rep.alpha[i] = dot(p.w_attn.row(0), H.row(token_start + i), h);
  softmax_inplace(rep.alpha.data(), len);
  rep.value.assign(h, 0.0);
  for (int i = 0; i < len; ++i) {
    const double* hrow = H.row(token_start + i);
    for (int j = 0; j < h; ++j) rep.value[j] += rep.alpha[i] * hrow[j];
  }
  return rep;
}

void span_representation_backward(const Mat& H, int token_start, int token_end,
                                  const PolarityParams& p, const SpanRepresentation& rep,
                                  const std::vector<double>& d_value, Mat& dH,
                                  PolarityParams& grads) {
  int len = token_end - token_start + 1;
  int h = H.cols;
  // v = sum alpha_i H_i: direct term plus the attention path.
  std::vector<double> d_alpha(len, 0.0);
  for (int i = 0; i < len; ++i) {
    const double* hrow = H.row(token_start + i);
    double* dhrow = dH.row(token_start + i);
    double s = 0.0;
    for (int j = 0; j < h; ++j) {
      dhrow[j] += rep.alpha[i] * d_value[j];
      s += d_value[j] * hrow[j];
    }
    d_alpha[i] = s;
  }
  double dot_da = 0.0;
  for (int i = 0; i < len; ++i) dot_da += d_alpha[i] * rep.alpha[i];
  for (int i = 0; i < len; ++i) {
    double d_score = rep.alpha[i] * (d_alpha[i] - dot_da);
    if (d_score == 0.0) continue;
    const double* hrow = H.row(token_start + i);
    double* dhrow = dH.row(token_start + i);
    for (int j = 0; j < h; ++j) {
      grads.w_attn(0, j) += d_score * hrow[j];
      dhrow[j] += d_score * p.w_attn(0, j);
    }
  }
}

PolarityScoresResult polarity_scores(const std::vector<double>& v, const PolarityParams& p) {
  int h = static_cast<int>(v.size());
  check_shape(p.w_hidden, h, h, "polarity_scores w_hidden");
  check_shape(p.w_out, kNumPolarities, h, "polarity_scores w_out");
  PolarityScoresResult r;
  r.hidden.assign(h, 0.0);
  for (int i = 0; i < h; ++i) r.hidden[i] = std::tanh(dot(p.w_hidden.row(i), v.data(), h));
  for (int k = 0; k < kNumPolarities; ++k)
    r.scores[k] = dot(p.w_out.row(k), r.hidden.data(), h);
  double mx = std::max({r.scores[0], r.scores[1], r.scores[2]});
  double sum = 0.0;
  for (int k = 0; k < kNumPolarities; ++k) {
    r.probs[k] = std::exp(r.scores[k] - mx);
    sum += r.probs[k];
  }
  for (int k = 0; k < kNumPolarities; ++k) r.probs[k] /= sum;
  return r;
}

void polarity_scores_backward(const std::vector<double>& v, const PolarityParams& p,
                              const PolarityScoresResult& fwd,
                              const std::array<double, kNumPolarities>& d_scores,
                              std::vector<double>& d_v, PolarityParams& grads) {
  int h = static_cast<int>(v.size());
  std::vector<double> d_hidden(h, 0.0);
  for (int k = 0; k < kNumPolarities; ++k) {
    double dg = d_scores[k];
    if (dg == 0.0) continue;
    for (int j = 0; j < h; ++j) {
      grads.w_out(k, j) += dg * fwd.hidden[j];
      d_hidden[j] += dg * p.w_out(k, j);
    }
  }
  d_v.assign(h, 0.0);
  for (int i = 0; i < h; ++i) {
    double d_pre = d_hidden[i] * (1.0 - fwd.hidden[i] * fwd.hidden[i]);
    if (d_pre == 0.0) continue;
    for (int j = 0; j < h; ++j) {
      grads.w_hidden(i, j) += d_pre * v[j];
      d_v[j] += d_pre * p.w_hidden(i, j);
    }
  }
}

ClassificationLossResult classification_loss(const PolarityScoresResult& fwd, Polarity gold) {
  ClassificationLossResult r;
  int g = static_cast<int>(gold);
  r.value = -std::log(fwd.probs[g]);
  for (int k = 0; k < kNumPolarities; ++k) r.d_scores[k] = fwd.probs[k] - (k == g ? 1.0 : 0.0);
  return r;
}

}  // namespace tsa
