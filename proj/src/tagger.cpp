#include "tsa/tagger.hpp"

#include <cmath>
#include <stdexcept>

#include "tsa/heads.hpp"
#include "tsa/rng.hpp"

namespace tsa {

int TagSet::index_of(const std::string& label) const {
  for (int i = 0; i < size(); ++i)
    if (labels[i] == label) return i;
  throw std::invalid_argument("unknown tag label: " + label);
}

TagSet make_bio_tagset(bool constrained) {
  TagSet s;
  s.labels = {"O", "B", "I"};
  s.constrained = constrained;
  s.valid_transition.assign(3, std::vector<bool>(3, true));
  s.valid_start.assign(3, true);
  if (constrained) {
    s.valid_transition[0][2] = false;  // O -> I
    s.valid_start[2] = false;          // start -> I
  }
  return s;
}

TagSet make_polarity_row_tagset() {
  TagSet s;
  s.labels = {"O", "+", "-", "0"};
  s.constrained = false;
  s.valid_transition.assign(4, std::vector<bool>(4, true));
  s.valid_start.assign(4, true);
  return s;
}

TagSet make_collapsed_tagset(bool constrained) {
  TagSet s;
  s.labels = {"O", "B+", "I+", "B-", "I-", "B0", "I0"};
  s.constrained = constrained;
  int n = s.size();
  s.valid_transition.assign(n, std::vector<bool>(n, true));
  s.valid_start.assign(n, true);
  if (constrained) {
    // I with polarity p only follows B or I of the same polarity.
    for (int pol = 0; pol < kNumPolarities; ++pol) {
      int b = 1 + 2 * pol, i = 2 + 2 * pol;
      s.valid_start[i] = false;
      for (int from = 0; from < n; ++from)
        if (from != b && from != i) s.valid_transition[from][i] = false;
    }
  }
  return s;
}

TaggerParams init_tagger(const TagSet& set, int hidden, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "tagger-init"));
  TaggerParams p;
  int n = set.size();
  p.emission_w = Mat(n, hidden);
  double s = std::sqrt(6.0 / (n + hidden));
  for (double& x : p.emission_w.a) x = rng.uniform(-s, s);
  p.trans = Mat(n, n);
  p.start = Mat(1, n);
  p.stop = Mat(1, n);
  for (int i = 0; i < n; ++i) {
    if (!set.valid_start[i]) p.start(0, i) = kMaskScore;
    for (int j = 0; j < n; ++j)
      if (!set.valid_transition[i][j]) p.trans(i, j) = kMaskScore;
  }
  return p;
}

TaggerParams zeros_like(const TaggerParams& p) {
  TaggerParams z;
  z.emission_w = Mat(p.emission_w.rows, p.emission_w.cols);
  z.trans = Mat(p.trans.rows, p.trans.cols);
  z.start = Mat(p.start.rows, p.start.cols);
  z.stop = Mat(p.stop.rows, p.stop.cols);
  return z;
}

void visit_tensors(TaggerParams& p, const std::string& prefix,
                   const std::function<void(const std::string&, Mat&)>& fn) {
  fn(prefix + "emission_w", p.emission_w);
  fn(prefix + "trans", p.trans);
  fn(prefix + "start", p.start);
  fn(prefix + "stop", p.stop);
}

Mat emission_scores(const Mat& H, const TokenizedSentence& ts, const TaggerParams& p) {
  if (p.emission_w.cols != H.cols)
    throw std::invalid_argument("emission_scores: hidden size mismatch");
  int n = ts.word_count();
  int k = p.emission_w.rows;
  Mat em(n, k);
  for (int w = 0; w < n; ++w) {
    const double* hrow = H.row(ts.word_to_token_range[w].first);
    for (int t = 0; t < k; ++t) em(w, t) = dot(p.emission_w.row(t), hrow, H.cols);
  }
  return em;
}

void emission_scores_backward(const Mat& H, const TokenizedSentence& ts, const TaggerParams& p,
                              const Mat& d_emissions, Mat& dH, TaggerParams& grads) {
  int n = ts.word_count();
  int k = p.emission_w.rows;
  for (int w = 0; w < n; ++w) {
    int row = ts.word_to_token_range[w].first;
    const double* hrow = H.row(row);
    double* dhrow = dH.row(row);
    for (int t = 0; t < k; ++t) {
      double d = d_emissions(w, t);
      if (d == 0.0) continue;
      for (int j = 0; j < H.cols; ++j) {
        grads.emission_w(t, j) += d * hrow[j];
        dhrow[j] += d * p.emission_w(t, j);
      }
    }
  }
}

namespace {

// Forward scores alpha[t][y] in log space.
Mat crf_forward(const Mat& em, const TaggerParams& p) {
  int n = em.rows, k = em.cols;
  Mat alpha(n, k);
  for (int y = 0; y < k; ++y) alpha(0, y) = p.start(0, y) + em(0, y);
  std::vector<double> tmp(k);
  for (int t = 1; t < n; ++t) {
    for (int y = 0; y < k; ++y) {
      for (int q = 0; q < k; ++q) tmp[q] = alpha(t - 1, q) + p.trans(q, y);
      alpha(t, y) = em(t, y) + log_sum_exp(tmp.data(), k);
    }
  }
  return alpha;
}

Mat crf_backward_scores(const Mat& em, const TaggerParams& p) {
  int n = em.rows, k = em.cols;
  Mat beta(n, k);
  for (int y = 0; y < k; ++y) beta(n - 1, y) = p.stop(0, y);
  std::vector<double> tmp(k);
  for (int t = n - 2; t >= 0; --t) {
    for (int y = 0; y < k; ++y) {
      for (int q = 0; q < k; ++q) tmp[q] = p.trans(y, q) + em(t + 1, q) + beta(t + 1, q);
      beta(t, y) = log_sum_exp(tmp.data(), k);
    }
  }
  return beta;
}

}  // namespace

double crf_log_partition(const Mat& emissions, const TaggerParams& p, const TagSet& set) {
  if (emissions.rows < 1) throw std::invalid_argument("crf_log_partition: empty sequence");
  if (emissions.cols != set.size())
    throw std::invalid_argument("crf_log_partition: emission width != tag count");
  Mat alpha = crf_forward(emissions, p);
  int n = emissions.rows, k = emissions.cols;
  std::vector<double> last(k);
  for (int y = 0; y < k; ++y) last[y] = alpha(n - 1, y) + p.stop(0, y);
  return log_sum_exp(last.data(), k);
}

CrfNllResult crf_nll(const Mat& emissions, const std::vector<int>& gold_tags,
                     const TaggerParams& p, const TagSet& set) {
  int n = emissions.rows, k = emissions.cols;
  if (static_cast<int>(gold_tags.size()) != n)
    throw std::invalid_argument("crf_nll: gold length mismatch");
  if (!set.valid_start[gold_tags[0]])
    throw std::invalid_argument("crf_nll: invalid gold start tag");
  for (int t = 1; t < n; ++t)
    if (!set.valid_transition[gold_tags[t - 1]][gold_tags[t]])
      throw std::invalid_argument("crf_nll: invalid gold transition at position " +
                                  std::to_string(t));

  Mat alpha = crf_forward(emissions, p);
  Mat beta = crf_backward_scores(emissions, p);
  std::vector<double> last(k);
  for (int y = 0; y < k; ++y) last[y] = alpha(n - 1, y) + p.stop(0, y);
  double log_z = log_sum_exp(last.data(), k);

  double gold_score = p.start(0, gold_tags[0]) + emissions(0, gold_tags[0]);
  for (int t = 1; t < n; ++t)
    gold_score += p.trans(gold_tags[t - 1], gold_tags[t]) + emissions(t, gold_tags[t]);
  gold_score += p.stop(0, gold_tags[n - 1]);

  CrfNllResult r;
  r.value = log_z - gold_score;
  r.d_emissions = Mat(n, k);
  r.grads = zeros_like(p);
  for (int t = 0; t < n; ++t) {
    for (int y = 0; y < k; ++y) {
      double marginal = std::exp(alpha(t, y) + beta(t, y) - log_z);
      r.d_emissions(t, y) = marginal - (gold_tags[t] == y ? 1.0 : 0.0);
    }
  }
  for (int y = 0; y < k; ++y) {
    r.grads.start(0, y) = std::exp(alpha(0, y) + beta(0, y) - log_z) - (gold_tags[0] == y);
    r.grads.stop(0, y) =
        std::exp(alpha(n - 1, y) + p.stop(0, y) - log_z) - (gold_tags[n - 1] == y);
  }
  for (int t = 0; t + 1 < n; ++t) {
    for (int y = 0; y < k; ++y) {
      for (int q = 0; q < k; ++q) {
        double edge =
            std::exp(alpha(t, y) + p.trans(y, q) + emissions(t + 1, q) + beta(t + 1, q) - log_z);
        r.grads.trans(y, q) += edge - (gold_tags[t] == y && gold_tags[t + 1] == q ? 1.0 : 0.0);
      }
    }
  }
  return r;
}

std::vector<int> viterbi_decode(const Mat& emissions, const TaggerParams& p, const TagSet& set) {
  int n = emissions.rows, k = emissions.cols;
  if (n < 1) throw std::invalid_argument("viterbi_decode: empty sequence");
  // Suffix scores so the greedy forward read-off yields the lexicographically
  // smallest argmax path.
  Mat delta(n, k);
  for (int y = 0; y < k; ++y) delta(n - 1, y) = emissions(n - 1, y) + p.stop(0, y);
  for (int t = n - 2; t >= 0; --t) {
    for (int y = 0; y < k; ++y) {
      double best = p.trans(y, 0) + delta(t + 1, 0);
      for (int q = 1; q < k; ++q) best = std::max(best, p.trans(y, q) + delta(t + 1, q));
      delta(t, y) = emissions(t, y) + best;
    }
  }
  std::vector<int> path(n);
  int cur = 0;
  double best = -1e300;
  for (int y = 0; y < k; ++y) {
    double s = p.start(0, y) + delta(0, y);
    if (s > best) {
      best = s;
      cur = y;
    }
  }
  path[0] = cur;
  for (int t = 1; t < n; ++t) {
    int next = 0;
    double b = -1e300;
    for (int q = 0; q < k; ++q) {
      double s = p.trans(cur, q) + delta(t, q);
      if (s > b) {
        b = s;
        next = q;
      }
    }
    cur = next;
    path[t] = cur;
  }
  return path;
}

std::vector<int> bio_indices(const TagSequence& seq) {
  std::vector<int> out;
  out.reserve(seq.tags.size());
  for (const Tag& t : seq.tags) out.push_back(t.boundary == 'O' ? 0 : (t.boundary == 'B' ? 1 : 2));
  return out;
}

std::vector<int> polarity_row_indices(const TagSequence& seq) {
  std::vector<int> out;
  out.reserve(seq.tags.size());
  for (const Tag& t : seq.tags)
    out.push_back(t.polarity ? 1 + static_cast<int>(*t.polarity) : 0);
  return out;
}

std::vector<int> collapsed_indices(const TagSequence& seq) {
  std::vector<int> out;
  out.reserve(seq.tags.size());
  for (const Tag& t : seq.tags) {
    if (t.boundary == 'O') {
      out.push_back(0);
    } else {
      out.push_back(1 + 2 * static_cast<int>(*t.polarity) + (t.boundary == 'I' ? 1 : 0));
    }
  }
  return out;
}

TagSequence bio_path_to_tags(const std::vector<int>& path) {
  TagSequence seq;
  seq.scheme = TagScheme::Bio;
  const char symbols[] = {'O', 'B', 'I'};
  for (int y : path) seq.tags.push_back(Tag{symbols[y], std::nullopt});
  return seq;
}

TagSequence collapsed_path_to_tags(const std::vector<int>& path) {
  TagSequence seq;
  seq.scheme = TagScheme::Collapsed;
  for (int y : path) {
    if (y == 0) {
      seq.tags.push_back(Tag{'O', std::nullopt});
    } else {
      char boundary = (y % 2 == 1) ? 'B' : 'I';
      Polarity pol = static_cast<Polarity>((y - 1) / 2);
      seq.tags.push_back(Tag{boundary, pol});
    }
  }
  return seq;
}

TagSequence joint_paths_to_tags(const std::vector<int>& bio_path,
                                const std::vector<int>& polarity_path) {
  if (bio_path.size() != polarity_path.size())
    throw std::invalid_argument("joint_paths_to_tags: length mismatch");
  TagSequence seq;
  seq.scheme = TagScheme::BioPolarity;
  const char symbols[] = {'O', 'B', 'I'};
  for (std::size_t w = 0; w < bio_path.size(); ++w) {
    Tag t;
    t.boundary = symbols[bio_path[w]];
    if (t.boundary != 'O' && polarity_path[w] != 0)
      t.polarity = static_cast<Polarity>(polarity_path[w] - 1);
    seq.tags.push_back(t);
  }
  return seq;
}

}  // namespace tsa
