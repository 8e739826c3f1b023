#include "tsa/decoder.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace tsa {

std::vector<int> top_m_indices(const std::vector<double>& scores, int m) {
  std::vector<int> idx;
  idx.reserve(scores.size());
  for (int i = 0; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] != kMaskScore) idx.push_back(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  if (static_cast<int>(idx.size()) > m) idx.resize(m);
  return idx;
}

std::vector<CandidateSpan> generate_candidates(const std::vector<double>& g_start,
                                               const std::vector<double>& g_end,
                                               const DecodeConfig& cfg) {
  if (g_start.size() != g_end.size())
    throw std::invalid_argument("generate_candidates: score vectors differ in length");
  std::vector<int> starts = top_m_indices(g_start, cfg.top_m);
  std::vector<int> ends = top_m_indices(g_end, cfg.top_m);
  std::vector<CandidateSpan> out;
  for (int s : starts) {
    for (int e : ends) {
      if (s > e) continue;
      double raw = g_start[s] + g_end[e];
      if (raw < cfg.gamma) continue;
      CandidateSpan c;
      c.start = s;
      c.end = e;
      c.raw = raw;
      c.u = cfg.length_penalty ? raw - (e - s + 1) : raw;
      out.push_back(c);
    }
  }
  return out;
}

namespace {

// token_to_word is non-decreasing, so a token span projects to a word
// interval.
std::pair<int, int> word_interval(const CandidateSpan& c, const TokenizedSentence& ts) {
  int wa = ts.token_to_word[c.start];
  int wb = ts.token_to_word[c.end];
  if (wa < 0 || wb < 0) throw std::invalid_argument("word_f1: span touches a framing position");
  return {wa, wb};
}

bool select_before(const CandidateSpan& a, const CandidateSpan& b) {
  if (a.u != b.u) return a.u > b.u;
  if (a.start != b.start) return a.start < b.start;
  return a.end < b.end;
}

}  // namespace

double word_f1(const CandidateSpan& a, const CandidateSpan& b, const TokenizedSentence& ts) {
  auto [a1, a2] = word_interval(a, ts);
  auto [b1, b2] = word_interval(b, ts);
  int inter = std::min(a2, b2) - std::max(a1, b1) + 1;
  if (inter <= 0) return 0.0;
  int len_a = a2 - a1 + 1;
  int len_b = b2 - b1 + 1;
  return 2.0 * inter / (len_a + len_b);
}

std::vector<CandidateSpan> nms_select(const std::vector<CandidateSpan>& candidates, int max_spans,
                                      const TokenizedSentence& ts) {
  std::vector<CandidateSpan> order(candidates);
  std::sort(order.begin(), order.end(), select_before);
  std::vector<CandidateSpan> kept;
  for (const CandidateSpan& c : order) {
    if (static_cast<int>(kept.size()) >= max_spans) break;
    bool overlapped = false;
    for (const CandidateSpan& k : kept) {
      if (word_f1(c, k, ts) != 0.0) {
        overlapped = true;
        break;
      }
    }
    if (!overlapped) kept.push_back(c);
  }
  return kept;
}

namespace {

DecodedSpan to_word_span(const CandidateSpan& c, const TokenizedSentence& ts) {
  auto [wa, wb] = word_interval(c, ts);
  DecodedSpan d;
  d.start_word = wa;
  d.end_word = wb;
  d.raw = c.raw;
  d.u = c.u;
  return d;
}

}  // namespace

std::vector<DecodedSpan> decode(const BoundaryScores& scores, const DecodeConfig& cfg,
                                const TokenizedSentence& ts) {
  std::vector<CandidateSpan> candidates = generate_candidates(scores.start, scores.end, cfg);
  std::vector<CandidateSpan> selected;
  if (cfg.nms) {
    selected = nms_select(candidates, cfg.max_spans, ts);
  } else {
    // Ablation: top-K by u, overlaps retained.
    std::sort(candidates.begin(), candidates.end(), select_before);
    if (static_cast<int>(candidates.size()) > cfg.max_spans) candidates.resize(cfg.max_spans);
    selected = std::move(candidates);
  }
  std::vector<DecodedSpan> out;
  out.reserve(selected.size());
  for (const CandidateSpan& c : selected) out.push_back(to_word_span(c, ts));
  return out;
}

// ---------------------------------------------------------------------------
// Oracle: same contract, re-derived with direct set scans instead of sorting,
// kept deliberately independent of the production path above.
// ---------------------------------------------------------------------------

namespace {

std::set<int> oracle_top_m_set(const std::vector<double>& scores, int m) {
  std::set<int> chosen;
  int n = static_cast<int>(scores.size());
  while (static_cast<int>(chosen.size()) < m) {
    int best = -1;
    for (int i = 0; i < n; ++i) {
      if (scores[i] == kMaskScore || chosen.count(i)) continue;
      if (best < 0 || scores[i] > scores[best]) best = i;  // tie keeps lower index
    }
    if (best < 0) break;
    chosen.insert(best);
  }
  return chosen;
}

// Word membership array for one token span.
std::vector<char> oracle_word_set(int tok_start, int tok_end, const TokenizedSentence& ts) {
  std::vector<char> words(ts.word_count(), 0);
  for (int t = tok_start; t <= tok_end; ++t) {
    if (ts.token_to_word[t] < 0) throw std::invalid_argument("oracle: framing inside span");
    words[ts.token_to_word[t]] = 1;
  }
  return words;
}

double oracle_word_f1(const std::vector<char>& a, const std::vector<char>& b) {
  int inter = 0, size_a = 0, size_b = 0;
  for (std::size_t w = 0; w < a.size(); ++w) {
    size_a += a[w];
    size_b += b[w];
    inter += a[w] && b[w];
  }
  if (inter == 0) return 0.0;
  return 2.0 * inter / (static_cast<double>(size_a) + static_cast<double>(size_b));
}

}  // namespace

std::vector<DecodedSpan> oracle_decode(const BoundaryScores& scores, const DecodeConfig& cfg,
                                       const TokenizedSentence& ts) {
  int n = static_cast<int>(scores.start.size());
  std::set<int> start_set = oracle_top_m_set(scores.start, cfg.top_m);
  std::set<int> end_set = oracle_top_m_set(scores.end, cfg.top_m);

  struct Item {
    int start, end;
    double raw, u;
    bool alive;
    std::vector<char> words;
  };
  std::vector<Item> items;
  for (int i = 0; i < n; ++i) {
    if (!start_set.count(i)) continue;
    for (int j = i; j < n; ++j) {
      if (!end_set.count(j)) continue;
      double raw = scores.start[i] + scores.end[j];
      if (raw < cfg.gamma) continue;
      double u = cfg.length_penalty ? raw - (j - i + 1) : raw;
      items.push_back({i, j, raw, u, true, oracle_word_set(i, j, ts)});
    }
  }

  std::vector<DecodedSpan> out;
  int taken = 0;
  while (taken < cfg.max_spans) {
    int best = -1;
    for (int k = 0; k < static_cast<int>(items.size()); ++k) {
      if (!items[k].alive) continue;
      if (best < 0) {
        best = k;
        continue;
      }
      const Item& a = items[k];
      const Item& b = items[best];
      bool wins = a.u > b.u || (a.u == b.u && (a.start < b.start ||
                                               (a.start == b.start && a.end < b.end)));
      if (wins) best = k;
    }
    if (best < 0) break;
    Item& chosen = items[best];
    chosen.alive = false;
    ++taken;
    CandidateSpan c{chosen.start, chosen.end, chosen.raw, chosen.u};
    DecodedSpan d = to_word_span(c, ts);
    out.push_back(d);
    if (cfg.nms) {
      for (Item& other : items) {
        if (!other.alive) continue;
        if (oracle_word_f1(chosen.words, other.words) != 0.0) other.alive = false;
      }
    }
  }
  return out;
}

std::vector<DecodedSpan> decode_collapsed(const std::array<BoundaryScores, kNumPolarities>& scores,
                                          const DecodeConfig& cfg, const TokenizedSentence& ts) {
  std::vector<DecodedSpan> all;
  for (int pol = 0; pol < kNumPolarities; ++pol) {
    std::vector<DecodedSpan> spans = decode(scores[pol], cfg, ts);
    for (DecodedSpan& d : spans) {
      d.polarity = static_cast<Polarity>(pol);
      all.push_back(d);
    }
  }
  if (!cfg.resolve_cross_polarity) return all;

  // Higher u wins a cross-set overlap; ties by earlier start, earlier end,
  // then polarity order (+, -, 0).
  std::sort(all.begin(), all.end(), [](const DecodedSpan& a, const DecodedSpan& b) {
    if (a.u != b.u) return a.u > b.u;
    if (a.start_word != b.start_word) return a.start_word < b.start_word;
    if (a.end_word != b.end_word) return a.end_word < b.end_word;
    return static_cast<int>(*a.polarity) < static_cast<int>(*b.polarity);
  });
  std::vector<DecodedSpan> kept;
  for (const DecodedSpan& d : all) {
    bool overlapped = false;
    for (const DecodedSpan& k : kept) {
      if (d.start_word <= k.end_word && k.start_word <= d.end_word) {
        overlapped = true;
        break;
      }
    }
    if (!overlapped) kept.push_back(d);
  }
  return kept;
}

}  // namespace tsa
