#include <cmath>
#include <set>

#include "doctest.h"
#include "tsa/decoder.hpp"
#include "tsa/rng.hpp"

using namespace tsa;

namespace {

TokenizedSentence whole_word_sentence(int words) {
  TokenizedSentence ts;
  ts.token_ids.push_back(kClsId);
  ts.token_to_word.push_back(-1);
  for (int w = 0; w < words; ++w) {
    ts.token_ids.push_back(kReservedTokens + w);
    ts.token_to_word.push_back(w);
    ts.word_to_token_range.emplace_back(w + 1, w + 1);
  }
  ts.token_ids.push_back(kSepId);
  ts.token_to_word.push_back(-1);
  return ts;
}

// Random masked score vectors shaped like boundary_scores output.
BoundaryScores random_scores(int tokens, Rng& rng) {
  BoundaryScores s;
  s.start.resize(tokens);
  s.end.resize(tokens);
  for (int t = 0; t < tokens; ++t) {
    s.start[t] = rng.uniform(-6.0, 8.0);
    s.end[t] = rng.uniform(-6.0, 8.0);
  }
  s.start[0] = s.end[0] = kMaskScore;
  s.start[tokens - 1] = s.end[tokens - 1] = kMaskScore;
  return s;
}

// The two-short-targets construction: "Great food but the service was
// dreadful !"; food = word 1 (token 2), service = word 4 (token 5); a merged
// span (tokens 2..5) outscores both on raw but loses once length-penalized.
BoundaryScores adjacent_target_scores() {
  BoundaryScores s;
  s.start.assign(10, -3.0);
  s.end.assign(10, -3.0);
  s.start[0] = s.end[0] = kMaskScore;
  s.start[9] = s.end[9] = kMaskScore;
  s.start[2] = 4.0;   // food start
  s.end[2] = 4.0;     // food end: raw 8, u 7
  s.end[5] = 5.0;     // merged (2,5): raw 9, u 5; service end
  s.start[5] = 2.5;   // service: raw 7.5, u 6.5
  return s;
}

}  // namespace

TEST_CASE("top_m_indices ranks by score with index tie-break") {
  CHECK(top_m_indices({3, 1, 2}, 2) == std::vector<int>{0, 2});
  CHECK(top_m_indices({5, 5}, 1) == std::vector<int>{0});
  CHECK(top_m_indices({1, 9, 4}, 10) == std::vector<int>{1, 2, 0});
  // Masked positions never appear, even with a huge M.
  std::vector<double> masked = {kMaskScore, 2.0, 1.0, kMaskScore};
  CHECK(top_m_indices(masked, 10) == std::vector<int>{1, 2});
}

TEST_CASE("generate_candidates applies the score and order constraints") {
  std::vector<double> gs = {kMaskScore, 0, 5, 0, kMaskScore};
  std::vector<double> ge = {kMaskScore, 0, 0, 4, kMaskScore};
  DecodeConfig cfg;
  cfg.gamma = 8.0;
  auto r = generate_candidates(gs, ge, cfg);
  REQUIRE(r.size() == 1);
  CHECK(r[0].start == 2);
  CHECK(r[0].end == 3);
  CHECK(r[0].raw == doctest::Approx(9.0));
  CHECK(r[0].u == doctest::Approx(9.0 - 2.0));  // token length 2

  cfg.length_penalty = false;
  CHECK(generate_candidates(gs, ge, cfg)[0].u == doctest::Approx(9.0));

  cfg.gamma = 10.0;
  CHECK(generate_candidates(gs, ge, cfg).empty());

  // Candidate count never grows as gamma rises.
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    BoundaryScores s = random_scores(10, rng);
    DecodeConfig c2;
    std::size_t prev = SIZE_MAX;
    for (double gamma = -8; gamma <= 10; gamma += 1.5) {
      c2.gamma = gamma;
      std::size_t count = generate_candidates(s.start, s.end, c2).size();
      CHECK(count <= prev);
      prev = count;
    }
  }
}

TEST_CASE("word_f1 arithmetic") {
  TokenizedSentence ts = whole_word_sentence(8);
  CandidateSpan a{3, 5, 0, 0};  // words {2,3,4}
  CandidateSpan b{5, 7, 0, 0};  // words {4,5,6}
  CHECK(word_f1(a, b, ts) == doctest::Approx(1.0 / 3));
  CHECK(word_f1(a, a, ts) == doctest::Approx(1.0));
  CandidateSpan c{6, 7, 0, 0};  // words {5,6}
  CHECK(word_f1(a, c, ts) == 0.0);
}

TEST_CASE("nms_select reproduces the hand trace") {
  TokenizedSentence ts = whole_word_sentence(6);
  std::vector<CandidateSpan> r = {{1, 4, 0, 6.0}, {1, 1, 0, 7.0}, {4, 4, 0, 5.0}};
  auto kept = nms_select(r, 10, ts);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].start == 1);
  CHECK(kept[0].end == 1);
  CHECK(kept[1].start == 4);
  CHECK(kept[1].end == 4);

  // All mutually overlapping -> one survivor.
  std::vector<CandidateSpan> overlap = {{1, 3, 0, 2.0}, {2, 4, 0, 3.0}, {3, 3, 0, 1.0}};
  CHECK(nms_select(overlap, 10, ts).size() == 1);
  CHECK(nms_select(overlap, 10, ts)[0].u == 3.0);

  // K = 1 keeps only the argmax.
  auto top1 = nms_select(r, 1, ts);
  REQUIRE(top1.size() == 1);
  CHECK(top1[0].u == 7.0);

  // Tie on u: earlier start, then earlier end.
  std::vector<CandidateSpan> tie = {{3, 3, 0, 4.0}, {1, 2, 0, 4.0}, {1, 1, 0, 4.0}};
  auto kept_tie = nms_select(tie, 10, ts);
  REQUIRE(!kept_tie.empty());
  CHECK(kept_tie[0].start == 1);
  CHECK(kept_tie[0].end == 1);
}

TEST_CASE("decode splits adjacent targets only with the length penalty") {
  TokenizedSentence ts = whole_word_sentence(8);
  BoundaryScores s = adjacent_target_scores();
  DecodeConfig cfg;  // gamma 0, penalty + NMS on

  auto spans = decode(s, cfg, ts);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0].start_word == 1);  // food first: u 7
  CHECK(spans[0].end_word == 1);
  CHECK(spans[0].raw == doctest::Approx(8.0));
  CHECK(spans[0].u == doctest::Approx(7.0));
  CHECK(spans[1].start_word == 4);  // service second: u 6.5
  CHECK(spans[1].end_word == 4);

  // Penalty off: the merged composite wins and suppresses both targets.
  DecodeConfig no_penalty = cfg;
  no_penalty.length_penalty = false;
  auto merged = decode(s, no_penalty, ts);
  REQUIRE(merged.size() == 1);
  CHECK(merged[0].start_word == 1);
  CHECK(merged[0].end_word == 4);
  CHECK(merged[0].raw == doctest::Approx(9.0));

  // NMS off: top-K by u with overlaps retained.
  DecodeConfig no_nms = cfg;
  no_nms.nms = false;
  auto raw_topk = decode(s, no_nms, ts);
  REQUIRE(raw_topk.size() == 10);
  CHECK(raw_topk[0].u == doctest::Approx(7.0));
  CHECK(raw_topk[1].u == doctest::Approx(6.5));
  CHECK(raw_topk[2].u == doctest::Approx(5.0));
  bool has_overlap = false;
  for (std::size_t i = 0; i < raw_topk.size() && !has_overlap; ++i)
    for (std::size_t j = i + 1; j < raw_topk.size(); ++j)
      if (raw_topk[i].start_word <= raw_topk[j].end_word &&
          raw_topk[j].start_word <= raw_topk[i].end_word) {
        has_overlap = true;
        break;
      }
  CHECK(has_overlap);
}

TEST_CASE("decode output invariants hold on random instances") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    int words = static_cast<int>(rng.uniform_int(1, 12));
    TokenizedSentence ts = whole_word_sentence(words);
    BoundaryScores s = random_scores(ts.token_count(), rng);
    DecodeConfig cfg;
    cfg.gamma = rng.uniform(-5.0, 10.0);
    cfg.top_m = static_cast<int>(rng.uniform_int(1, ts.token_count() + 2));
    cfg.max_spans = static_cast<int>(rng.uniform_int(1, 10));
    auto starts = top_m_indices(s.start, cfg.top_m);
    auto ends = top_m_indices(s.end, cfg.top_m);
    std::set<int> start_set(starts.begin(), starts.end());
    std::set<int> end_set(ends.begin(), ends.end());

    auto spans = decode(s, cfg, ts);
    CHECK(spans.size() <= static_cast<std::size_t>(cfg.max_spans));
    for (std::size_t i = 0; i < spans.size(); ++i) {
      CHECK(spans[i].raw >= cfg.gamma);
      CHECK(spans[i].start_word >= 0);
      CHECK(spans[i].end_word < words);
      CHECK(start_set.count(spans[i].start_word + 1) == 1);
      CHECK(end_set.count(spans[i].end_word + 1) == 1);
      for (std::size_t j = i + 1; j < spans.size(); ++j) {
        bool disjoint = spans[i].end_word < spans[j].start_word ||
                        spans[j].end_word < spans[i].start_word;
        CHECK(disjoint);
      }
    }
  }
}

TEST_CASE("decode equals oracle_decode on random instances") {
  Rng rng(7);
  for (int n : {5, 10, 30}) {
    for (int trial = 0; trial < 100; ++trial) {
      TokenizedSentence ts = whole_word_sentence(n);
      BoundaryScores s = random_scores(ts.token_count(), rng);
      for (int m : {3, 20, n + 2}) {
        for (int k : {1, 5, 10}) {
          DecodeConfig cfg;
          cfg.gamma = rng.uniform(-5.0, 10.0);
          cfg.top_m = m;
          cfg.max_spans = k;
          cfg.nms = trial % 4 != 3;  // mostly NMS on, some off
          auto a = decode(s, cfg, ts);
          auto b = oracle_decode(s, cfg, ts);
          REQUIRE(a.size() == b.size());
          for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].start_word == b[i].start_word);
            CHECK(a[i].end_word == b[i].end_word);
            CHECK(a[i].raw == b[i].raw);
            CHECK(a[i].u == b[i].u);
          }
        }
      }
    }
  }

  // Saturated top-M: results independent of M beyond the vector length.
  TokenizedSentence ts = whole_word_sentence(6);
  BoundaryScores s = random_scores(ts.token_count(), rng);
  DecodeConfig cfg;
  cfg.top_m = ts.token_count();
  auto base = decode(s, cfg, ts);
  cfg.top_m = 500;
  auto wide = decode(s, cfg, ts);
  REQUIRE(base.size() == wide.size());
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(base[i] == wide[i]);

  // Empty candidate set: both return nothing.
  DecodeConfig high;
  high.gamma = 1e9;
  CHECK(decode(s, high, ts).empty());
  CHECK(oracle_decode(s, high, ts).empty());
}

TEST_CASE("decode_collapsed aggregates and resolves cross-polarity overlaps") {
  TokenizedSentence ts = whole_word_sentence(6);
  auto low = [&] {
    BoundaryScores s;
    s.start.assign(ts.token_count(), -20.0);
    s.end.assign(ts.token_count(), -20.0);
    s.start[0] = s.end[0] = kMaskScore;
    s.start[7] = s.end[7] = kMaskScore;
    return s;
  };

  // (2,3) positive with u 7 vs (3,4) negative with u 6 -> positive only.
  std::array<BoundaryScores, kNumPolarities> scores = {low(), low(), low()};
  scores[0].start[3] = 4.0;  // word 2
  scores[0].end[4] = 5.0;    // word 3: raw 9, len 2, u 7
  scores[1].start[4] = 4.0;  // word 3
  scores[1].end[5] = 4.0;    // word 4: raw 8, len 2, u 6
  DecodeConfig cfg;
  auto resolved = decode_collapsed(scores, cfg, ts);
  REQUIRE(resolved.size() == 1);
  CHECK(resolved[0].start_word == 2);
  CHECK(resolved[0].end_word == 3);
  CHECK(resolved[0].polarity == Polarity::Positive);

  // Raw union keeps both when resolution is disabled.
  DecodeConfig keep = cfg;
  keep.resolve_cross_polarity = false;
  CHECK(decode_collapsed(scores, keep, ts).size() == 2);

  // Disjoint sets: simple union, polarities tagged.
  std::array<BoundaryScores, kNumPolarities> disjoint = {low(), low(), low()};
  disjoint[0].start[1] = disjoint[0].end[1] = 4.0;  // word 0, u 7
  disjoint[2].start[5] = disjoint[2].end[5] = 3.0;  // word 4, u 5
  auto both = decode_collapsed(disjoint, cfg, ts);
  REQUIRE(both.size() == 2);
  CHECK(both[0].polarity == Polarity::Positive);
  CHECK(both[1].polarity == Polarity::Neutral);

  // Only one set above gamma: output comes from that set alone.
  std::array<BoundaryScores, kNumPolarities> single = {low(), low(), low()};
  single[1].start[2] = single[1].end[2] = 4.0;
  auto only = decode_collapsed(single, cfg, ts);
  REQUIRE(only.size() == 1);
  CHECK(only[0].polarity == Polarity::Negative);
}
