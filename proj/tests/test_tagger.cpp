#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "tsa/heads.hpp"
#include "tsa/rng.hpp"
#include "tsa/tagger.hpp"

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

// Exhaustive enumeration over all tag paths; the independent reference for
// partition, argmax, and marginals.
struct BruteForce {
  double log_partition = -1e300;
  std::vector<int> best_path;
  double best_score = -1e300;

  BruteForce(const Mat& em, const TaggerParams& p) {
    int n = em.rows, k = em.cols;
    std::vector<int> path(n, 0);
    std::vector<double> scores;
    while (true) {
      double s = p.start(0, path[0]) + em(0, path[0]);
      for (int t = 1; t < n; ++t) s += p.trans(path[t - 1], path[t]) + em(t, path[t]);
      s += p.stop(0, path[n - 1]);
      scores.push_back(s);
      if (s > best_score) {  // strict: ties keep the earlier (lexicographically
        best_score = s;      // smaller) enumeration order
        best_path = path;
      }
      int pos = n - 1;
      while (pos >= 0 && path[pos] == k - 1) path[pos--] = 0;
      if (pos < 0) break;
      ++path[pos];
    }
    double mx = -1e300;
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    log_partition = mx + std::log(sum);
  }
};

TaggerParams random_tagger(const TagSet& set, int hidden, std::uint64_t seed, double spread) {
  TaggerParams p = init_tagger(set, hidden, seed);
  Rng rng(seed * 77 + 1);
  for (double& x : p.emission_w.a) x = rng.uniform(-spread, spread);
  for (int i = 0; i < p.trans.rows; ++i)
    for (int j = 0; j < p.trans.cols; ++j)
      if (set.valid_transition[i][j]) p.trans(i, j) = rng.uniform(-spread, spread);
  for (int j = 0; j < p.start.cols; ++j) {
    if (set.valid_start[j]) p.start(0, j) = rng.uniform(-spread, spread);
    p.stop(0, j) = rng.uniform(-spread, spread);
  }
  return p;
}

Mat random_emissions(int n, int k, std::uint64_t seed) {
  Mat em(n, k);
  Rng rng(seed);
  for (double& x : em.a) x = rng.uniform(-2.0, 2.0);
  return em;
}

}  // namespace

TEST_CASE("tag sets encode the continuation rules") {
  TagSet bio = make_bio_tagset();
  CHECK(bio.size() == 3);
  CHECK(!bio.valid_transition[0][2]);  // O -> I
  CHECK(bio.valid_transition[1][2]);   // B -> I
  CHECK(!bio.valid_start[2]);

  TagSet col = make_collapsed_tagset();
  CHECK(col.size() == 7);
  CHECK(col.index_of("I-") == 4);
  CHECK(!col.valid_transition[col.index_of("B+")][col.index_of("I-")]);
  CHECK(col.valid_transition[col.index_of("B-")][col.index_of("I-")]);
  CHECK(col.valid_transition[col.index_of("I0")][col.index_of("I0")]);
  CHECK(!col.valid_transition[0][col.index_of("I+")]);

  TagSet pol = make_polarity_row_tagset();
  CHECK(pol.size() == 4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(pol.valid_transition[i][j]);

  TagSet free_bio = make_bio_tagset(false);
  CHECK(free_bio.valid_transition[0][2]);
}

TEST_CASE("emission_scores projects first-piece rows") {
  TokenizedSentence ts = whole_word_sentence(3);
  TagSet set = make_bio_tagset();
  int h = 4;
  TaggerParams p = init_tagger(set, h, 5);
  Mat H(ts.token_count(), h);
  Rng rng(6);
  for (double& x : H.a) x = rng.uniform(-1, 1);
  Mat em = emission_scores(H, ts, p);
  REQUIRE(em.rows == 3);
  REQUIRE(em.cols == 3);
  for (int w = 0; w < 3; ++w)
    for (int t = 0; t < 3; ++t)
      CHECK(em(w, t) == doctest::Approx(dot(p.emission_w.row(t), H.row(w + 1), h)));

  TaggerParams zero = p;
  zero.emission_w.zero();
  Mat em0 = emission_scores(H, ts, zero);
  for (double v : em0.a) CHECK(v == 0.0);

  TokenizedSentence one = whole_word_sentence(1);
  Mat H1(one.token_count(), h);
  CHECK(emission_scores(H1, one, p).rows == 1);
}

TEST_CASE("crf_log_partition closed form and shift identity") {
  // n = 1, two tags, zero start/stop: log(e^a + e^b).
  TagSet set = make_polarity_row_tagset();
  TagSet two;
  two.labels = {"x", "y"};
  two.constrained = false;
  two.valid_transition.assign(2, std::vector<bool>(2, true));
  two.valid_start.assign(2, true);
  TaggerParams p = init_tagger(two, 4, 1);
  Mat em(1, 2);
  em(0, 0) = 1.3;
  em(0, 1) = -0.4;
  CHECK(crf_log_partition(em, p, two) ==
        doctest::Approx(std::log(std::exp(1.3) + std::exp(-0.4))).epsilon(1e-12));

  // Adding c to every emission at one position shifts log Z by exactly c.
  TaggerParams rp = random_tagger(two, 4, 9, 1.5);
  Mat em2 = random_emissions(4, 2, 10);
  double base = crf_log_partition(em2, rp, two);
  for (int t = 0; t < 2; ++t) em2(2, t) += 0.773;
  CHECK(crf_log_partition(em2, rp, two) == doctest::Approx(base + 0.773).epsilon(1e-10));
}

TEST_CASE("forward algorithm matches exhaustive path sums") {
  Rng rng(31);
  std::vector<TagSet> sets = {make_bio_tagset(), make_polarity_row_tagset(),
                              make_collapsed_tagset()};
  for (int trial = 0; trial < 60; ++trial) {
    const TagSet& set = sets[trial % sets.size()];
    if (set.size() > 5 && trial % 3 == 0) continue;  // keep enumeration small
    int n = static_cast<int>(rng.uniform_int(1, 6));
    TaggerParams p = random_tagger(set, 4, 100 + trial, 2.0);
    Mat em = random_emissions(n, set.size(), 200 + trial);
    BruteForce oracle(em, p);
    CHECK(std::abs(crf_log_partition(em, p, set) - oracle.log_partition) < 1e-8);
    CHECK(viterbi_decode(em, p, set) == oracle.best_path);
  }
}

TEST_CASE("viterbi breaks ties toward the smallest tag sequence") {
  TagSet pol = make_polarity_row_tagset();
  TaggerParams p = init_tagger(pol, 4, 2);  // zero scores everywhere
  Mat em(3, 4);                             // all paths tie
  std::vector<int> path = viterbi_decode(em, p, pol);
  CHECK(path == std::vector<int>{0, 0, 0});

  // Two equally scored tags at one position: smaller index wins.
  Mat em2(2, 4);
  em2(0, 1) = 5.0;
  em2(0, 2) = 5.0;
  CHECK(viterbi_decode(em2, p, pol)[0] == 1);
}

TEST_CASE("decoded paths respect the transition mask") {
  TagSet bio = make_bio_tagset();
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    TaggerParams p = random_tagger(bio, 4, 300 + trial, 3.0);
    int n = static_cast<int>(rng.uniform_int(1, 8));
    Mat em = random_emissions(n, 3, 400 + trial);
    // Push emissions hard toward I to tempt an invalid path.
    for (int t = 0; t < n; ++t) em(t, 2) += 6.0;
    std::vector<int> path = viterbi_decode(em, p, bio);
    CHECK(path[0] != 2);
    for (int t = 1; t < n; ++t)
      if (path[t] == 2) CHECK(path[t - 1] != 0);
  }
}

TEST_CASE("crf_nll values and gradients") {
  // Single valid path: the gold path carries all mass, NLL = 0.
  TagSet forced;
  forced.labels = {"a", "b"};
  forced.constrained = true;
  forced.valid_transition = {{false, true}, {false, false}};
  forced.valid_start = {true, false};
  TaggerParams fp = init_tagger(forced, 4, 3);
  Mat fem(2, 2);
  fem(0, 0) = 0.7;
  fem(1, 1) = -1.2;
  CrfNllResult forced_r = crf_nll(fem, {0, 1}, fp, forced);
  CHECK(forced_r.value == doctest::Approx(0.0).epsilon(1e-12));

  // Uniform scores over an unconstrained 4-tag set: NLL = n log 4.
  TagSet pol = make_polarity_row_tagset();
  TaggerParams up = init_tagger(pol, 4, 4);
  Mat uem(3, 4);
  CrfNllResult uniform_r = crf_nll(uem, {1, 0, 3}, up, pol);
  CHECK(uniform_r.value == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));

  // Invalid gold transitions are rejected.
  TagSet bio = make_bio_tagset();
  TaggerParams bp = random_tagger(bio, 4, 5, 1.0);
  Mat bem = random_emissions(2, 3, 6);
  CHECK_THROWS_AS(crf_nll(bem, {0, 2}, bp, bio), std::invalid_argument);  // O -> I
  CHECK_THROWS_AS(crf_nll(bem, {2, 2}, bp, bio), std::invalid_argument);  // start I

  // NLL >= 0 and the gradients match finite differences.
  Rng rng(53);
  for (int trial = 0; trial < 10; ++trial) {
    int n = static_cast<int>(rng.uniform_int(2, 5));
    TaggerParams p = random_tagger(bio, 4, 500 + trial, 1.5);
    Mat em = random_emissions(n, 3, 600 + trial);
    std::vector<int> gold(n, 0);
    gold[n - 1] = 1;  // O ... O B, always valid
    CrfNllResult r = crf_nll(em, gold, p, bio);
    CHECK(r.value >= 0.0);

    const double eps = 1e-6;
    double worst = 0.0;
    auto fd_check = [&](Mat& tensor, const Mat& analytic) {
      double scale = 0.0;
      for (double x : analytic.a) scale = std::max(scale, std::abs(x));
      for (std::size_t i = 0; i < tensor.a.size(); ++i) {
        double saved = tensor.a[i];
        tensor.a[i] = saved + eps;
        double upv = crf_nll(em, gold, p, bio).value;
        tensor.a[i] = saved - eps;
        double downv = crf_nll(em, gold, p, bio).value;
        tensor.a[i] = saved;
        double fd = (upv - downv) / (2 * eps);
        scale = std::max(scale, std::abs(fd));
        if (scale < 1e-8) continue;
        worst = std::max(worst, std::abs(fd - analytic.a[i]) / scale);
      }
    };
    fd_check(p.trans, r.grads.trans);
    fd_check(p.start, r.grads.start);
    fd_check(p.stop, r.grads.stop);
    // Emission gradient via direct perturbation of the emission matrix.
    double scale = 0.0;
    for (double x : r.d_emissions.a) scale = std::max(scale, std::abs(x));
    for (std::size_t i = 0; i < em.a.size(); ++i) {
      double saved = em.a[i];
      em.a[i] = saved + eps;
      double upv = crf_nll(em, gold, p, bio).value;
      em.a[i] = saved - eps;
      double downv = crf_nll(em, gold, p, bio).value;
      em.a[i] = saved;
      double fd = (upv - downv) / (2 * eps);
      worst = std::max(worst, std::abs(fd - r.d_emissions.a[i]) / std::max(scale, 1e-8));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("path conversions and the majority-vote joint readout") {
  // Collapsed path O O B+ I+ O ... B- -> spans (2,3,+), (10,10,-).
  TagSet col = make_collapsed_tagset();
  std::vector<int> path(12, 0);
  path[2] = col.index_of("B+");
  path[3] = col.index_of("I+");
  path[10] = col.index_of("B-");
  auto spans = tags_to_spans(collapsed_path_to_tags(path));
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == TargetAnnotation{2, 3, Polarity::Positive});
  CHECK(spans[1] == TargetAnnotation{10, 10, Polarity::Negative});

  // All-O path decodes to nothing.
  CHECK(tags_to_spans(collapsed_path_to_tags(std::vector<int>(5, 0))).empty());

  // Factored joint readout: a B+ I- span votes {+, -}, tie goes Positive --
  // the word-level sentiment inconsistency made visible.
  std::vector<int> bio = {1, 2, 0};                 // B I O
  std::vector<int> pol = {1 + 0, 1 + 1, 0};         // + - O
  auto joint = tags_to_spans(joint_paths_to_tags(bio, pol));
  REQUIRE(joint.size() == 1);
  CHECK(joint[0] == TargetAnnotation{0, 1, Polarity::Positive});

  // Clear majority wins.
  std::vector<int> bio3 = {1, 2, 2};
  std::vector<int> pol3 = {1 + 1, 1 + 2, 1 + 2};    // - 0 0
  auto major = tags_to_spans(joint_paths_to_tags(bio3, pol3));
  REQUIRE(major.size() == 1);
  CHECK(major[0].polarity == Polarity::Neutral);

  // All polarity votes O on a predicted span: three-way tie, Positive.
  std::vector<int> nop = {0, 0, 0};
  auto tied = tags_to_spans(joint_paths_to_tags({1, 0, 0}, nop));
  REQUIRE(tied.size() == 1);
  CHECK(tied[0].polarity == Polarity::Positive);
}
