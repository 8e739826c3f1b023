#include <climits>
#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "tsa/eval.hpp"
#include "tsa/rng.hpp"
#include "tsa/training.hpp"

using namespace tsa;

namespace {

AnnotatedSentence sentence(int words, std::vector<TargetAnnotation> targets) {
  AnnotatedSentence s;
  for (int i = 0; i < words; ++i) s.words.push_back("w" + std::to_string(i));
  s.targets = std::move(targets);
  return s;
}

DecodedSpan span(int a, int b, std::optional<Polarity> pol) {
  DecodedSpan d;
  d.start_word = a;
  d.end_word = b;
  d.polarity = pol;
  return d;
}

// Hand-built fixture; expected values computed by hand: gold 7, predicted 8,
// exact TP 4 -> P = 1/2, R = 4/7, F1 = 8/15; extraction TP 5 -> P = 5/8,
// R = 5/7, F1 = 2/3.
struct Fixture {
  Corpus gold;
  std::vector<Prediction> preds;
};

Fixture metric_fixture() {
  Fixture f;
  f.gold.name = "fixture";
  f.gold.sentences = {
      sentence(6, {{1, 1, Polarity::Positive}, {4, 4, Polarity::Negative}}),
      sentence(6, {{2, 3, Polarity::Positive}}),
      sentence(4, {{0, 1, Polarity::Neutral}}),
      sentence(7, {{5, 5, Polarity::Negative}}),
      sentence(5, {}),
      sentence(6, {{1, 2, Polarity::Negative}, {4, 4, Polarity::Neutral}}),
  };
  f.preds = {
      {0, {span(1, 1, Polarity::Positive), span(4, 4, Polarity::Positive)}},
      {1, {span(2, 3, Polarity::Positive)}},
      {2, {span(0, 0, Polarity::Neutral)}},
      {3, {}},
      {4, {span(2, 2, Polarity::Positive)}},
      {5, {span(1, 2, Polarity::Negative), span(1, 2, Polarity::Negative),
           span(4, 4, Polarity::Neutral)}},
  };
  return f;
}

}  // namespace

TEST_CASE("metric fixture matches the hand-computed values") {
  Fixture f = metric_fixture();
  Prf exact = exact_match_prf(f.preds, f.gold);
  CHECK(exact.tp == 4);
  CHECK(exact.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(exact.recall == doctest::Approx(4.0 / 7.0).epsilon(1e-12));
  CHECK(exact.f1 == doctest::Approx(8.0 / 15.0).epsilon(1e-12));

  Prf extraction = extraction_prf(f.preds, f.gold);
  CHECK(extraction.tp == 5);
  CHECK(extraction.precision == doctest::Approx(5.0 / 8.0).epsilon(1e-12));
  CHECK(extraction.recall == doctest::Approx(5.0 / 7.0).epsilon(1e-12));
  CHECK(extraction.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK(exact.f1 <= extraction.f1);
}

TEST_CASE("perfect predictions and the zero conventions") {
  Fixture f = metric_fixture();
  std::vector<Prediction> perfect;
  for (std::size_t i = 0; i < f.gold.sentences.size(); ++i) {
    Prediction p;
    p.sentence_id = static_cast<int>(i);
    for (const TargetAnnotation& t : f.gold.sentences[i].targets)
      p.spans.push_back(span(t.start_word, t.end_word, t.polarity));
    perfect.push_back(p);
  }
  Prf prf = exact_match_prf(perfect, f.gold);
  CHECK(prf.precision == 1.0);
  CHECK(prf.recall == 1.0);
  CHECK(prf.f1 == 1.0);

  // No predictions at all: 0/0 -> 0.
  std::vector<Prediction> none;
  for (std::size_t i = 0; i < f.gold.sentences.size(); ++i)
    none.push_back({static_cast<int>(i), {}});
  Prf empty = exact_match_prf(none, f.gold);
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);

  // Empty gold, empty predictions.
  Corpus empty_gold;
  empty_gold.sentences = {sentence(3, {})};
  Prf both = extraction_prf({{0, {}}}, empty_gold);
  CHECK(both.f1 == 0.0);
}

TEST_CASE("wrong polarity counts for extraction but not exact match") {
  Corpus gold;
  gold.sentences = {sentence(6, {{1, 1, Polarity::Positive}, {4, 4, Polarity::Negative}})};
  std::vector<Prediction> preds = {
      {0, {span(1, 1, Polarity::Positive), span(4, 4, Polarity::Positive)}}};
  Prf exact = exact_match_prf(preds, gold);
  CHECK(exact.precision == doctest::Approx(0.5));
  CHECK(exact.recall == doctest::Approx(0.5));
  CHECK(exact.f1 == doctest::Approx(0.5));
  Prf extraction = extraction_prf(preds, gold);
  CHECK(extraction.f1 == doctest::Approx(1.0));

  // Span mismatch is both a false positive and a false negative.
  std::vector<Prediction> off = {{0, {span(1, 2, Polarity::Positive)}}};
  Prf offp = extraction_prf(off, gold);
  CHECK(offp.tp == 0);
  CHECK(offp.fp == 1);
  CHECK(offp.fn == 2);
}

TEST_CASE("alignment and sentinel errors") {
  Fixture f = metric_fixture();
  f.preds[2].sentence_id = 9;
  CHECK_THROWS_WITH_AS(exact_match_prf(f.preds, f.gold),
                       doctest::Contains("prediction id 9 at position 2"),
                       std::invalid_argument);

  Fixture g = metric_fixture();
  g.preds.pop_back();
  CHECK_THROWS_AS(exact_match_prf(g.preds, g.gold), std::invalid_argument);

  // Polarity-free predictions are rejected by the exact-match metric but
  // fine for extraction.
  Fixture h = metric_fixture();
  h.preds[0].spans[0].polarity.reset();
  CHECK_THROWS_AS(exact_match_prf(h.preds, h.gold), std::invalid_argument);
  CHECK_NOTHROW(extraction_prf(h.preds, h.gold));
}

TEST_CASE("metrics are invariant under sentence reordering") {
  Fixture f = metric_fixture();
  Prf base = exact_match_prf(f.preds, f.gold);
  // Reverse sentences (ids renumbered to stay aligned).
  Corpus rgold;
  std::vector<Prediction> rpreds;
  for (int i = static_cast<int>(f.gold.sentences.size()) - 1; i >= 0; --i) {
    rgold.sentences.push_back(f.gold.sentences[i]);
    Prediction p = f.preds[i];
    p.sentence_id = static_cast<int>(rpreds.size());
    rpreds.push_back(p);
  }
  Prf reordered = exact_match_prf(rpreds, rgold);
  CHECK(reordered.precision == base.precision);
  CHECK(reordered.recall == base.recall);
  CHECK(reordered.f1 == base.f1);
}

TEST_CASE("polarity accuracy with the absent convention and a random baseline") {
  Corpus gold;
  gold.sentences = {sentence(4, {{1, 1, Polarity::Positive}, {2, 2, Polarity::Negative}})};
  CHECK(*polarity_accuracy({{Polarity::Positive, Polarity::Negative}}, gold) == 1.0);
  CHECK(*polarity_accuracy({{Polarity::Positive, Polarity::Positive}}, gold) == 0.5);

  Corpus no_targets;
  no_targets.sentences = {sentence(3, {})};
  CHECK(!polarity_accuracy({{}}, no_targets).has_value());

  // Uniform-random classifier on a balanced 3-class set: accuracy ~ 1/3.
  Corpus big;
  std::vector<std::vector<Polarity>> random_preds;
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    big.sentences.push_back(sentence(3, {{1, 1, static_cast<Polarity>(i % 3)}}));
    random_preds.push_back({static_cast<Polarity>(rng.uniform_int(0, 2))});
  }
  double acc = *polarity_accuracy(random_preds, big);
  CHECK(std::abs(acc - 1.0 / 3.0) < 0.05);
}

TEST_CASE("bucket report partitions the global counts") {
  Fixture f = metric_fixture();
  Prf global_exact = exact_match_prf(f.preds, f.gold);
  Prf global_extraction = extraction_prf(f.preds, f.gold);

  for (BucketAxis axis : {BucketAxis::SentenceLength, BucketAxis::TargetWords}) {
    std::vector<int> edges = axis == BucketAxis::SentenceLength ? std::vector<int>{4, 6}
                                                                : std::vector<int>{1, 2};
    auto rows = bucket_report(f.preds, f.gold, axis, edges);
    REQUIRE(rows.size() == 3);
    long tp = 0, fp = 0, fn = 0, gold_count = 0, pred_count = 0;
    for (const BucketRow& row : rows) {
      tp += row.exact.tp;
      fp += row.exact.fp;
      fn += row.exact.fn;
      gold_count += row.gold;
      pred_count += row.predicted;
    }
    CHECK(tp == global_exact.tp);
    CHECK(fp == global_exact.fp);
    CHECK(fn == global_exact.fn);
    CHECK(gold_count == 7);
    CHECK(pred_count == 8);
  }

  // One bucket covering everything equals the global metrics.
  auto one = bucket_report(f.preds, f.gold, BucketAxis::SentenceLength, {1000});
  REQUIRE(one.size() == 2);
  CHECK(one[0].exact.f1 == doctest::Approx(global_exact.f1));
  CHECK(one[0].extraction.f1 == doctest::Approx(global_extraction.f1));

  // A 45-word sentence lands in the open final bucket.
  Corpus long_gold;
  long_gold.sentences = {sentence(45, {{0, 0, Polarity::Positive}})};
  auto rows = bucket_report({{0, {span(0, 0, Polarity::Positive)}}}, long_gold,
                            BucketAxis::SentenceLength, {10, 20, 30, 40});
  CHECK(rows.back().label == ">40");
  CHECK(rows.back().gold == 1);
  CHECK(rows.back().exact.tp == 1);

  CHECK_THROWS_AS(bucket_report(f.preds, f.gold, BucketAxis::SentenceLength, {10, 10}),
                  std::invalid_argument);
  CHECK_THROWS_AS(bucket_report(f.preds, f.gold, BucketAxis::SentenceLength, {}),
                  std::invalid_argument);
}

TEST_CASE("evaluate assembles the full report") {
  Fixture f = metric_fixture();
  MetricsReport r = evaluate(f.preds, f.gold, BucketAxis::SentenceLength, {5});
  CHECK(r.sentences == 6);
  CHECK(r.gold_targets == 7);
  CHECK(r.predicted_targets == 8);
  CHECK(r.exact.f1 == doctest::Approx(8.0 / 15.0));
  CHECK(r.extraction.f1 == doctest::Approx(2.0 / 3.0));
  CHECK(r.bucket_axis == "sentence_length");
  CHECK(r.buckets.size() == 2);
}

TEST_CASE("crossval_aggregate means the fold metrics") {
  MetricsReport a, b;
  a.exact = make_prf(4, 6, 6);        // F1 0.4
  a.extraction = make_prf(4, 6, 6);
  a.polarity_acc = 0.9;
  a.sentences = 10;
  b.exact = make_prf(6, 4, 4);        // F1 0.6
  b.extraction = make_prf(6, 4, 4);
  b.polarity_acc = 0.7;
  b.sentences = 12;
  MetricsReport mean = crossval_aggregate({a, b});
  CHECK(mean.exact.f1 == doctest::Approx(0.5));
  CHECK(*mean.polarity_acc == doctest::Approx(0.8));
  CHECK(mean.sentences == 22);

  MetricsReport same = crossval_aggregate({a, a, a});
  CHECK(same.exact.f1 == doctest::Approx(a.exact.f1));

  b.polarity_acc.reset();
  CHECK(!crossval_aggregate({a, b}).polarity_acc.has_value());
  CHECK_THROWS_AS(crossval_aggregate({}), std::invalid_argument);
}

TEST_CASE("gamma sweep emits the grid with a non-increasing candidate column") {
  SynthConfig scfg;
  scfg.sentences = 12;
  Corpus c = generate_synthetic(scfg, 3);
  TrainConfig cfg;
  cfg.variant = Variant::Joint;
  cfg.epochs = 2;
  cfg.encoder.layers = 1;
  cfg.encoder.hidden = 16;
  cfg.encoder.attn_heads = 2;
  cfg.encoder.ffn_multiplier = 2;
  TrainResult r = train(c, cfg);

  std::vector<double> gammas;
  for (double g = -4; g <= 6; g += 0.5) gammas.push_back(g);
  std::vector<std::string> configs = {"full", "no-nms", "no-length"};
  auto rows = gamma_sweep(r.model, c, gammas, configs, DecodeConfig{});
  CHECK(rows.size() == gammas.size() * configs.size());

  for (const std::string& config : configs) {
    long prev = LONG_MAX;
    for (const SweepRow& row : rows) {
      if (row.config != config) continue;
      CHECK(row.candidates <= prev);
      prev = row.candidates;
      CHECK(row.precision >= 0.0);
      CHECK(row.recall <= 1.0);
    }
  }

  // Gamma above every score: no candidates, (0, 0) by convention.
  auto high = gamma_sweep(r.model, c, {1e9}, {"full"}, DecodeConfig{});
  REQUIRE(high.size() == 1);
  CHECK(high[0].candidates == 0);
  CHECK(high[0].precision == 0.0);
  CHECK(high[0].recall == 0.0);

  CHECK_THROWS_AS(gamma_sweep(r.model, c, gammas, {"bogus"}, DecodeConfig{}),
                  std::invalid_argument);
}
