#include "tsa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tsa {

Prf make_prf(long tp, long fp, long fn) {
  Prf r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

namespace {

void check_alignment(const std::vector<Prediction>& preds, const Corpus& gold) {
  if (preds.size() != gold.sentences.size())
    throw std::invalid_argument("evaluate: " + std::to_string(preds.size()) +
                                " prediction rows vs " + std::to_string(gold.sentences.size()) +
                                " gold sentences");
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i].sentence_id != static_cast<int>(i))
      throw std::invalid_argument("evaluate: prediction id " +
                                  std::to_string(preds[i].sentence_id) + " at position " +
                                  std::to_string(i));
}

// Greedy one-to-one matching within a sentence. Returns per-prediction
// matched flags and per-gold matched flags.
struct SentenceMatch {
  std::vector<bool> pred_matched;
  std::vector<bool> gold_matched;
};

SentenceMatch match_sentence(const std::vector<DecodedSpan>& preds,
                             const std::vector<TargetAnnotation>& golds, bool with_polarity) {
  SentenceMatch m;
  m.pred_matched.assign(preds.size(), false);
  m.gold_matched.assign(golds.size(), false);
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (with_polarity && !preds[p].polarity)
      throw std::invalid_argument(
          "exact-match evaluation rejects polarity-free predictions (extraction-only output)");
    for (std::size_t g = 0; g < golds.size(); ++g) {
      if (m.gold_matched[g]) continue;
      if (preds[p].start_word != golds[g].start_word || preds[p].end_word != golds[g].end_word)
        continue;
      if (with_polarity && preds[p].polarity != golds[g].polarity) continue;
      m.pred_matched[p] = true;
      m.gold_matched[g] = true;
      break;
    }
  }
  return m;
}

Prf corpus_prf(const std::vector<Prediction>& preds, const Corpus& gold, bool with_polarity) {
  check_alignment(preds, gold);
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    SentenceMatch m = match_sentence(preds[i].spans, gold.sentences[i].targets, with_polarity);
    for (bool matched : m.pred_matched) matched ? ++tp : ++fp;
    for (bool matched : m.gold_matched)
      if (!matched) ++fn;
  }
  return make_prf(tp, fp, fn);
}

}  // namespace

Prf exact_match_prf(const std::vector<Prediction>& preds, const Corpus& gold) {
  return corpus_prf(preds, gold, true);
}

Prf extraction_prf(const std::vector<Prediction>& preds, const Corpus& gold) {
  return corpus_prf(preds, gold, false);
}

std::optional<double> polarity_accuracy(const std::vector<std::vector<Polarity>>& predicted,
                                        const Corpus& gold) {
  if (predicted.size() != gold.sentences.size())
    throw std::invalid_argument("polarity_accuracy: prediction rows do not match corpus");
  long total = 0, correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const auto& golds = gold.sentences[i].targets;
    if (predicted[i].size() != golds.size())
      throw std::invalid_argument("polarity_accuracy: target count mismatch in sentence " +
                                  std::to_string(i));
    for (std::size_t t = 0; t < golds.size(); ++t) {
      ++total;
      if (golds[t].polarity && predicted[i][t] == *golds[t].polarity) ++correct;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<int> default_bucket_edges(BucketAxis axis) {
  // Mirrors the granularity of the reported length breakdowns.
  if (axis == BucketAxis::SentenceLength) return {10, 20, 30, 40};
  return {1, 2, 3};
}

namespace {

int bucket_index(int value, const std::vector<int>& edges) {
  for (std::size_t i = 0; i < edges.size(); ++i)
    if (value <= edges[i]) return static_cast<int>(i);
  return static_cast<int>(edges.size());
}

std::string bucket_label(std::size_t i, const std::vector<int>& edges) {
  if (i == edges.size()) return ">" + std::to_string(edges.back());
  if (i == 0) return "<=" + std::to_string(edges[0]);
  return std::to_string(edges[i - 1] + 1) + "-" + std::to_string(edges[i]);
}

}  // namespace

std::vector<BucketRow> bucket_report(const std::vector<Prediction>& preds, const Corpus& gold,
                                     BucketAxis axis, const std::vector<int>& edges) {
  check_alignment(preds, gold);
  if (edges.empty()) throw std::invalid_argument("bucket_report: need at least one edge");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1])
      throw std::invalid_argument("bucket_report: edges must be strictly increasing");

  std::size_t nb = edges.size() + 1;
  struct Counts {
    long tp = 0, fp = 0, fn = 0;
  };
  std::vector<Counts> exact(nb), extraction(nb);
  std::vector<long> gold_count(nb, 0), pred_count(nb, 0);

  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& spans = preds[i].spans;
    const auto& golds = gold.sentences[i].targets;
    int sentence_bucket = bucket_index(gold.sentences[i].word_count(), edges);
    auto bucket_of_pred = [&](const DecodedSpan& d) {
      return axis == BucketAxis::SentenceLength
                 ? sentence_bucket
                 : bucket_index(d.end_word - d.start_word + 1, edges);
    };
    auto bucket_of_gold = [&](const TargetAnnotation& t) {
      return axis == BucketAxis::SentenceLength
                 ? sentence_bucket
                 : bucket_index(t.end_word - t.start_word + 1, edges);
    };
    for (const DecodedSpan& d : spans) ++pred_count[bucket_of_pred(d)];
    for (const TargetAnnotation& t : golds) ++gold_count[bucket_of_gold(t)];

    // A matched pair shares its span, hence its bucket, on either axis.
    SentenceMatch em = match_sentence(spans, golds, true);
    for (std::size_t p = 0; p < spans.size(); ++p)
      em.pred_matched[p] ? ++exact[bucket_of_pred(spans[p])].tp
                         : ++exact[bucket_of_pred(spans[p])].fp;
    for (std::size_t g = 0; g < golds.size(); ++g)
      if (!em.gold_matched[g]) ++exact[bucket_of_gold(golds[g])].fn;

    SentenceMatch xm = match_sentence(spans, golds, false);
    for (std::size_t p = 0; p < spans.size(); ++p)
      xm.pred_matched[p] ? ++extraction[bucket_of_pred(spans[p])].tp
                         : ++extraction[bucket_of_pred(spans[p])].fp;
    for (std::size_t g = 0; g < golds.size(); ++g)
      if (!xm.gold_matched[g]) ++extraction[bucket_of_gold(golds[g])].fn;
  }

  std::vector<BucketRow> rows(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    rows[b].label = bucket_label(b, edges);
    rows[b].gold = gold_count[b];
    rows[b].predicted = pred_count[b];
    rows[b].exact = make_prf(exact[b].tp, exact[b].fp, exact[b].fn);
    rows[b].extraction = make_prf(extraction[b].tp, extraction[b].fp, extraction[b].fn);
  }
  return rows;
}

MetricsReport evaluate(const std::vector<Prediction>& preds, const Corpus& gold,
                       std::optional<BucketAxis> axis, const std::vector<int>& edges) {
  MetricsReport r;
  r.extraction = extraction_prf(preds, gold);
  bool polarity_free = false;
  for (const Prediction& p : preds)
    for (const DecodedSpan& d : p.spans)
      if (!d.polarity) polarity_free = true;
  if (!polarity_free) r.exact = exact_match_prf(preds, gold);
  r.sentences = static_cast<long>(gold.sentences.size());
  for (const auto& s : gold.sentences) r.gold_targets += static_cast<long>(s.targets.size());
  for (const auto& p : preds) r.predicted_targets += static_cast<long>(p.spans.size());
  if (axis) {
    std::vector<int> e = edges.empty() ? default_bucket_edges(*axis) : edges;
    r.bucket_axis = *axis == BucketAxis::SentenceLength ? "sentence_length" : "target_words";
    r.bucket_edges = e;
    if (!polarity_free) {
      r.buckets = bucket_report(preds, gold, *axis, e);
    }
  }
  return r;
}

MetricsReport crossval_aggregate(const std::vector<MetricsReport>& folds) {
  if (folds.empty()) throw std::invalid_argument("crossval_aggregate: no folds");
  MetricsReport mean;
  double n = static_cast<double>(folds.size());
  bool all_acc = true;
  double acc = 0.0;
  for (const MetricsReport& f : folds) {
    mean.exact.precision += f.exact.precision / n;
    mean.exact.recall += f.exact.recall / n;
    mean.exact.f1 += f.exact.f1 / n;
    mean.extraction.precision += f.extraction.precision / n;
    mean.extraction.recall += f.extraction.recall / n;
    mean.extraction.f1 += f.extraction.f1 / n;
    mean.sentences += f.sentences;
    mean.gold_targets += f.gold_targets;
    mean.predicted_targets += f.predicted_targets;
    if (f.polarity_acc)
      acc += *f.polarity_acc / n;
    else
      all_acc = false;
  }
  if (all_acc) mean.polarity_acc = acc;
  return mean;
}

std::vector<SweepRow> gamma_sweep(const Model& m, const Corpus& corpus,
                                  const std::vector<double>& gammas,
                                  const std::vector<std::string>& configs,
                                  const DecodeConfig& base) {
  if (m.variant == Variant::Tag)
    throw std::invalid_argument("gamma_sweep: the tag baseline has no decoding threshold");

  // Encode and score once per sentence; the sweep only re-decodes.
  struct Scored {
    TokenizedSentence ts;
    std::vector<BoundaryScores> score_sets;  // 1 for plain, 3 for collapsed
  };
  std::vector<Scored> scored;
  for (const AnnotatedSentence& s : corpus.sentences) {
    Scored sc;
    sc.ts = tokenize(s, m.vocab, m.max_tokens);
    Mat H = encode(sc.ts, m.encoder, EncodeMode::Infer, 0);
    if (m.variant == Variant::Collapsed) {
      auto all = collapsed_boundary_scores(H, *m.collapsed_extractor);
      sc.score_sets.assign(all.begin(), all.end());
    } else {
      sc.score_sets.push_back(boundary_scores(H, *m.extractor));
    }
    scored.push_back(std::move(sc));
  }

  std::vector<SweepRow> rows;
  for (double gamma : gammas) {
    for (const std::string& config : configs) {
      DecodeConfig cfg = base;
      cfg.gamma = gamma;
      if (config == "no-nms")
        cfg.nms = false;
      else if (config == "no-length")
        cfg.length_penalty = false;
      else if (config != "full")
        throw std::invalid_argument("gamma_sweep: unknown config '" + config + "'");

      long candidates = 0;
      std::vector<Prediction> preds;
      for (std::size_t i = 0; i < scored.size(); ++i) {
        Prediction p;
        p.sentence_id = static_cast<int>(i);
        for (const BoundaryScores& scores : scored[i].score_sets) {
          candidates += static_cast<long>(
              generate_candidates(scores.start, scores.end, cfg).size());
          for (const DecodedSpan& d : decode(scores, cfg, scored[i].ts)) p.spans.push_back(d);
        }
        preds.push_back(std::move(p));
      }
      Prf prf = extraction_prf(preds, corpus);
      rows.push_back({gamma, config, prf.precision, prf.recall, prf.f1, candidates});
    }
  }
  return rows;
}

}  // namespace tsa
