#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/decoder.hpp"
#include "tsa/model.hpp"

namespace tsa {

struct Prediction {
  int sentence_id = 0;
  std::vector<DecodedSpan> spans;
};

struct Prf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  long tp = 0, fp = 0, fn = 0;
};

// 0/0 -> 0 convention throughout.
Prf make_prf(long tp, long fp, long fn);

// A prediction is a true positive iff an as-yet-unmatched gold target has the
// identical word span and polarity (one-to-one matching; duplicate identical
// predictions count once, extras become false positives). Rejects the
// polarity-free sentinel.
Prf exact_match_prf(const std::vector<Prediction>& preds, const Corpus& gold);

// Same matching, polarity ignored.
Prf extraction_prf(const std::vector<Prediction>& preds, const Corpus& gold);

// Fraction of gold targets whose predicted polarity matches; absent when the
// corpus has no targets. `predicted` is aligned with the corpus' targets in
// sentence order.
std::optional<double> polarity_accuracy(const std::vector<std::vector<Polarity>>& predicted,
                                        const Corpus& gold);

enum class BucketAxis { SentenceLength, TargetWords };

struct BucketRow {
  std::string label;
  long gold = 0, predicted = 0;
  Prf exact, extraction;
};

// `edges` are strictly increasing inclusive upper bounds; a final open bucket
// catches everything beyond the last edge.
std::vector<BucketRow> bucket_report(const std::vector<Prediction>& preds, const Corpus& gold,
                                     BucketAxis axis, const std::vector<int>& edges);

struct MetricsReport {
  Prf exact, extraction;
  std::optional<double> polarity_acc;
  long sentences = 0, gold_targets = 0, predicted_targets = 0;
  std::string bucket_axis;
  std::vector<int> bucket_edges;
  std::vector<BucketRow> buckets;
};

MetricsReport evaluate(const std::vector<Prediction>& preds, const Corpus& gold,
                       std::optional<BucketAxis> axis = std::nullopt,
                       const std::vector<int>& edges = {});

// Unweighted mean across folds; per-fold reports are retained by the caller.
MetricsReport crossval_aggregate(const std::vector<MetricsReport>& folds);

struct SweepRow {
  double gamma = 0.0;
  std::string config;  // full | no-nms | no-length
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  long candidates = 0;  // pre-suppression candidate total
};

// Extraction P/R per gamma and ablation configuration, one row each.
std::vector<SweepRow> gamma_sweep(const Model& m, const Corpus& corpus,
                                  const std::vector<double>& gammas,
                                  const std::vector<std::string>& configs,
                                  const DecodeConfig& base);

std::vector<int> default_bucket_edges(BucketAxis axis);

}  // namespace tsa
