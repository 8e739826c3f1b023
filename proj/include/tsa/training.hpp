#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "tsa/model.hpp"

namespace tsa {

struct TrainConfig {
  Variant variant = Variant::Joint;
  TagShape tag_shape = TagShape::Joint;  // used when variant == Tag
  // Desk-scale default for a from-scratch toy encoder; 2e-5 suits
  // fine-tuning regimes and stays available through config.
  double learning_rate = 1e-3;
  double warmup_fraction = 0.1;
  int epochs = 3;
  int batch_size = 32;
  std::uint64_t seed = 1;
  EncoderConfig encoder;      // dropout is part of the encoder config
  TokenizerConfig tokenizer;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Joint variant: classifier trained on gold spans (teacher forcing). When
  // off, it trains on decoded spans that exactly match a gold span.
  bool classifier_gold_spans = true;

  void validate() const;
  std::vector<std::string> echo() const;  // key=value lines for manifests
};

// Linear ramp to the base rate over the first ceil(warmup_fraction * total)
// steps, then linear decay to zero at step == total.
double lr_at_step(const TrainConfig& cfg, long step, long total_steps);

struct AdamState {
  std::vector<Mat> first;
  std::vector<Mat> second;
  long step = 0;
};

// Standard bias-corrected adaptive-moment update. Throws on a non-finite
// gradient, naming the tensor.
void optimizer_step(const std::vector<std::string>& names, const std::vector<Mat*>& params,
                    const std::vector<Mat*>& grads, AdamState& state, double rate,
                    const TrainConfig& cfg);

// Per-sentence training inputs, precomputed once.
struct TrainExample {
  TokenizedSentence ts;
  BoundaryLabels labels;
  std::array<BoundaryLabels, kNumPolarities> collapsed_labels;
  struct GoldSpan {
    int token_start, token_end;
    Polarity polarity;
  };
  std::vector<GoldSpan> gold_spans;
  std::vector<int> bio_gold, polarity_row_gold, collapsed_gold;
};

TrainExample make_example(const AnnotatedSentence& s, const Vocabulary& v, int max_tokens);

// Loss paths. Gradients accumulate into the pointees when non-null; pass
// nullptr for a forward-only evaluation (used by the finite-difference
// checker). Zero-target sentences contribute zero to the extraction and
// classification losses.
double extraction_pass(const TrainExample& ex, const EncoderParams& enc,
                       const ExtractorParams& ext, EncodeMode mode, std::uint64_t dropout_seed,
                       EncoderParams* g_enc, ExtractorParams* g_ext);
double classification_pass(const TrainExample& ex, const EncoderParams& enc,
                           const PolarityParams& cls, EncodeMode mode, std::uint64_t dropout_seed,
                           EncoderParams* g_enc, PolarityParams* g_cls);
double joint_pass(const TrainExample& ex, const EncoderParams& enc, const ExtractorParams& ext,
                  const PolarityParams& cls, EncodeMode mode, std::uint64_t dropout_seed,
                  EncoderParams* g_enc, ExtractorParams* g_ext, PolarityParams* g_cls,
                  const std::vector<TrainExample::GoldSpan>* classify_spans = nullptr);
double collapsed_pass(const TrainExample& ex, const EncoderParams& enc,
                      const CollapsedExtractorParams& ext, EncodeMode mode,
                      std::uint64_t dropout_seed, EncoderParams* g_enc,
                      CollapsedExtractorParams* g_ext);
enum class CrfKind { Bio, PolarityRow, Collapsed };
double crf_pass(const TrainExample& ex, const EncoderParams& enc, const TaggerParams& tagger,
                CrfKind kind, EncodeMode mode, std::uint64_t dropout_seed, EncoderParams* g_enc,
                TaggerParams* g_tagger);
double tag_joint_pass(const TrainExample& ex, const EncoderParams& enc, const TaggerParams& bio,
                      const TaggerParams& pol, EncodeMode mode, std::uint64_t dropout_seed,
                      EncoderParams* g_enc, TaggerParams* g_bio, TaggerParams* g_pol);

struct TrainResult {
  Model model;
  std::vector<double> loss_trace;  // per epoch, summed over sentences
  int epochs_run = 0;
};

// phase is 0 except for the second stage of the pipeline variants. Returning
// true ends that phase early.
using EpochCallback = std::function<bool(int phase, int epoch, const Model& model, double loss)>;

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const EpochCallback& cb = {});

// Total loss of the model on prepared examples, dropout off; used for the
// batching invariance checks.
double total_loss(const Model& m, const std::vector<TrainExample>& examples,
                  const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification
// ---------------------------------------------------------------------------

enum class GradPath {
  ExtractionFull,
  ClassificationFull,
  JointFull,
  CollapsedFull,
  CrfFull,
  ExtractionHead,
  ClassificationHead,
  CrfHead,
};

const char* grad_path_name(GradPath p);
double grad_path_tolerance(GradPath p);  // 1e-4 through the encoder, 1e-6 head-only

struct GradCheckTensor {
  std::string name;
  double rel_err = 0.0;
  int checked = 0;
};

struct GradCheckReport {
  GradPath path;
  double max_rel_err = 0.0;
  std::vector<GradCheckTensor> tensors;
};

// Central differences over sampled entries of every tensor on the path.
// Relative error is measured against the largest gradient magnitude in the
// tensor, which keeps negligible entries from drowning in difference noise.
GradCheckReport gradient_check(GradPath path, std::uint64_t seed, double eps);
std::vector<GradCheckReport> gradient_check_all(std::uint64_t seed, double eps);

}  // namespace tsa
