#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tsa/decoder.hpp"
#include "tsa/encoder.hpp"
#include "tsa/heads.hpp"
#include "tsa/tagger.hpp"

namespace tsa {

enum class Variant { Pipeline, Joint, Collapsed, Tag };
enum class TagShape { None, Bio, Pipeline, Joint, Collapsed };

std::string variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& s);
std::string tag_shape_name(TagShape s);
std::optional<TagShape> tag_shape_from_name(const std::string& s);

// One container for every trained configuration. The pipeline variants carry
// a second encoder; the tag baseline carries CRFs instead of span heads.
struct Model {
  Variant variant = Variant::Joint;
  TagShape tag_shape = TagShape::None;
  EncoderConfig enc_cfg;
  Vocabulary vocab;
  int max_tokens = 128;

  EncoderParams encoder;
  std::optional<EncoderParams> encoder2;
  std::optional<ExtractorParams> extractor;
  std::optional<CollapsedExtractorParams> collapsed_extractor;
  std::optional<PolarityParams> classifier;
  std::optional<TaggerParams> bio_tagger;
  std::optional<TaggerParams> polarity_tagger;
  std::optional<TaggerParams> collapsed_tagger;

  std::uint64_t seed = 0;
  std::uint64_t corpus_fingerprint = 0;

  bool has_classifier() const { return classifier.has_value(); }
};

Model init_model(Variant variant, TagShape shape, const EncoderConfig& cfg,
                 const Vocabulary& vocab, int max_tokens, std::uint64_t seed);

void visit_model_tensors(Model& m, const std::function<void(const std::string&, Mat&)>& fn);

// Full inference for one sentence: spans plus polarity where the variant
// provides one. `precomputed` substitutes the primary encoder's output.
std::vector<DecodedSpan> predict_spans(const Model& m, const AnnotatedSentence& s,
                                       const DecodeConfig& cfg,
                                       const Mat* precomputed = nullptr);

// Polarity of a gold span under the model's classifier (subtask isolation).
Polarity classify_span(const Model& m, const AnnotatedSentence& s, int start_word, int end_word,
                       const Mat* precomputed = nullptr);

// Checkpoint container: a version header, the run configuration echoed as
// text, the vocabulary, and every parameter tensor in the decimal format of
// the precomputed-vector files.
void save_checkpoint(const Model& m, const std::vector<std::string>& config_echo,
                     const std::string& path);
struct LoadedCheckpoint {
  Model model;
  std::vector<std::string> config_echo;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace tsa
