#include "tsa/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tsa/rng.hpp"

namespace tsa {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning rate must be > 0");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0)
    throw std::invalid_argument("train config: warmup fraction must be in [0,1)");
  if (epochs < 0) throw std::invalid_argument("train config: negative epoch count");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0 ||
      adam_eps <= 0.0)
    throw std::invalid_argument("train config: bad optimizer constants");
}

std::vector<std::string> TrainConfig::echo() const {
  std::ostringstream dropout_ss, lr_ss;
  lr_ss << learning_rate;
  dropout_ss << encoder.dropout;
  std::ostringstream b1, b2, eps;
  b1 << adam_beta1;
  b2 << adam_beta2;
  eps << adam_eps;
  return {
      "variant=" + variant_name(variant),
      "tag_shape=" + tag_shape_name(tag_shape),
      "learning_rate=" + lr_ss.str(),
      "warmup_fraction=" + std::to_string(warmup_fraction),
      "epochs=" + std::to_string(epochs),
      "batch_size=" + std::to_string(batch_size),
      "seed=" + std::to_string(seed),
      "encoder_layers=" + std::to_string(encoder.layers),
      "encoder_hidden=" + std::to_string(encoder.hidden),
      "encoder_heads=" + std::to_string(encoder.attn_heads),
      "encoder_ffn_multiplier=" + std::to_string(encoder.ffn_multiplier),
      "dropout=" + dropout_ss.str(),
      "max_positions=" + std::to_string(encoder.max_positions),
      "max_tokens=" + std::to_string(tokenizer.max_tokens),
      "vocab_cap=" + std::to_string(tokenizer.max_size),
      "subword=" + std::string(tokenizer.subword ? "1" : "0"),
      "lowercase=" + std::string(tokenizer.lowercase ? "1" : "0"),
      "adam_beta1=" + b1.str(),
      "adam_beta2=" + b2.str(),
      "adam_eps=" + eps.str(),
      "classifier_gold_spans=" + std::string(classifier_gold_spans ? "1" : "0"),
  };
}

double lr_at_step(const TrainConfig& cfg, long step, long total_steps) {
  if (total_steps <= 0) throw std::invalid_argument("lr_at_step: total steps must be positive");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("lr_at_step: step outside [0, total]");
  long warmup = static_cast<long>(std::ceil(cfg.warmup_fraction * total_steps));
  if (warmup > 0 && step <= warmup)
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  return cfg.learning_rate * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup);
}

void optimizer_step(const std::vector<std::string>& names, const std::vector<Mat*>& params,
                    const std::vector<Mat*>& grads, AdamState& state, double rate,
                    const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != names.size())
    throw std::invalid_argument("optimizer_step: registry size mismatch");
  if (state.first.empty()) {
    for (Mat* p : params) {
      state.first.emplace_back(p->rows, p->cols);
      state.second.emplace_back(p->rows, p->cols);
    }
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (double g : grads[i]->a) {
      if (!std::isfinite(g))
        throw std::runtime_error("optimizer_step: non-finite gradient in tensor '" + names[i] +
                                 "'");
    }
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    Mat& m1 = state.first[i];
    Mat& m2 = state.second[i];
    for (std::size_t k = 0; k < p.a.size(); ++k) {
      m1.a[k] = cfg.adam_beta1 * m1.a[k] + (1.0 - cfg.adam_beta1) * g.a[k];
      m2.a[k] = cfg.adam_beta2 * m2.a[k] + (1.0 - cfg.adam_beta2) * g.a[k] * g.a[k];
      double mhat = m1.a[k] / bc1;
      double vhat = m2.a[k] / bc2;
      p.a[k] -= rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

TrainExample make_example(const AnnotatedSentence& s, const Vocabulary& v, int max_tokens) {
  TrainExample ex;
  ex.ts = tokenize(s, v, max_tokens);
  ex.labels = boundary_labels(ex.ts, s.targets);
  ex.collapsed_labels = collapsed_boundary_labels(ex.ts, s.targets);
  for (const TargetAnnotation& t : s.targets) {
    auto [a, b] = word_span_to_token_span(ex.ts, t.start_word, t.end_word);
    if (!t.polarity) throw std::invalid_argument("training data needs polarity-bearing targets");
    ex.gold_spans.push_back({a, b, *t.polarity});
  }
  ex.bio_gold = bio_indices(spans_to_tags(s, TagScheme::Bio));
  TagSequence biop = spans_to_tags(s, TagScheme::BioPolarity);
  ex.polarity_row_gold = polarity_row_indices(biop);
  ex.collapsed_gold = collapsed_indices(spans_to_tags(s, TagScheme::Collapsed));
  return ex;
}

namespace {

bool has_targets(const TrainExample& ex) { return !ex.gold_spans.empty(); }

// Shared tail: accumulate head gradients into dH and run the encoder
// backward when requested.
void finish_encoder_backward(const TrainExample& ex, const EncoderParams& enc,
                             const EncodeCache& cache, const Mat& dH, EncoderParams* g_enc) {
  if (!g_enc) return;
  encode_backward(ex.ts, enc, cache, dH, *g_enc);
}

double classification_terms(const TrainExample& ex, const Mat& H, const PolarityParams& cls,
                            const std::vector<TrainExample::GoldSpan>& spans, Mat* dH,
                            PolarityParams* g_cls) {
  double loss = 0.0;
  for (const auto& span : spans) {
    SpanRepresentation rep = span_representation(H, span.token_start, span.token_end, cls);
    PolarityScoresResult scores = polarity_scores(rep.value, cls);
    ClassificationLossResult cl = classification_loss(scores, span.polarity);
    loss += cl.value;
    if (dH && g_cls) {
      std::vector<double> d_v;
      polarity_scores_backward(rep.value, cls, scores, cl.d_scores, d_v, *g_cls);
      span_representation_backward(H, span.token_start, span.token_end, cls, rep, d_v, *dH,
                                   *g_cls);
    }
  }
  return loss;
}

}  // namespace

double extraction_pass(const TrainExample& ex, const EncoderParams& enc,
                       const ExtractorParams& ext, EncodeMode mode, std::uint64_t dropout_seed,
                       EncoderParams* g_enc, ExtractorParams* g_ext) {
  if (!has_targets(ex)) return 0.0;
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  BoundaryScores scores = boundary_scores(cache.output, ext);
  ExtractionLossResult loss = extraction_loss(scores, ex.labels);
  if (g_enc && g_ext) {
    Mat dH(cache.output.rows, cache.output.cols);
    boundary_scores_backward(cache.output, ext, loss.d_start, loss.d_end, dH, *g_ext);
    finish_encoder_backward(ex, enc, cache, dH, g_enc);
  }
  return loss.value;
}

double classification_pass(const TrainExample& ex, const EncoderParams& enc,
                           const PolarityParams& cls, EncodeMode mode, std::uint64_t dropout_seed,
                           EncoderParams* g_enc, PolarityParams* g_cls) {
  if (!has_targets(ex)) return 0.0;
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  Mat dH(cache.output.rows, cache.output.cols);
  double loss = classification_terms(ex, cache.output, cls, ex.gold_spans,
                                     (g_enc && g_cls) ? &dH : nullptr, g_cls);
  if (g_enc && g_cls) finish_encoder_backward(ex, enc, cache, dH, g_enc);
  return loss;
}

double joint_pass(const TrainExample& ex, const EncoderParams& enc, const ExtractorParams& ext,
                  const PolarityParams& cls, EncodeMode mode, std::uint64_t dropout_seed,
                  EncoderParams* g_enc, ExtractorParams* g_ext, PolarityParams* g_cls,
                  const std::vector<TrainExample::GoldSpan>* classify_spans) {
  if (!has_targets(ex) && !classify_spans) return 0.0;
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  bool want_grads = g_enc && g_ext && g_cls;
  Mat dH(cache.output.rows, cache.output.cols);

  double loss = 0.0;
  if (has_targets(ex)) {
    BoundaryScores scores = boundary_scores(cache.output, ext);
    ExtractionLossResult el = extraction_loss(scores, ex.labels);
    loss += el.value;
    if (want_grads)
      boundary_scores_backward(cache.output, ext, el.d_start, el.d_end, dH, *g_ext);
  }
  const std::vector<TrainExample::GoldSpan>& spans =
      classify_spans ? *classify_spans : ex.gold_spans;
  loss += classification_terms(ex, cache.output, cls, spans, want_grads ? &dH : nullptr, g_cls);
  if (want_grads) finish_encoder_backward(ex, enc, cache, dH, g_enc);
  return loss;
}

double collapsed_pass(const TrainExample& ex, const EncoderParams& enc,
                      const CollapsedExtractorParams& ext, EncodeMode mode,
                      std::uint64_t dropout_seed, EncoderParams* g_enc,
                      CollapsedExtractorParams* g_ext) {
  if (!has_targets(ex)) return 0.0;
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  bool want_grads = g_enc && g_ext;
  Mat dH(cache.output.rows, cache.output.cols);
  double loss = 0.0;
  for (int pol = 0; pol < kNumPolarities; ++pol) {
    BoundaryScores scores = boundary_scores(cache.output, ext.per_polarity[pol]);
    ExtractionLossResult el = extraction_loss(scores, ex.collapsed_labels[pol]);
    loss += el.value;
    if (want_grads)
      boundary_scores_backward(cache.output, ext.per_polarity[pol], el.d_start, el.d_end, dH,
                               g_ext->per_polarity[pol]);
  }
  if (want_grads) finish_encoder_backward(ex, enc, cache, dH, g_enc);
  return loss;
}

namespace {

const std::vector<int>& gold_path_for(const TrainExample& ex, CrfKind kind) {
  switch (kind) {
    case CrfKind::Bio: return ex.bio_gold;
    case CrfKind::PolarityRow: return ex.polarity_row_gold;
    case CrfKind::Collapsed: return ex.collapsed_gold;
  }
  throw std::logic_error("unknown CRF kind");
}

TagSet tagset_for(CrfKind kind) {
  switch (kind) {
    case CrfKind::Bio: return make_bio_tagset();
    case CrfKind::PolarityRow: return make_polarity_row_tagset();
    case CrfKind::Collapsed: return make_collapsed_tagset();
  }
  throw std::logic_error("unknown CRF kind");
}

double crf_terms(const TrainExample& ex, const Mat& H, const TaggerParams& tagger, CrfKind kind,
                 Mat* dH, TaggerParams* g_tagger) {
  TagSet set = tagset_for(kind);
  Mat em = emission_scores(H, ex.ts, tagger);
  CrfNllResult r = crf_nll(em, gold_path_for(ex, kind), tagger, set);
  if (dH && g_tagger) {
    emission_scores_backward(H, ex.ts, tagger, r.d_emissions, *dH, *g_tagger);
    for (std::size_t k = 0; k < r.grads.trans.a.size(); ++k)
      g_tagger->trans.a[k] += r.grads.trans.a[k];
    for (std::size_t k = 0; k < r.grads.start.a.size(); ++k) {
      g_tagger->start.a[k] += r.grads.start.a[k];
      g_tagger->stop.a[k] += r.grads.stop.a[k];
    }
  }
  return r.value;
}

}  // namespace

double crf_pass(const TrainExample& ex, const EncoderParams& enc, const TaggerParams& tagger,
                CrfKind kind, EncodeMode mode, std::uint64_t dropout_seed, EncoderParams* g_enc,
                TaggerParams* g_tagger) {
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  bool want_grads = g_enc && g_tagger;
  Mat dH(cache.output.rows, cache.output.cols);
  double loss = crf_terms(ex, cache.output, tagger, kind, want_grads ? &dH : nullptr, g_tagger);
  if (want_grads) finish_encoder_backward(ex, enc, cache, dH, g_enc);
  return loss;
}

double tag_joint_pass(const TrainExample& ex, const EncoderParams& enc, const TaggerParams& bio,
                      const TaggerParams& pol, EncodeMode mode, std::uint64_t dropout_seed,
                      EncoderParams* g_enc, TaggerParams* g_bio, TaggerParams* g_pol) {
  EncodeCache cache = encode_with_cache(ex.ts, enc, mode, dropout_seed);
  bool want_grads = g_enc && g_bio && g_pol;
  Mat dH(cache.output.rows, cache.output.cols);
  double loss = crf_terms(ex, cache.output, bio, CrfKind::Bio, want_grads ? &dH : nullptr, g_bio);
  loss += crf_terms(ex, cache.output, pol, CrfKind::PolarityRow, want_grads ? &dH : nullptr,
                    g_pol);
  if (want_grads) finish_encoder_backward(ex, enc, cache, dH, g_enc);
  return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct ParamRegistry {
  std::vector<std::string> names;
  std::vector<Mat*> params;
  std::vector<Mat*> grads;

  void add(const std::string& name, Mat& p, Mat& g) {
    names.push_back(name);
    params.push_back(&p);
    grads.push_back(&g);
  }
  void zero_grads() {
    for (Mat* g : grads) g->zero();
  }
  void scale_grads(double s) {
    for (Mat* g : grads)
      for (double& x : g->a) x *= s;
  }
};

void register_encoder(ParamRegistry& reg, EncoderParams& p, EncoderParams& g,
                      const std::string& prefix) {
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  visit_tensors(p, prefix, [&](const std::string& n, Mat& t) { ps.emplace_back(n, &t); });
  visit_tensors(g, prefix, [&](const std::string& n, Mat& t) { gs.emplace_back(n, &t); });
  for (std::size_t i = 0; i < ps.size(); ++i) reg.add(ps[i].first, *ps[i].second, *gs[i].second);
}

void register_tagger(ParamRegistry& reg, TaggerParams& p, TaggerParams& g,
                     const std::string& prefix) {
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  visit_tensors(p, prefix, [&](const std::string& n, Mat& t) { ps.emplace_back(n, &t); });
  visit_tensors(g, prefix, [&](const std::string& n, Mat& t) { gs.emplace_back(n, &t); });
  for (std::size_t i = 0; i < ps.size(); ++i) reg.add(ps[i].first, *ps[i].second, *gs[i].second);
}

// One training phase over a per-sentence loss closure.
struct Phase {
  std::string name;
  ParamRegistry registry;
  std::function<double(const TrainExample&, std::uint64_t, bool)> pass;  // (ex, seed, grads?)
};

}  // namespace

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const EpochCallback& cb) {
  cfg.validate();
  if (corpus.sentences.empty()) throw std::invalid_argument("train: empty corpus");
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    auto violations = validate_sentence(corpus.sentences[i]);
    if (!violations.empty())
      throw std::invalid_argument("train: sentence " + std::to_string(i) + ": " +
                                  violations.front());
  }

  Vocabulary vocab = build_vocab(corpus, cfg.tokenizer);
  EncoderConfig enc_cfg = cfg.encoder;
  enc_cfg.vocab_size = vocab.size();
  enc_cfg.validate();

  TrainResult result;
  result.model = init_model(cfg.variant, cfg.tag_shape, enc_cfg, vocab, cfg.tokenizer.max_tokens,
                            cfg.seed);
  Model& model = result.model;
  model.corpus_fingerprint = fnv1a64(corpus_to_jsonl(corpus));

  std::vector<TrainExample> examples;
  examples.reserve(corpus.sentences.size());
  for (const AnnotatedSentence& s : corpus.sentences)
    examples.push_back(make_example(s, vocab, cfg.tokenizer.max_tokens));

  // Gradient holders live for the whole run.
  EncoderParams g_enc = zeros_like(model.encoder);
  EncoderParams g_enc2 = model.encoder2 ? zeros_like(*model.encoder2) : EncoderParams{};
  ExtractorParams g_ext = model.extractor ? zeros_like(*model.extractor) : ExtractorParams{};
  CollapsedExtractorParams g_cext =
      model.collapsed_extractor ? zeros_like(*model.collapsed_extractor)
                                : CollapsedExtractorParams{};
  PolarityParams g_cls = model.classifier ? zeros_like(*model.classifier) : PolarityParams{};
  TaggerParams g_bio = model.bio_tagger ? zeros_like(*model.bio_tagger) : TaggerParams{};
  TaggerParams g_pol = model.polarity_tagger ? zeros_like(*model.polarity_tagger) : TaggerParams{};
  TaggerParams g_col =
      model.collapsed_tagger ? zeros_like(*model.collapsed_tagger) : TaggerParams{};

  std::vector<Phase> phases;
  switch (cfg.variant) {
    case Variant::Pipeline: {
      Phase extract;
      extract.name = "extractor";
      register_encoder(extract.registry, model.encoder, g_enc, "encoder.");
      extract.registry.add("extractor.w_start", model.extractor->w_start, g_ext.w_start);
      extract.registry.add("extractor.w_end", model.extractor->w_end, g_ext.w_end);
      extract.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
        return extraction_pass(ex, model.encoder, *model.extractor, EncodeMode::Train, ds,
                               grads ? &g_enc : nullptr, grads ? &g_ext : nullptr);
      };
      phases.push_back(std::move(extract));

      Phase classify;
      classify.name = "classifier";
      register_encoder(classify.registry, *model.encoder2, g_enc2, "encoder2.");
      classify.registry.add("classifier.w_attn", model.classifier->w_attn, g_cls.w_attn);
      classify.registry.add("classifier.w_hidden", model.classifier->w_hidden, g_cls.w_hidden);
      classify.registry.add("classifier.w_out", model.classifier->w_out, g_cls.w_out);
      classify.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
        return classification_pass(ex, *model.encoder2, *model.classifier, EncodeMode::Train, ds,
                                   grads ? &g_enc2 : nullptr, grads ? &g_cls : nullptr);
      };
      phases.push_back(std::move(classify));
      break;
    }
    case Variant::Joint: {
      Phase joint;
      joint.name = "joint";
      register_encoder(joint.registry, model.encoder, g_enc, "encoder.");
      joint.registry.add("extractor.w_start", model.extractor->w_start, g_ext.w_start);
      joint.registry.add("extractor.w_end", model.extractor->w_end, g_ext.w_end);
      joint.registry.add("classifier.w_attn", model.classifier->w_attn, g_cls.w_attn);
      joint.registry.add("classifier.w_hidden", model.classifier->w_hidden, g_cls.w_hidden);
      joint.registry.add("classifier.w_out", model.classifier->w_out, g_cls.w_out);
      joint.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
        std::vector<TrainExample::GoldSpan> decoded;
        const std::vector<TrainExample::GoldSpan>* spans = nullptr;
        if (!cfg.classifier_gold_spans) {
          // Train the classifier on decoded spans that exactly match gold.
          Mat H = encode(ex.ts, model.encoder, EncodeMode::Infer, 0);
          BoundaryScores sc = boundary_scores(H, *model.extractor);
          for (const DecodedSpan& d : decode(sc, DecodeConfig{}, ex.ts)) {
            for (const auto& gold : ex.gold_spans) {
              auto [a, b] = word_span_to_token_span(ex.ts, d.start_word, d.end_word);
              if (a == gold.token_start && b == gold.token_end)
                decoded.push_back({a, b, gold.polarity});
            }
          }
          spans = &decoded;
        }
        return joint_pass(ex, model.encoder, *model.extractor, *model.classifier,
                          EncodeMode::Train, ds, grads ? &g_enc : nullptr,
                          grads ? &g_ext : nullptr, grads ? &g_cls : nullptr, spans);
      };
      phases.push_back(std::move(joint));
      break;
    }
    case Variant::Collapsed: {
      Phase collapsed;
      collapsed.name = "collapsed";
      register_encoder(collapsed.registry, model.encoder, g_enc, "encoder.");
      for (int pol = 0; pol < kNumPolarities; ++pol) {
        std::string prefix = "collapsed_extractor." + std::to_string(pol) + ".";
        collapsed.registry.add(prefix + "w_start", model.collapsed_extractor->per_polarity[pol].w_start,
                               g_cext.per_polarity[pol].w_start);
        collapsed.registry.add(prefix + "w_end", model.collapsed_extractor->per_polarity[pol].w_end,
                               g_cext.per_polarity[pol].w_end);
      }
      collapsed.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
        return collapsed_pass(ex, model.encoder, *model.collapsed_extractor, EncodeMode::Train, ds,
                              grads ? &g_enc : nullptr, grads ? &g_cext : nullptr);
      };
      phases.push_back(std::move(collapsed));
      break;
    }
    case Variant::Tag: {
      switch (cfg.tag_shape) {
        case TagShape::Bio: {
          Phase ph;
          ph.name = "tag-bio";
          register_encoder(ph.registry, model.encoder, g_enc, "encoder.");
          register_tagger(ph.registry, *model.bio_tagger, g_bio, "bio_tagger.");
          ph.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
            return crf_pass(ex, model.encoder, *model.bio_tagger, CrfKind::Bio, EncodeMode::Train,
                            ds, grads ? &g_enc : nullptr, grads ? &g_bio : nullptr);
          };
          phases.push_back(std::move(ph));
          break;
        }
        case TagShape::Collapsed: {
          Phase ph;
          ph.name = "tag-collapsed";
          register_encoder(ph.registry, model.encoder, g_enc, "encoder.");
          register_tagger(ph.registry, *model.collapsed_tagger, g_col, "collapsed_tagger.");
          ph.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
            return crf_pass(ex, model.encoder, *model.collapsed_tagger, CrfKind::Collapsed,
                            EncodeMode::Train, ds, grads ? &g_enc : nullptr,
                            grads ? &g_col : nullptr);
          };
          phases.push_back(std::move(ph));
          break;
        }
        case TagShape::Joint: {
          Phase ph;
          ph.name = "tag-joint";
          register_encoder(ph.registry, model.encoder, g_enc, "encoder.");
          register_tagger(ph.registry, *model.bio_tagger, g_bio, "bio_tagger.");
          register_tagger(ph.registry, *model.polarity_tagger, g_pol, "polarity_tagger.");
          ph.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
            return tag_joint_pass(ex, model.encoder, *model.bio_tagger, *model.polarity_tagger,
                                  EncodeMode::Train, ds, grads ? &g_enc : nullptr,
                                  grads ? &g_bio : nullptr, grads ? &g_pol : nullptr);
          };
          phases.push_back(std::move(ph));
          break;
        }
        case TagShape::Pipeline: {
          Phase extract;
          extract.name = "tag-bio";
          register_encoder(extract.registry, model.encoder, g_enc, "encoder.");
          register_tagger(extract.registry, *model.bio_tagger, g_bio, "bio_tagger.");
          extract.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
            return crf_pass(ex, model.encoder, *model.bio_tagger, CrfKind::Bio, EncodeMode::Train,
                            ds, grads ? &g_enc : nullptr, grads ? &g_bio : nullptr);
          };
          phases.push_back(std::move(extract));

          Phase classify;
          classify.name = "tag-polarity";
          register_encoder(classify.registry, *model.encoder2, g_enc2, "encoder2.");
          register_tagger(classify.registry, *model.polarity_tagger, g_pol, "polarity_tagger.");
          classify.pass = [&](const TrainExample& ex, std::uint64_t ds, bool grads) {
            return crf_pass(ex, *model.encoder2, *model.polarity_tagger, CrfKind::PolarityRow,
                            EncodeMode::Train, ds, grads ? &g_enc2 : nullptr,
                            grads ? &g_pol : nullptr);
          };
          phases.push_back(std::move(classify));
          break;
        }
        case TagShape::None:
          throw std::invalid_argument("train: tag variant needs a tag shape");
      }
      break;
    }
  }

  long n = static_cast<long>(examples.size());
  long batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t phase_idx = 0; phase_idx < phases.size(); ++phase_idx) {
    Phase& phase = phases[phase_idx];
    AdamState opt;
    long total_steps = static_cast<long>(cfg.epochs) * batches_per_epoch;
    Rng order_rng(derive_seed(cfg.seed, "batch-order-" + phase.name));
    std::uint64_t drop_base = derive_seed(cfg.seed, "dropout-" + phase.name);

    std::vector<int> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      double epoch_loss = 0.0;
      for (long start = 0; start < n; start += cfg.batch_size) {
        long end = std::min(n, start + cfg.batch_size);
        phase.registry.zero_grads();
        for (long i = start; i < end; ++i) {
          int idx = order[i];
          std::uint64_t ds = splitmix64(drop_base ^ (static_cast<std::uint64_t>(epoch) << 32) ^
                                        static_cast<std::uint64_t>(idx));
          epoch_loss += phase.pass(examples[idx], ds, true);
        }
        phase.registry.scale_grads(1.0 / static_cast<double>(end - start));
        double rate = lr_at_step(cfg, opt.step + 1, total_steps);
        optimizer_step(phase.registry.names, phase.registry.params, phase.registry.grads, opt,
                       rate, cfg);
      }
      result.loss_trace.push_back(epoch_loss);
      result.epochs_run += 1;
      if (cb && cb(static_cast<int>(phase_idx), epoch, model, epoch_loss)) break;
    }
  }
  return result;
}

double total_loss(const Model& m, const std::vector<TrainExample>& examples,
                  const TrainConfig& cfg) {
  double loss = 0.0;
  for (const TrainExample& ex : examples) {
    switch (cfg.variant) {
      case Variant::Pipeline:
        loss += extraction_pass(ex, m.encoder, *m.extractor, EncodeMode::Infer, 0, nullptr,
                                nullptr);
        loss += classification_pass(ex, *m.encoder2, *m.classifier, EncodeMode::Infer, 0, nullptr,
                                    nullptr);
        break;
      case Variant::Joint:
        loss += joint_pass(ex, m.encoder, *m.extractor, *m.classifier, EncodeMode::Infer, 0,
                           nullptr, nullptr, nullptr);
        break;
      case Variant::Collapsed:
        loss += collapsed_pass(ex, m.encoder, *m.collapsed_extractor, EncodeMode::Infer, 0,
                               nullptr, nullptr);
        break;
      case Variant::Tag:
        switch (cfg.tag_shape) {
          case TagShape::Bio:
            loss += crf_pass(ex, m.encoder, *m.bio_tagger, CrfKind::Bio, EncodeMode::Infer, 0,
                             nullptr, nullptr);
            break;
          case TagShape::Collapsed:
            loss += crf_pass(ex, m.encoder, *m.collapsed_tagger, CrfKind::Collapsed,
                             EncodeMode::Infer, 0, nullptr, nullptr);
            break;
          case TagShape::Joint:
            loss += tag_joint_pass(ex, m.encoder, *m.bio_tagger, *m.polarity_tagger,
                                   EncodeMode::Infer, 0, nullptr, nullptr, nullptr);
            break;
          case TagShape::Pipeline:
            loss += crf_pass(ex, m.encoder, *m.bio_tagger, CrfKind::Bio, EncodeMode::Infer, 0,
                             nullptr, nullptr);
            loss += crf_pass(ex, *m.encoder2, *m.polarity_tagger, CrfKind::PolarityRow,
                             EncodeMode::Infer, 0, nullptr, nullptr);
            break;
          case TagShape::None:
            throw std::invalid_argument("total_loss: tag variant needs a tag shape");
        }
        break;
    }
  }
  return loss;
}

}  // namespace tsa
