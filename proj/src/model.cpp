#include "tsa/model.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "tsa/rng.hpp"

namespace tsa {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Pipeline: return "pipeline";
    case Variant::Joint: return "joint";
    case Variant::Collapsed: return "collapsed";
    case Variant::Tag: return "tag";
  }
  return "?";
}

std::optional<Variant> variant_from_name(const std::string& s) {
  if (s == "pipeline") return Variant::Pipeline;
  if (s == "joint") return Variant::Joint;
  if (s == "collapsed") return Variant::Collapsed;
  if (s == "tag") return Variant::Tag;
  return std::nullopt;
}

std::string tag_shape_name(TagShape s) {
  switch (s) {
    case TagShape::None: return "none";
    case TagShape::Bio: return "bio";
    case TagShape::Pipeline: return "pipeline";
    case TagShape::Joint: return "joint";
    case TagShape::Collapsed: return "collapsed";
  }
  return "?";
}

std::optional<TagShape> tag_shape_from_name(const std::string& s) {
  if (s == "none") return TagShape::None;
  if (s == "bio") return TagShape::Bio;
  if (s == "pipeline") return TagShape::Pipeline;
  if (s == "joint") return TagShape::Joint;
  if (s == "collapsed") return TagShape::Collapsed;
  return std::nullopt;
}

Model init_model(Variant variant, TagShape shape, const EncoderConfig& cfg,
                 const Vocabulary& vocab, int max_tokens, std::uint64_t seed) {
  Model m;
  m.variant = variant;
  m.tag_shape = variant == Variant::Tag ? shape : TagShape::None;
  m.enc_cfg = cfg;
  m.enc_cfg.vocab_size = vocab.size();
  m.vocab = vocab;
  m.max_tokens = max_tokens;
  m.seed = seed;
  m.encoder = init_params(m.enc_cfg, derive_seed(seed, "encoder0"));

  int h = cfg.hidden;
  switch (variant) {
    case Variant::Pipeline:
      m.encoder2 = init_params(m.enc_cfg, derive_seed(seed, "encoder1"));
      m.extractor = init_extractor(h, derive_seed(seed, "extractor"));
      m.classifier = init_polarity(h, derive_seed(seed, "classifier"));
      break;
    case Variant::Joint:
      m.extractor = init_extractor(h, derive_seed(seed, "extractor"));
      m.classifier = init_polarity(h, derive_seed(seed, "classifier"));
      break;
    case Variant::Collapsed:
      m.collapsed_extractor = init_collapsed_extractor(h, derive_seed(seed, "extractor"));
      break;
    case Variant::Tag: {
      TagSet bio = make_bio_tagset();
      TagSet pol = make_polarity_row_tagset();
      TagSet col = make_collapsed_tagset();
      switch (shape) {
        case TagShape::Bio:
          m.bio_tagger = init_tagger(bio, h, derive_seed(seed, "bio-tagger"));
          break;
        case TagShape::Joint:
          m.bio_tagger = init_tagger(bio, h, derive_seed(seed, "bio-tagger"));
          m.polarity_tagger = init_tagger(pol, h, derive_seed(seed, "polarity-tagger"));
          break;
        case TagShape::Pipeline:
          m.bio_tagger = init_tagger(bio, h, derive_seed(seed, "bio-tagger"));
          m.polarity_tagger = init_tagger(pol, h, derive_seed(seed, "polarity-tagger"));
          m.encoder2 = init_params(m.enc_cfg, derive_seed(seed, "encoder1"));
          break;
        case TagShape::Collapsed:
          m.collapsed_tagger = init_tagger(col, h, derive_seed(seed, "collapsed-tagger"));
          break;
        case TagShape::None:
          throw std::invalid_argument("tag variant needs a tag shape");
      }
      break;
    }
  }
  return m;
}

void visit_model_tensors(Model& m, const std::function<void(const std::string&, Mat&)>& fn) {
  visit_tensors(m.encoder, "encoder.", fn);
  if (m.encoder2) visit_tensors(*m.encoder2, "encoder2.", fn);
  if (m.extractor) {
    fn("extractor.w_start", m.extractor->w_start);
    fn("extractor.w_end", m.extractor->w_end);
  }
  if (m.collapsed_extractor) {
    for (int pol = 0; pol < kNumPolarities; ++pol) {
      std::string prefix = "collapsed_extractor." + std::to_string(pol) + ".";
      fn(prefix + "w_start", m.collapsed_extractor->per_polarity[pol].w_start);
      fn(prefix + "w_end", m.collapsed_extractor->per_polarity[pol].w_end);
    }
  }
  if (m.classifier) {
    fn("classifier.w_attn", m.classifier->w_attn);
    fn("classifier.w_hidden", m.classifier->w_hidden);
    fn("classifier.w_out", m.classifier->w_out);
  }
  if (m.bio_tagger) visit_tensors(*m.bio_tagger, "bio_tagger.", fn);
  if (m.polarity_tagger) visit_tensors(*m.polarity_tagger, "polarity_tagger.", fn);
  if (m.collapsed_tagger) visit_tensors(*m.collapsed_tagger, "collapsed_tagger.", fn);
}

namespace {

Polarity classify_token_span(const Model& m, const Mat& H, int tok_start, int tok_end) {
  SpanRepresentation rep = span_representation(H, tok_start, tok_end, *m.classifier);
  PolarityScoresResult scores = polarity_scores(rep.value, *m.classifier);
  int best = 0;
  for (int k = 1; k < kNumPolarities; ++k)
    if (scores.probs[k] > scores.probs[best]) best = k;
  return static_cast<Polarity>(best);
}

std::vector<TargetAnnotation> tag_predict(const Model& m, const TokenizedSentence& ts,
                                          const Mat& H) {
  switch (m.tag_shape) {
    case TagShape::Bio: {
      TagSet set = make_bio_tagset();
      Mat em = emission_scores(H, ts, *m.bio_tagger);
      return tags_to_spans(bio_path_to_tags(viterbi_decode(em, *m.bio_tagger, set)));
    }
    case TagShape::Collapsed: {
      TagSet set = make_collapsed_tagset();
      Mat em = emission_scores(H, ts, *m.collapsed_tagger);
      return tags_to_spans(collapsed_path_to_tags(viterbi_decode(em, *m.collapsed_tagger, set)));
    }
    case TagShape::Joint:
    case TagShape::Pipeline: {
      TagSet bio_set = make_bio_tagset();
      TagSet pol_set = make_polarity_row_tagset();
      Mat em_bio = emission_scores(H, ts, *m.bio_tagger);
      std::vector<int> bio_path = viterbi_decode(em_bio, *m.bio_tagger, bio_set);
      Mat H2 = m.tag_shape == TagShape::Pipeline
                   ? encode(ts, *m.encoder2, EncodeMode::Infer, 0)
                   : H;
      Mat em_pol = emission_scores(H2, ts, *m.polarity_tagger);
      std::vector<int> pol_path = viterbi_decode(em_pol, *m.polarity_tagger, pol_set);
      return tags_to_spans(joint_paths_to_tags(bio_path, pol_path));
    }
    case TagShape::None:
      break;
  }
  throw std::logic_error("tag_predict: model has no tag shape");
}

}  // namespace

std::vector<DecodedSpan> predict_spans(const Model& m, const AnnotatedSentence& s,
                                       const DecodeConfig& cfg, const Mat* precomputed) {
  TokenizedSentence ts = tokenize(s, m.vocab, m.max_tokens);
  Mat H = precomputed ? *precomputed : encode(ts, m.encoder, EncodeMode::Infer, 0);
  if (H.rows != ts.token_count() || H.cols != m.enc_cfg.hidden)
    throw std::invalid_argument("predict_spans: encoding shape does not match the sentence");

  switch (m.variant) {
    case Variant::Collapsed: {
      auto scores = collapsed_boundary_scores(H, *m.collapsed_extractor);
      return decode_collapsed(scores, cfg, ts);
    }
    case Variant::Pipeline:
    case Variant::Joint: {
      BoundaryScores scores = boundary_scores(H, *m.extractor);
      std::vector<DecodedSpan> spans = decode(scores, cfg, ts);
      const Mat* Hc = &H;
      Mat H2;
      if (m.variant == Variant::Pipeline) {
        H2 = encode(ts, *m.encoder2, EncodeMode::Infer, 0);
        Hc = &H2;
      }
      for (DecodedSpan& d : spans) {
        auto [a, b] = word_span_to_token_span(ts, d.start_word, d.end_word);
        d.polarity = classify_token_span(m, *Hc, a, b);
      }
      return spans;
    }
    case Variant::Tag: {
      std::vector<TargetAnnotation> targets = tag_predict(m, ts, H);
      std::vector<DecodedSpan> out;
      for (const TargetAnnotation& t : targets) {
        DecodedSpan d;
        d.start_word = t.start_word;
        d.end_word = t.end_word;
        d.polarity = t.polarity;
        out.push_back(d);
      }
      return out;
    }
  }
  throw std::logic_error("predict_spans: unknown variant");
}

Polarity classify_span(const Model& m, const AnnotatedSentence& s, int start_word, int end_word,
                       const Mat* precomputed) {
  if (!m.classifier)
    throw std::invalid_argument("classify_span: this model variant has no polarity classifier");
  TokenizedSentence ts = tokenize(s, m.vocab, m.max_tokens);
  const EncoderParams& enc = m.variant == Variant::Pipeline ? *m.encoder2 : m.encoder;
  Mat H;
  if (precomputed) {
    H = *precomputed;
    if (H.rows != ts.token_count() || H.cols != m.enc_cfg.hidden)
      throw std::invalid_argument("classify_span: encoding shape does not match the sentence");
  } else {
    H = encode(ts, enc, EncodeMode::Infer, 0);
  }
  auto [a, b] = word_span_to_token_span(ts, start_word, end_word);
  return classify_token_span(m, H, a, b);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "tsa-checkpoint v1";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const Model& m, const std::vector<std::string>& config_echo,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << kCheckpointMagic << "\n";
  out << "variant=" << variant_name(m.variant) << "\n";
  out << "tag_shape=" << tag_shape_name(m.tag_shape) << "\n";
  out << "seed=" << m.seed << "\n";
  out << "corpus_fingerprint=" << m.corpus_fingerprint << "\n";
  out << "max_tokens=" << m.max_tokens << "\n";
  const EncoderConfig& c = m.enc_cfg;
  out << "encoder layers=" << c.layers << " hidden=" << c.hidden << " heads=" << c.attn_heads
      << " ffn=" << c.ffn_multiplier << " dropout=" << fmt_double(c.dropout)
      << " max_positions=" << c.max_positions << " vocab=" << c.vocab_size << "\n";
  out << "config_echo " << config_echo.size() << "\n";
  for (const std::string& line : config_echo) out << line << "\n";
  std::string vocab_text = vocab_to_text(m.vocab);
  out << "vocab_chars " << vocab_text.size() << "\n" << vocab_text;
  Model& mutable_m = const_cast<Model&>(m);
  visit_model_tensors(mutable_m, [&](const std::string& name, Mat& t) {
    out << "tensor " << name << " " << t.rows << " " << t.cols << "\n";
    for (int i = 0; i < t.rows; ++i) {
      for (int j = 0; j < t.cols; ++j) {
        if (j) out << ' ';
        out << fmt_double(t(i, j));
      }
      out << "\n";
    }
  });
  out << "end\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string line;
  auto need_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw std::runtime_error(path + ": truncated checkpoint, expected " + what);
    return line;
  };
  if (need_line("magic") != kCheckpointMagic)
    throw std::runtime_error(path + ": not a checkpoint file (bad magic)");

  auto key_value = [&](const std::string& l, const char* key) {
    std::string prefix = std::string(key) + "=";
    if (l.rfind(prefix, 0) != 0)
      throw std::runtime_error(path + ": expected '" + key + "=' line, got: " + l);
    return l.substr(prefix.size());
  };

  LoadedCheckpoint lc;
  Model& m = lc.model;
  auto v = variant_from_name(key_value(need_line("variant"), "variant"));
  if (!v) throw std::runtime_error(path + ": unknown variant");
  m.variant = *v;
  auto shape = tag_shape_from_name(key_value(need_line("tag_shape"), "tag_shape"));
  if (!shape) throw std::runtime_error(path + ": unknown tag shape");
  m.tag_shape = *shape;
  m.seed = std::stoull(key_value(need_line("seed"), "seed"));
  m.corpus_fingerprint =
      std::stoull(key_value(need_line("corpus_fingerprint"), "corpus_fingerprint"));
  m.max_tokens = std::stoi(key_value(need_line("max_tokens"), "max_tokens"));

  EncoderConfig cfg;
  {
    std::string l = need_line("encoder config");
    if (std::sscanf(l.c_str(),
                    "encoder layers=%d hidden=%d heads=%d ffn=%d dropout=%lf max_positions=%d "
                    "vocab=%d",
                    &cfg.layers, &cfg.hidden, &cfg.attn_heads, &cfg.ffn_multiplier, &cfg.dropout,
                    &cfg.max_positions, &cfg.vocab_size) != 7)
      throw std::runtime_error(path + ": bad encoder config line");
  }

  {
    std::string l = need_line("config_echo");
    std::size_t count = 0;
    if (std::sscanf(l.c_str(), "config_echo %zu", &count) != 1)
      throw std::runtime_error(path + ": bad config_echo line");
    for (std::size_t i = 0; i < count; ++i) lc.config_echo.push_back(need_line("config echo"));
  }

  {
    std::string l = need_line("vocab_chars");
    std::size_t chars = 0;
    if (std::sscanf(l.c_str(), "vocab_chars %zu", &chars) != 1)
      throw std::runtime_error(path + ": bad vocab_chars line");
    std::string text(chars, '\0');
    in.read(text.data(), static_cast<std::streamsize>(chars));
    if (static_cast<std::size_t>(in.gcount()) != chars)
      throw std::runtime_error(path + ": truncated vocabulary block");
    m.vocab = vocab_from_text(text);
  }
  if (m.vocab.size() != cfg.vocab_size)
    throw std::runtime_error(path + ": vocabulary size does not match encoder config");

  Model built = init_model(m.variant, m.tag_shape, cfg, m.vocab, m.max_tokens, m.seed);
  built.corpus_fingerprint = m.corpus_fingerprint;

  std::map<std::string, Mat*> registry;
  visit_model_tensors(built, [&](const std::string& name, Mat& t) { registry[name] = &t; });
  std::map<std::string, bool> filled;
  for (auto& [name, ptr] : registry) filled[name] = false;

  while (std::getline(in, line)) {
    if (line == "end") break;
    char name_buf[256];
    int rows = 0, cols = 0;
    if (std::sscanf(line.c_str(), "tensor %255s %d %d", name_buf, &rows, &cols) != 3)
      throw std::runtime_error(path + ": bad tensor header: " + line);
    auto it = registry.find(name_buf);
    if (it == registry.end())
      throw std::runtime_error(path + ": unexpected tensor '" + std::string(name_buf) + "'");
    Mat& t = *it->second;
    if (t.rows != rows || t.cols != cols)
      throw std::runtime_error(path + ": tensor '" + std::string(name_buf) + "' shape mismatch");
    for (int i = 0; i < rows; ++i) {
      if (!std::getline(in, line))
        throw std::runtime_error(path + ": tensor '" + std::string(name_buf) + "' truncated");
      std::istringstream row(line);
      for (int j = 0; j < cols; ++j) {
        if (!(row >> t(i, j)))
          throw std::runtime_error(path + ": tensor '" + std::string(name_buf) +
                                   "' row too short");
      }
    }
    filled[name_buf] = true;
  }
  for (const auto& [name, ok] : filled)
    if (!ok) throw std::runtime_error(path + ": missing tensor '" + name + "'");

  lc.model = std::move(built);
  return lc;
}

}  // namespace tsa
