#include <cmath>
#include <stdexcept>

#include "tsa/rng.hpp"
#include "tsa/training.hpp"

namespace tsa {

const char* grad_path_name(GradPath p) {
  switch (p) {
    case GradPath::ExtractionFull: return "extraction";
    case GradPath::ClassificationFull: return "classification";
    case GradPath::JointFull: return "joint";
    case GradPath::CollapsedFull: return "collapsed";
    case GradPath::CrfFull: return "crf";
    case GradPath::ExtractionHead: return "extraction-head";
    case GradPath::ClassificationHead: return "classification-head";
    case GradPath::CrfHead: return "crf-head";
  }
  return "?";
}

double grad_path_tolerance(GradPath p) {
  switch (p) {
    case GradPath::ExtractionHead:
    case GradPath::ClassificationHead:
    case GradPath::CrfHead:
      return 1e-6;
    default:
      return 1e-4;
  }
}

namespace {

struct Entry {
  std::string name;
  Mat* param;
  Mat* grad;
};

struct Fixture {
  std::vector<TrainExample> examples;
  Vocabulary vocab;
  EncoderParams enc;
  ExtractorParams ext;
  PolarityParams cls;
  CollapsedExtractorParams cext;
  TaggerParams bio_tagger;
  Mat fixed_h;

  EncoderParams g_enc;
  ExtractorParams g_ext;
  PolarityParams g_cls;
  CollapsedExtractorParams g_cext;
  TaggerParams g_bio;

  std::vector<Entry> entries;
  std::function<double()> loss;
};

Corpus fixture_corpus() {
  Corpus c;
  c.name = "gradcheck";
  AnnotatedSentence s1;
  s1.words = {"the", "food", "was", "great", "today"};
  s1.targets = {{1, 1, Polarity::Positive}};
  AnnotatedSentence s2;
  s2.words = {"slow", "noisy", "service", "and", "staff", "here"};
  s2.targets = {{2, 2, Polarity::Negative}, {4, 4, Polarity::Neutral}};
  c.sentences = {s1, s2};
  return c;
}

void add_encoder_entries(Fixture& f) {
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  visit_tensors(f.enc, "encoder.", [&](const std::string& n, Mat& t) { ps.emplace_back(n, &t); });
  visit_tensors(f.g_enc, "encoder.",
                [&](const std::string& n, Mat& t) { gs.emplace_back(n, &t); });
  for (std::size_t i = 0; i < ps.size(); ++i)
    f.entries.push_back({ps[i].first, ps[i].second, gs[i].second});
}

void add_tagger_entries(Fixture& f) {
  std::vector<std::pair<std::string, Mat*>> ps, gs;
  visit_tensors(f.bio_tagger, "crf.", [&](const std::string& n, Mat& t) { ps.emplace_back(n, &t); });
  visit_tensors(f.g_bio, "crf.", [&](const std::string& n, Mat& t) { gs.emplace_back(n, &t); });
  for (std::size_t i = 0; i < ps.size(); ++i)
    f.entries.push_back({ps[i].first, ps[i].second, gs[i].second});
}

Fixture make_fixture(GradPath path, std::uint64_t seed) {
  Fixture f;
  Corpus corpus = fixture_corpus();
  TokenizerConfig tok_cfg;
  f.vocab = build_vocab(corpus, tok_cfg);

  EncoderConfig cfg;  // desk-scale defaults, dropout off for the checks
  cfg.dropout = 0.0;
  cfg.max_positions = 32;
  cfg.vocab_size = f.vocab.size();

  for (const AnnotatedSentence& s : corpus.sentences)
    f.examples.push_back(make_example(s, f.vocab, tok_cfg.max_tokens));

  f.enc = init_params(cfg, derive_seed(seed, "gc-encoder"));
  f.ext = init_extractor(cfg.hidden, derive_seed(seed, "gc-extractor"));
  f.cls = init_polarity(cfg.hidden, derive_seed(seed, "gc-classifier"));
  f.cext = init_collapsed_extractor(cfg.hidden, derive_seed(seed, "gc-collapsed"));
  TagSet tagset = path == GradPath::CrfFull ? make_collapsed_tagset() : make_bio_tagset();
  f.bio_tagger = init_tagger(tagset, cfg.hidden, derive_seed(seed, "gc-tagger"));

  f.g_enc = zeros_like(f.enc);
  f.g_ext = zeros_like(f.ext);
  f.g_cls = zeros_like(f.cls);
  f.g_cext = zeros_like(f.cext);
  f.g_bio = zeros_like(f.bio_tagger);

  // Head-only paths hold the contextual rows fixed.
  Rng hrng(derive_seed(seed, "gc-fixed-h"));
  f.fixed_h = Mat(f.examples[0].ts.token_count(), cfg.hidden);
  for (double& x : f.fixed_h.a) x = hrng.uniform(-1.0, 1.0);
  return f;
}

void add_mat(Fixture& f, const std::string& name, Mat& p, Mat& g) {
  f.entries.push_back({name, &p, &g});
}

}  // namespace

GradCheckReport gradient_check(GradPath path, std::uint64_t seed, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("gradient_check: eps must be positive");
  Fixture f = make_fixture(path, seed);

  bool want_grads = false;
  auto grads_on = [&want_grads](auto* holder) { return want_grads ? holder : nullptr; };

  switch (path) {
    case GradPath::ExtractionFull:
      add_encoder_entries(f);
      add_mat(f, "extractor.w_start", f.ext.w_start, f.g_ext.w_start);
      add_mat(f, "extractor.w_end", f.ext.w_end, f.g_ext.w_end);
      f.loss = [&f, &grads_on] {
        double total = 0.0;
        for (const TrainExample& ex : f.examples)
          total += extraction_pass(ex, f.enc, f.ext, EncodeMode::Infer, 0, grads_on(&f.g_enc),
                                   grads_on(&f.g_ext));
        return total;
      };
      break;
    case GradPath::ClassificationFull:
      add_encoder_entries(f);
      add_mat(f, "classifier.w_attn", f.cls.w_attn, f.g_cls.w_attn);
      add_mat(f, "classifier.w_hidden", f.cls.w_hidden, f.g_cls.w_hidden);
      add_mat(f, "classifier.w_out", f.cls.w_out, f.g_cls.w_out);
      f.loss = [&f, &grads_on] {
        double total = 0.0;
        for (const TrainExample& ex : f.examples)
          total += classification_pass(ex, f.enc, f.cls, EncodeMode::Infer, 0, grads_on(&f.g_enc),
                                       grads_on(&f.g_cls));
        return total;
      };
      break;
    case GradPath::JointFull:
      add_encoder_entries(f);
      add_mat(f, "extractor.w_start", f.ext.w_start, f.g_ext.w_start);
      add_mat(f, "extractor.w_end", f.ext.w_end, f.g_ext.w_end);
      add_mat(f, "classifier.w_attn", f.cls.w_attn, f.g_cls.w_attn);
      add_mat(f, "classifier.w_hidden", f.cls.w_hidden, f.g_cls.w_hidden);
      add_mat(f, "classifier.w_out", f.cls.w_out, f.g_cls.w_out);
      f.loss = [&f, &grads_on] {
        double total = 0.0;
        for (const TrainExample& ex : f.examples)
          total += joint_pass(ex, f.enc, f.ext, f.cls, EncodeMode::Infer, 0, grads_on(&f.g_enc),
                              grads_on(&f.g_ext), grads_on(&f.g_cls));
        return total;
      };
      break;
    case GradPath::CollapsedFull:
      add_encoder_entries(f);
      for (int pol = 0; pol < kNumPolarities; ++pol) {
        std::string prefix = "collapsed." + std::to_string(pol) + ".";
        add_mat(f, prefix + "w_start", f.cext.per_polarity[pol].w_start,
                f.g_cext.per_polarity[pol].w_start);
        add_mat(f, prefix + "w_end", f.cext.per_polarity[pol].w_end,
                f.g_cext.per_polarity[pol].w_end);
      }
      f.loss = [&f, &grads_on] {
        double total = 0.0;
        for (const TrainExample& ex : f.examples)
          total += collapsed_pass(ex, f.enc, f.cext, EncodeMode::Infer, 0, grads_on(&f.g_enc),
                                  grads_on(&f.g_cext));
        return total;
      };
      break;
    case GradPath::CrfFull:
      add_encoder_entries(f);
      add_tagger_entries(f);
      f.loss = [&f, &grads_on] {
        double total = 0.0;
        for (const TrainExample& ex : f.examples)
          total += crf_pass(ex, f.enc, f.bio_tagger, CrfKind::Collapsed, EncodeMode::Infer, 0,
                            grads_on(&f.g_enc), grads_on(&f.g_bio));
        return total;
      };
      break;
    case GradPath::ExtractionHead:
      add_mat(f, "extractor.w_start", f.ext.w_start, f.g_ext.w_start);
      add_mat(f, "extractor.w_end", f.ext.w_end, f.g_ext.w_end);
      f.loss = [&f, &want_grads] {
        BoundaryScores scores = boundary_scores(f.fixed_h, f.ext);
        ExtractionLossResult r = extraction_loss(scores, f.examples[0].labels);
        if (want_grads) {
          Mat dH(f.fixed_h.rows, f.fixed_h.cols);
          boundary_scores_backward(f.fixed_h, f.ext, r.d_start, r.d_end, dH, f.g_ext);
        }
        return r.value;
      };
      break;
    case GradPath::ClassificationHead:
      add_mat(f, "classifier.w_attn", f.cls.w_attn, f.g_cls.w_attn);
      add_mat(f, "classifier.w_hidden", f.cls.w_hidden, f.g_cls.w_hidden);
      add_mat(f, "classifier.w_out", f.cls.w_out, f.g_cls.w_out);
      f.loss = [&f, &want_grads] {
        double total = 0.0;
        for (const auto& span : f.examples[0].gold_spans) {
          SpanRepresentation rep =
              span_representation(f.fixed_h, span.token_start, span.token_end, f.cls);
          PolarityScoresResult scores = polarity_scores(rep.value, f.cls);
          ClassificationLossResult cl = classification_loss(scores, span.polarity);
          total += cl.value;
          if (want_grads) {
            std::vector<double> d_v;
            polarity_scores_backward(rep.value, f.cls, scores, cl.d_scores, d_v, f.g_cls);
            Mat dH(f.fixed_h.rows, f.fixed_h.cols);
            span_representation_backward(f.fixed_h, span.token_start, span.token_end, f.cls, rep,
                                         d_v, dH, f.g_cls);
          }
        }
        return total;
      };
      break;
    case GradPath::CrfHead:
      add_tagger_entries(f);
      f.loss = [&f, &want_grads] {
        TagSet set = make_bio_tagset();
        Mat em = emission_scores(f.fixed_h, f.examples[0].ts, f.bio_tagger);
        CrfNllResult r = crf_nll(em, f.examples[0].bio_gold, f.bio_tagger, set);
        if (want_grads) {
          Mat dH(f.fixed_h.rows, f.fixed_h.cols);
          emission_scores_backward(f.fixed_h, f.examples[0].ts, f.bio_tagger, r.d_emissions, dH,
                                   f.g_bio);
          for (std::size_t k = 0; k < r.grads.trans.a.size(); ++k)
            f.g_bio.trans.a[k] += r.grads.trans.a[k];
          for (std::size_t k = 0; k < r.grads.start.a.size(); ++k) {
            f.g_bio.start.a[k] += r.grads.start.a[k];
            f.g_bio.stop.a[k] += r.grads.stop.a[k];
          }
        }
        return r.value;
      };
      break;
  }

  // Analytic gradients.
  want_grads = true;
  f.loss();
  want_grads = false;

  GradCheckReport report;
  report.path = path;
  Rng sample_rng(derive_seed(seed, "gc-sample"));

  for (const Entry& entry : f.entries) {
    Mat& param = *entry.param;
    const Mat& analytic = *entry.grad;

    double scale = 0.0;
    for (double a : analytic.a) scale = std::max(scale, std::abs(a));

    std::size_t size = param.a.size();
    std::vector<std::size_t> picks;
    const std::size_t limit = 24;
    if (size <= limit) {
      for (std::size_t i = 0; i < size; ++i) picks.push_back(i);
    } else {
      for (std::size_t i = 0; i < limit; ++i)
        picks.push_back(static_cast<std::size_t>(sample_rng.uniform_int(
            0, static_cast<std::int64_t>(size) - 1)));
      // Anchor the check at the dominant entry.
      std::size_t argmax = 0;
      for (std::size_t i = 0; i < size; ++i)
        if (std::abs(analytic.a[i]) > std::abs(analytic.a[argmax])) argmax = i;
      picks.push_back(argmax);
    }

    double worst_abs = 0.0;
    for (std::size_t idx : picks) {
      double saved = param.a[idx];
      param.a[idx] = saved + eps;
      double up = f.loss();
      param.a[idx] = saved - eps;
      double down = f.loss();
      param.a[idx] = saved;
      double fd = (up - down) / (2.0 * eps);
      scale = std::max(scale, std::abs(fd));
      worst_abs = std::max(worst_abs, std::abs(fd - analytic.a[idx]));
    }
    // Relative to the tensor's dominant gradient magnitude; an all-zero
    // gradient tensor only has difference noise, which counts as exact.
    double rel = scale < 1e-8 ? 0.0 : worst_abs / scale;
    report.tensors.push_back({entry.name, rel, static_cast<int>(picks.size())});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  return report;
}

std::vector<GradCheckReport> gradient_check_all(std::uint64_t seed, double eps) {
  std::vector<GradCheckReport> reports;
  for (GradPath path :
       {GradPath::ExtractionFull, GradPath::ClassificationFull, GradPath::JointFull,
        GradPath::CollapsedFull, GradPath::CrfFull, GradPath::ExtractionHead,
        GradPath::ClassificationHead, GradPath::CrfHead})
    reports.push_back(gradient_check(path, seed, eps));
  return reports;
}

}  // namespace tsa
