#include "tsa/runner.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "tsa/rng.hpp"
#include "json.hpp"

namespace tsa::runner {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Chunked fan-out over [0, n); results land in caller-indexed slots so the
// output order never depends on the thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

int default_threads() {
  if (const char* env = std::getenv("SPANTSA_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return 1;
}

}  // namespace

std::uint64_t fingerprint_file(const std::string& path) { return fnv1a64(read_file(path)); }

void write_manifest(const Manifest& m) {
  if (m.outputs.empty()) return;
  json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["subcommand"] = m.subcommand;
  j["options"] = m.options;
  json inputs = json::array();
  for (const std::string& path : m.inputs) {
    json entry;
    entry["path"] = path;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fingerprint_file(path)));
    entry["fnv1a64"] = buf;
    inputs.push_back(entry);
  }
  j["inputs"] = inputs;
  j["outputs"] = m.outputs;
  write_file(m.outputs.front() + ".manifest.json", j.dump(2) + "\n");
}

void run_synth(const SynthOpts& o) {
  Corpus c = generate_synthetic(o.config, o.seed);
  write_corpus(c, o.output);
  Manifest m;
  m.subcommand = "synth";
  m.options["seed"] = std::to_string(o.seed);
  m.options["sentences"] = std::to_string(o.config.sentences);
  m.options["adjacency_rate"] = fmt_double(o.config.adjacency_rate);
  m.options["min_len"] = std::to_string(o.config.min_sentence_len);
  m.options["max_len"] = std::to_string(o.config.max_sentence_len);
  m.options["filler_words"] = std::to_string(o.config.filler_words);
  m.options["target_words"] = std::to_string(o.config.target_words);
  m.outputs = {o.output};
  write_manifest(m);
}

void run_convert(const ConvertOpts& o) {
  Corpus c = parse_corpus(o.input);
  TagScheme scheme;
  if (o.scheme == "bio")
    scheme = TagScheme::Bio;
  else if (o.scheme == "biop")
    scheme = TagScheme::BioPolarity;
  else if (o.scheme == "collapsed")
    scheme = TagScheme::Collapsed;
  else
    throw std::invalid_argument("convert: unknown scheme '" + o.scheme + "'");
  std::string out;
  for (const AnnotatedSentence& s : c.sentences)
    out += render_tag_sequence(spans_to_tags(s, scheme)) + "\n";
  if (o.output.empty()) {
    std::cout << out;
    return;
  }
  write_file(o.output, out);
  Manifest m;
  m.subcommand = "convert";
  m.options["scheme"] = o.scheme;
  m.inputs = {o.input};
  m.outputs = {o.output};
  write_manifest(m);
}

int run_validate(const ValidateOpts& o) {
  std::vector<LineIssue> issues = lint_corpus_text(read_file(o.input));
  for (const LineIssue& issue : issues)
    std::cout << o.input << ":" << issue.line << ": " << issue.message << "\n";
  if (issues.empty()) std::cout << o.input << ": ok\n";
  return static_cast<int>(issues.size());
}

void run_kfold(const KfoldOpts& o) {
  Corpus c = parse_corpus(o.input);
  std::vector<Fold> folds = kfold_split(c, o.k, o.seed);
  fs::create_directories(o.output_dir);
  Manifest m;
  m.subcommand = "kfold";
  m.options["k"] = std::to_string(o.k);
  m.options["seed"] = std::to_string(o.seed);
  m.inputs = {o.input};
  for (int f = 0; f < o.k; ++f) {
    std::string train_path = o.output_dir + "/fold" + std::to_string(f) + ".train.jsonl";
    std::string test_path = o.output_dir + "/fold" + std::to_string(f) + ".test.jsonl";
    write_corpus(folds[f].train, train_path);
    write_corpus(folds[f].test, test_path);
    m.outputs.push_back(train_path);
    m.outputs.push_back(test_path);
  }
  write_manifest(m);
}

void run_train(const TrainOpts& o) {
  Corpus c = parse_corpus(o.corpus);
  TrainResult result = train(c, o.config);
  save_checkpoint(result.model, o.config.echo(), o.output);
  if (!o.quiet) {
    for (std::size_t e = 0; e < result.loss_trace.size(); ++e)
      std::cout << "epoch " << e << " loss " << fmt_double(result.loss_trace[e]) << "\n";
  }
  Manifest m;
  m.subcommand = "train";
  for (const std::string& line : o.config.echo()) {
    auto pos = line.find('=');
    m.options[line.substr(0, pos)] = line.substr(pos + 1);
  }
  m.inputs = {o.corpus};
  m.outputs = {o.output};
  write_manifest(m);
}

std::string predictions_to_jsonl(const std::vector<Prediction>& preds, bool with_scores) {
  std::string out;
  for (const Prediction& p : preds) {
    json j;
    j["id"] = p.sentence_id;
    json spans = json::array();
    for (const DecodedSpan& d : p.spans) {
      json s;
      s["start"] = d.start_word;
      s["end"] = d.end_word;
      if (d.polarity) s["polarity"] = polarity_symbol(*d.polarity);
      if (with_scores) {
        s["raw"] = d.raw;
        s["u"] = d.u;
      }
      spans.push_back(s);
    }
    j["spans"] = spans;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Prediction> parse_predictions(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<Prediction> preds;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed JSON: " +
                               e.what());
    }
    Prediction p;
    if (!j.contains("id") || !j.contains("spans"))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": prediction needs 'id' and 'spans'");
    p.sentence_id = j.at("id").get<int>();
    for (const json& s : j.at("spans")) {
      DecodedSpan d;
      d.start_word = s.at("start").get<int>();
      d.end_word = s.at("end").get<int>();
      if (s.contains("polarity")) d.polarity = polarity_from_symbol(s.at("polarity"));
      if (s.contains("raw")) d.raw = s.at("raw").get<double>();
      if (s.contains("u")) d.u = s.at("u").get<double>();
      p.spans.push_back(d);
    }
    preds.push_back(std::move(p));
  }
  return preds;
}

void run_decode(const DecodeOpts& o) {
  LoadedCheckpoint lc = load_checkpoint(o.checkpoint);
  const Model& model = lc.model;
  if (o.tag_mode && model.variant != Variant::Tag)
    throw std::invalid_argument("tag-decode: checkpoint is not a tag baseline");
  if (!o.tag_mode && model.variant == Variant::Tag)
    throw std::invalid_argument("decode: checkpoint is a tag baseline; use tag-decode");
  Corpus c = parse_corpus(o.corpus);

  std::vector<Mat> vectors;
  if (o.vectors) {
    vectors = load_precomputed(*o.vectors);
    if (vectors.size() != c.sentences.size())
      throw std::runtime_error("decode: vector file has " + std::to_string(vectors.size()) +
                               " sentences, corpus has " + std::to_string(c.sentences.size()));
  }

  int n = static_cast<int>(c.sentences.size());
  std::vector<Prediction> preds(n);
  int threads = o.threads > 0 ? o.threads : default_threads();
  parallel_for(n, threads, [&](int i) {
    Prediction p;
    p.sentence_id = i;
    p.spans = predict_spans(model, c.sentences[i], o.decode,
                            o.vectors ? &vectors[i] : nullptr);
    preds[i] = std::move(p);
  });

  write_file(o.output, predictions_to_jsonl(preds, !o.tag_mode));
  if (o.verbose) {
    // Human-readable listing; positions are 1-based inclusive here, matching
    // the usual presentation, while all JSONL stays 0-based.
    for (const Prediction& p : preds) {
      std::cout << "sentence " << p.sentence_id + 1 << ":";
      for (const DecodedSpan& d : p.spans) {
        std::cout << " [" << d.start_word + 1 << "," << d.end_word + 1 << "]";
        if (d.polarity) std::cout << polarity_symbol(*d.polarity);
      }
      std::cout << "\n";
    }
  }
  Manifest m;
  m.subcommand = o.tag_mode ? "tag-decode" : "decode";
  m.options["gamma"] = fmt_double(o.decode.gamma);
  m.options["top_m"] = std::to_string(o.decode.top_m);
  m.options["max_spans"] = std::to_string(o.decode.max_spans);
  m.options["length_penalty"] = o.decode.length_penalty ? "1" : "0";
  m.options["nms"] = o.decode.nms ? "1" : "0";
  m.options["cross_resolve"] = o.decode.resolve_cross_polarity ? "1" : "0";
  m.options["threads"] = std::to_string(threads);
  m.inputs = {o.checkpoint, o.corpus};
  if (o.vectors) m.inputs.push_back(*o.vectors);
  m.outputs = {o.output};
  write_manifest(m);
}

void run_classify(const ClassifyOpts& o) {
  LoadedCheckpoint lc = load_checkpoint(o.checkpoint);
  const Model& model = lc.model;
  Corpus c = parse_corpus(o.corpus);
  std::vector<Mat> vectors;
  if (o.vectors) {
    vectors = load_precomputed(*o.vectors);
    if (vectors.size() != c.sentences.size())
      throw std::runtime_error("classify: vector file does not match the corpus");
  }

  int n = static_cast<int>(c.sentences.size());
  std::vector<std::vector<Polarity>> predicted(n);
  int threads = o.threads > 0 ? o.threads : default_threads();
  parallel_for(n, threads, [&](int i) {
    const AnnotatedSentence& s = c.sentences[i];
    for (const TargetAnnotation& t : s.targets)
      predicted[i].push_back(classify_span(model, s, t.start_word, t.end_word,
                                           o.vectors ? &vectors[i] : nullptr));
  });

  std::string out;
  for (int i = 0; i < n; ++i) {
    json j;
    j["id"] = i;
    json pols = json::array();
    for (Polarity p : predicted[i]) pols.push_back(polarity_symbol(p));
    j["polarities"] = pols;
    out += j.dump() + "\n";
  }
  write_file(o.output, out);

  std::optional<double> acc = polarity_accuracy(predicted, c);
  json report;
  report["polarity_accuracy"] = acc ? json(*acc) : json(nullptr);

  // Accuracy broken down by target word count.
  std::vector<int> edges = o.edges.empty() ? default_bucket_edges(BucketAxis::TargetWords)
                                           : o.edges;
  std::vector<long> total(edges.size() + 1, 0), correct(edges.size() + 1, 0);
  for (int i = 0; i < n; ++i) {
    const auto& golds = c.sentences[i].targets;
    for (std::size_t t = 0; t < golds.size(); ++t) {
      int len = golds[t].end_word - golds[t].start_word + 1;
      std::size_t b = 0;
      while (b < edges.size() && len > edges[b]) ++b;
      ++total[b];
      if (golds[t].polarity && predicted[i][t] == *golds[t].polarity) ++correct[b];
    }
  }
  json buckets = json::array();
  for (std::size_t b = 0; b < total.size(); ++b) {
    json row;
    row["target_words"] = b < edges.size() ? std::to_string(edges[b]) : (">" + std::to_string(edges.back()));
    row["targets"] = total[b];
    row["accuracy"] = total[b] > 0 ? json(static_cast<double>(correct[b]) / total[b]) : json(nullptr);
    buckets.push_back(row);
  }
  report["by_target_words"] = buckets;

  if (acc)
    std::cout << "polarity accuracy " << fmt_fixed(*acc) << " over " << n << " sentences\n";
  else
    std::cout << "polarity accuracy undefined (no gold targets)\n";
  if (!o.report.empty()) write_file(o.report, report.dump(2) + "\n");

  Manifest m;
  m.subcommand = "classify";
  m.options["threads"] = std::to_string(threads);
  m.inputs = {o.checkpoint, o.corpus};
  if (o.vectors) m.inputs.push_back(*o.vectors);
  m.outputs = {o.output};
  if (!o.report.empty()) m.outputs.push_back(o.report);
  write_manifest(m);
}

namespace {

json prf_to_json(const Prf& p) {
  json j;
  j["precision"] = p.precision;
  j["recall"] = p.recall;
  j["f1"] = p.f1;
  j["tp"] = p.tp;
  j["fp"] = p.fp;
  j["fn"] = p.fn;
  return j;
}

Prf prf_from_json(const json& j) {
  Prf p;
  p.precision = j.at("precision").get<double>();
  p.recall = j.at("recall").get<double>();
  p.f1 = j.at("f1").get<double>();
  p.tp = j.value("tp", 0L);
  p.fp = j.value("fp", 0L);
  p.fn = j.value("fn", 0L);
  return p;
}

}  // namespace

std::string report_to_json(const MetricsReport& r) {
  json j;
  j["exact"] = prf_to_json(r.exact);
  j["extraction"] = prf_to_json(r.extraction);
  j["polarity_accuracy"] = r.polarity_acc ? json(*r.polarity_acc) : json(nullptr);
  j["counts"]["sentences"] = r.sentences;
  j["counts"]["gold_targets"] = r.gold_targets;
  j["counts"]["predicted_targets"] = r.predicted_targets;
  if (!r.bucket_axis.empty()) {
    j["bucket_axis"] = r.bucket_axis;
    j["bucket_edges"] = r.bucket_edges;
    json rows = json::array();
    for (const BucketRow& row : r.buckets) {
      json b;
      b["bucket"] = row.label;
      b["gold"] = row.gold;
      b["predicted"] = row.predicted;
      b["exact"] = prf_to_json(row.exact);
      b["extraction"] = prf_to_json(row.extraction);
      rows.push_back(b);
    }
    j["buckets"] = rows;
  }
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& path) {
  json j = json::parse(read_file(path));
  MetricsReport r;
  r.exact = prf_from_json(j.at("exact"));
  r.extraction = prf_from_json(j.at("extraction"));
  if (!j.at("polarity_accuracy").is_null())
    r.polarity_acc = j.at("polarity_accuracy").get<double>();
  r.sentences = j.at("counts").at("sentences").get<long>();
  r.gold_targets = j.at("counts").at("gold_targets").get<long>();
  r.predicted_targets = j.at("counts").at("predicted_targets").get<long>();
  return r;
}

std::string report_to_table(const MetricsReport& r) {
  std::ostringstream out;
  out << "metric       precision  recall     f1\n";
  out << "exact        " << fmt_fixed(r.exact.precision) << "     " << fmt_fixed(r.exact.recall)
      << "     " << fmt_fixed(r.exact.f1) << "\n";
  out << "extraction   " << fmt_fixed(r.extraction.precision) << "     "
      << fmt_fixed(r.extraction.recall) << "     " << fmt_fixed(r.extraction.f1) << "\n";
  if (r.polarity_acc) out << "polarity acc " << fmt_fixed(*r.polarity_acc) << "\n";
  out << "sentences " << r.sentences << ", gold targets " << r.gold_targets
      << ", predicted " << r.predicted_targets << "\n";
  for (const BucketRow& b : r.buckets) {
    out << "  [" << b.label << "] gold " << b.gold << " pred " << b.predicted << " exact-f1 "
        << fmt_fixed(b.exact.f1) << " extraction-f1 " << fmt_fixed(b.extraction.f1) << "\n";
  }
  return out.str();
}

void run_evaluate(const EvaluateOpts& o) {
  if (!o.aggregate.empty()) {
    std::vector<MetricsReport> folds;
    for (const std::string& path : o.aggregate) folds.push_back(report_from_json(path));
    MetricsReport mean = crossval_aggregate(folds);
    if (!o.quiet)
      std::cout << "cross-validation mean over " << folds.size() << " folds\n"
                << report_to_table(mean);
    if (!o.report.empty()) {
      json j = json::parse(report_to_json(mean));
      j["folds"] = folds.size();
      write_file(o.report, j.dump(2) + "\n");
      Manifest m;
      m.subcommand = "evaluate";
      m.options["aggregate"] = std::to_string(folds.size());
      m.inputs = o.aggregate;
      m.outputs = {o.report};
      write_manifest(m);
    }
    return;
  }

  Corpus gold = parse_corpus(o.gold);
  std::vector<Prediction> preds = parse_predictions(o.pred);
  std::optional<BucketAxis> axis;
  if (o.axis) {
    if (*o.axis == "sentence_length")
      axis = BucketAxis::SentenceLength;
    else if (*o.axis == "target_words")
      axis = BucketAxis::TargetWords;
    else
      throw std::invalid_argument("evaluate: unknown axis '" + *o.axis + "'");
  }
  MetricsReport r = evaluate(preds, gold, axis, o.edges);
  if (!o.quiet) std::cout << report_to_table(r);
  if (!o.report.empty()) {
    write_file(o.report, report_to_json(r));
    Manifest m;
    m.subcommand = "evaluate";
    if (o.axis) m.options["axis"] = *o.axis;
    m.options["threads"] = std::to_string(o.threads);
    m.inputs = {o.pred, o.gold};
    m.outputs = {o.report};
    write_manifest(m);
  }
}

std::vector<double> parse_gamma_grid(const std::string& spec) {
  double a = 0.0, b = 0.0, step = 0.0;
  if (std::sscanf(spec.c_str(), "%lf:%lf:%lf", &a, &b, &step) != 3 || step <= 0.0 || b < a)
    throw std::invalid_argument("bad gamma grid '" + spec + "'; expected a:b:step with step > 0");
  std::vector<double> grid;
  for (double g = a; g <= b + 1e-12; g += step) grid.push_back(g);
  return grid;
}

void run_sweep(const SweepOpts& o) {
  LoadedCheckpoint lc = load_checkpoint(o.checkpoint);
  Corpus c = parse_corpus(o.corpus);
  std::vector<double> gammas = parse_gamma_grid(o.gammas);
  std::vector<std::string> configs = {"full"};
  for (const std::string& a : o.ablate) {
    if (a == "nms")
      configs.push_back("no-nms");
    else if (a == "length")
      configs.push_back("no-length");
    else
      throw std::invalid_argument("sweep: unknown ablation '" + a + "'");
  }
  std::vector<SweepRow> rows = gamma_sweep(lc.model, c, gammas, configs, o.decode);
  std::string out = "gamma,config,precision,recall,f1,candidates\n";
  for (const SweepRow& r : rows) {
    out += fmt_double(r.gamma);
    out += "," + r.config + "," + fmt_double(r.precision) + "," + fmt_double(r.recall) + "," +
           fmt_double(r.f1) + "," + std::to_string(r.candidates) + "\n";
  }
  write_file(o.output, out);
  Manifest m;
  m.subcommand = "sweep";
  m.options["gammas"] = o.gammas;
  std::string ablate_join;
  for (const std::string& a : o.ablate) ablate_join += (ablate_join.empty() ? "" : ",") + a;
  m.options["ablate"] = ablate_join;
  m.options["threads"] = std::to_string(o.threads);
  m.inputs = {o.checkpoint, o.corpus};
  m.outputs = {o.output};
  write_manifest(m);
}

int run_check_grad(const CheckGradOpts& o) {
  std::vector<GradCheckReport> reports = gradient_check_all(o.seed, o.eps);
  int failures = 0;
  json jreports = json::array();
  for (const GradCheckReport& r : reports) {
    double tol = grad_path_tolerance(r.path);
    bool ok = r.max_rel_err <= tol;
    if (!ok) ++failures;
    std::cout << (ok ? "ok   " : "FAIL ") << grad_path_name(r.path) << " max_rel_err "
              << fmt_double(r.max_rel_err) << " tolerance " << fmt_double(tol) << "\n";
    json jr;
    jr["path"] = grad_path_name(r.path);
    jr["max_rel_err"] = r.max_rel_err;
    jr["tolerance"] = tol;
    json tensors = json::array();
    for (const GradCheckTensor& t : r.tensors) {
      json jt;
      jt["tensor"] = t.name;
      jt["rel_err"] = t.rel_err;
      jt["checked"] = t.checked;
      tensors.push_back(jt);
      std::cout << "  " << t.name << " rel_err " << fmt_double(t.rel_err) << " (" << t.checked
                << " entries)\n";
    }
    jr["tensors"] = tensors;
    jreports.push_back(jr);
  }
  if (!o.report.empty()) {
    json top;
    top["eps"] = o.eps;
    top["seed"] = o.seed;
    top["paths"] = jreports;
    write_file(o.report, top.dump(2) + "\n");
    Manifest m;
    m.subcommand = "check-grad";
    m.options["seed"] = std::to_string(o.seed);
    m.options["eps"] = fmt_double(o.eps);
    m.outputs = {o.report};
    write_manifest(m);
  }
  return failures;
}

void run_export_vectors(const ExportVectorsOpts& o) {
  LoadedCheckpoint lc = load_checkpoint(o.checkpoint);
  const Model& model = lc.model;
  Corpus c = parse_corpus(o.corpus);
  const EncoderParams* enc = &model.encoder;
  if (o.component == "classifier") {
    if (!model.encoder2)
      throw std::invalid_argument("export-vectors: this checkpoint has a single encoder");
    enc = &*model.encoder2;
  } else if (o.component != "extractor") {
    throw std::invalid_argument("export-vectors: component must be extractor or classifier");
  }
  std::vector<Mat> encodings;
  for (const AnnotatedSentence& s : c.sentences) {
    TokenizedSentence ts = tokenize(s, model.vocab, model.max_tokens);
    encodings.push_back(encode(ts, *enc, EncodeMode::Infer, 0));
  }
  export_precomputed(encodings, o.output);
  Manifest m;
  m.subcommand = "export-vectors";
  m.options["component"] = o.component;
  m.inputs = {o.checkpoint, o.corpus};
  m.outputs = {o.output};
  write_manifest(m);
}

}  // namespace tsa::runner
