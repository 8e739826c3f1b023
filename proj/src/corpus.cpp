#include "tsa/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tsa/rng.hpp"
#include "json.hpp"

namespace tsa {

using nlohmann::json;

const char* polarity_symbol(Polarity p) {
  switch (p) {
    case Polarity::Positive: return "+";
    case Polarity::Negative: return "-";
    case Polarity::Neutral: return "0";
  }
  return "?";
}

std::optional<Polarity> polarity_from_symbol(const std::string& s) {
  if (s == "+") return Polarity::Positive;
  if (s == "-") return Polarity::Negative;
  if (s == "0") return Polarity::Neutral;
  return std::nullopt;
}

std::vector<std::string> validate_sentence(const AnnotatedSentence& s) {
  std::vector<std::string> violations;
  int n = s.word_count();
  if (n < 1) violations.push_back("sentence has no words");
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    const TargetAnnotation& t = s.targets[i];
    if (t.start_word > t.end_word)
      violations.push_back("target " + std::to_string(i) + ": span start exceeds end");
    if (t.start_word < 0 || t.end_word >= n)
      violations.push_back("target " + std::to_string(i) + ": index out of bounds");
  }
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    for (std::size_t j = i + 1; j < s.targets.size(); ++j) {
      const TargetAnnotation& a = s.targets[i];
      const TargetAnnotation& b = s.targets[j];
      if (a.start_word <= b.end_word && b.start_word <= a.end_word)
        violations.push_back("overlap between targets " + std::to_string(i) + " and " +
                             std::to_string(j));
    }
  }
  return violations;
}

std::string render_tag(const Tag& t, TagScheme scheme) {
  switch (scheme) {
    case TagScheme::Bio:
      return std::string(1, t.boundary);
    case TagScheme::Collapsed:
      if (t.boundary == 'O') return "O";
      return std::string(1, t.boundary) + polarity_symbol(*t.polarity);
    case TagScheme::BioPolarity: {
      // Factored rendering: boundary tag / polarity tag, "O" for no polarity.
      std::string pol = t.polarity ? polarity_symbol(*t.polarity) : "O";
      return std::string(1, t.boundary) + "/" + pol;
    }
  }
  return "?";
}

std::string render_tag_sequence(const TagSequence& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.tags.size(); ++i) {
    if (i > 0) out += ' ';
    out += render_tag(seq.tags[i], seq.scheme);
  }
  return out;
}

TagSequence spans_to_tags(const AnnotatedSentence& s, TagScheme scheme) {
  auto violations = validate_sentence(s);
  if (!violations.empty()) throw std::invalid_argument("invalid sentence: " + violations.front());
  TagSequence seq;
  seq.scheme = scheme;
  seq.tags.assign(s.words.size(), Tag{});
  for (const TargetAnnotation& t : s.targets) {
    for (int w = t.start_word; w <= t.end_word; ++w) {
      Tag& tag = seq.tags[w];
      tag.boundary = (w == t.start_word) ? 'B' : 'I';
      if (scheme != TagScheme::Bio) tag.polarity = t.polarity;
    }
  }
  return seq;
}

std::vector<TargetAnnotation> tags_to_spans(const TagSequence& seq) {
  std::vector<TargetAnnotation> spans;
  const auto& tags = seq.tags;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    char b = tags[i].boundary;
    if (b == 'I' && (i == 0 || tags[i - 1].boundary == 'O'))
      throw std::invalid_argument("malformed continuation: I at position " + std::to_string(i) +
                                  " does not follow B or I");
    if (b != 'B') continue;
    int start = static_cast<int>(i);
    int end = start;
    while (end + 1 < static_cast<int>(tags.size()) && tags[end + 1].boundary == 'I') ++end;
    TargetAnnotation t;
    t.start_word = start;
    t.end_word = end;
    if (seq.scheme != TagScheme::Bio) {
      // Majority polarity over the run; ties resolved Positive, Negative,
      // Neutral. Gold-derived tags are always consistent so this only matters
      // for predicted sequences.
      int votes[kNumPolarities] = {0, 0, 0};
      for (int w = start; w <= end; ++w)
        if (tags[w].polarity) ++votes[static_cast<int>(*tags[w].polarity)];
      int best = 0;
      for (int p = 1; p < kNumPolarities; ++p)
        if (votes[p] > votes[best]) best = p;
      t.polarity = static_cast<Polarity>(best);
    }
    spans.push_back(t);
  }
  return spans;
}

namespace {

AnnotatedSentence sentence_from_json(const json& obj, const std::string& where) {
  if (!obj.is_object() || !obj.contains("words") || !obj.contains("targets"))
    throw std::runtime_error(where + ": expected object with \"words\" and \"targets\"");
  AnnotatedSentence s;
  for (const auto& w : obj.at("words")) {
    if (!w.is_string()) throw std::runtime_error(where + ": words must be strings");
    s.words.push_back(w.get<std::string>());
  }
  for (const auto& t : obj.at("targets")) {
    TargetAnnotation a;
    if (!t.contains("start") || !t.contains("end") || !t.contains("polarity"))
      throw std::runtime_error(where + ": target needs start, end, polarity");
    a.start_word = t.at("start").get<int>();
    a.end_word = t.at("end").get<int>();
    auto pol = polarity_from_symbol(t.at("polarity").get<std::string>());
    if (!pol)
      throw std::runtime_error(where + ": polarity must be \"+\", \"-\" or \"0\"");
    a.polarity = pol;
    s.targets.push_back(a);
  }
  return s;
}

}  // namespace

Corpus parse_corpus_text(const std::string& text, const std::string& name) {
  Corpus c;
  c.name = name;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = name + ":" + std::to_string(line_no);
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error(where + ": malformed JSON: " + e.what());
    }
    AnnotatedSentence s = sentence_from_json(obj, where);
    auto violations = validate_sentence(s);
    if (!violations.empty()) throw std::runtime_error(where + ": " + violations.front());
    c.sentences.push_back(std::move(s));
  }
  return c;
}

Corpus parse_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_corpus_text(buf.str(), path);
}

std::vector<LineIssue> lint_corpus_text(const std::string& text) {
  std::vector<LineIssue> issues;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::string where = "line " + std::to_string(line_no);
    try {
      json obj = json::parse(line);
      AnnotatedSentence s = sentence_from_json(obj, where);
      for (const std::string& v : validate_sentence(s)) issues.push_back({line_no, v});
    } catch (const std::exception& e) {
      issues.push_back({line_no, e.what()});
    }
  }
  return issues;
}

std::string corpus_to_jsonl(const Corpus& c) {
  std::string out;
  for (const AnnotatedSentence& s : c.sentences) {
    json obj;
    obj["words"] = s.words;
    json targets = json::array();
    for (const TargetAnnotation& t : s.targets) {
      json jt;
      jt["start"] = t.start_word;
      jt["end"] = t.end_word;
      jt["polarity"] = t.polarity ? polarity_symbol(*t.polarity) : "?";
      targets.push_back(jt);
    }
    obj["targets"] = targets;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  out << corpus_to_jsonl(c);
}

namespace {

struct PlannedTarget {
  int length;
  Polarity polarity;
  std::string marker;
};

}  // namespace

Corpus generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  int max_target_len = static_cast<int>(cfg.target_length.size()) - 1;
  if (cfg.sentences < 1 || cfg.filler_words < 1 || cfg.target_words < 1)
    throw std::invalid_argument("synthetic config: counts must be positive");
  if (cfg.min_sentence_len < 1 || cfg.max_sentence_len < cfg.min_sentence_len)
    throw std::invalid_argument("synthetic config: bad sentence length range");
  if (max_target_len > cfg.min_sentence_len)
    throw std::invalid_argument("synthetic config: max target length exceeds min sentence length");
  if (cfg.marker_lexicon.empty())
    throw std::invalid_argument("synthetic config: marker lexicon is empty");

  std::vector<std::string> fillers;
  for (int i = 0; i < cfg.filler_words; ++i) fillers.push_back("f" + std::to_string(i));
  std::vector<std::string> nouns;
  for (int i = 0; i < cfg.target_words; ++i) nouns.push_back("item" + std::to_string(i));
  std::vector<std::string> markers_by_pol[kNumPolarities];
  for (const auto& [word, pol] : cfg.marker_lexicon)
    markers_by_pol[static_cast<int>(pol)].push_back(word);
  for (int p = 0; p < kNumPolarities; ++p)
    if (markers_by_pol[p].empty())
      throw std::invalid_argument("synthetic config: marker lexicon missing a polarity class");

  Rng rng(derive_seed(seed, "synthetic-corpus"));
  Corpus c;
  c.name = "synthetic-seed" + std::to_string(seed);

  auto draw_filler = [&] { return fillers[rng.uniform_int(0, cfg.filler_words - 1)]; };
  auto draw_noun = [&] { return nouns[rng.uniform_int(0, cfg.target_words - 1)]; };

  for (int si = 0; si < cfg.sentences; ++si) {
    int want_targets = rng.weighted_index(cfg.targets_per_sentence);
    std::vector<PlannedTarget> plan;
    int planned_words = 0;
    for (int t = 0; t < want_targets; ++t) {
      PlannedTarget pt;
      pt.length = std::max(1, rng.weighted_index(cfg.target_length));
      pt.polarity = static_cast<Polarity>(rng.uniform_int(0, kNumPolarities - 1));
      const auto& pool = markers_by_pol[static_cast<int>(pt.polarity)];
      pt.marker = pool[rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1)];
      // Leading filler plus marker plus target words; drop targets that no
      // longer fit.
      if (planned_words + 2 + pt.length > cfg.max_sentence_len) continue;
      planned_words += 2 + pt.length;
      plan.push_back(pt);
    }
    bool adjacent_pair = plan.size() >= 2 && rng.bernoulli(cfg.adjacency_rate);

    AnnotatedSentence s;
    auto emit_target = [&](const PlannedTarget& pt) {
      TargetAnnotation a;
      a.start_word = s.word_count();
      for (int w = 0; w < pt.length; ++w) s.words.push_back(draw_noun());
      a.end_word = s.word_count() - 1;
      a.polarity = pt.polarity;
      s.targets.push_back(a);
    };

    std::size_t next = 0;
    if (adjacent_pair) {
      // "<marker> X and Y": both targets take the marker's polarity and are
      // separated by exactly one word, the pattern the length heuristic is
      // there to split.
      plan[1].polarity = plan[0].polarity;
      s.words.push_back(plan[0].marker);
      emit_target(plan[0]);
      s.words.push_back("and");
      emit_target(plan[1]);
      next = 2;
    }
    for (; next < plan.size(); ++next) {
      s.words.push_back(draw_filler());
      s.words.push_back(plan[next].marker);
      emit_target(plan[next]);
    }
    while (s.word_count() < cfg.min_sentence_len) s.words.push_back(draw_filler());
    // Top up with a random amount of trailing filler, bounded by max length.
    if (s.word_count() < cfg.max_sentence_len) {
      int extra = static_cast<int>(rng.uniform_int(0, cfg.max_sentence_len - s.word_count()));
      for (int i = 0; i < extra; ++i) s.words.push_back(draw_filler());
    }
    if (s.word_count() > cfg.max_sentence_len)
      throw std::invalid_argument(
          "synthetic config: targets do not fit within max sentence length");
    c.sentences.push_back(std::move(s));
  }
  return c;
}

std::vector<Fold> kfold_split(const Corpus& c, int k, std::uint64_t seed) {
  int n = static_cast<int>(c.sentences.size());
  if (k < 2 || k > n) throw std::invalid_argument("kfold: k must be in [2, sentence count]");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "kfold"));
  rng.shuffle(order);

  std::vector<Fold> folds(k);
  std::vector<int> fold_of(n);
  for (int i = 0; i < n; ++i) fold_of[order[i]] = i % k;
  for (int f = 0; f < k; ++f) {
    folds[f].train.name = c.name + "-fold" + std::to_string(f) + "-train";
    folds[f].test.name = c.name + "-fold" + std::to_string(f) + "-test";
  }
  for (int i = 0; i < n; ++i) {
    for (int f = 0; f < k; ++f) {
      (f == fold_of[i] ? folds[f].test : folds[f].train).sentences.push_back(c.sentences[i]);
    }
  }
  return folds;
}

}  // namespace tsa
