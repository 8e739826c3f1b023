#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tsa/corpus.hpp"
#include "tsa/linalg.hpp"
#include "tsa/tokenizer.hpp"

namespace tsa {

// Label inventory plus transition validity for one tagging scheme. The
// polarity row set is used by the factored (BIO + polarity) baselines.
struct TagSet {
  std::vector<std::string> labels;
  std::vector<std::vector<bool>> valid_transition;  // [from][to]
  std::vector<bool> valid_start;
  bool constrained = true;

  int size() const { return static_cast<int>(labels.size()); }
  int index_of(const std::string& label) const;
};

TagSet make_bio_tagset(bool constrained = true);        // O B I
TagSet make_polarity_row_tagset();                      // O + - 0 (unconstrained)
TagSet make_collapsed_tagset(bool constrained = true);  // O B+ I+ B- I- B0 I0

struct TaggerParams {
  Mat emission_w;  // |tags| x h
  Mat trans;       // |tags| x |tags|; invalid entries pinned to kMaskScore
  Mat start;       // 1 x |tags|
  Mat stop;        // 1 x |tags|
};

TaggerParams init_tagger(const TagSet& set, int hidden, std::uint64_t seed);
TaggerParams zeros_like(const TaggerParams& p);
void visit_tensors(TaggerParams& p, const std::string& prefix,
                   const std::function<void(const std::string&, Mat&)>& fn);

// Emission scores over the n word positions: the first token of each word
// (framing rows never used). Row w = emission_w * H[first_piece(w)].
Mat emission_scores(const Mat& H, const TokenizedSentence& ts, const TaggerParams& p);
void emission_scores_backward(const Mat& H, const TokenizedSentence& ts, const TaggerParams& p,
                              const Mat& d_emissions, Mat& dH, TaggerParams& grads);

double crf_log_partition(const Mat& emissions, const TaggerParams& p, const TagSet& set);

struct CrfNllResult {
  double value = 0.0;
  Mat d_emissions;     // n x |tags|
  TaggerParams grads;  // transition/start/stop gradients (emission_w unused)
};

CrfNllResult crf_nll(const Mat& emissions, const std::vector<int>& gold_tags,
                     const TaggerParams& p, const TagSet& set);

// Max-score valid path; ties resolved toward the lexicographically smallest
// tag-index sequence.
std::vector<int> viterbi_decode(const Mat& emissions, const TaggerParams& p, const TagSet& set);

// Tag-index paths <-> structured tag sequences.
std::vector<int> bio_indices(const TagSequence& seq);
std::vector<int> polarity_row_indices(const TagSequence& seq);
std::vector<int> collapsed_indices(const TagSequence& seq);
TagSequence bio_path_to_tags(const std::vector<int>& path);
TagSequence collapsed_path_to_tags(const std::vector<int>& path);
// Combines a BIO path with a polarity-row path into the factored scheme.
TagSequence joint_paths_to_tags(const std::vector<int>& bio_path,
                                const std::vector<int>& polarity_path);

}  // namespace tsa
