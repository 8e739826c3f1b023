#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsa/eval.hpp"
#include "tsa/training.hpp"

namespace tsa::runner {

inline constexpr const char* kToolName = "spantsa";
inline constexpr const char* kToolVersion = "1.0.0";

// Every run that writes artifacts also writes `<first output>.manifest.json`
// recording the tool version, the exact options, and input fingerprints, so
// the run can be reproduced from the manifest alone.
struct Manifest {
  std::string subcommand;
  std::map<std::string, std::string> options;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};
void write_manifest(const Manifest& m);
std::uint64_t fingerprint_file(const std::string& path);

struct SynthOpts {
  SynthConfig config;
  std::uint64_t seed = 1;
  std::string output;
};
void run_synth(const SynthOpts& o);

struct ConvertOpts {
  std::string input;
  std::string scheme = "bio";  // bio | biop | collapsed
  std::string output;
};
void run_convert(const ConvertOpts& o);

struct ValidateOpts {
  std::string input;
};
int run_validate(const ValidateOpts& o);  // issue count

struct KfoldOpts {
  std::string input;
  int k = 10;
  std::uint64_t seed = 1;
  std::string output_dir;
};
void run_kfold(const KfoldOpts& o);

struct TrainOpts {
  std::string corpus;
  std::string output;  // checkpoint path
  TrainConfig config;
  bool quiet = true;
};
void run_train(const TrainOpts& o);

struct DecodeOpts {
  std::string checkpoint;
  std::string corpus;
  std::string output;
  std::optional<std::string> vectors;  // precomputed encodings
  DecodeConfig decode;
  int threads = 1;
  bool tag_mode = false;  // true for the tag-decode subcommand
  bool verbose = false;   // print spans with 1-based positions
};
void run_decode(const DecodeOpts& o);

struct ClassifyOpts {
  std::string checkpoint;
  std::string corpus;
  std::string output;          // per-target polarity JSONL
  std::string report;          // accuracy report JSON (optional)
  std::optional<std::string> vectors;
  std::vector<int> edges;      // target-word buckets for the breakdown
  int threads = 1;
};
void run_classify(const ClassifyOpts& o);

struct EvaluateOpts {
  std::string pred;
  std::string gold;
  std::string report;  // output JSON (optional; table printed unless quiet)
  std::optional<std::string> axis;  // sentence_length | target_words
  std::vector<int> edges;
  std::vector<std::string> aggregate;  // fold report files; exclusive mode
  int threads = 1;
  bool quiet = false;
};
void run_evaluate(const EvaluateOpts& o);

struct SweepOpts {
  std::string checkpoint;
  std::string corpus;
  std::string output;  // CSV
  std::string gammas = "-2:8:0.5";  // a:b:step inclusive grid
  std::vector<std::string> ablate;  // subset of {nms, length}
  DecodeConfig decode;
  int threads = 1;
};
void run_sweep(const SweepOpts& o);

struct CheckGradOpts {
  std::uint64_t seed = 1;
  double eps = 1e-5;
  std::string report;  // optional JSON output
};
int run_check_grad(const CheckGradOpts& o);  // count of failed paths

struct ExportVectorsOpts {
  std::string checkpoint;
  std::string corpus;
  std::string output;
  std::string component = "extractor";  // extractor | classifier
};
void run_export_vectors(const ExportVectorsOpts& o);

// Shared serialization helpers.
std::string predictions_to_jsonl(const std::vector<Prediction>& preds, bool with_scores);
std::vector<Prediction> parse_predictions(const std::string& path);
std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& path);
std::string report_to_table(const MetricsReport& r);
std::vector<double> parse_gamma_grid(const std::string& spec);

}  // namespace tsa::runner
