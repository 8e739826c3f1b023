#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tsa/linalg.hpp"
#include "tsa/tokenizer.hpp"

namespace tsa {

struct EncoderConfig {
  int layers = 2;        // stacked block count; 0 = embeddings only
  int hidden = 32;
  int attn_heads = 2;
  int ffn_multiplier = 4;
  double dropout = 0.1;
  int max_positions = 128;
  int vocab_size = 0;

  int ffn_size() const { return hidden * ffn_multiplier; }
  void validate() const;
};

struct BlockParams {
  Mat ln1_gain, ln1_bias;
  Mat wq, bq, wk, bk, wv, bv, wo, bo;
  Mat ln2_gain, ln2_bias;
  Mat ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

// Pre-norm block layout: x += attn(ln1(x)); x += ffn(ln2(x)); a final
// normalization follows the stack. With zero blocks the embedding sum is
// returned as-is.
struct EncoderParams {
  EncoderConfig cfg;
  Mat tok_emb;  // vocab x h
  Mat pos_emb;  // max_positions x h
  Mat seg_emb;  // 1 x h (single segment)
  std::vector<BlockParams> blocks;
  Mat final_gain, final_bias;
};

using TensorVisitor = std::function<void(const std::string&, Mat&)>;
void visit_tensors(EncoderParams& p, const std::string& prefix, const TensorVisitor& fn);
EncoderParams zeros_like(const EncoderParams& p);

// Weights are Glorot-uniform, embeddings uniform in [-0.1, 0.1], biases zero,
// normalization gains one. Deterministic per seed.
EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);

enum class EncodeMode { Train, Infer };

struct BlockCache {
  Mat ln1_out;
  std::vector<double> ln1_mean, ln1_rstd;
  Mat q, k, v;
  std::vector<Mat> attn;  // per head, row-stochastic
  Mat ctx;
  Mat attn_proj;
  Mat attn_drop_mask;
  Mat resid1;
  Mat ln2_out;
  std::vector<double> ln2_mean, ln2_rstd;
  Mat ffn_pre, ffn_act, ffn_out;
  Mat ffn_drop_mask;
  Mat out;
};

struct EncodeCache {
  EncodeMode mode = EncodeMode::Infer;
  Mat emb;
  Mat emb_drop_mask;
  Mat block_input;
  std::vector<BlockCache> blocks;
  std::vector<double> final_mean, final_rstd;
  Mat output;  // (n+2) x h contextual vectors
};

// Train mode draws dropout masks from a stream seeded by dropout_seed; the
// masks are recorded in the cache so the backward pass replays them exactly.
EncodeCache encode_with_cache(const TokenizedSentence& ts, const EncoderParams& p,
                              EncodeMode mode, std::uint64_t dropout_seed);
Mat encode(const TokenizedSentence& ts, const EncoderParams& p, EncodeMode mode = EncodeMode::Infer,
           std::uint64_t dropout_seed = 0);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
void encode_backward(const TokenizedSentence& ts, const EncoderParams& p, const EncodeCache& cache,
                     const Mat& upstream, EncoderParams& grads);

// Precomputed-vector files: "h=<int> sentences=<int>" header, then per
// sentence "rows=<int>" followed by that many lines of h decimal floats.
std::vector<Mat> load_precomputed(const std::string& path);
void export_precomputed(const std::vector<Mat>& encodings, const std::string& path);

}  // namespace tsa
