#include "tsa/encoder.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tsa/rng.hpp"

namespace tsa {

namespace {
constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

void EncoderConfig::validate() const {
  if (hidden < 1 || attn_heads < 1 || ffn_multiplier < 1)
    throw std::invalid_argument("encoder config: sizes must be positive");
  if (layers < 0) throw std::invalid_argument("encoder config: negative layer count");
  if (hidden % attn_heads != 0)
    throw std::invalid_argument("encoder config: hidden size " + std::to_string(hidden) +
                                " not divisible by " + std::to_string(attn_heads) + " heads");
  if (dropout < 0.0 || dropout >= 1.0)
    throw std::invalid_argument("encoder config: dropout must be in [0,1)");
  if (max_positions < 3) throw std::invalid_argument("encoder config: max_positions too small");
  if (vocab_size < kReservedTokens)
    throw std::invalid_argument("encoder config: vocab_size not set");
}

void visit_tensors(EncoderParams& p, const std::string& prefix, const TensorVisitor& fn) {
  fn(prefix + "tok_emb", p.tok_emb);
  fn(prefix + "pos_emb", p.pos_emb);
  fn(prefix + "seg_emb", p.seg_emb);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    std::string bp = prefix + "block" + std::to_string(b) + ".";
    BlockParams& blk = p.blocks[b];
    fn(bp + "ln1_gain", blk.ln1_gain);
    fn(bp + "ln1_bias", blk.ln1_bias);
    fn(bp + "wq", blk.wq);
    fn(bp + "bq", blk.bq);
    fn(bp + "wk", blk.wk);
    fn(bp + "bk", blk.bk);
    fn(bp + "wv", blk.wv);
    fn(bp + "bv", blk.bv);
    fn(bp + "wo", blk.wo);
    fn(bp + "bo", blk.bo);
    fn(bp + "ln2_gain", blk.ln2_gain);
    fn(bp + "ln2_bias", blk.ln2_bias);
    fn(bp + "ffn_w1", blk.ffn_w1);
    fn(bp + "ffn_b1", blk.ffn_b1);
    fn(bp + "ffn_w2", blk.ffn_w2);
    fn(bp + "ffn_b2", blk.ffn_b2);
  }
  if (p.cfg.layers > 0) {
    fn(prefix + "final_gain", p.final_gain);
    fn(prefix + "final_bias", p.final_bias);
  }
}

EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams z;
  z.cfg = p.cfg;
  z.tok_emb = Mat(p.tok_emb.rows, p.tok_emb.cols);
  z.pos_emb = Mat(p.pos_emb.rows, p.pos_emb.cols);
  z.seg_emb = Mat(p.seg_emb.rows, p.seg_emb.cols);
  z.blocks.resize(p.blocks.size());
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const BlockParams& src = p.blocks[b];
    BlockParams& dst = z.blocks[b];
    auto like = [](const Mat& m) { return Mat(m.rows, m.cols); };
    dst.ln1_gain = like(src.ln1_gain);
    dst.ln1_bias = like(src.ln1_bias);
    dst.wq = like(src.wq);
    dst.bq = like(src.bq);
    dst.wk = like(src.wk);
    dst.bk = like(src.bk);
    dst.wv = like(src.wv);
    dst.bv = like(src.bv);
    dst.wo = like(src.wo);
    dst.bo = like(src.bo);
    dst.ln2_gain = like(src.ln2_gain);
    dst.ln2_bias = like(src.ln2_bias);
    dst.ffn_w1 = like(src.ffn_w1);
    dst.ffn_b1 = like(src.ffn_b1);
    dst.ffn_w2 = like(src.ffn_w2);
    dst.ffn_b2 = like(src.ffn_b2);
  }
  z.final_gain = Mat(p.final_gain.rows, p.final_gain.cols);
  z.final_bias = Mat(p.final_bias.rows, p.final_bias.cols);
  return z;
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "encoder-init"));
  auto glorot = [&rng](int rows, int cols) {
    Mat m(rows, cols);
    double s = std::sqrt(6.0 / (rows + cols));
    for (double& x : m.a) x = rng.uniform(-s, s);
    return m;
  };
  auto emb_init = [&rng](int rows, int cols) {
    Mat m(rows, cols);
    for (double& x : m.a) x = rng.uniform(-0.1, 0.1);
    return m;
  };
  auto ones = [](int cols) {
    Mat m(1, cols);
    std::fill(m.a.begin(), m.a.end(), 1.0);
    return m;
  };

  int h = cfg.hidden;
  int f = cfg.ffn_size();
  EncoderParams p;
  p.cfg = cfg;
  p.tok_emb = emb_init(cfg.vocab_size, h);
  p.pos_emb = emb_init(cfg.max_positions, h);
  p.seg_emb = emb_init(1, h);
  p.blocks.resize(cfg.layers);
  for (BlockParams& blk : p.blocks) {
    blk.ln1_gain = ones(h);
    blk.ln1_bias = Mat(1, h);
    blk.wq = glorot(h, h);
    blk.bq = Mat(1, h);
    blk.wk = glorot(h, h);
    blk.bk = Mat(1, h);
    blk.wv = glorot(h, h);
    blk.bv = Mat(1, h);
    blk.wo = glorot(h, h);
    blk.bo = Mat(1, h);
    blk.ln2_gain = ones(h);
    blk.ln2_bias = Mat(1, h);
    blk.ffn_w1 = glorot(h, f);
    blk.ffn_b1 = Mat(1, f);
    blk.ffn_w2 = glorot(f, h);
    blk.ffn_b2 = Mat(1, h);
  }
  p.final_gain = ones(h);
  p.final_bias = Mat(1, h);
  return p;
}

namespace {

void layer_norm(const Mat& x, const Mat& gain, const Mat& bias, Mat& out,
                std::vector<double>& means, std::vector<double>& rstds) {
  int T = x.rows, h = x.cols;
  out = Mat(T, h);
  means.assign(T, 0.0);
  rstds.assign(T, 0.0);
  for (int t = 0; t < T; ++t) {
    const double* xr = x.row(t);
    double mean = 0.0;
    for (int j = 0; j < h; ++j) mean += xr[j];
    mean /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= h;
    double rstd = 1.0 / std::sqrt(var + kLnEps);
    means[t] = mean;
    rstds[t] = rstd;
    double* orow = out.row(t);
    for (int j = 0; j < h; ++j) orow[j] = gain(0, j) * (xr[j] - mean) * rstd + bias(0, j);
  }
}

// dx accumulated; dgain/dbias accumulated.
void layer_norm_backward(const Mat& x, const Mat& gain, const std::vector<double>& means,
                         const std::vector<double>& rstds, const Mat& dout, Mat& dx, Mat& dgain,
                         Mat& dbias) {
  int T = x.rows, h = x.cols;
  for (int t = 0; t < T; ++t) {
    const double* xr = x.row(t);
    const double* dr = dout.row(t);
    double mean = means[t], rstd = rstds[t];
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (int j = 0; j < h; ++j) {
      double xhat = (xr[j] - mean) * rstd;
      double dxhat = dr[j] * gain(0, j);
      dgain(0, j) += dr[j] * xhat;
      dbias(0, j) += dr[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
    }
    double* dxr = dx.row(t);
    for (int j = 0; j < h; ++j) {
      double xhat = (xr[j] - mean) * rstd;
      double dxhat = dr[j] * gain(0, j);
      dxr[j] += rstd * (dxhat - sum_dxhat / h - xhat * sum_dxhat_xhat / h);
    }
  }
}

// Y = X * W + b
void linear(const Mat& x, const Mat& w, const Mat& b, Mat& out) {
  matmul(x, w, out);
  for (int t = 0; t < out.rows; ++t) {
    double* orow = out.row(t);
    for (int j = 0; j < out.cols; ++j) orow[j] += b(0, j);
  }
}

void linear_backward(const Mat& x, const Mat& w, const Mat& dout, Mat& dx, Mat& dw, Mat& db) {
  // dx += dout * W^T
  for (int t = 0; t < x.rows; ++t) {
    const double* drow = dout.row(t);
    double* dxr = dx.row(t);
    for (int j = 0; j < w.cols; ++j) {
      double d = drow[j];
      if (d == 0.0) continue;
      for (int i = 0; i < w.rows; ++i) dxr[i] += d * w(i, j);
    }
  }
  acc_matmul_tn(x, dout, dw);
  for (int t = 0; t < dout.rows; ++t) {
    const double* drow = dout.row(t);
    for (int j = 0; j < dout.cols; ++j) db(0, j) += drow[j];
  }
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

double gelu_grad(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

Mat make_dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Mat m(rows, cols);
  double scale = 1.0 / (1.0 - rate);
  for (double& v : m.a) v = rng.uniform() < rate ? 0.0 : scale;
  return m;
}

void apply_mask(const Mat& x, const Mat& mask, Mat& out) {
  out = x;
  if (mask.a.empty()) return;
  for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] *= mask.a[i];
}

void apply_mask_backward(const Mat& dout, const Mat& mask, Mat& dx) {
  if (mask.a.empty()) {
    for (std::size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dout.a[i];
    return;
  }
  for (std::size_t i = 0; i < dx.a.size(); ++i) dx.a[i] += dout.a[i] * mask.a[i];
}

}  // namespace

EncodeCache encode_with_cache(const TokenizedSentence& ts, const EncoderParams& p, EncodeMode mode,
                              std::uint64_t dropout_seed) {
  const EncoderConfig& cfg = p.cfg;
  int T = ts.token_count();
  int h = cfg.hidden;
  if (T > cfg.max_positions)
    throw std::runtime_error("encode: sequence of " + std::to_string(T) +
                             " tokens exceeds max positions " + std::to_string(cfg.max_positions));

  bool use_dropout = mode == EncodeMode::Train && cfg.dropout > 0.0;
  Rng drop_rng(derive_seed(dropout_seed, "dropout"));

  EncodeCache cache;
  cache.mode = mode;
  cache.emb = Mat(T, h);
  for (int t = 0; t < T; ++t) {
    int id = ts.token_ids[t];
    if (id < 0 || id >= p.tok_emb.rows)
      throw std::runtime_error("encode: token id out of embedding range");
    double* row = cache.emb.row(t);
    const double* tok = p.tok_emb.row(id);
    const double* pos = p.pos_emb.row(t);
    const double* seg = p.seg_emb.row(0);
    for (int j = 0; j < h; ++j) row[j] = tok[j] + pos[j] + seg[j];
  }
  if (use_dropout) cache.emb_drop_mask = make_dropout_mask(T, h, cfg.dropout, drop_rng);
  apply_mask(cache.emb, cache.emb_drop_mask, cache.block_input);

  int heads = cfg.attn_heads;
  int dh = h / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat* x = &cache.block_input;
  cache.blocks.resize(cfg.layers);
  for (int b = 0; b < cfg.layers; ++b) {
    const BlockParams& blk = p.blocks[b];
    BlockCache& bc = cache.blocks[b];

    layer_norm(*x, blk.ln1_gain, blk.ln1_bias, bc.ln1_out, bc.ln1_mean, bc.ln1_rstd);
    linear(bc.ln1_out, blk.wq, blk.bq, bc.q);
    linear(bc.ln1_out, blk.wk, blk.bk, bc.k);
    linear(bc.ln1_out, blk.wv, blk.bv, bc.v);

    bc.attn.assign(heads, Mat());
    bc.ctx = Mat(T, h);
    for (int a = 0; a < heads; ++a) {
      int off = a * dh;
      Mat& probs = bc.attn[a];
      probs = Mat(T, T);
      for (int i = 0; i < T; ++i) {
        double* prow = probs.row(i);
        const double* qi = bc.q.row(i) + off;
        for (int j = 0; j < T; ++j) prow[j] = scale * dot(qi, bc.k.row(j) + off, dh);
        softmax_inplace(prow, T);
      }
      for (int i = 0; i < T; ++i) {
        const double* prow = probs.row(i);
        double* crow = bc.ctx.row(i) + off;
        for (int j = 0; j < T; ++j) {
          double pij = prow[j];
          const double* vj = bc.v.row(j) + off;
          for (int d = 0; d < dh; ++d) crow[d] += pij * vj[d];
        }
      }
    }
    linear(bc.ctx, blk.wo, blk.bo, bc.attn_proj);
    if (use_dropout) bc.attn_drop_mask = make_dropout_mask(T, h, cfg.dropout, drop_rng);
    apply_mask(bc.attn_proj, bc.attn_drop_mask, bc.resid1);
    for (std::size_t i = 0; i < bc.resid1.a.size(); ++i) bc.resid1.a[i] += x->a[i];

    layer_norm(bc.resid1, blk.ln2_gain, blk.ln2_bias, bc.ln2_out, bc.ln2_mean, bc.ln2_rstd);
    linear(bc.ln2_out, blk.ffn_w1, blk.ffn_b1, bc.ffn_pre);
    bc.ffn_act = bc.ffn_pre;
    for (double& v : bc.ffn_act.a) v = gelu(v);
    linear(bc.ffn_act, blk.ffn_w2, blk.ffn_b2, bc.ffn_out);
    if (use_dropout) bc.ffn_drop_mask = make_dropout_mask(T, h, cfg.dropout, drop_rng);
    apply_mask(bc.ffn_out, bc.ffn_drop_mask, bc.out);
    for (std::size_t i = 0; i < bc.out.a.size(); ++i) bc.out.a[i] += bc.resid1.a[i];

    x = &bc.out;
  }

  if (cfg.layers > 0) {
    layer_norm(*x, p.final_gain, p.final_bias, cache.output, cache.final_mean, cache.final_rstd);
  } else {
    cache.output = *x;
  }
  return cache;
}

Mat encode(const TokenizedSentence& ts, const EncoderParams& p, EncodeMode mode,
           std::uint64_t dropout_seed) {
  return encode_with_cache(ts, p, mode, dropout_seed).output;
}

void encode_backward(const TokenizedSentence& ts, const EncoderParams& p, const EncodeCache& cache,
                     const Mat& upstream, EncoderParams& grads) {
  const EncoderConfig& cfg = p.cfg;
  int T = ts.token_count();
  int h = cfg.hidden;
  if (upstream.rows != T || upstream.cols != h)
    throw std::invalid_argument("encode_backward: upstream gradient shape mismatch");

  int heads = cfg.attn_heads;
  int dh = h / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dx(T, h);
  if (cfg.layers > 0) {
    const Mat& last = cache.blocks.back().out;
    layer_norm_backward(last, p.final_gain, cache.final_mean, cache.final_rstd, upstream, dx,
                        grads.final_gain, grads.final_bias);
  } else {
    dx = upstream;
  }

  for (int b = cfg.layers - 1; b >= 0; --b) {
    const BlockParams& blk = p.blocks[b];
    const BlockCache& bc = cache.blocks[b];
    BlockParams& g = grads.blocks[b];
    const Mat& block_in = (b == 0) ? cache.block_input : cache.blocks[b - 1].out;

    // x_out = resid1 + mask .* ffn_out
    Mat d_resid1 = dx;  // residual branch
    Mat d_ffn_out(T, cfg.hidden);
    apply_mask_backward(dx, bc.ffn_drop_mask, d_ffn_out);

    Mat d_ffn_act(T, cfg.ffn_size());
    linear_backward(bc.ffn_act, blk.ffn_w2, d_ffn_out, d_ffn_act, g.ffn_w2, g.ffn_b2);
    Mat d_ffn_pre(T, cfg.ffn_size());
    for (std::size_t i = 0; i < d_ffn_pre.a.size(); ++i)
      d_ffn_pre.a[i] = d_ffn_act.a[i] * gelu_grad(bc.ffn_pre.a[i]);
    Mat d_ln2(T, h);
    linear_backward(bc.ln2_out, blk.ffn_w1, d_ffn_pre, d_ln2, g.ffn_w1, g.ffn_b1);
    layer_norm_backward(bc.resid1, blk.ln2_gain, bc.ln2_mean, bc.ln2_rstd, d_ln2, d_resid1,
                        g.ln2_gain, g.ln2_bias);

    // resid1 = block_in + mask .* attn_proj
    Mat d_block_in = d_resid1;  // residual branch
    Mat d_attn_proj(T, h);
    apply_mask_backward(d_resid1, bc.attn_drop_mask, d_attn_proj);

    Mat d_ctx(T, h);
    linear_backward(bc.ctx, blk.wo, d_attn_proj, d_ctx, g.wo, g.bo);

    Mat dq(T, h), dk(T, h), dv(T, h);
    for (int a = 0; a < heads; ++a) {
      int off = a * dh;
      const Mat& probs = bc.attn[a];
      for (int i = 0; i < T; ++i) {
        const double* dctx_i = d_ctx.row(i) + off;
        const double* prow = probs.row(i);
        // dP(i,j) = dctx_i . v_j ; dv_j += P(i,j) dctx_i
        std::vector<double> dp(T);
        for (int j = 0; j < T; ++j) {
          const double* vj = bc.v.row(j) + off;
          double s = 0.0;
          double* dvj = dv.row(j) + off;
          for (int d = 0; d < dh; ++d) {
            s += dctx_i[d] * vj[d];
            dvj[d] += prow[j] * dctx_i[d];
          }
          dp[j] = s;
        }
        // softmax backward
        double dot_pp = 0.0;
        for (int j = 0; j < T; ++j) dot_pp += dp[j] * prow[j];
        double* dqi = dq.row(i) + off;
        const double* qi = bc.q.row(i) + off;
        for (int j = 0; j < T; ++j) {
          double ds = prow[j] * (dp[j] - dot_pp) * scale;
          if (ds == 0.0) continue;
          const double* kj = bc.k.row(j) + off;
          double* dkj = dk.row(j) + off;
          for (int d = 0; d < dh; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
    }

    Mat d_ln1(T, h);
    linear_backward(bc.ln1_out, blk.wq, dq, d_ln1, g.wq, g.bq);
    linear_backward(bc.ln1_out, blk.wk, dk, d_ln1, g.wk, g.bk);
    linear_backward(bc.ln1_out, blk.wv, dv, d_ln1, g.wv, g.bv);
    layer_norm_backward(block_in, blk.ln1_gain, bc.ln1_mean, bc.ln1_rstd, d_ln1, d_block_in,
                        g.ln1_gain, g.ln1_bias);

    dx = std::move(d_block_in);
  }

  // dx is now the gradient at the (possibly dropped-out) embedding sum.
  Mat d_emb(T, h);
  apply_mask_backward(dx, cache.emb_drop_mask, d_emb);
  for (int t = 0; t < T; ++t) {
    const double* dr = d_emb.row(t);
    double* dtok = grads.tok_emb.row(ts.token_ids[t]);
    double* dpos = grads.pos_emb.row(t);
    double* dseg = grads.seg_emb.row(0);
    for (int j = 0; j < h; ++j) {
      dtok[j] += dr[j];
      dpos[j] += dr[j];
      dseg[j] += dr[j];
    }
  }
}

std::vector<Mat> load_precomputed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vector file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty vector file");
  int h = 0, sentences = 0;
  if (std::sscanf(line.c_str(), "h=%d sentences=%d", &h, &sentences) != 2 || h < 1 ||
      sentences < 0)
    throw std::runtime_error(path + ": bad header, expected 'h=<int> sentences=<int>'");
  std::vector<Mat> out;
  out.reserve(sentences);
  for (int s = 0; s < sentences; ++s) {
    if (!std::getline(in, line))
      throw std::runtime_error(path + ": missing 'rows=' line for sentence " + std::to_string(s));
    int rows = 0;
    if (std::sscanf(line.c_str(), "rows=%d", &rows) != 1 || rows < 1)
      throw std::runtime_error(path + ": bad 'rows=' line for sentence " + std::to_string(s));
    Mat m(rows, h);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(in, line))
        throw std::runtime_error(path + ": sentence " + std::to_string(s) + " truncated at row " +
                                 std::to_string(r));
      std::istringstream row(line);
      for (int j = 0; j < h; ++j) {
        if (!(row >> m(r, j)))
          throw std::runtime_error(path + ": sentence " + std::to_string(s) + " row " +
                                   std::to_string(r) + " has fewer than " + std::to_string(h) +
                                   " values");
      }
      double extra;
      if (row >> extra)
        throw std::runtime_error(path + ": sentence " + std::to_string(s) + " row " +
                                 std::to_string(r) + " has more than " + std::to_string(h) +
                                 " values");
    }
    if (!all_finite(m))
      throw std::runtime_error(path + ": sentence " + std::to_string(s) + " has non-finite values");
    out.push_back(std::move(m));
  }
  return out;
}

void export_precomputed(const std::vector<Mat>& encodings, const std::string& path) {
  if (encodings.empty()) throw std::invalid_argument("export_precomputed: nothing to write");
  int h = encodings.front().cols;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vector file: " + path);
  char buf[64];
  out << "h=" << h << " sentences=" << encodings.size() << "\n";
  for (const Mat& m : encodings) {
    if (m.cols != h) throw std::invalid_argument("export_precomputed: inconsistent dimensions");
    out << "rows=" << m.rows << "\n";
    for (int r = 0; r < m.rows; ++r) {
      for (int j = 0; j < m.cols; ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", m(r, j));
        if (j) out << ' ';
        out << buf;
      }
      out << "\n";
    }
  }
}

}  // namespace tsa
