#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "doctest.h"
#include "tsa/encoder.hpp"
#include "tsa/rng.hpp"

using namespace tsa;

namespace {

Vocabulary test_vocab(int words) {
  Vocabulary v;
  v.id_to_token = {"[CLS]", "[SEP]", "[UNK]"};
  for (int i = 0; i < words; ++i) v.add_word("w" + std::to_string(i));
  return v;
}

TokenizedSentence make_sentence(const Vocabulary& v, std::vector<std::string> words) {
  AnnotatedSentence s;
  s.words = std::move(words);
  return tokenize(s, v);
}

EncoderConfig small_config(const Vocabulary& v, int layers = 1, int hidden = 8, int heads = 2) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.hidden = hidden;
  cfg.attn_heads = heads;
  cfg.ffn_multiplier = 2;
  cfg.dropout = 0.0;
  cfg.max_positions = 16;
  cfg.vocab_size = v.size();
  return cfg;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.a.size(); ++i) m = std::max(m, std::abs(a.a[i] - b.a[i]));
  return m;
}

}  // namespace

TEST_CASE("init_params is deterministic and validates shapes") {
  Vocabulary v = test_vocab(5);
  EncoderConfig cfg = small_config(v, 2);
  EncoderParams a = init_params(cfg, 11);
  EncoderParams b = init_params(cfg, 11);
  double diff = 0.0;
  visit_tensors(a, "", [&](const std::string& name, Mat& t) {
    Mat* other = nullptr;
    visit_tensors(b, "", [&](const std::string& n2, Mat& t2) {
      if (n2 == name) other = &t2;
    });
    REQUIRE(other != nullptr);
    diff = std::max(diff, max_abs_diff(t, *other));
  });
  CHECK(diff == 0.0);

  EncoderConfig no_blocks = small_config(v, 0);
  EncoderParams p0 = init_params(no_blocks, 3);
  CHECK(p0.blocks.empty());

  EncoderConfig bad = small_config(v);
  bad.hidden = 8;
  bad.attn_heads = 3;
  CHECK_THROWS_AS(init_params(bad, 1), std::invalid_argument);
}

TEST_CASE("zero blocks output the embedding sum") {
  Vocabulary v = test_vocab(4);
  EncoderConfig cfg = small_config(v, 0);
  EncoderParams p = init_params(cfg, 5);
  TokenizedSentence ts = make_sentence(v, {"w0", "w2"});
  Mat H = encode(ts, p, EncodeMode::Infer, 0);
  REQUIRE(H.rows == 4);
  for (int t = 0; t < H.rows; ++t) {
    for (int j = 0; j < cfg.hidden; ++j) {
      double expected =
          p.tok_emb(ts.token_ids[t], j) + p.pos_emb(t, j) + p.seg_emb(0, j);
      CHECK(H(t, j) == doctest::Approx(expected).epsilon(1e-15));
    }
  }
}

TEST_CASE("inference is deterministic; dropout 0 makes train equal infer") {
  Vocabulary v = test_vocab(6);
  EncoderConfig cfg = small_config(v, 2);
  EncoderParams p = init_params(cfg, 7);
  TokenizedSentence ts = make_sentence(v, {"w0", "w1", "w2", "w3"});
  Mat a = encode(ts, p, EncodeMode::Infer, 0);
  Mat b = encode(ts, p, EncodeMode::Infer, 99);
  CHECK(max_abs_diff(a, b) == 0.0);
  Mat t = encode(ts, p, EncodeMode::Train, 123);
  CHECK(max_abs_diff(a, t) == 0.0);  // dropout rate 0: bit-identical

  EncoderConfig with_dropout = cfg;
  with_dropout.dropout = 0.5;
  EncoderParams pd = init_params(with_dropout, 7);
  Mat d1 = encode(ts, pd, EncodeMode::Train, 123);
  Mat d2 = encode(ts, pd, EncodeMode::Train, 123);
  Mat d3 = encode(ts, pd, EncodeMode::Train, 124);
  CHECK(max_abs_diff(d1, d2) == 0.0);  // same mask stream
  CHECK(max_abs_diff(d1, d3) > 0.0);   // different seed, different masks
}

TEST_CASE("per-head attention rows sum to one") {
  Vocabulary v = test_vocab(8);
  EncoderConfig cfg = small_config(v, 2, 8, 2);
  EncoderParams p = init_params(cfg, 21);
  TokenizedSentence ts = make_sentence(v, {"w0", "w5", "w2", "w7", "w1"});
  EncodeCache cache = encode_with_cache(ts, p, EncodeMode::Infer, 0);
  for (const BlockCache& bc : cache.blocks) {
    for (const Mat& probs : bc.attn) {
      for (int i = 0; i < probs.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < probs.cols; ++j) {
          sum += probs(i, j);
          CHECK(probs(i, j) >= 0.0);
        }
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("encoding is sensitive to token order") {
  Vocabulary v = test_vocab(6);
  EncoderConfig cfg = small_config(v, 1);
  EncoderParams p = init_params(cfg, 3);
  Mat a = encode(make_sentence(v, {"w0", "w1", "w2"}), p);
  Mat b = encode(make_sentence(v, {"w2", "w1", "w0"}), p);
  CHECK(max_abs_diff(a, b) > 1e-6);
}

TEST_CASE("sequences beyond max positions are rejected") {
  Vocabulary v = test_vocab(2);
  EncoderConfig cfg = small_config(v);
  cfg.max_positions = 6;
  EncoderParams p = init_params(cfg, 1);
  CHECK_NOTHROW(encode(make_sentence(v, {"w0", "w0", "w0", "w0"}), p));
  CHECK_THROWS_AS(encode(make_sentence(v, {"w0", "w0", "w0", "w0", "w0"}), p),
                  std::runtime_error);
}

TEST_CASE("backward matches central finite differences on a small config") {
  Vocabulary v = test_vocab(6);
  EncoderConfig cfg = small_config(v, 1, 8, 2);
  EncoderParams p = init_params(cfg, 17);
  TokenizedSentence ts = make_sentence(v, {"w0", "w3", "w1", "w4"});

  // Scalar probe: L(params) = sum_ij W_ij * H_ij with fixed random W.
  Rng wrng(5);
  Mat W(ts.token_count(), cfg.hidden);
  for (double& x : W.a) x = wrng.uniform(-1.0, 1.0);
  auto loss_value = [&]() {
    Mat H = encode(ts, p, EncodeMode::Infer, 0);
    double s = 0.0;
    for (std::size_t i = 0; i < H.a.size(); ++i) s += W.a[i] * H.a[i];
    return s;
  };

  EncodeCache cache = encode_with_cache(ts, p, EncodeMode::Infer, 0);
  EncoderParams grads = zeros_like(p);
  encode_backward(ts, p, cache, W, grads);

  const double eps = 1e-5;
  double worst = 0.0;
  visit_tensors(p, "", [&](const std::string& name, Mat& tensor) {
    Mat* g = nullptr;
    visit_tensors(grads, "", [&](const std::string& n2, Mat& t2) {
      if (n2 == name) g = &t2;
    });
    REQUIRE(g != nullptr);
    double scale = 0.0;
    for (double x : g->a) scale = std::max(scale, std::abs(x));
    // Sample a spread of entries per tensor.
    std::size_t stride = std::max<std::size_t>(1, tensor.a.size() / 12);
    for (std::size_t i = 0; i < tensor.a.size(); i += stride) {
      double saved = tensor.a[i];
      tensor.a[i] = saved + eps;
      double up = loss_value();
      tensor.a[i] = saved - eps;
      double down = loss_value();
      tensor.a[i] = saved;
      double fd = (up - down) / (2 * eps);
      scale = std::max(scale, std::abs(fd));
      if (scale < 1e-8) continue;
      worst = std::max(worst, std::abs(fd - g->a[i]) / scale);
    }
  });
  CHECK(worst <= 1e-4);
}

TEST_CASE("zero upstream and single-token identities") {
  Vocabulary v = test_vocab(4);
  EncoderConfig cfg = small_config(v, 1);
  EncoderParams p = init_params(cfg, 9);
  TokenizedSentence ts = make_sentence(v, {"w1", "w2"});
  EncodeCache cache = encode_with_cache(ts, p, EncodeMode::Infer, 0);
  EncoderParams grads = zeros_like(p);
  Mat zero(ts.token_count(), cfg.hidden);
  encode_backward(ts, p, cache, zero, grads);
  double total = 0.0;
  visit_tensors(grads, "", [&](const std::string&, Mat& t) {
    for (double x : t.a) total += std::abs(x);
  });
  CHECK(total == 0.0);

  // L=0, one word: the embedding gradient is the upstream row.
  EncoderConfig flat = small_config(v, 0);
  EncoderParams pf = init_params(flat, 2);
  TokenizedSentence one = make_sentence(v, {"w3"});
  EncodeCache c2 = encode_with_cache(one, pf, EncodeMode::Infer, 0);
  Mat up(3, flat.hidden);
  Rng urng(4);
  for (double& x : up.a) x = urng.uniform(-1, 1);
  EncoderParams gf = zeros_like(pf);
  encode_backward(one, pf, c2, up, gf);
  int word_token_id = one.token_ids[1];
  for (int j = 0; j < flat.hidden; ++j) {
    CHECK(gf.tok_emb(word_token_id, j) == doctest::Approx(up(1, j)).epsilon(1e-15));
    CHECK(gf.pos_emb(1, j) == doctest::Approx(up(1, j)).epsilon(1e-15));
  }
}

TEST_CASE("precomputed vector files round trip and validate") {
  Vocabulary v = test_vocab(4);
  EncoderConfig cfg = small_config(v, 1);
  EncoderParams p = init_params(cfg, 13);
  std::vector<Mat> encs;
  encs.push_back(encode(make_sentence(v, {"w0", "w1", "w2"}), p));
  encs.push_back(encode(make_sentence(v, {"w3"}), p));

  auto path = (std::filesystem::temp_directory_path() / "tsa_vec_test.txt").string();
  export_precomputed(encs, path);
  std::vector<Mat> back = load_precomputed(path);
  REQUIRE(back.size() == 2);
  CHECK(max_abs_diff(back[0], encs[0]) == 0.0);  // %.17g round trips doubles
  CHECK(max_abs_diff(back[1], encs[1]) == 0.0);
  std::filesystem::remove(path);

  // 5 values on a row declaring h=4: error names the location.
  std::string bad_path = (std::filesystem::temp_directory_path() / "tsa_vec_bad.txt").string();
  {
    std::ofstream out(bad_path);
    out << "h=4 sentences=1\nrows=1\n0.5 0.5 0.5 0.5 0.5\n";
  }
  CHECK_THROWS_WITH_AS(load_precomputed(bad_path),
                       doctest::Contains("sentence 0 row 0 has more than 4 values"),
                       std::runtime_error);
  {
    std::ofstream out(bad_path);
    out << "h=4 sentences=1\nrows=2\n0.5 0.5 0.5 0.5\n";
  }
  CHECK_THROWS_AS(load_precomputed(bad_path), std::runtime_error);
  std::filesystem::remove(bad_path);
}
