#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsa {

// Row-major double matrix. All model math runs in double precision so the
// finite-difference checks stay sharp.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

  double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

  double* row(int i) { return a.data() + static_cast<std::size_t>(i) * cols; }
  const double* row(int i) const { return a.data() + static_cast<std::size_t>(i) * cols; }

  void zero() { std::fill(a.begin(), a.end(), 0.0); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_shape(const Mat& m, int r, int c, const char* what) {
  if (m.rows != r || m.cols != c) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(r) + "x" +
                                std::to_string(c) + ", got " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols));
  }
}

// out = A * B
inline void matmul(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.rows);
  out = Mat(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    double* orow = out.row(i);
    for (int k = 0; k < A.cols; ++k) {
      double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = B.row(k);
      for (int j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

// out += A^T * B
inline void acc_matmul_tn(const Mat& A, const Mat& B, Mat& out) {
  assert(A.rows == B.rows && out.rows == A.cols && out.cols == B.cols);
  for (int k = 0; k < A.rows; ++k) {
    const double* arow = A.row(k);
    const double* brow = B.row(k);
    for (int i = 0; i < A.cols; ++i) {
      double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = out.row(i);
      for (int j = 0; j < B.cols; ++j) orow[j] += aki * brow[j];
    }
  }
}

// out = A * B^T
inline void matmul_nt(const Mat& A, const Mat& B, Mat& out) {
  assert(A.cols == B.cols);
  out = Mat(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    for (int j = 0; j < B.rows; ++j) {
      const double* brow = B.row(j);
      double s = 0.0;
      for (int k = 0; k < A.cols; ++k) s += arow[k] * brow[k];
      out(i, j) = s;
    }
  }
}

inline double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// In-place numerically stable softmax over a contiguous range.
inline void softmax_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  std::vector<double> p(x);
  softmax_inplace(p.data(), static_cast<int>(p.size()));
  return p;
}

inline double log_sum_exp(const double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
  return mx + std::log(sum);
}

inline bool all_finite(const Mat& m) {
  for (double v : m.a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace tsa
