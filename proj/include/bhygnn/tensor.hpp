#pragma once

// Dense row-major double matrix. All model math runs on these; matrix products
// go through cblas_dgemm with OpenBLAS pinned to a single thread so results
// are reproducible run to run.
//
// Tensor(r, c) zero-fills. Ops that overwrite every entry allocate with
// Tensor::uninit to skip the fill; the training hot path moves hundreds of
// megabytes per epoch, so the extra pass matters.

#include <cblas.h>
#include <malloc.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <string>

#include "bhygnn/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace bhygnn {

class Tensor {
 public:
  Tensor() = default;

  Tensor(std::int64_t rows, std::int64_t cols) : Tensor(rows, cols, Uninit{}) {
    std::memset(data_.get(), 0, sizeof(double) * static_cast<std::size_t>(size()));
  }

  static Tensor uninit(std::int64_t rows, std::int64_t cols) { return Tensor(rows, cols, Uninit{}); }

  static Tensor full(std::int64_t rows, std::int64_t cols, double v) {
    Tensor t = uninit(rows, cols);
    t.fill(v);
    return t;
  }

  static Tensor row(std::initializer_list<double> vals) {
    Tensor t = uninit(1, static_cast<std::int64_t>(vals.size()));
    std::int64_t j = 0;
    for (double v : vals) t(0, j++) = v;
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const auto r = static_cast<std::int64_t>(rows.size());
    const auto c = static_cast<std::int64_t>(rows.begin()->size());
    Tensor t = uninit(r, c);
    std::int64_t i = 0;
    for (const auto& rv : rows) {
      std::int64_t j = 0;
      for (double v : rv) t(i, j++) = v;
      ++i;
    }
    return t;
  }

  Tensor(const Tensor& o) : Tensor(o.rows_, o.cols_, Uninit{}) {
    std::memcpy(data_.get(), o.data_.get(), sizeof(double) * static_cast<std::size_t>(size()));
  }
  Tensor& operator=(const Tensor& o) {
    if (this != &o) *this = Tensor(o);
    return *this;
  }
  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t size() const { return rows_ * cols_; }
  bool empty() const { return size() == 0; }

  double* data() { return data_.get(); }
  const double* data() const { return data_.get(); }

  double& operator()(std::int64_t r, std::int64_t c) { return data_[r * cols_ + c]; }
  double operator()(std::int64_t r, std::int64_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(double v) {
    for (std::int64_t i = 0; i < size(); ++i) data_[i] = v;
  }

  void zero() {
    if (data_) std::memset(data_.get(), 0, sizeof(double) * static_cast<std::size_t>(size()));
  }

  void add_scaled(const Tensor& o, double s) {
    const double* src = o.data();
    double* dst = data();
    const std::int64_t n = size();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += s * src[i];
  }

  bool all_finite() const {
    for (std::int64_t i = 0; i < size(); ++i)
      if (!std::isfinite(data_[i])) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) return false;
    return std::memcmp(data_.get(), o.data_.get(),
                       sizeof(double) * static_cast<std::size_t>(size())) == 0;
  }

 private:
  struct Uninit {};
  Tensor(std::int64_t rows, std::int64_t cols, Uninit)
      : rows_(rows), cols_(cols), data_(new double[static_cast<std::size_t>(rows * cols)]) {}

  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::unique_ptr<double[]> data_;
};

namespace detail {
inline void pin_blas_threads() {
  static const bool done = [] {
    openblas_set_num_threads(1);
    // Keep multi-megabyte tensor buffers on the heap free lists instead of
    // round-tripping through mmap (which zero-fills and page-faults every
    // allocation on the training hot path).
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 256 * 1024 * 1024);
    return true;
  }();
  (void)done;
}
}  // namespace detail

// Raw strided dgemm: C[m x n] (+)= op(A) * op(B) with explicit leading dims.
inline void dgemm_raw(bool ta, bool tb, std::int64_t m, std::int64_t n, std::int64_t k,
                      const double* a, std::int64_t lda, const double* b, std::int64_t ldb,
                      double beta, double* c, std::int64_t ldc) {
  detail::pin_blas_threads();
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (beta == 0.0)
      for (std::int64_t r = 0; r < m; ++r) std::memset(c + r * ldc, 0, sizeof(double) * n);
    else
      for (std::int64_t r = 0; r < m; ++r)
        for (std::int64_t j = 0; j < n; ++j) c[r * ldc + j] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// out = op(a) * op(b) + beta * out
inline void matmul_into(Tensor& out, const Tensor& a, const Tensor& b, bool ta, bool tb,
                        double beta) {
  const std::int64_t m = ta ? a.cols() : a.rows();
  const std::int64_t k = ta ? a.rows() : a.cols();
  const std::int64_t kb = tb ? b.cols() : b.rows();
  const std::int64_t n = tb ? b.rows() : b.cols();
  if (k != kb) throw DataError("matmul: inner dimensions disagree");
  if (out.rows() != m || out.cols() != n) throw DataError("matmul: output shape mismatch");
  dgemm_raw(ta, tb, m, n, k, a.data(), a.cols(), b.data(), b.cols(), beta, out.data(), out.cols());
}

inline Tensor matmul(const Tensor& a, const Tensor& b, bool ta = false, bool tb = false) {
  Tensor out = Tensor::uninit(ta ? a.cols() : a.rows(), tb ? b.rows() : b.cols());
  matmul_into(out, a, b, ta, tb, 0.0);
  return out;
}

inline Tensor col_sums(const Tensor& x) {
  Tensor out(1, x.cols());
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    const double* row = x.data() + r * x.cols();
    for (std::int64_t c = 0; c < x.cols(); ++c) out[c] += row[c];
  }
  return out;
}

inline Tensor row_sums(const Tensor& x) {
  Tensor out = Tensor::uninit(x.rows(), 1);
  for (std::int64_t r = 0; r < x.rows(); ++r) {
    const double* row = x.data() + r * x.cols();
    double s = 0.0;
    for (std::int64_t c = 0; c < x.cols(); ++c) s += row[c];
    out(r, 0) = s;
  }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace bhygnn
