#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "fuxib/common.hpp"
#include "fuxib/instrument.hpp"

namespace fuxib {

// Dense row-major 2-D array. Vectors are 1xN or Nx1, scalars 1x1.
template <class Real>
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols)
      : rows_(rows), cols_(cols),
        data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols),
              Real(0)) {}

  static Mat zeros(int rows, int cols) { return Mat(rows, cols); }

  static Mat full(int rows, int cols, Real v) {
    Mat m(rows, cols);
    for (auto& x : m.data_) x = v;
    return m;
  }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = Real(1);
    return m;
  }

  static Mat random_normal(int rows, int cols, Rng& rng, double stddev) {
    Mat m(rows, cols);
    for (auto& x : m.data_) x = static_cast<Real>(rng.normal(0.0, stddev));
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  Real operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }

  Real* row(int i) { return data_.data() + static_cast<std::size_t>(i) * cols_; }
  const Real* row(int i) const {
    return data_.data() + static_cast<std::size_t>(i) * cols_;
  }

  std::vector<Real>& data() { return data_; }
  const std::vector<Real>& data() const { return data_; }

  void fill(Real v) {
    for (auto& x : data_) x = v;
  }

  bool same_shape(const Mat& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (auto x : data_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<Real> data_;
};

using Matd = Mat<double>;
using Matf = Mat<float>;

namespace detail {
inline void require(bool ok, const char* msg) {
  if (!ok) throw config_error(msg);
}
}  // namespace detail

// C = A * B
template <class Real>
Mat<Real> matmul(const Mat<Real>& a, const Mat<Real>& b,
                 instrument::FlopTag tag = instrument::FlopTag::untagged) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Mat<Real> c(a.rows(), b.cols());
  const int m = a.rows(), k = a.cols(), p = b.cols();
  for (int i = 0; i < m; ++i) {
    Real* ci = c.row(i);
    const Real* ai = a.row(i);
    for (int l = 0; l < k; ++l) {
      const Real s = ai[l];
      const Real* bl = b.row(l);
      for (int j = 0; j < p; ++j) ci[j] += s * bl[j];
    }
  }
  instrument::add_mults(tag, std::uint64_t(m) * std::uint64_t(k) * std::uint64_t(p));
  return c;
}

// C = A * B^T
template <class Real>
Mat<Real> matmul_nt(const Mat<Real>& a, const Mat<Real>& b,
                    instrument::FlopTag tag = instrument::FlopTag::untagged) {
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Mat<Real> c(a.rows(), b.rows());
  const int m = a.rows(), k = a.cols(), p = b.rows();
  for (int i = 0; i < m; ++i) {
    const Real* ai = a.row(i);
    Real* ci = c.row(i);
    for (int j = 0; j < p; ++j) {
      const Real* bj = b.row(j);
      Real acc = Real(0);
      for (int l = 0; l < k; ++l) acc += ai[l] * bj[l];
      ci[j] = acc;
    }
  }
  instrument::add_mults(tag, std::uint64_t(m) * std::uint64_t(k) * std::uint64_t(p));
  return c;
}

// C = A^T * B
template <class Real>
Mat<Real> matmul_tn(const Mat<Real>& a, const Mat<Real>& b,
                    instrument::FlopTag tag = instrument::FlopTag::untagged) {
  detail::require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  Mat<Real> c(a.cols(), b.cols());
  const int m = a.cols(), k = a.rows(), p = b.cols();
  for (int l = 0; l < k; ++l) {
    const Real* al = a.row(l);
    const Real* bl = b.row(l);
    for (int i = 0; i < m; ++i) {
      Real* ci = c.row(i);
      const Real s = al[i];
      for (int j = 0; j < p; ++j) ci[j] += s * bl[j];
    }
  }
  instrument::add_mults(tag, std::uint64_t(m) * std::uint64_t(k) * std::uint64_t(p));
  return c;
}

template <class Real>
void add_inplace(Mat<Real>& a, const Mat<Real>& b) {
  detail::require(a.same_shape(b), "add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

// numerically stable log(sum(exp(row)))
inline double log_sum_exp(const double* row, int len) {
  double m = row[0];
  for (int i = 1; i < len; ++i) m = std::max(m, row[i]);
  double s = 0.0;
  for (int i = 0; i < len; ++i) s += std::exp(row[i] - m);
  return m + std::log(s);
}

// stabilized softmax over a row, written into out
inline void softmax_row(const double* row, int len, double* out) {
  double m = row[0];
  for (int i = 1; i < len; ++i) m = std::max(m, row[i]);
  double s = 0.0;
  for (int i = 0; i < len; ++i) {
    out[i] = std::exp(row[i] - m);
    s += out[i];
  }
  for (int i = 0; i < len; ++i) out[i] /= s;
}

inline std::vector<double> softmax_row(const std::vector<double>& row) {
  std::vector<double> out(row.size());
  softmax_row(row.data(), static_cast<int>(row.size()), out.data());
  return out;
}

}  // namespace fuxib
