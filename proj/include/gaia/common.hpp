#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace gaia {

namespace detail {
inline void append_parts(std::ostringstream&) {}
template <class A, class... Rest>
void append_parts(std::ostringstream& os, A&& a, Rest&&... rest) {
  os << a;
  append_parts(os, std::forward<Rest>(rest)...);
}
}  // namespace detail

// Input-contract violations throw; callers (CLI, trainer) map them to exit codes.
template <class... Parts>
void check(bool cond, Parts&&... parts) {
  if (!cond) {
    std::ostringstream os;
    detail::append_parts(os, std::forward<Parts>(parts)...);
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------
// Row-major matrix. Biases and vectors are 1xN mats so the parameter registry
// can treat every tensor uniformly.
// ---------------------------------------------------------------------------
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c, T init = T(0)) : rows(r), cols(c), v(size_t(r) * size_t(c), init) {
    check(r >= 0 && c >= 0, "Mat: negative shape ", r, "x", c);
  }

  T* operator[](int r) { return v.data() + size_t(r) * size_t(cols); }
  const T* operator[](int r) const { return v.data() + size_t(r) * size_t(cols); }
  T& at(int r, int c) { return v[size_t(r) * cols + c]; }
  const T& at(int r, int c) const { return v[size_t(r) * cols + c]; }
  size_t size() const { return v.size(); }
  bool empty() const { return v.empty(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  template <class U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;
using MaskGrid = Mat<uint8_t>;  // 1 = flagged (missing / hidden)

// C = A * B, or C += A * B when accumulate is set. Shapes checked.
template <class T>
void gemm_nn(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
  check(a.cols == b.rows, "gemm_nn: inner dims ", a.cols, " vs ", b.rows);
  if (!accumulate || c.rows != a.rows || c.cols != b.cols) {
    c = Mat<T>(a.rows, b.cols);
  }
  for (int i = 0; i < a.rows; ++i) {
    T* crow = c[i];
    const T* arow = a[i];
    for (int p = 0; p < a.cols; ++p) {
      const T apv = arow[p];
      if (apv == T(0)) continue;
      const T* brow = b[p];
      for (int j = 0; j < b.cols; ++j) crow[j] += apv * brow[j];
    }
  }
}

// C (+)= A * B^T
template <class T>
void gemm_nt(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
  check(a.cols == b.cols, "gemm_nt: inner dims ", a.cols, " vs ", b.cols);
  if (!accumulate || c.rows != a.rows || c.cols != b.rows) {
    c = Mat<T>(a.rows, b.rows);
  }
  for (int i = 0; i < a.rows; ++i) {
    const T* arow = a[i];
    T* crow = c[i];
    for (int j = 0; j < b.rows; ++j) {
      const T* brow = b[j];
      T acc = T(0);
      for (int p = 0; p < a.cols; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C (+)= A^T * B
template <class T>
void gemm_tn(const Mat<T>& a, const Mat<T>& b, Mat<T>& c, bool accumulate = false) {
  check(a.rows == b.rows, "gemm_tn: inner dims ", a.rows, " vs ", b.rows);
  if (!accumulate || c.rows != a.cols || c.cols != b.cols) {
    c = Mat<T>(a.cols, b.cols);
  }
  for (int p = 0; p < a.rows; ++p) {
    const T* arow = a[p];
    const T* brow = b[p];
    for (int i = 0; i < a.cols; ++i) {
      const T apv = arow[i];
      if (apv == T(0)) continue;
      T* crow = c[i];
      for (int j = 0; j < b.cols; ++j) crow[j] += apv * brow[j];
    }
  }
}

template <class T>
void add_row_bias(Mat<T>& m, const Mat<T>& bias) {
  check(bias.rows == 1 && bias.cols == m.cols, "add_row_bias: bias shape");
  for (int i = 0; i < m.rows; ++i) {
    T* row = m[i];
    const T* b = bias[0];
    for (int j = 0; j < m.cols; ++j) row[j] += b[j];
  }
}

template <class T>
void axpy(Mat<T>& y, T alpha, const Mat<T>& x) {
  check(y.same_shape(x), "axpy: shape mismatch");
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += alpha * x.v[i];
}

template <class T>
bool all_finite(const Mat<T>& m) {
  for (T x : m.v)
    if (!std::isfinite(double(x))) return false;
  return true;
}

template <class T>
T sq_norm(const Mat<T>& m) {
  T acc = T(0);
  for (T x : m.v) acc += x * x;
  return acc;
}

// ---------------------------------------------------------------------------
// Worker parallelism, capped by the GAIA_THREADS env var. Work items are
// independent; callers own any reduction and must run it in index order.
// ---------------------------------------------------------------------------
inline int worker_threads() {
  unsigned hw = std::thread::hardware_concurrency();
  int n = hw == 0 ? 1 : int(hw);
  if (const char* env = std::getenv("GAIA_THREADS")) {
    char* end = nullptr;
    long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed >= 1) n = int(std::min<long>(parsed, 256));
  }
  return std::max(1, n);
}

template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(worker_threads(), std::max(1, n));
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace gaia
