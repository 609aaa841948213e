#pragma once

#include <cstdint>

#include "gaia/common.hpp"
#include "gaia/patch.hpp"

namespace gaia {

struct MaeLossReport {
  double loss = 0.0;
  int64_t n_hidden_pixels_scored = 0;
};

// A pixel is scored iff its patch is hidden and the target pixel is observed.
template <class T>
void mae_scored_sums(const Mat<T>& pred, const Mat<T>& target, const MaskSpec& mask,
                     const MaskGrid& target_missing, double* sse, int64_t* count) {
  check(pred.same_shape(target), "mae_loss: pred/target shape mismatch");
  check(pred.rows == mask.n_patches(), "mae_loss: mask size mismatch");
  check(target_missing.rows == pred.rows && target_missing.cols == pred.cols,
        "mae_loss: missing mask shape mismatch");
  double acc = 0.0;
  int64_t n = 0;
  for (int k = 0; k < pred.rows; ++k) {
    if (!mask.hidden[size_t(k)]) continue;
    const T* pr = pred[k];
    const T* tr = target[k];
    const uint8_t* mr = target_missing[k];
    for (int j = 0; j < pred.cols; ++j) {
      if (mr[j]) continue;
      const double diff = double(pr[j]) - double(tr[j]);
      acc += diff * diff;
      ++n;
    }
  }
  *sse = acc;
  *count = n;
}

// Mean squared error in normalized units over hidden, observed pixels.
template <class T>
MaeLossReport mae_loss(const Mat<T>& pred, const Mat<T>& target, const MaskSpec& mask,
                       const MaskGrid& target_missing) {
  double sse = 0.0;
  int64_t n = 0;
  mae_scored_sums(pred, target, mask, target_missing, &sse, &n);
  check(n > 0, "mae_loss: zero scored pixels (degenerate batch)");
  return MaeLossReport{sse / double(n), n};
}

inline MaeLossReport mae_loss(const PatchGrid& pred, const PatchGrid& target,
                              const MaskSpec& mask, const MaskGrid& target_missing) {
  return mae_loss<float>(pred.data, target.data, mask, target_missing);
}

// d(loss)/d(pred) with loss = SSE / n_total: 2*(pred - target)/n_total on
// scored pixels, zero elsewhere. n_total may pool several samples.
template <class T>
void mae_loss_backward(const Mat<T>& pred, const Mat<T>& target, const MaskSpec& mask,
                       const MaskGrid& target_missing, int64_t n_total, T upstream,
                       Mat<T>& dpred) {
  check(n_total > 0, "mae_loss_backward: empty scored set");
  if (!dpred.same_shape(pred)) dpred = Mat<T>(pred.rows, pred.cols);
  dpred.zero();
  const T scale = upstream * T(2) / T(n_total);
  for (int k = 0; k < pred.rows; ++k) {
    if (!mask.hidden[size_t(k)]) continue;
    const T* pr = pred[k];
    const T* tr = target[k];
    const uint8_t* mr = target_missing[k];
    T* dr = dpred[k];
    for (int j = 0; j < pred.cols; ++j) {
      if (mr[j]) continue;
      dr[j] = scale * (pr[j] - tr[j]);
    }
  }
}

}  // namespace gaia
