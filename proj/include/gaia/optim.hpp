#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gaia/common.hpp"

namespace gaia {

// Decoupled-weight-decay adaptive-moment optimizer. Decay applies only to
// tensors flagged for it (2-D weight matrices; never biases, norms, tokens).
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// One update for one tensor. `t` is the 1-based step count after increment.
// p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p), decay decoupled from
// the adaptive term and computed from the pre-update parameter value.
template <class T>
void adamw_update(Mat<T>& param, const Mat<T>& grad, Mat<T>& m, Mat<T>& v, int64_t t, double lr,
                  const AdamWConfig& cfg, bool decay) {
  check(param.same_shape(grad) && param.same_shape(m) && param.same_shape(v),
        "adamw_update: shape mismatch");
  check(t >= 1, "adamw_update: step must be >= 1");
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(t));
  const double bc2 = 1.0 - std::pow(b2, double(t));
  const double wd = decay ? cfg.weight_decay : 0.0;
  for (size_t i = 0; i < param.v.size(); ++i) {
    const double g = double(grad.v[i]);
    const double mi = b1 * double(m.v[i]) + (1.0 - b1) * g;
    const double vi = b2 * double(v.v[i]) + (1.0 - b2) * g * g;
    m.v[i] = T(mi);
    v.v[i] = T(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double p = double(param.v[i]);
    param.v[i] = T(p - lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * p));
  }
}

}  // namespace gaia
