#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gaia/common.hpp"
#include "gaia/patch.hpp"
#include "gaia/rng.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Model configuration: shared encoder + lightweight decoder, pre-norm blocks,
// GELU MLP at 4x width. The desk preset keeps every suite fast; the paper
// preset carries the published dims (912/24/16 encoder, 512/8/16 decoder,
// 30x30 patches).
// ---------------------------------------------------------------------------
struct ModelConfig {
  int enc_width = 64;
  int enc_layers = 4;
  int enc_heads = 4;
  int dec_width = 32;
  int dec_layers = 2;
  int dec_heads = 4;
  int patch_h = 8;
  int patch_w = 8;
  bool use_global_token = true;
  int mlp_ratio = 4;
  // Self-distillation head
  int dino_hidden = 128;
  int dino_bottleneck = 32;
  int dino_prototypes = 256;

  int patch_dim() const { return patch_h * patch_w; }

  void validate() const {
    check(enc_width > 0 && dec_width > 0, "ModelConfig: widths must be positive");
    check(enc_layers >= 1 && dec_layers >= 1, "ModelConfig: need at least one layer");
    check(enc_width % enc_heads == 0, "ModelConfig: enc_width not divisible by enc_heads");
    check(dec_width % dec_heads == 0, "ModelConfig: dec_width not divisible by dec_heads");
    check(dec_width <= enc_width, "ModelConfig: dec_width must be <= enc_width");
    check(enc_width % 4 == 0 && dec_width % 4 == 0,
          "ModelConfig: widths must be divisible by 4 for positional embeddings");
    check(patch_h >= 1 && patch_w >= 1, "ModelConfig: patch dims must be positive");
    check(mlp_ratio >= 1, "ModelConfig: mlp_ratio >= 1");
    check(dino_hidden >= 1 && dino_bottleneck >= 1, "ModelConfig: head dims");
    check(dino_prototypes >= 2, "ModelConfig: need K >= 2 prototypes");
  }

  static ModelConfig desk() { return ModelConfig{}; }

  static ModelConfig paper() {
    ModelConfig cfg;
    cfg.enc_width = 912;
    cfg.enc_layers = 24;
    cfg.enc_heads = 16;
    cfg.dec_width = 512;
    cfg.dec_layers = 8;
    cfg.dec_heads = 16;
    cfg.patch_h = 30;
    cfg.patch_w = 30;
    cfg.dino_hidden = 2048;
    cfg.dino_bottleneck = 256;
    cfg.dino_prototypes = 4096;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// Parameters. A parallel Params instance holds gradients; for_each_tensor
// drives init, the optimizer, EMA updates, and checkpoints in one fixed order.
// ---------------------------------------------------------------------------
template <class T>
struct BlockParams {
  Mat<T> ln1_g, ln1_b;
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w1, b1, w2, b2;
};

template <class T>
struct StackParams {
  std::vector<BlockParams<T>> blocks;
  Mat<T> lnf_g, lnf_b;
};

template <class T>
struct Params {
  ModelConfig cfg;
  Mat<T> patch_proj_w, patch_proj_b;  // P x D, 1 x D
  Mat<T> global_token;                // 1 x D (empty when disabled)
  StackParams<T> enc;
  Mat<T> dec_embed_w, dec_embed_b;    // D x Dd, 1 x Dd
  Mat<T> mask_token;                  // 1 x Dd
  StackParams<T> dec;
  Mat<T> unembed_w, unembed_b;        // Dd x P, 1 x P
};

template <class T>
struct DinoHeadParams {
  Mat<T> w1, b1;   // D x H
  Mat<T> w2, b2;   // H x H
  Mat<T> w3, b3;   // H x B
  Mat<T> proto;    // K x B, rows weight-normalized at use
};

namespace detail {

template <class T, class P, class Fn>
void visit_block(P& b, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".ln1_g", b.ln1_g, false);
  fn(prefix + ".ln1_b", b.ln1_b, false);
  fn(prefix + ".wq", b.wq, true);
  fn(prefix + ".bq", b.bq, false);
  fn(prefix + ".wk", b.wk, true);
  fn(prefix + ".bk", b.bk, false);
  fn(prefix + ".wv", b.wv, true);
  fn(prefix + ".bv", b.bv, false);
  fn(prefix + ".wo", b.wo, true);
  fn(prefix + ".bo", b.bo, false);
  fn(prefix + ".ln2_g", b.ln2_g, false);
  fn(prefix + ".ln2_b", b.ln2_b, false);
  fn(prefix + ".w1", b.w1, true);
  fn(prefix + ".b1", b.b1, false);
  fn(prefix + ".w2", b.w2, true);
  fn(prefix + ".b2", b.b2, false);
}

}  // namespace detail

// fn(name, Mat&, weight_decay_applies)
template <class T, class P, class Fn>
void for_each_tensor_impl(P& p, Fn&& fn) {
  fn("patch_proj_w", p.patch_proj_w, true);
  fn("patch_proj_b", p.patch_proj_b, false);
  if (p.cfg.use_global_token) fn("global_token", p.global_token, false);
  for (size_t i = 0; i < p.enc.blocks.size(); ++i)
    detail::visit_block<T>(p.enc.blocks[i], "enc.b" + std::to_string(i), fn);
  fn("enc.lnf_g", p.enc.lnf_g, false);
  fn("enc.lnf_b", p.enc.lnf_b, false);
  fn("dec_embed_w", p.dec_embed_w, true);
  fn("dec_embed_b", p.dec_embed_b, false);
  fn("mask_token", p.mask_token, false);
  for (size_t i = 0; i < p.dec.blocks.size(); ++i)
    detail::visit_block<T>(p.dec.blocks[i], "dec.b" + std::to_string(i), fn);
  fn("dec.lnf_g", p.dec.lnf_g, false);
  fn("dec.lnf_b", p.dec.lnf_b, false);
  fn("unembed_w", p.unembed_w, true);
  fn("unembed_b", p.unembed_b, false);
}

template <class T, class Fn>
void for_each_tensor(Params<T>& p, Fn&& fn) {
  for_each_tensor_impl<T>(p, fn);
}
template <class T, class Fn>
void for_each_tensor(const Params<T>& p, Fn&& fn) {
  for_each_tensor_impl<T>(p, fn);
}

template <class T, class H, class Fn>
void for_each_head_tensor_impl(H& h, Fn&& fn) {
  fn("head.w1", h.w1, true);
  fn("head.b1", h.b1, false);
  fn("head.w2", h.w2, true);
  fn("head.b2", h.b2, false);
  fn("head.w3", h.w3, true);
  fn("head.b3", h.b3, false);
  fn("head.proto", h.proto, true);
}

template <class T, class Fn>
void for_each_tensor(DinoHeadParams<T>& h, Fn&& fn) {
  for_each_head_tensor_impl<T>(h, fn);
}
template <class T, class Fn>
void for_each_tensor(const DinoHeadParams<T>& h, Fn&& fn) {
  for_each_head_tensor_impl<T>(h, fn);
}

// ---------------------------------------------------------------------------
// Initialization: truncated normal (std 0.02, cut at 2 std) for projection,
// attention, and MLP weights plus the mask/global tokens; zero biases and
// layer-norm offsets; unit layer-norm gains. Per-tensor RNG streams keyed by
// name keep init independent of enumeration order.
// ---------------------------------------------------------------------------
template <class T = float>
Params<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Params<T> p;
  p.cfg = cfg;
  const int d = cfg.enc_width, dd = cfg.dec_width, pd = cfg.patch_dim();

  auto make_stack = [&](StackParams<T>& stack, int width, int layers) {
    stack.blocks.resize(size_t(layers));
    const int hidden = width * cfg.mlp_ratio;
    for (auto& b : stack.blocks) {
      b.ln1_g = Mat<T>(1, width, T(1));
      b.ln1_b = Mat<T>(1, width, T(0));
      b.wq = Mat<T>(width, width);
      b.bq = Mat<T>(1, width);
      b.wk = Mat<T>(width, width);
      b.bk = Mat<T>(1, width);
      b.wv = Mat<T>(width, width);
      b.bv = Mat<T>(1, width);
      b.wo = Mat<T>(width, width);
      b.bo = Mat<T>(1, width);
      b.ln2_g = Mat<T>(1, width, T(1));
      b.ln2_b = Mat<T>(1, width, T(0));
      b.w1 = Mat<T>(width, hidden);
      b.b1 = Mat<T>(1, hidden);
      b.w2 = Mat<T>(hidden, width);
      b.b2 = Mat<T>(1, width);
    }
    stack.lnf_g = Mat<T>(1, width, T(1));
    stack.lnf_b = Mat<T>(1, width, T(0));
  };

  p.patch_proj_w = Mat<T>(pd, d);
  p.patch_proj_b = Mat<T>(1, d);
  if (cfg.use_global_token) p.global_token = Mat<T>(1, d);
  make_stack(p.enc, d, cfg.enc_layers);
  p.dec_embed_w = Mat<T>(d, dd);
  p.dec_embed_b = Mat<T>(1, dd);
  p.mask_token = Mat<T>(1, dd);
  make_stack(p.dec, dd, cfg.dec_layers);
  p.unembed_w = Mat<T>(dd, pd);
  p.unembed_b = Mat<T>(1, pd);

  Rng root = Rng::from_seed(seed);
  for_each_tensor(p, [&](const std::string& name, Mat<T>& m, bool decay) {
    const bool is_token = name == "global_token" || name == "mask_token";
    if (decay || is_token) {
      Rng stream = root.split(name);
      stream.fill_trunc_normal(m, 0.02);
    }
    // biases and LN params keep their constructed zero/one values
  });
  return p;
}

template <class T = float>
DinoHeadParams<T> init_dino_head(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  DinoHeadParams<T> h;
  h.w1 = Mat<T>(cfg.enc_width, cfg.dino_hidden);
  h.b1 = Mat<T>(1, cfg.dino_hidden);
  h.w2 = Mat<T>(cfg.dino_hidden, cfg.dino_hidden);
  h.b2 = Mat<T>(1, cfg.dino_hidden);
  h.w3 = Mat<T>(cfg.dino_hidden, cfg.dino_bottleneck);
  h.b3 = Mat<T>(1, cfg.dino_bottleneck);
  h.proto = Mat<T>(cfg.dino_prototypes, cfg.dino_bottleneck);
  Rng root = Rng::from_seed(seed).split("dino_head");
  for_each_tensor(h, [&](const std::string& name, Mat<T>& m, bool decay) {
    if (decay) {
      Rng stream = root.split(name);
      stream.fill_trunc_normal(m, 0.02);
    }
  });
  return h;
}

template <class T>
Params<T> zeros_like(const Params<T>& p) {
  Params<T> g;
  g.cfg = p.cfg;
  g.patch_proj_w = Mat<T>(p.patch_proj_w.rows, p.patch_proj_w.cols);
  g.patch_proj_b = Mat<T>(p.patch_proj_b.rows, p.patch_proj_b.cols);
  if (p.cfg.use_global_token) g.global_token = Mat<T>(1, p.cfg.enc_width);
  auto zero_stack = [](const StackParams<T>& src, StackParams<T>& dst) {
    dst.blocks.resize(src.blocks.size());
    for (size_t i = 0; i < src.blocks.size(); ++i) {
      const auto& s = src.blocks[i];
      auto& d = dst.blocks[i];
      auto z = [](const Mat<T>& m) { return Mat<T>(m.rows, m.cols); };
      d.ln1_g = z(s.ln1_g); d.ln1_b = z(s.ln1_b);
      d.wq = z(s.wq); d.bq = z(s.bq);
      d.wk = z(s.wk); d.bk = z(s.bk);
      d.wv = z(s.wv); d.bv = z(s.bv);
      d.wo = z(s.wo); d.bo = z(s.bo);
      d.ln2_g = z(s.ln2_g); d.ln2_b = z(s.ln2_b);
      d.w1 = z(s.w1); d.b1 = z(s.b1);
      d.w2 = z(s.w2); d.b2 = z(s.b2);
    }
    dst.lnf_g = Mat<T>(src.lnf_g.rows, src.lnf_g.cols);
    dst.lnf_b = Mat<T>(src.lnf_b.rows, src.lnf_b.cols);
  };
  zero_stack(p.enc, g.enc);
  g.dec_embed_w = Mat<T>(p.dec_embed_w.rows, p.dec_embed_w.cols);
  g.dec_embed_b = Mat<T>(p.dec_embed_b.rows, p.dec_embed_b.cols);
  g.mask_token = Mat<T>(p.mask_token.rows, p.mask_token.cols);
  zero_stack(p.dec, g.dec);
  g.unembed_w = Mat<T>(p.unembed_w.rows, p.unembed_w.cols);
  g.unembed_b = Mat<T>(p.unembed_b.rows, p.unembed_b.cols);
  return g;
}

template <class T>
DinoHeadParams<T> zeros_like(const DinoHeadParams<T>& h) {
  DinoHeadParams<T> g;
  auto z = [](const Mat<T>& m) { return Mat<T>(m.rows, m.cols); };
  g.w1 = z(h.w1); g.b1 = z(h.b1);
  g.w2 = z(h.w2); g.b2 = z(h.b2);
  g.w3 = z(h.w3); g.b3 = z(h.b3);
  g.proto = z(h.proto);
  return g;
}

// ---------------------------------------------------------------------------
// Primitive forward/backward pieces
// ---------------------------------------------------------------------------
namespace nn {

constexpr double kLnEps = 1e-6;

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + T(std::erf(double(x) * M_SQRT1_2)));
}

template <class T>
T gelu_grad(T x) {
  const double xd = double(x);
  const double cdf = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
  return T(cdf + xd * pdf);
}

template <class T>
Mat<T> layernorm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b) {
  Mat<T> y(x.rows, x.cols);
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const T* xr = x[i];
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T dv = xr[j] - mu;
      var += dv * dv;
    }
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(kLnEps));
    T* yr = y[i];
    for (int j = 0; j < d; ++j) yr[j] = g[0][j] * (xr[j] - mu) * rstd + b[0][j];
  }
  return y;
}

template <class T>
void layernorm_backward(const Mat<T>& x, const Mat<T>& g, const Mat<T>& dy, Mat<T>& dx,
                        Mat<T>& dg, Mat<T>& db) {
  const int d = x.cols;
  if (!dx.same_shape(x)) dx = Mat<T>(x.rows, x.cols);
  for (int i = 0; i < x.rows; ++i) {
    const T* xr = x[i];
    const T* dyr = dy[i];
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T dv = xr[j] - mu;
      var += dv * dv;
    }
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + T(kLnEps));
    T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
    for (int j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mu) * rstd;
      const T dxhat = dyr[j] * g[0][j];
      dg[0][j] += dyr[j] * xhat;
      db[0][j] += dyr[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
    }
    mean_dxhat /= T(d);
    mean_dxhat_xhat /= T(d);
    T* dxr = dx[i];
    for (int j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mu) * rstd;
      const T dxhat = dyr[j] * g[0][j];
      dxr[j] = rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  }
}

// Row-wise softmax with max subtraction.
template <class T>
void softmax_rows(Mat<T>& m) {
  for (int i = 0; i < m.rows; ++i) {
    T* r = m[i];
    T mx = r[0];
    for (int j = 1; j < m.cols; ++j) mx = std::max(mx, r[j]);
    T sum = T(0);
    for (int j = 0; j < m.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < m.cols; ++j) r[j] *= inv;
  }
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Transformer stack (pre-norm blocks + final layer norm)
// ---------------------------------------------------------------------------
template <class T>
struct BlockTrace {
  Mat<T> x_in;                 // block input
  Mat<T> h1;                   // LN1 output
  Mat<T> q, k, v;              // n x D
  std::vector<Mat<T>> probs;   // per-head n x n attention weights
  Mat<T> ctx;                  // n x D concatenated head outputs
  Mat<T> x_mid;                // after attention residual
  Mat<T> h2;                   // LN2 output
  Mat<T> mlp_u;                // pre-GELU
  Mat<T> mlp_a;                // post-GELU
};

template <class T>
struct StackTrace {
  std::vector<BlockTrace<T>> blocks;
  Mat<T> pre_lnf;
};

namespace detail {

template <class T>
void attention_forward(const BlockParams<T>& b, int heads, const Mat<T>& h1, Mat<T>& ctx,
                       std::vector<Mat<T>>* probs_out, Mat<T>& q, Mat<T>& k, Mat<T>& v) {
  const int n = h1.rows, d = h1.cols, dh = d / heads;
  gemm_nn(h1, b.wq, q);
  add_row_bias(q, b.bq);
  gemm_nn(h1, b.wk, k);
  add_row_bias(k, b.bk);
  gemm_nn(h1, b.wv, v);
  add_row_bias(v, b.bv);
  ctx = Mat<T>(n, d);
  const T alpha = T(1) / std::sqrt(T(dh));
  if (probs_out) probs_out->assign(size_t(heads), Mat<T>());
  Mat<T> scores(n, n);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    for (int i = 0; i < n; ++i) {
      const T* qi = q[i] + off;
      T* srow = scores[i];
      for (int j = 0; j < n; ++j) {
        const T* kj = k[j] + off;
        T acc = T(0);
        for (int e = 0; e < dh; ++e) acc += qi[e] * kj[e];
        srow[j] = acc * alpha;
      }
    }
    nn::softmax_rows(scores);
    for (int i = 0; i < n; ++i) {
      const T* pi = scores[i];
      T* ci = ctx[i] + off;
      for (int e = 0; e < dh; ++e) ci[e] = T(0);
      for (int j = 0; j < n; ++j) {
        const T pij = pi[j];
        if (pij == T(0)) continue;
        const T* vj = v[j] + off;
        for (int e = 0; e < dh; ++e) ci[e] += pij * vj[e];
      }
    }
    if (probs_out) (*probs_out)[size_t(h)] = scores;
  }
}

template <class T>
void attention_backward(const BlockParams<T>& b, int heads, const BlockTrace<T>& tr,
                        const Mat<T>& dattn_out, BlockParams<T>& gb, Mat<T>& dh1) {
  const int n = tr.h1.rows, d = tr.h1.cols, dh = d / heads;
  const T alpha = T(1) / std::sqrt(T(dh));

  // out = ctx * wo + bo
  Mat<T> dctx;
  gemm_nt(dattn_out, b.wo, dctx);
  gemm_tn(tr.ctx, dattn_out, gb.wo, /*accumulate=*/true);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) gb.bo[0][j] += dattn_out[i][j];

  Mat<T> dq(n, d), dk(n, d), dv(n, d);
  Mat<T> dprobs(n, n), dscores(n, n);
  for (int h = 0; h < heads; ++h) {
    const int off = h * dh;
    const Mat<T>& probs = tr.probs[size_t(h)];
    // dprobs = dctx_h * V_h^T ; dV_h = P^T * dctx_h
    for (int i = 0; i < n; ++i) {
      const T* dci = dctx[i] + off;
      T* dpi = dprobs[i];
      for (int j = 0; j < n; ++j) {
        const T* vj = tr.v[j] + off;
        T acc = T(0);
        for (int e = 0; e < dh; ++e) acc += dci[e] * vj[e];
        dpi[j] = acc;
      }
    }
    for (int j = 0; j < n; ++j) {
      T* dvj = dv[j] + off;
      for (int e = 0; e < dh; ++e) dvj[e] = T(0);
    }
    for (int i = 0; i < n; ++i) {
      const T* pi = probs[i];
      const T* dci = dctx[i] + off;
      for (int j = 0; j < n; ++j) {
        const T pij = pi[j];
        if (pij == T(0)) continue;
        T* dvj = dv[j] + off;
        for (int e = 0; e < dh; ++e) dvj[e] += pij * dci[e];
      }
    }
    // softmax backward per row
    for (int i = 0; i < n; ++i) {
      const T* pi = probs[i];
      const T* dpi = dprobs[i];
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += dpi[j] * pi[j];
      T* dsi = dscores[i];
      for (int j = 0; j < n; ++j) dsi[j] = (dpi[j] - dot) * pi[j] * alpha;
    }
    // dQ_h = dscores * K_h ; dK_h = dscores^T * Q_h
    for (int i = 0; i < n; ++i) {
      const T* dsi = dscores[i];
      T* dqi = dq[i] + off;
      for (int e = 0; e < dh; ++e) dqi[e] = T(0);
      for (int j = 0; j < n; ++j) {
        const T s = dsi[j];
        if (s == T(0)) continue;
        const T* kj = tr.k[j] + off;
        for (int e = 0; e < dh; ++e) dqi[e] += s * kj[e];
      }
    }
    for (int j = 0; j < n; ++j) {
      T* dkj = dk[j] + off;
      for (int e = 0; e < dh; ++e) dkj[e] = T(0);
    }
    for (int i = 0; i < n; ++i) {
      const T* dsi = dscores[i];
      const T* qi = tr.q[i] + off;
      for (int j = 0; j < n; ++j) {
        const T s = dsi[j];
        if (s == T(0)) continue;
        T* dkj = dk[j] + off;
        for (int e = 0; e < dh; ++e) dkj[e] += s * qi[e];
      }
    }
  }

  // back through the three projections
  gemm_tn(tr.h1, dq, gb.wq, true);
  gemm_tn(tr.h1, dk, gb.wk, true);
  gemm_tn(tr.h1, dv, gb.wv, true);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      gb.bq[0][j] += dq[i][j];
      gb.bk[0][j] += dk[i][j];
      gb.bv[0][j] += dv[i][j];
    }
  gemm_nt(dq, b.wq, dh1);
  gemm_nt(dk, b.wk, dh1, true);
  gemm_nt(dv, b.wv, dh1, true);
}

}  // namespace detail

// Forward through pre-norm blocks and the final layer norm. When trace is
// null only the output is produced.
template <class T>
Mat<T> stack_forward(const StackParams<T>& sp, int heads, Mat<T> x, StackTrace<T>* trace) {
  if (trace) {
    trace->blocks.clear();
    trace->blocks.resize(sp.blocks.size());
  }
  for (size_t li = 0; li < sp.blocks.size(); ++li) {
    const BlockParams<T>& b = sp.blocks[li];
    BlockTrace<T> local;
    BlockTrace<T>& tr = trace ? trace->blocks[li] : local;
    tr.x_in = x;
    tr.h1 = nn::layernorm(x, b.ln1_g, b.ln1_b);
    detail::attention_forward(b, heads, tr.h1, tr.ctx, trace ? &tr.probs : nullptr, tr.q, tr.k,
                              tr.v);
    Mat<T> attn_out;
    gemm_nn(tr.ctx, b.wo, attn_out);
    add_row_bias(attn_out, b.bo);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn_out.v[i];
    tr.x_mid = x;
    tr.h2 = nn::layernorm(x, b.ln2_g, b.ln2_b);
    gemm_nn(tr.h2, b.w1, tr.mlp_u);
    add_row_bias(tr.mlp_u, b.b1);
    tr.mlp_a = Mat<T>(tr.mlp_u.rows, tr.mlp_u.cols);
    for (size_t i = 0; i < tr.mlp_u.v.size(); ++i) tr.mlp_a.v[i] = nn::gelu(tr.mlp_u.v[i]);
    Mat<T> mlp_out;
    gemm_nn(tr.mlp_a, b.w2, mlp_out);
    add_row_bias(mlp_out, b.b2);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] += mlp_out.v[i];
  }
  if (trace) trace->pre_lnf = x;
  return nn::layernorm(x, sp.lnf_g, sp.lnf_b);
}

template <class T>
void stack_backward(const StackParams<T>& sp, int heads, const StackTrace<T>& trace,
                    const Mat<T>& dout, StackParams<T>& grads, Mat<T>& dx) {
  nn::layernorm_backward(trace.pre_lnf, sp.lnf_g, dout, dx, grads.lnf_g, grads.lnf_b);
  for (int li = int(sp.blocks.size()) - 1; li >= 0; --li) {
    const BlockParams<T>& b = sp.blocks[size_t(li)];
    BlockParams<T>& gb = grads.blocks[size_t(li)];
    const BlockTrace<T>& tr = trace.blocks[size_t(li)];
    const int n = dx.rows, d = dx.cols;

    // MLP branch: x_out = x_mid + gelu(LN2(x_mid) W1 + b1) W2 + b2
    Mat<T> da;
    gemm_nt(dx, b.w2, da);
    gemm_tn(tr.mlp_a, dx, gb.w2, true);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) gb.b2[0][j] += dx[i][j];
    Mat<T> du(da.rows, da.cols);
    for (size_t i = 0; i < da.v.size(); ++i) du.v[i] = da.v[i] * nn::gelu_grad(tr.mlp_u.v[i]);
    gemm_tn(tr.h2, du, gb.w1, true);
    for (int i = 0; i < du.rows; ++i)
      for (int j = 0; j < du.cols; ++j) gb.b1[0][j] += du[i][j];
    Mat<T> dh2;
    gemm_nt(du, b.w1, dh2);
    Mat<T> dx_mid;
    nn::layernorm_backward(tr.x_mid, b.ln2_g, dh2, dx_mid, gb.ln2_g, gb.ln2_b);
    for (size_t i = 0; i < dx.v.size(); ++i) dx_mid.v[i] += dx.v[i];  // residual

    // Attention branch: x_mid = x_in + attn(LN1(x_in))
    Mat<T> dh1(n, d);
    detail::attention_backward(b, heads, tr, dx_mid, gb, dh1);
    Mat<T> dx_in;
    nn::layernorm_backward(tr.x_in, b.ln1_g, dh1, dx_in, gb.ln1_g, gb.ln1_b);
    for (size_t i = 0; i < dx_in.v.size(); ++i) dx_in.v[i] += dx_mid.v[i];  // residual
    dx = std::move(dx_in);
  }
}

// ---------------------------------------------------------------------------
// Encoder over visible patches
// ---------------------------------------------------------------------------
template <class T>
struct TokenSet {
  Mat<T> tokens;                   // n_visible x enc_width
  std::vector<int> visible_index;  // positions into the patch grid
  Mat<T> global;                   // 1 x enc_width when enabled, else empty
  int grid_h = 0;
  int grid_w = 0;
};

template <class T>
struct EncodeTrace {
  Mat<T> pixels;                   // n_visible x P model inputs
  std::vector<int> visible_index;
  StackTrace<T> stack;
  int grid_h = 0, grid_w = 0;
  bool has_global = false;
};

// Core encoder on a generic scalar type. `patch_pixels` is the full
// n_patches x P pixel matrix; hidden rows are never read.
template <class T>
TokenSet<T> encode_pixels(const Mat<T>& patch_pixels, int grid_h, int grid_w,
                          const MaskSpec& mask, const Params<T>& params,
                          EncodeTrace<T>* trace = nullptr) {
  const ModelConfig& cfg = params.cfg;
  const int n_patches = grid_h * grid_w;
  check(patch_pixels.rows == n_patches, "encode: patch count mismatch");
  check(patch_pixels.cols == cfg.patch_dim(), "encode: patch dim ", patch_pixels.cols,
        " != config ", cfg.patch_dim());
  check(mask.n_patches() == n_patches, "encode: mask size mismatch");

  std::vector<int> visible;
  visible.reserve(size_t(n_patches));
  for (int k = 0; k < n_patches; ++k)
    if (!mask.hidden[size_t(k)]) visible.push_back(k);
  check(!visible.empty(), "encode: all patches hidden; need at least one visible token");

  const int nv = int(visible.size());
  Mat<T> xv(nv, cfg.patch_dim());
  for (int i = 0; i < nv; ++i)
    std::copy(patch_pixels[visible[size_t(i)]],
              patch_pixels[visible[size_t(i)]] + cfg.patch_dim(), xv[i]);

  Mat<T> proj;
  gemm_nn(xv, params.patch_proj_w, proj);
  add_row_bias(proj, params.patch_proj_b);
  const Mat<T> pos = positional_embedding<T>(grid_h, grid_w, cfg.enc_width);
  for (int i = 0; i < nv; ++i) {
    const T* prow = pos[visible[size_t(i)]];
    T* trow = proj[i];
    for (int j = 0; j < cfg.enc_width; ++j) trow[j] += prow[j];
  }

  const int seq = cfg.use_global_token ? nv + 1 : nv;
  Mat<T> x(seq, cfg.enc_width);
  int row0 = 0;
  if (cfg.use_global_token) {
    // the global token carries no positional term
    std::copy(params.global_token[0], params.global_token[0] + cfg.enc_width, x[0]);
    row0 = 1;
  }
  for (int i = 0; i < nv; ++i)
    std::copy(proj[i], proj[i] + cfg.enc_width, x[row0 + i]);

  if (trace) {
    trace->pixels = std::move(xv);
    trace->visible_index = visible;
    trace->grid_h = grid_h;
    trace->grid_w = grid_w;
    trace->has_global = cfg.use_global_token;
  }
  Mat<T> out = stack_forward(params.enc, cfg.enc_heads, std::move(x),
                             trace ? &trace->stack : nullptr);

  TokenSet<T> tokens;
  tokens.grid_h = grid_h;
  tokens.grid_w = grid_w;
  tokens.visible_index = std::move(visible);
  tokens.tokens = Mat<T>(nv, cfg.enc_width);
  for (int i = 0; i < nv; ++i)
    std::copy(out[row0 + i], out[row0 + i] + cfg.enc_width, tokens.tokens[i]);
  if (cfg.use_global_token) {
    tokens.global = Mat<T>(1, cfg.enc_width);
    std::copy(out[0], out[0] + cfg.enc_width, tokens.global[0]);
  }
  return tokens;
}

// Gradients w.r.t. params plus, optionally, the visible input pixels.
template <class T>
void encode_backward(const Params<T>& params, const EncodeTrace<T>& trace,
                     const Mat<T>& dtokens, const Mat<T>& dglobal, Params<T>& grads,
                     Mat<T>* dpixels = nullptr) {
  const ModelConfig& cfg = params.cfg;
  const int nv = int(trace.visible_index.size());
  const int row0 = trace.has_global ? 1 : 0;
  Mat<T> dout(row0 + nv, cfg.enc_width);
  if (trace.has_global && !dglobal.empty())
    std::copy(dglobal[0], dglobal[0] + cfg.enc_width, dout[0]);
  if (!dtokens.empty()) {
    check(dtokens.rows == nv, "encode_backward: dtokens rows");
    for (int i = 0; i < nv; ++i)
      std::copy(dtokens[i], dtokens[i] + cfg.enc_width, dout[row0 + i]);
  }
  Mat<T> dx;
  stack_backward(params.enc, cfg.enc_heads, trace.stack, dout, grads.enc, dx);

  if (trace.has_global)
    for (int j = 0; j < cfg.enc_width; ++j) grads.global_token[0][j] += dx[0][j];

  Mat<T> dproj(nv, cfg.enc_width);
  for (int i = 0; i < nv; ++i)
    std::copy(dx[row0 + i], dx[row0 + i] + cfg.enc_width, dproj[i]);
  gemm_tn(trace.pixels, dproj, grads.patch_proj_w, true);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < cfg.enc_width; ++j) grads.patch_proj_b[0][j] += dproj[i][j];
  if (dpixels) gemm_nt(dproj, params.patch_proj_w, *dpixels);
}

// ---------------------------------------------------------------------------
// Decoder: visible tokens projected to dec_width, hidden slots filled with
// the learned mask token, decoder positional embedding over the full grid,
// then blocks and a linear unembedding to pixels for every patch.
// ---------------------------------------------------------------------------
template <class T>
struct DecodeTrace {
  Mat<T> tokens_in;  // n_visible x enc_width
  std::vector<int> visible_index;
  StackTrace<T> stack;
  Mat<T> pre_unembed;  // n x dec_width (post final LN)
  int grid_h = 0, grid_w = 0;
};

template <class T>
Mat<T> decode_tokens(const Mat<T>& tokens, const std::vector<int>& visible_index, int grid_h,
                     int grid_w, const Params<T>& params, DecodeTrace<T>* trace = nullptr) {
  const ModelConfig& cfg = params.cfg;
  const int n = grid_h * grid_w;
  const int nv = int(visible_index.size());
  check(tokens.rows == nv && tokens.cols == cfg.enc_width, "decode: token shape mismatch");
  for (int idx : visible_index) check(idx >= 0 && idx < n, "decode: visible index out of range");

  Mat<T> visproj;
  gemm_nn(tokens, params.dec_embed_w, visproj);
  add_row_bias(visproj, params.dec_embed_b);

  Mat<T> z(n, cfg.dec_width);
  std::vector<uint8_t> is_visible(size_t(n), 0);
  for (int i = 0; i < nv; ++i) {
    std::copy(visproj[i], visproj[i] + cfg.dec_width, z[visible_index[size_t(i)]]);
    is_visible[size_t(visible_index[size_t(i)])] = 1;
  }
  for (int k = 0; k < n; ++k)
    if (!is_visible[size_t(k)])
      std::copy(params.mask_token[0], params.mask_token[0] + cfg.dec_width, z[k]);
  const Mat<T> pos = positional_embedding<T>(grid_h, grid_w, cfg.dec_width);
  for (int k = 0; k < n; ++k) {
    const T* prow = pos[k];
    T* zrow = z[k];
    for (int j = 0; j < cfg.dec_width; ++j) zrow[j] += prow[j];
  }

  if (trace) {
    trace->tokens_in = tokens;
    trace->visible_index = visible_index;
    trace->grid_h = grid_h;
    trace->grid_w = grid_w;
  }
  Mat<T> y = stack_forward(params.dec, cfg.dec_heads, std::move(z),
                           trace ? &trace->stack : nullptr);
  if (trace) trace->pre_unembed = y;
  Mat<T> pred;
  gemm_nn(y, params.unembed_w, pred);
  add_row_bias(pred, params.unembed_b);
  return pred;
}

template <class T>
void decode_backward(const Params<T>& params, const DecodeTrace<T>& trace, const Mat<T>& dpred,
                     Params<T>& grads, Mat<T>& dtokens) {
  const ModelConfig& cfg = params.cfg;
  const int n = trace.grid_h * trace.grid_w;
  const int nv = int(trace.visible_index.size());
  check(dpred.rows == n && dpred.cols == cfg.patch_dim(), "decode_backward: dpred shape");

  Mat<T> dy;
  gemm_nt(dpred, params.unembed_w, dy);
  gemm_tn(trace.pre_unembed, dpred, grads.unembed_w, true);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < cfg.patch_dim(); ++j) grads.unembed_b[0][j] += dpred[i][j];

  Mat<T> dz;
  stack_backward(params.dec, cfg.dec_heads, trace.stack, dy, grads.dec, dz);

  std::vector<uint8_t> is_visible(size_t(n), 0);
  Mat<T> dvisproj(nv, cfg.dec_width);
  for (int i = 0; i < nv; ++i) {
    const int k = trace.visible_index[size_t(i)];
    std::copy(dz[k], dz[k] + cfg.dec_width, dvisproj[i]);
    is_visible[size_t(k)] = 1;
  }
  for (int k = 0; k < n; ++k)
    if (!is_visible[size_t(k)])
      for (int j = 0; j < cfg.dec_width; ++j) grads.mask_token[0][j] += dz[k][j];

  gemm_tn(trace.tokens_in, dvisproj, grads.dec_embed_w, true);
  for (int i = 0; i < nv; ++i)
    for (int j = 0; j < cfg.dec_width; ++j) grads.dec_embed_b[0][j] += dvisproj[i][j];
  gemm_nt(dvisproj, params.dec_embed_w, dtokens);
}

// ---------------------------------------------------------------------------
// Float convenience wrappers over PatchGrid
// ---------------------------------------------------------------------------
inline TokenSet<float> encode(const PatchGrid& patches, const MaskSpec& mask,
                              const Params<float>& params,
                              EncodeTrace<float>* trace = nullptr) {
  return encode_pixels<float>(patches.data, patches.grid_h, patches.grid_w, mask, params, trace);
}

inline PatchGrid decode(const TokenSet<float>& tokens, const MaskSpec& mask,
                        const Params<float>& params, DecodeTrace<float>* trace = nullptr) {
  check(mask.n_patches() == tokens.grid_h * tokens.grid_w, "decode: mask/grid mismatch");
  check(mask.visible_count() == int(tokens.visible_index.size()),
        "decode: mask does not match token set");
  PatchGrid out;
  out.grid_h = tokens.grid_h;
  out.grid_w = tokens.grid_w;
  out.patch_h = params.cfg.patch_h;
  out.patch_w = params.cfg.patch_w;
  out.data = decode_tokens<float>(tokens.tokens, tokens.visible_index, tokens.grid_h,
                                  tokens.grid_w, params, trace);
  return out;
}

}  // namespace gaia
