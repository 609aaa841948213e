#pragma once

#include <cmath>
#include <vector>

#include "gaia/common.hpp"
#include "gaia/vit.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Projection head: 3-layer GELU MLP -> L2-normalized bottleneck ->
// weight-normalized linear map to K prototype logits.
// ---------------------------------------------------------------------------
template <class T>
struct DinoHeadTrace {
  Mat<T> x;        // rows x D input
  Mat<T> u1, a1;   // pre/post GELU
  Mat<T> u2, a2;
  Mat<T> z0;       // pre-normalization bottleneck
  std::vector<T> z0_norm;
  Mat<T> z;        // unit rows
};

template <class T>
Mat<T> dino_project(const Mat<T>& x, const DinoHeadParams<T>& head,
                    DinoHeadTrace<T>* trace = nullptr) {
  check(x.cols == head.w1.rows, "dino_project: input width mismatch");
  DinoHeadTrace<T> local;
  DinoHeadTrace<T>& tr = trace ? *trace : local;
  tr.x = x;
  gemm_nn(x, head.w1, tr.u1);
  add_row_bias(tr.u1, head.b1);
  tr.a1 = Mat<T>(tr.u1.rows, tr.u1.cols);
  for (size_t i = 0; i < tr.u1.v.size(); ++i) tr.a1.v[i] = nn::gelu(tr.u1.v[i]);
  gemm_nn(tr.a1, head.w2, tr.u2);
  add_row_bias(tr.u2, head.b2);
  tr.a2 = Mat<T>(tr.u2.rows, tr.u2.cols);
  for (size_t i = 0; i < tr.u2.v.size(); ++i) tr.a2.v[i] = nn::gelu(tr.u2.v[i]);
  gemm_nn(tr.a2, head.w3, tr.z0);
  add_row_bias(tr.z0, head.b3);

  tr.z = Mat<T>(tr.z0.rows, tr.z0.cols);
  tr.z0_norm.assign(size_t(tr.z0.rows), T(0));
  for (int i = 0; i < tr.z0.rows; ++i) {
    T nrm = T(0);
    for (int j = 0; j < tr.z0.cols; ++j) nrm += tr.z0[i][j] * tr.z0[i][j];
    nrm = std::max(std::sqrt(nrm), T(1e-12));
    tr.z0_norm[size_t(i)] = nrm;
    for (int j = 0; j < tr.z0.cols; ++j) tr.z[i][j] = tr.z0[i][j] / nrm;
  }

  // logits[i][k] = <z_i, proto_k> / ||proto_k||
  const int K = head.proto.rows, B = head.proto.cols;
  Mat<T> logits(tr.z.rows, K);
  for (int k = 0; k < K; ++k) {
    T pn = T(0);
    for (int j = 0; j < B; ++j) pn += head.proto[k][j] * head.proto[k][j];
    pn = std::max(std::sqrt(pn), T(1e-12));
    for (int i = 0; i < tr.z.rows; ++i) {
      T acc = T(0);
      for (int j = 0; j < B; ++j) acc += tr.z[i][j] * head.proto[k][j];
      logits[i][k] = acc / pn;
    }
  }
  return logits;
}

template <class T>
void dino_project_backward(const DinoHeadParams<T>& head, const DinoHeadTrace<T>& tr,
                           const Mat<T>& dlogits, DinoHeadParams<T>& grads, Mat<T>& dx) {
  const int K = head.proto.rows, B = head.proto.cols;
  check(dlogits.rows == tr.z.rows && dlogits.cols == K, "dino_project_backward: dlogits shape");

  Mat<T> dz(tr.z.rows, B);
  for (int k = 0; k < K; ++k) {
    T pn = T(0);
    for (int j = 0; j < B; ++j) pn += head.proto[k][j] * head.proto[k][j];
    pn = std::max(std::sqrt(pn), T(1e-12));
    const T inv = T(1) / pn;
    for (int i = 0; i < tr.z.rows; ++i) {
      const T dl = dlogits[i][k];
      if (dl == T(0)) continue;
      T zp = T(0);
      for (int j = 0; j < B; ++j) zp += tr.z[i][j] * head.proto[k][j];
      for (int j = 0; j < B; ++j) {
        dz[i][j] += dl * head.proto[k][j] * inv;
        grads.proto[k][j] += dl * (tr.z[i][j] * inv - zp * head.proto[k][j] * inv * inv * inv);
      }
    }
  }

  // through the L2 normalization: z = z0/||z0||
  Mat<T> dz0(tr.z0.rows, tr.z0.cols);
  for (int i = 0; i < tr.z0.rows; ++i) {
    T zdot = T(0);
    for (int j = 0; j < B; ++j) zdot += tr.z[i][j] * dz[i][j];
    const T inv = T(1) / tr.z0_norm[size_t(i)];
    for (int j = 0; j < B; ++j) dz0[i][j] = (dz[i][j] - tr.z[i][j] * zdot) * inv;
  }

  gemm_tn(tr.a2, dz0, grads.w3, true);
  for (int i = 0; i < dz0.rows; ++i)
    for (int j = 0; j < dz0.cols; ++j) grads.b3[0][j] += dz0[i][j];
  Mat<T> da2;
  gemm_nt(dz0, head.w3, da2);
  Mat<T> du2(da2.rows, da2.cols);
  for (size_t i = 0; i < da2.v.size(); ++i) du2.v[i] = da2.v[i] * nn::gelu_grad(tr.u2.v[i]);
  gemm_tn(tr.a1, du2, grads.w2, true);
  for (int i = 0; i < du2.rows; ++i)
    for (int j = 0; j < du2.cols; ++j) grads.b2[0][j] += du2[i][j];
  Mat<T> da1;
  gemm_nt(du2, head.w2, da1);
  Mat<T> du1(da1.rows, da1.cols);
  for (size_t i = 0; i < da1.v.size(); ++i) du1.v[i] = da1.v[i] * nn::gelu_grad(tr.u1.v[i]);
  gemm_tn(tr.x, du1, grads.w1, true);
  for (int i = 0; i < du1.rows; ++i)
    for (int j = 0; j < du1.cols; ++j) grads.b1[0][j] += du1[i][j];
  gemm_nt(du1, head.w1, dx);
}

// ---------------------------------------------------------------------------
// Cross-view self-distillation loss. Teacher logits are treated as constants:
// probabilities come from softmax((t - center)/tau_t); the student matches
// with log-softmax(s/tau_s). The loss is the mean cross-entropy over all
// (teacher view, student view) pairs and the batch.
// ---------------------------------------------------------------------------
template <class T>
struct DinoLossResult {
  double loss = 0.0;
  double teacher_entropy = 0.0;             // mean over batch and teacher views
  std::vector<Mat<T>> dstudent;             // per student view, rows x K
};

template <class T>
DinoLossResult<T> dino_loss(const std::vector<Mat<T>>& student_logits,
                            const std::vector<Mat<T>>& teacher_logits, const Mat<T>& center,
                            double tau_s, double tau_t, bool want_grad = true) {
  check(tau_s > 0.0 && tau_t > 0.0, "dino_loss: temperatures must be positive");
  check(!student_logits.empty() && !teacher_logits.empty(), "dino_loss: need views");
  const int batch = student_logits[0].rows;
  const int K = student_logits[0].cols;
  check(batch > 0, "dino_loss: empty batch");
  for (const auto& m : student_logits)
    check(m.rows == batch && m.cols == K, "dino_loss: student view shape mismatch");
  for (const auto& m : teacher_logits)
    check(m.rows == batch && m.cols == K, "dino_loss: teacher view shape mismatch");
  check(center.rows == 1 && center.cols == K, "dino_loss: center shape");

  const int n_pairs = int(student_logits.size()) * int(teacher_logits.size());
  const double inv_pairs_batch = 1.0 / (double(n_pairs) * double(batch));

  // teacher probabilities (constants) and their entropy
  std::vector<Mat<double>> teacher_p;
  double entropy = 0.0;
  for (const auto& tl : teacher_logits) {
    Mat<double> p(batch, K);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < K; ++j) p[i][j] = (double(tl[i][j]) - double(center[0][j])) / tau_t;
    nn::softmax_rows(p);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < K; ++j)
        if (p[i][j] > 0.0) entropy -= p[i][j] * std::log(p[i][j]);
    teacher_p.push_back(std::move(p));
  }
  entropy /= double(batch) * double(teacher_logits.size());

  DinoLossResult<T> res;
  res.teacher_entropy = entropy;
  if (want_grad) {
    res.dstudent.resize(student_logits.size());
    for (size_t w = 0; w < student_logits.size(); ++w) res.dstudent[w] = Mat<T>(batch, K);
  }

  double loss = 0.0;
  for (size_t w = 0; w < student_logits.size(); ++w) {
    const Mat<T>& sl = student_logits[w];
    Mat<double> q(batch, K);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < K; ++j) q[i][j] = double(sl[i][j]) / tau_s;
    // log-softmax rows
    Mat<double> logq(batch, K);
    for (int i = 0; i < batch; ++i) {
      double mx = q[i][0];
      for (int j = 1; j < K; ++j) mx = std::max(mx, q[i][j]);
      double sum = 0.0;
      for (int j = 0; j < K; ++j) sum += std::exp(q[i][j] - mx);
      const double lse = mx + std::log(sum);
      for (int j = 0; j < K; ++j) logq[i][j] = q[i][j] - lse;
    }
    Mat<double> qp(batch, K);
    for (int i = 0; i < batch; ++i)
      for (int j = 0; j < K; ++j) qp[i][j] = std::exp(logq[i][j]);

    for (const auto& p : teacher_p) {
      for (int i = 0; i < batch; ++i) {
        double ce = 0.0;
        for (int j = 0; j < K; ++j) ce -= p[i][j] * logq[i][j];
        loss += ce * inv_pairs_batch;
      }
      if (want_grad) {
        Mat<T>& ds = res.dstudent[w];
        const double scale = inv_pairs_batch / tau_s;
        for (int i = 0; i < batch; ++i)
          for (int j = 0; j < K; ++j) ds[i][j] += T((qp[i][j] - p[i][j]) * scale);
      }
    }
  }
  res.loss = loss;
  return res;
}

// ---------------------------------------------------------------------------
// Momentum teacher
// ---------------------------------------------------------------------------
template <class T>
struct TeacherState {
  Params<T> params;         // EMA copy of the student backbone (+decoder)
  DinoHeadParams<T> head;   // EMA copy of the student head
  Mat<T> center;            // 1 x K
  double momentum = 0.996;
  double center_momentum = 0.9;

  void validate() const {
    check(momentum > 0.0 && momentum < 1.0, "TeacherState: momentum in (0,1)");
    check(center_momentum > 0.0 && center_momentum < 1.0, "TeacherState: center momentum in (0,1)");
  }
};

template <class T>
std::vector<Mat<T>*> tensor_ptrs(Params<T>& p) {
  std::vector<Mat<T>*> out;
  for_each_tensor(p, [&](const std::string&, Mat<T>& m, bool) { out.push_back(&m); });
  return out;
}
template <class T>
std::vector<const Mat<T>*> tensor_ptrs(const Params<T>& p) {
  std::vector<const Mat<T>*> out;
  for_each_tensor(p, [&](const std::string&, const Mat<T>& m, bool) { out.push_back(&m); });
  return out;
}
template <class T>
std::vector<Mat<T>*> tensor_ptrs(DinoHeadParams<T>& h) {
  std::vector<Mat<T>*> out;
  for_each_tensor(h, [&](const std::string&, Mat<T>& m, bool) { out.push_back(&m); });
  return out;
}
template <class T>
std::vector<const Mat<T>*> tensor_ptrs(const DinoHeadParams<T>& h) {
  std::vector<const Mat<T>*> out;
  for_each_tensor(h, [&](const std::string&, const Mat<T>& m, bool) { out.push_back(&m); });
  return out;
}

// t' = m*t + (1-m)*s, elementwise over every teacher tensor. Center untouched.
template <class T>
void ema_update(TeacherState<T>& teacher, const Params<T>& student,
                const DinoHeadParams<T>& student_head) {
  teacher.validate();
  const T m = T(teacher.momentum);
  auto tp = tensor_ptrs(teacher.params);
  auto sp = tensor_ptrs(student);
  check(tp.size() == sp.size(), "ema_update: tensor count mismatch");
  for (size_t i = 0; i < tp.size(); ++i) {
    check(tp[i]->same_shape(*sp[i]), "ema_update: tensor shape mismatch at index ", i);
    for (size_t j = 0; j < tp[i]->v.size(); ++j)
      tp[i]->v[j] = m * tp[i]->v[j] + (T(1) - m) * sp[i]->v[j];
  }
  auto th = tensor_ptrs(teacher.head);
  auto sh = tensor_ptrs(student_head);
  check(th.size() == sh.size(), "ema_update: head tensor count mismatch");
  for (size_t i = 0; i < th.size(); ++i) {
    check(th[i]->same_shape(*sh[i]), "ema_update: head shape mismatch at index ", i);
    for (size_t j = 0; j < th[i]->v.size(); ++j)
      th[i]->v[j] = m * th[i]->v[j] + (T(1) - m) * sh[i]->v[j];
  }
}

// center' = m_c*center + (1-m_c)*mean(raw teacher logits over batch and views)
template <class T>
void center_update(Mat<T>& center, const std::vector<Mat<T>>& teacher_logits, double m_c) {
  check(m_c > 0.0 && m_c < 1.0, "center_update: momentum in (0,1)");
  check(!teacher_logits.empty() && teacher_logits[0].rows > 0, "center_update: empty batch");
  const int K = center.cols;
  std::vector<double> mean(size_t(K), 0.0);
  int64_t count = 0;
  for (const auto& tl : teacher_logits) {
    check(tl.cols == K, "center_update: K mismatch");
    for (int i = 0; i < tl.rows; ++i)
      for (int j = 0; j < K; ++j) mean[size_t(j)] += double(tl[i][j]);
    count += tl.rows;
  }
  for (int j = 0; j < K; ++j)
    center[0][j] = T(m_c * double(center[0][j]) + (1.0 - m_c) * mean[size_t(j)] / double(count));
}

}  // namespace gaia
