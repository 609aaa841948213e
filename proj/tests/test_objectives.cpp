#include <gtest/gtest.h>

#include "gaia/dino.hpp"
#include "gaia/mae.hpp"
#include "gaia/rng.hpp"

using namespace gaia;

namespace {

ModelConfig head_config() {
  ModelConfig cfg;
  cfg.enc_width = 16;
  cfg.enc_layers = 1;
  cfg.enc_heads = 4;
  cfg.dec_width = 12;
  cfg.dec_layers = 1;
  cfg.dec_heads = 3;
  cfg.patch_h = 4;
  cfg.patch_w = 4;
  cfg.dino_hidden = 24;
  cfg.dino_bottleneck = 8;
  cfg.dino_prototypes = 32;
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// MAE loss
// ---------------------------------------------------------------------------
TEST(MaeLoss, PerfectPredictionZero) {
  Mat<double> pred(4, 9, 0.3);
  MaskSpec mask;
  mask.hidden = {1, 0, 1, 0};
  MaskGrid missing(4, 9, 0);
  auto rep = mae_loss<double>(pred, pred, mask, missing);
  EXPECT_DOUBLE_EQ(rep.loss, 0.0);
  EXPECT_EQ(rep.n_hidden_pixels_scored, 18);
}

TEST(MaeLoss, ConstantResidual) {
  Mat<double> target(4, 9, 0.5);
  Mat<double> pred(4, 9, 0.6);  // residual 0.1 everywhere
  MaskSpec mask;
  mask.hidden = {0, 1, 0, 0};  // single hidden patch
  MaskGrid missing(4, 9, 0);
  auto rep = mae_loss<double>(pred, target, mask, missing);
  EXPECT_NEAR(rep.loss, 0.01, 1e-12);
}

TEST(MaeLoss, VisiblePatchesUnscored) {
  Rng rng = Rng::from_seed(1);
  Mat<double> target(4, 9);
  for (auto& x : target.v) x = rng.next_unit();
  Mat<double> pred = target;
  MaskSpec mask;
  mask.hidden = {1, 0, 1, 0};
  MaskGrid missing(4, 9, 0);
  const double before = mae_loss<double>(pred, target, mask, missing).loss;
  for (int j = 0; j < 9; ++j) pred.at(1, j) += 123.0;  // visible patch
  const double after = mae_loss<double>(pred, target, mask, missing).loss;
  EXPECT_DOUBLE_EQ(before, after);
}

TEST(MaeLoss, MissingPixelsExcluded) {
  Mat<double> target(2, 4, 0.0);
  Mat<double> pred(2, 4, 1.0);
  MaskSpec mask;
  mask.hidden = {1, 1};
  MaskGrid missing(2, 4, 0);
  missing.at(0, 0) = 1;
  missing.at(1, 3) = 1;
  auto rep = mae_loss<double>(pred, target, mask, missing);
  EXPECT_EQ(rep.n_hidden_pixels_scored, 6);
  EXPECT_NEAR(rep.loss, 1.0, 1e-12);
  // poisoning the missing target cells changes nothing
  target.at(0, 0) = 1e9;
  EXPECT_NEAR(mae_loss<double>(pred, target, mask, missing).loss, 1.0, 1e-12);
}

TEST(MaeLoss, ZeroScoredPixelsRejected) {
  Mat<double> pred(2, 4, 0.0);
  MaskSpec mask;
  mask.hidden = {0, 0};
  MaskGrid missing(2, 4, 0);
  EXPECT_THROW(mae_loss<double>(pred, pred, mask, missing), std::invalid_argument);
}

TEST(MaeLoss, ResidualScalingQuadratic) {
  Rng rng = Rng::from_seed(2);
  Mat<double> target(3, 16);
  Mat<double> pred(3, 16);
  for (auto& x : target.v) x = rng.next_unit();
  for (size_t i = 0; i < pred.v.size(); ++i) pred.v[i] = target.v[i] + 0.05 * rng.next_unit();
  MaskSpec mask;
  mask.hidden = {1, 0, 1};
  MaskGrid missing(3, 16, 0);
  const double base = mae_loss<double>(pred, target, mask, missing).loss;
  Mat<double> scaled = target;
  const double c = 3.0;
  for (size_t i = 0; i < pred.v.size(); ++i)
    scaled.v[i] = target.v[i] + c * (pred.v[i] - target.v[i]);
  const double scaled_loss = mae_loss<double>(scaled, target, mask, missing).loss;
  EXPECT_NEAR(scaled_loss, c * c * base, 1e-12);
}

TEST(MaeLoss, PatchPermutationInvariant) {
  Rng rng = Rng::from_seed(3);
  const int n = 6, d = 8;
  Mat<double> pred(n, d), target(n, d);
  for (auto& x : pred.v) x = rng.next_unit();
  for (auto& x : target.v) x = rng.next_unit();
  MaskSpec mask;
  mask.hidden = {1, 0, 1, 1, 0, 0};
  MaskGrid missing(n, d, 0);
  for (auto& m : missing.v) m = rng.next_unit() < 0.2 ? 1 : 0;
  const double base = mae_loss<double>(pred, target, mask, missing).loss;

  std::vector<int> perm = Rng::from_seed(4).permutation(n);
  Mat<double> pred_p(n, d), target_p(n, d);
  MaskSpec mask_p;
  mask_p.hidden.assign(size_t(n), 0);
  MaskGrid missing_p(n, d, 0);
  for (int k = 0; k < n; ++k) {
    const int src = perm[size_t(k)];
    for (int j = 0; j < d; ++j) {
      pred_p.at(k, j) = pred.at(src, j);
      target_p.at(k, j) = target.at(src, j);
      missing_p.at(k, j) = missing.at(src, j);
    }
    mask_p.hidden[size_t(k)] = mask.hidden[size_t(src)];
  }
  EXPECT_NEAR(mae_loss<double>(pred_p, target_p, mask_p, missing_p).loss, base, 1e-12);
}

TEST(MaeLoss, GradientMatchesFiniteDifference) {
  Rng rng = Rng::from_seed(5);
  const int n = 3, d = 8;
  Mat<double> pred(n, d), target(n, d);
  for (auto& x : pred.v) x = rng.next_unit();
  for (auto& x : target.v) x = rng.next_unit();
  MaskSpec mask;
  mask.hidden = {1, 0, 1};
  MaskGrid missing(n, d, 0);
  missing.at(0, 2) = 1;
  auto rep = mae_loss<double>(pred, target, mask, missing);
  Mat<double> dpred;
  mae_loss_backward<double>(pred, target, mask, missing, rep.n_hidden_pixels_scored, 1.0, dpred);
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < d; ++j) {
      const double h = 1e-6;
      const double saved = pred.at(k, j);
      pred.at(k, j) = saved + h;
      const double up = mae_loss<double>(pred, target, mask, missing).loss;
      pred.at(k, j) = saved - h;
      const double down = mae_loss<double>(pred, target, mask, missing).loss;
      pred.at(k, j) = saved;
      EXPECT_NEAR(dpred.at(k, j), (up - down) / (2 * h), 1e-7);
    }
  }
}

// ---------------------------------------------------------------------------
// DINO loss
// ---------------------------------------------------------------------------
TEST(DinoLoss, OneHotTeacherUniformStudent) {
  const int K = 32, B = 2;
  std::vector<Mat<double>> student(2, Mat<double>(B, K, 0.0));  // uniform
  std::vector<Mat<double>> teacher(2, Mat<double>(B, K, 0.0));
  // strong one-hot teacher via a huge logit
  for (auto& view : teacher)
    for (int i = 0; i < B; ++i) view[i][5] = 1000.0;
  Mat<double> center(1, K, 0.0);
  auto res = dino_loss<double>(student, teacher, center, 0.1, 0.04, false);
  EXPECT_NEAR(res.loss, std::log(double(K)), 1e-9);
}

TEST(DinoLoss, MatchedDistributionsGiveEntropy) {
  const int K = 16, B = 3;
  Rng rng = Rng::from_seed(6);
  const double tau_s = 0.1, tau_t = 0.04;
  Mat<double> center(1, K);
  for (auto& x : center.v) x = rng.next_unit();
  std::vector<Mat<double>> teacher(2, Mat<double>(B, K));
  for (auto& view : teacher)
    for (auto& x : view.v) x = rng.next_unit();
  std::vector<Mat<double>> student(2, Mat<double>(B, K));
  for (int w = 0; w < 2; ++w)
    for (int i = 0; i < B; ++i)
      for (int j = 0; j < K; ++j)
        student[size_t(w)][i][j] = (teacher[size_t(w)][i][j] - center[0][j]) * tau_s / tau_t;
  // self-pairs only: CE(p, p) = H(p)
  for (int w = 0; w < 2; ++w) {
    std::vector<Mat<double>> s1 = {student[size_t(w)]};
    std::vector<Mat<double>> t1 = {teacher[size_t(w)]};
    auto res = dino_loss<double>(s1, t1, center, tau_s, tau_t, false);
    EXPECT_NEAR(res.loss, res.teacher_entropy, 1e-9);
  }
}

TEST(DinoLoss, TeacherLogitShiftInvariance) {
  const int K = 8, B = 2;
  Rng rng = Rng::from_seed(7);
  std::vector<Mat<double>> student(2, Mat<double>(B, K));
  std::vector<Mat<double>> teacher(2, Mat<double>(B, K));
  for (auto& v : student)
    for (auto& x : v.v) x = rng.next_unit();
  for (auto& v : teacher)
    for (auto& x : v.v) x = rng.next_unit();
  Mat<double> center(1, K, 0.1);
  const double base = dino_loss<double>(student, teacher, center, 0.1, 0.04, false).loss;
  for (auto& v : teacher)
    for (auto& x : v.v) x += 7.5;
  const double shifted = dino_loss<double>(student, teacher, center, 0.1, 0.04, false).loss;
  EXPECT_NEAR(base, shifted, 1e-9);
}

TEST(DinoLoss, GradientMatchesFiniteDifference) {
  const int K = 8, B = 2;
  Rng rng = Rng::from_seed(8);
  std::vector<Mat<double>> student(2, Mat<double>(B, K));
  std::vector<Mat<double>> teacher(2, Mat<double>(B, K));
  for (auto& v : student)
    for (auto& x : v.v) x = rng.next_unit();
  for (auto& v : teacher)
    for (auto& x : v.v) x = rng.next_unit();
  Mat<double> center(1, K, 0.05);
  auto res = dino_loss<double>(student, teacher, center, 0.1, 0.04, true);
  for (int w = 0; w < 2; ++w) {
    for (int i = 0; i < B; ++i) {
      for (int j = 0; j < K; ++j) {
        const double h = 1e-6;
        const double saved = student[size_t(w)][i][j];
        student[size_t(w)][i][j] = saved + h;
        const double up = dino_loss<double>(student, teacher, center, 0.1, 0.04, false).loss;
        student[size_t(w)][i][j] = saved - h;
        const double down = dino_loss<double>(student, teacher, center, 0.1, 0.04, false).loss;
        student[size_t(w)][i][j] = saved;
        EXPECT_NEAR(res.dstudent[size_t(w)][i][j], (up - down) / (2 * h), 1e-7);
      }
    }
  }
}

TEST(DinoLoss, StudentGradientRowsSumToZero) {
  const int K = 8, B = 1;
  Rng rng = Rng::from_seed(9);
  std::vector<Mat<double>> student(1, Mat<double>(B, K));
  std::vector<Mat<double>> teacher(1, Mat<double>(B, K));
  for (auto& x : student[0].v) x = rng.next_unit();
  for (auto& x : teacher[0].v) x = rng.next_unit();
  Mat<double> center(1, K, 0.0);
  auto a = dino_loss<double>(student, teacher, center, 0.1, 0.04, true);
  teacher[0][0][3] += 0.5;
  auto b = dino_loss<double>(student, teacher, center, 0.1, 0.04, true);
  EXPECT_NE(a.loss, b.loss);
  for (const auto& res : {a, b}) {
    double sum = 0.0;
    for (int j = 0; j < K; ++j) sum += res.dstudent[0][0][j];
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(DinoLoss, RejectsBadTemperatures) {
  std::vector<Mat<double>> s(1, Mat<double>(1, 4));
  std::vector<Mat<double>> t(1, Mat<double>(1, 4));
  Mat<double> center(1, 4);
  EXPECT_THROW(dino_loss<double>(s, t, center, 0.0, 0.04), std::invalid_argument);
  EXPECT_THROW(dino_loss<double>(s, t, center, 0.1, -1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Projection head properties
// ---------------------------------------------------------------------------
TEST(DinoProject, IdenticalTokensIdenticalLogits) {
  ModelConfig cfg = head_config();
  auto head = init_dino_head<float>(cfg, 10);
  Mat<float> x(2, cfg.enc_width);
  Rng rng = Rng::from_seed(11);
  for (int j = 0; j < cfg.enc_width; ++j) x[0][j] = x[1][j] = float(rng.next_unit());
  Mat<float> logits = dino_project<float>(x, head);
  for (int j = 0; j < logits.cols; ++j) EXPECT_FLOAT_EQ(logits[0][j], logits[1][j]);
}

TEST(DinoProject, BottleneckUnitNorm) {
  ModelConfig cfg = head_config();
  auto head = init_dino_head<double>(cfg, 12);
  Mat<double> x(3, cfg.enc_width);
  Rng rng = Rng::from_seed(13);
  for (auto& v : x.v) v = rng.next_unit() * 2 - 1;
  DinoHeadTrace<double> trace;
  dino_project<double>(x, head, &trace);
  for (int i = 0; i < trace.z.rows; ++i) {
    double norm = 0.0;
    for (int j = 0; j < trace.z.cols; ++j) norm += trace.z[i][j] * trace.z[i][j];
    EXPECT_NEAR(std::sqrt(norm), 1.0, 1e-6);
  }
}

TEST(DinoProject, FiniteForLargeInputs) {
  ModelConfig cfg = head_config();
  auto head = init_dino_head<float>(cfg, 14);
  Mat<float> x(1, cfg.enc_width);
  Rng rng = Rng::from_seed(15);
  for (auto& v : x.v) v = float((rng.next_unit() * 2 - 1) * 1e3);
  Mat<float> logits = dino_project<float>(x, head);
  EXPECT_TRUE(all_finite(logits));
  // weight-normalized prototypes against a unit bottleneck bound the logits
  for (float v : logits.v) EXPECT_LE(std::abs(v), 1.0f + 1e-5f);
}

// ---------------------------------------------------------------------------
// EMA teacher and center updates
// ---------------------------------------------------------------------------
TEST(EmaUpdate, FixedPointWhenEqual) {
  ModelConfig cfg = head_config();
  TeacherState<double> teacher;
  auto student = init_params<double>(cfg, 16);
  auto student_head = init_dino_head<double>(cfg, 16);
  teacher.params = student;
  teacher.head = student_head;
  teacher.center = Mat<double>(1, cfg.dino_prototypes);
  ema_update(teacher, student, student_head);
  auto tp = tensor_ptrs(teacher.params);
  auto sp = tensor_ptrs(student);
  for (size_t i = 0; i < tp.size(); ++i)
    for (size_t j = 0; j < tp[i]->v.size(); ++j) EXPECT_DOUBLE_EQ(tp[i]->v[j], sp[i]->v[j]);
}

TEST(EmaUpdate, PaperMomentumValue) {
  ModelConfig cfg = head_config();
  TeacherState<double> teacher;
  auto student = init_params<double>(cfg, 17);
  auto student_head = init_dino_head<double>(cfg, 17);
  teacher.params = student;
  teacher.head = student_head;
  teacher.center = Mat<double>(1, cfg.dino_prototypes);
  teacher.momentum = 0.996;
  teacher.params.patch_proj_w.fill(1.0);
  Params<double> zero_student = student;
  for (auto* m : tensor_ptrs(zero_student)) m->zero();
  DinoHeadParams<double> zero_head = student_head;
  for (auto* m : tensor_ptrs(zero_head)) m->zero();
  ema_update(teacher, zero_student, zero_head);
  EXPECT_DOUBLE_EQ(teacher.params.patch_proj_w.v[0], 0.996);
}

TEST(EmaUpdate, GeometricConvergence) {
  // |t_n - s| = m^n |t_0 - s| over 500 steps, to 1e-10
  const double m = 0.996;
  ModelConfig cfg = head_config();
  TeacherState<double> teacher;
  auto student = init_params<double>(cfg, 18);
  auto student_head = init_dino_head<double>(cfg, 18);
  for (auto* mat : tensor_ptrs(student)) mat->fill(0.0);
  for (auto* mat : tensor_ptrs(student_head)) mat->fill(0.0);
  teacher.params = student;
  teacher.head = student_head;
  for (auto* mat : tensor_ptrs(teacher.params)) mat->fill(1.0);
  teacher.center = Mat<double>(1, cfg.dino_prototypes);
  teacher.momentum = m;
  for (int n = 1; n <= 500; ++n) {
    ema_update(teacher, student, student_head);
    const double expected = std::pow(m, n);
    EXPECT_NEAR(std::abs(teacher.params.patch_proj_w.v[0]), expected, 1e-10);
  }
}

TEST(EmaUpdate, RejectsShapeMismatch) {
  ModelConfig cfg = head_config();
  TeacherState<double> teacher;
  teacher.params = init_params<double>(cfg, 19);
  teacher.head = init_dino_head<double>(cfg, 19);
  teacher.center = Mat<double>(1, cfg.dino_prototypes);
  ModelConfig other = cfg;
  other.enc_width = 32;
  auto student = init_params<double>(other, 19);
  auto student_head = init_dino_head<double>(other, 19);
  EXPECT_THROW(ema_update(teacher, student, student_head), std::invalid_argument);
}

TEST(CenterUpdate, FixedPoint) {
  const int K = 8;
  Mat<double> center(1, K, 0.25);
  std::vector<Mat<double>> logits(2, Mat<double>(3, K, 0.25));
  center_update(center, logits, 0.9);
  for (double v : center.v) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(CenterUpdate, ArithmeticExample) {
  const int K = 4;
  Mat<double> center(1, K, 0.0);
  std::vector<Mat<double>> logits(2, Mat<double>(2, K, 1.0));
  center_update(center, logits, 0.9);
  for (double v : center.v) EXPECT_NEAR(v, 0.1, 1e-15);
}

TEST(CenterUpdate, GeometricConvergenceToConstantStream) {
  const int K = 4;
  Mat<double> center(1, K, 0.0);
  std::vector<Mat<double>> logits(2, Mat<double>(2, K, 1.0));
  double expected_gap = 1.0;
  for (int n = 0; n < 500; ++n) {
    center_update(center, logits, 0.9);
    expected_gap *= 0.9;
    EXPECT_NEAR(center.v[0], 1.0 - expected_gap, 1e-10);
  }
}

TEST(CenterUpdate, RejectsEmptyBatch) {
  Mat<double> center(1, 4, 0.0);
  std::vector<Mat<double>> logits;
  EXPECT_THROW(center_update(center, logits, 0.9), std::invalid_argument);
}
