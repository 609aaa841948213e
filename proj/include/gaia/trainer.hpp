#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gaia/checkpoint.hpp"
#include "gaia/common.hpp"
#include "gaia/dino.hpp"
#include "gaia/field.hpp"
#include "gaia/mae.hpp"
#include "gaia/optim.hpp"
#include "gaia/patch.hpp"
#include "gaia/schedule.hpp"
#include "gaia/vit.hpp"

namespace gaia {

// One pre-patchified frame: pixel rows plus the per-pixel missing mask.
struct TrainSample {
  MatF pixels;        // n_patches x P
  MaskGrid missing;   // n_patches x P
  int grid_h = 0;
  int grid_w = 0;
  int64_t timestamp = 0;
};

inline TrainSample make_train_sample(const Field& frame, int patch_h, int patch_w) {
  auto [grid, missing] = patchify(frame, patch_h, patch_w);
  TrainSample s;
  s.pixels = std::move(grid.data);
  s.missing = std::move(missing);
  s.grid_h = grid.grid_h;
  s.grid_w = grid.grid_w;
  s.timestamp = frame.timestamp;
  return s;
}

struct LossBreakdown {
  double total = 0.0;
  double dino = 0.0;
  double mae = 0.0;
  double lambda = 1.0;
  double lr = 0.0;
  double teacher_entropy = 0.0;
};

// Optional per-step instrumentation for contract tests.
struct StepDiagnostics {
  std::vector<int> teacher_hidden_counts;  // per (sample, view)
  std::vector<int> student_hidden_counts;
  std::vector<int> forced_counts;          // per sample
  double decoder_grad_norm = 0.0;
  double encoder_grad_norm = 0.0;
  bool collapse_alarm = false;
};

template <class T = float>
struct TrainState {
  ModelConfig model;
  TrainSchedule schedule;
  Params<T> student;
  DinoHeadParams<T> head;
  TeacherState<T> teacher;
  Params<T> opt_m, opt_v;
  DinoHeadParams<T> head_opt_m, head_opt_v;
  int64_t step = 0;
  int epoch = 0;
  int collapse_streak = 0;
};

template <class T = float>
TrainState<T> init_train_state(const ModelConfig& model, const TrainSchedule& schedule) {
  model.validate();
  schedule.validate();
  check(model.use_global_token, "trainer: self-distillation requires the global token");
  TrainState<T> st;
  st.model = model;
  st.schedule = schedule;
  st.student = init_params<T>(model, schedule.seed);
  st.head = init_dino_head<T>(model, schedule.seed);
  st.teacher.params = st.student;
  st.teacher.head = st.head;
  st.teacher.center = Mat<T>(1, model.dino_prototypes);
  st.teacher.momentum = schedule.teacher_momentum;
  st.teacher.center_momentum = schedule.center_retention();
  st.opt_m = zeros_like(st.student);
  st.opt_v = zeros_like(st.student);
  st.head_opt_m = zeros_like(st.head);
  st.head_opt_v = zeros_like(st.head);
  return st;
}

namespace detail {

template <class T>
void dump_nonfinite(const Params<T>& p, std::ostringstream& os) {
  for_each_tensor(p, [&](const std::string& name, const Mat<T>& m, bool) {
    if (!all_finite(m)) os << " " << name;
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// One optimization step of the joint objective.
//
// Per sample: two teacher views at the teacher mask ratio and two student
// views at the student ratio (all unioned with missing-forced patches);
// teacher forward without gradients; DINO loss over all four view pairs; MAE
// reconstruction decoded from student view 1 and scored on its hidden,
// observed pixels pooled over the batch. total = lambda*dino +
// (1-lambda)*mae, one AdamW step, then the EMA teacher and center updates.
// ---------------------------------------------------------------------------
template <class T>
LossBreakdown train_step(TrainState<T>& state, const std::vector<const TrainSample*>& batch,
                         double lr, StepDiagnostics* diag = nullptr) {
  check(!batch.empty(), "train_step: empty batch");
  const TrainSchedule& sched = state.schedule;
  const ModelConfig& cfg = state.model;
  const int B = int(batch.size());
  const int K = cfg.dino_prototypes;
  const double lambda = sched.lambda_at(state.epoch);
  const double tau_t = sched.teacher_temp_at(state.epoch);
  const double tau_s = sched.student_temp;
  const bool need_mae_grad = lambda < 1.0;

  Params<T> grads = zeros_like(state.student);
  DinoHeadParams<T> head_grads = zeros_like(state.head);

  // Per-sample forward state kept for the backward pass.
  struct ViewState {
    MaskSpec mask;
    EncodeTrace<T> enc_trace;
    TokenSet<T> tokens;
    DinoHeadTrace<T> head_trace;
  };
  std::vector<std::array<ViewState, 2>> views(static_cast<size_t>(B));
  std::vector<DecodeTrace<T>> dec_traces(static_cast<size_t>(B));
  std::vector<Mat<T>> dec_preds(static_cast<size_t>(B));
  std::vector<Mat<T>> targets(static_cast<size_t>(B));

  std::vector<Mat<T>> student_logits(2, Mat<T>(B, K));
  std::vector<Mat<T>> teacher_logits(2, Mat<T>(B, K));

  Rng step_rng = Rng::from_seed(sched.seed).split("masks").split(uint64_t(state.step));

  double mae_sse = 0.0;
  int64_t mae_count = 0;

  for (int s = 0; s < B; ++s) {
    const TrainSample& sample = *batch[size_t(s)];
    check(sample.grid_h > 0 && sample.grid_w > 0, "train_step: bad sample grid");
    const int n_patches = sample.grid_h * sample.grid_w;
    check(sample.pixels.rows == n_patches, "train_step: sample patch count");
    const std::vector<uint8_t> forced = missing_forced_hidden(sample.missing);
    int n_forced = 0;
    for (uint8_t f : forced) n_forced += f;
    if (diag) diag->forced_counts.push_back(n_forced);

    Mat<T> pixels = sample.pixels.template cast<T>();
    Rng sample_rng = step_rng.split(uint64_t(s));

    // Teacher views: forward only, no traces.
    for (int u = 0; u < 2; ++u) {
      Rng mask_rng = sample_rng.split("teacher").split(uint64_t(u));
      MaskSpec mask = sample_mask(n_patches, sched.teacher_mask_ratio, mask_rng, &forced);
      if (diag) diag->teacher_hidden_counts.push_back(mask.hidden_count());
      TokenSet<T> tok = encode_pixels<T>(pixels, sample.grid_h, sample.grid_w, mask,
                                         state.teacher.params);
      Mat<T> logits = dino_project<T>(tok.global, state.teacher.head);
      for (int j = 0; j < K; ++j) teacher_logits[size_t(u)][s][j] = logits[0][j];
    }

    // Student views: keep traces for the backward pass.
    for (int w = 0; w < 2; ++w) {
      ViewState& vs = views[size_t(s)][size_t(w)];
      Rng mask_rng = sample_rng.split("student").split(uint64_t(w));
      vs.mask = sample_mask(n_patches, sched.student_mask_ratio, mask_rng, &forced);
      if (diag) diag->student_hidden_counts.push_back(vs.mask.hidden_count());
      vs.tokens = encode_pixels<T>(pixels, sample.grid_h, sample.grid_w, vs.mask, state.student,
                                   &vs.enc_trace);
      Mat<T> logits = dino_project<T>(vs.tokens.global, state.head, &vs.head_trace);
      for (int j = 0; j < K; ++j) student_logits[size_t(w)][s][j] = logits[0][j];
    }

    // Reconstruction from student view 1.
    ViewState& v0 = views[size_t(s)][0];
    dec_preds[size_t(s)] = decode_tokens<T>(v0.tokens.tokens, v0.tokens.visible_index,
                                            sample.grid_h, sample.grid_w, state.student,
                                            &dec_traces[size_t(s)]);
    targets[size_t(s)] = std::move(pixels);
    double sse = 0.0;
    int64_t cnt = 0;
    mae_scored_sums<T>(dec_preds[size_t(s)], targets[size_t(s)], v0.mask, sample.missing, &sse,
                       &cnt);
    mae_sse += sse;
    mae_count += cnt;
  }

  check(mae_count > 0, "train_step: zero scored reconstruction pixels (degenerate batch)");
  const double mae = mae_sse / double(mae_count);

  DinoLossResult<T> dino =
      dino_loss<T>(student_logits, teacher_logits, state.teacher.center, tau_s, tau_t);
  const double total = lambda * dino.loss + (1.0 - lambda) * mae;

  if (!std::isfinite(total)) {
    std::ostringstream os;
    os << "train_step: non-finite loss at step " << state.step << " (dino=" << dino.loss
       << ", mae=" << mae << "); non-finite tensors:";
    detail::dump_nonfinite(state.student, os);
    throw std::runtime_error(os.str());
  }

  // ---- backward ----
  for (int s = 0; s < B; ++s) {
    const TrainSample& sample = *batch[size_t(s)];
    for (int w = 0; w < 2; ++w) {
      ViewState& vs = views[size_t(s)][size_t(w)];
      Mat<T> dlogits(1, K);
      for (int j = 0; j < K; ++j)
        dlogits[0][j] = T(lambda) * dino.dstudent[size_t(w)][s][j];
      Mat<T> dglobal(1, cfg.enc_width);
      dino_project_backward<T>(state.head, vs.head_trace, dlogits, head_grads, dglobal);

      Mat<T> dtokens;  // empty unless the MAE path contributes
      if (w == 0 && need_mae_grad) {
        Mat<T> dpred;
        mae_loss_backward<T>(dec_preds[size_t(s)], targets[size_t(s)], vs.mask, sample.missing,
                             mae_count, T(1.0 - lambda), dpred);
        decode_backward<T>(state.student, dec_traces[size_t(s)], dpred, grads, dtokens);
      }
      encode_backward<T>(state.student, vs.enc_trace, dtokens, dglobal, grads);
    }
  }

  if (diag) {
    double dec_sq = 0.0, enc_sq = 0.0;
    for_each_tensor(grads, [&](const std::string& name, const Mat<T>& m, bool) {
      const double n = double(sq_norm(m));
      if (name.rfind("dec", 0) == 0 || name.rfind("unembed", 0) == 0 ||
          name.rfind("mask_token", 0) == 0)
        dec_sq += n;
      else
        enc_sq += n;
    });
    diag->decoder_grad_norm = std::sqrt(dec_sq);
    diag->encoder_grad_norm = std::sqrt(enc_sq);
  }

  // ---- optimizer ----
  AdamWConfig adamw;
  adamw.weight_decay = sched.weight_decay;
  const int64_t t = state.step + 1;
  {
    auto ps = tensor_ptrs(state.student);
    auto gs = tensor_ptrs(grads);
    auto ms = tensor_ptrs(state.opt_m);
    auto vs = tensor_ptrs(state.opt_v);
    std::vector<bool> decay_flags;
    for_each_tensor(state.student,
                    [&](const std::string&, const Mat<T>&, bool d) { decay_flags.push_back(d); });
    for (size_t i = 0; i < ps.size(); ++i)
      adamw_update(*ps[i], *gs[i], *ms[i], *vs[i], t, lr, adamw, decay_flags[i]);
  }
  {
    auto ps = tensor_ptrs(state.head);
    auto gs = tensor_ptrs(head_grads);
    auto ms = tensor_ptrs(state.head_opt_m);
    auto vs = tensor_ptrs(state.head_opt_v);
    std::vector<bool> decay_flags;
    for_each_tensor(state.head,
                    [&](const std::string&, const Mat<T>&, bool d) { decay_flags.push_back(d); });
    for (size_t i = 0; i < ps.size(); ++i)
      adamw_update(*ps[i], *gs[i], *ms[i], *vs[i], t, lr, adamw, decay_flags[i]);
  }

  // ---- teacher updates (after the student step) ----
  state.teacher.momentum = sched.teacher_momentum_at(state.epoch);
  ema_update(state.teacher, state.student, state.head);
  center_update(state.teacher.center, teacher_logits, state.teacher.center_momentum);

  // Collapse monitor (diagnostic only).
  if (dino.teacher_entropy < 0.1 * std::log(double(K)))
    ++state.collapse_streak;
  else
    state.collapse_streak = 0;
  if (diag) diag->collapse_alarm = state.collapse_streak >= 50;

  ++state.step;

  LossBreakdown out;
  out.total = total;
  out.dino = dino.loss;
  out.mae = mae;
  out.lambda = lambda;
  out.lr = lr;
  out.teacher_entropy = dino.teacher_entropy;
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint packing for the full training state
// ---------------------------------------------------------------------------
inline Checkpoint to_checkpoint(const TrainState<float>& st) {
  Checkpoint ckpt;
  ckpt.model = st.model;
  ckpt.schedule = to_json(st.schedule);
  ckpt.extra = {{"epoch", st.epoch}, {"step", st.step}, {"collapse_streak", st.collapse_streak}};
  pack_tensors(st.student, "student/", ckpt.tensors);
  pack_tensors(st.head, "head/", ckpt.tensors);
  pack_tensors(st.teacher.params, "teacher/", ckpt.tensors);
  pack_tensors(st.teacher.head, "teacher_head/", ckpt.tensors);
  ckpt.tensors["teacher/center"] = st.teacher.center;
  pack_tensors(st.opt_m, "opt_m/", ckpt.tensors);
  pack_tensors(st.opt_v, "opt_v/", ckpt.tensors);
  pack_tensors(st.head_opt_m, "opt_hm/", ckpt.tensors);
  pack_tensors(st.head_opt_v, "opt_hv/", ckpt.tensors);
  return ckpt;
}

inline TrainState<float> train_state_from_checkpoint(const Checkpoint& ckpt) {
  check(ckpt.kind == "pretrain", "resume: checkpoint kind must be pretrain, got ", ckpt.kind);
  TrainSchedule sched = train_schedule_from_json(ckpt.schedule);
  TrainState<float> st = init_train_state<float>(ckpt.model, sched);
  unpack_tensors(st.student, "student/", ckpt.tensors);
  unpack_tensors(st.head, "head/", ckpt.tensors);
  unpack_tensors(st.teacher.params, "teacher/", ckpt.tensors);
  unpack_tensors(st.teacher.head, "teacher_head/", ckpt.tensors);
  auto it = ckpt.tensors.find("teacher/center");
  check(it != ckpt.tensors.end(), "resume: missing center tensor");
  st.teacher.center = it->second;
  unpack_tensors(st.opt_m, "opt_m/", ckpt.tensors);
  unpack_tensors(st.opt_v, "opt_v/", ckpt.tensors);
  unpack_tensors(st.head_opt_m, "opt_hm/", ckpt.tensors);
  unpack_tensors(st.head_opt_v, "opt_hv/", ckpt.tensors);
  st.epoch = ckpt.extra.value("epoch", 0);
  st.step = ckpt.extra.value("step", int64_t(0));
  st.collapse_streak = ckpt.extra.value("collapse_streak", 0);
  return st;
}

// ---------------------------------------------------------------------------
// fit: epoch loop over a shuffled dataset with per-epoch checkpoints and a
// JSON-lines metrics log (one record per step).
// ---------------------------------------------------------------------------
struct FitOptions {
  std::string out_dir;
  std::string resume_from;      // checkpoint path, empty = fresh start
  int max_epochs_this_run = -1; // stop early after this many total epochs (<0: run to schedule end)
};

struct FitResult {
  std::string checkpoint_path;
  std::string metrics_path;
};

inline std::string checkpoint_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_ep%03d.gaia", epoch);
  return buf;
}

inline FitResult fit(const std::vector<TrainSample>& samples, const ModelConfig& model,
                     const TrainSchedule& schedule, const FitOptions& opt) {
  check(!samples.empty(), "fit: empty dataset");
  for (const auto& s : samples)
    check(s.grid_h == samples[0].grid_h && s.grid_w == samples[0].grid_w,
          "fit: frames must share one grid geometry");
  std::filesystem::create_directories(opt.out_dir);
  const std::filesystem::path out(opt.out_dir);

  TrainState<float> state;
  if (!opt.resume_from.empty()) {
    state = train_state_from_checkpoint(load_checkpoint(opt.resume_from));
    check(state.model.patch_dim() == samples[0].pixels.cols, "fit: resume patch dim mismatch");
  } else {
    state = init_train_state<float>(model, schedule);
  }
  const TrainSchedule& sched = state.schedule;

  const int n = int(samples.size());
  const int64_t steps_per_epoch = (n + sched.batch_size - 1) / sched.batch_size;
  const int64_t total_steps = steps_per_epoch * sched.total_epochs;

  FitResult result;
  result.metrics_path = (out / "metrics.jsonl").string();
  std::ofstream metrics(result.metrics_path, std::ios::app);
  check(metrics.good(), "fit: cannot open metrics log");

  std::string last_ckpt = (out / checkpoint_name(state.epoch)).string();
  {
    Checkpoint ckpt = to_checkpoint(state);
    save_checkpoint(last_ckpt, ckpt);
  }

  const int run_until = opt.max_epochs_this_run >= 0
                            ? std::min(sched.total_epochs, opt.max_epochs_this_run)
                            : sched.total_epochs;
  for (; state.epoch < run_until;) {
    Rng shuffle_rng = Rng::from_seed(sched.seed).split("shuffle").split(uint64_t(state.epoch));
    const std::vector<int> perm = shuffle_rng.permutation(n);
    for (int start = 0; start < n; start += sched.batch_size) {
      std::vector<const TrainSample*> batch;
      for (int i = start; i < std::min(n, start + sched.batch_size); ++i)
        batch.push_back(&samples[size_t(perm[size_t(i)])]);
      const double lr =
          cosine_lr(state.step, total_steps, sched.base_lr, sched.lr_warmup_steps);
      const LossBreakdown loss = train_step(state, batch, lr);
      metrics << nlohmann::json({{"step", state.step - 1},
                                 {"epoch", state.epoch},
                                 {"lambda", loss.lambda},
                                 {"lr", loss.lr},
                                 {"dino", loss.dino},
                                 {"mae", loss.mae},
                                 {"total", loss.total},
                                 {"teacher_entropy", loss.teacher_entropy}})
                     .dump()
              << "\n";
    }
    metrics.flush();
    ++state.epoch;
    last_ckpt = (out / checkpoint_name(state.epoch)).string();
    Checkpoint ckpt = to_checkpoint(state);
    save_checkpoint(last_ckpt, ckpt);
  }
  result.checkpoint_path = last_ckpt;
  return result;
}

inline FitResult fit_manifest(const std::vector<ManifestEntry>& manifest,
                              const ModelConfig& model, const TrainSchedule& schedule,
                              const FitOptions& opt) {
  check(!manifest.empty(), "fit: empty manifest");
  std::vector<TrainSample> samples;
  samples.reserve(manifest.size());
  for (const auto& e : manifest)
    samples.push_back(make_train_sample(read_fld(e.path), model.patch_h, model.patch_w));
  return fit(samples, model, schedule, opt);
}

}  // namespace gaia
