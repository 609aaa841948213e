#pragma once

#include <cmath>
#include <cstdint>

#include <json.hpp>

#include "gaia/common.hpp"

namespace gaia {

// Piecewise-linear DINO weight: 1 during warm-up, linear ramp to lambda_star
// over the transition, then constant.
inline double lambda_schedule(int epoch, int warmup_epochs, int transition_epochs,
                              double lambda_star) {
  check(epoch >= 0, "lambda_schedule: epoch must be >= 0");
  check(warmup_epochs >= 0, "lambda_schedule: E_w must be >= 0");
  check(transition_epochs >= 1, "lambda_schedule: E_p must be >= 1");
  check(lambda_star >= 0.0 && lambda_star <= 1.0, "lambda_schedule: lambda_star in [0,1]");
  if (epoch < warmup_epochs) return 1.0;
  if (epoch < warmup_epochs + transition_epochs)
    return 1.0 - (double(epoch - warmup_epochs) / double(transition_epochs)) * (1.0 - lambda_star);
  return lambda_star;
}

// Linear warm-up to base_lr, then cosine decay to 0 at total_steps.
inline double cosine_lr(int64_t step, int64_t total_steps, double base_lr,
                        int64_t warmup_steps = 0) {
  check(step >= 0 && step <= total_steps, "cosine_lr: step out of range");
  check(warmup_steps >= 0 && warmup_steps <= total_steps, "cosine_lr: bad warmup");
  if (step < warmup_steps) return base_lr * double(step) / double(warmup_steps);
  const int64_t denom = std::max<int64_t>(1, total_steps - warmup_steps);
  const double progress = double(step - warmup_steps) / double(denom);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// ---------------------------------------------------------------------------
// Training schedule / hyperparameters
// ---------------------------------------------------------------------------
struct TrainSchedule {
  int warmup_epochs = 5;       // E_w, DINO-only phase
  int transition_epochs = 20;  // E_p
  double lambda_star = 0.5;    // final DINO weight (unreported upstream)
  int total_epochs = 30;
  double base_lr = 5e-4;
  int64_t lr_warmup_steps = 0;
  double weight_decay = 0.05;
  int batch_size = 4;
  uint64_t seed = 0;

  double teacher_mask_ratio = 0.25;
  double student_mask_ratio = 0.75;
  double teacher_momentum = 0.996;
  double teacher_momentum_final = 0.996;  // != initial enables a cosine ramp
  double center_momentum = 0.9;
  bool center_momentum_is_retention = true;  // flip if 0.9 meant (1 - retention)
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double teacher_temp_warmup_start = 0.04;  // ramps linearly over E_w epochs

  void validate() const {
    check(warmup_epochs >= 0, "TrainSchedule: E_w >= 0");
    check(transition_epochs >= 1, "TrainSchedule: E_p >= 1");
    check(lambda_star >= 0.0 && lambda_star <= 1.0, "TrainSchedule: lambda_star in [0,1]");
    check(total_epochs >= 0, "TrainSchedule: total_epochs >= 0");
    check(base_lr > 0.0, "TrainSchedule: base_lr > 0");
    check(batch_size >= 1, "TrainSchedule: batch_size >= 1");
    check(teacher_mask_ratio >= 0.0 && teacher_mask_ratio < 1.0, "TrainSchedule: teacher ratio");
    check(student_mask_ratio >= 0.0 && student_mask_ratio < 1.0, "TrainSchedule: student ratio");
    check(teacher_momentum > 0.0 && teacher_momentum < 1.0, "TrainSchedule: teacher momentum");
    check(center_momentum > 0.0 && center_momentum < 1.0, "TrainSchedule: center momentum");
    check(student_temp > 0.0 && teacher_temp > 0.0, "TrainSchedule: temperatures > 0");
    check(weight_decay >= 0.0, "TrainSchedule: weight_decay >= 0");
  }

  double lambda_at(int epoch) const {
    return lambda_schedule(epoch, warmup_epochs, transition_epochs, lambda_star);
  }

  // Effective EMA retention of the center update.
  double center_retention() const {
    return center_momentum_is_retention ? center_momentum : 1.0 - center_momentum;
  }

  double teacher_momentum_at(int epoch) const {
    if (teacher_momentum_final == teacher_momentum || total_epochs <= 1)
      return teacher_momentum;
    const double progress = std::min(1.0, double(epoch) / double(total_epochs - 1));
    return teacher_momentum_final +
           (teacher_momentum - teacher_momentum_final) * 0.5 * (1.0 + std::cos(M_PI * progress));
  }

  double teacher_temp_at(int epoch) const {
    if (warmup_epochs <= 0 || epoch >= warmup_epochs) return teacher_temp;
    return teacher_temp_warmup_start +
           (teacher_temp - teacher_temp_warmup_start) * double(epoch) / double(warmup_epochs);
  }
};

inline nlohmann::json to_json(const TrainSchedule& s) {
  return {{"warmup_epochs", s.warmup_epochs},
          {"transition_epochs", s.transition_epochs},
          {"lambda_star", s.lambda_star},
          {"total_epochs", s.total_epochs},
          {"base_lr", s.base_lr},
          {"lr_warmup_steps", s.lr_warmup_steps},
          {"weight_decay", s.weight_decay},
          {"batch_size", s.batch_size},
          {"seed", s.seed},
          {"teacher_mask_ratio", s.teacher_mask_ratio},
          {"student_mask_ratio", s.student_mask_ratio},
          {"teacher_momentum", s.teacher_momentum},
          {"teacher_momentum_final", s.teacher_momentum_final},
          {"center_momentum", s.center_momentum},
          {"center_momentum_is_retention", s.center_momentum_is_retention},
          {"student_temp", s.student_temp},
          {"teacher_temp", s.teacher_temp},
          {"teacher_temp_warmup_start", s.teacher_temp_warmup_start}};
}

inline TrainSchedule train_schedule_from_json(const nlohmann::json& j) {
  TrainSchedule s;
  s.warmup_epochs = j.value("warmup_epochs", s.warmup_epochs);
  s.transition_epochs = j.value("transition_epochs", s.transition_epochs);
  s.lambda_star = j.value("lambda_star", s.lambda_star);
  s.total_epochs = j.value("total_epochs", s.total_epochs);
  s.base_lr = j.value("base_lr", s.base_lr);
  s.lr_warmup_steps = j.value("lr_warmup_steps", s.lr_warmup_steps);
  s.weight_decay = j.value("weight_decay", s.weight_decay);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.teacher_mask_ratio = j.value("teacher_mask_ratio", s.teacher_mask_ratio);
  s.student_mask_ratio = j.value("student_mask_ratio", s.student_mask_ratio);
  s.teacher_momentum = j.value("teacher_momentum", s.teacher_momentum);
  s.teacher_momentum_final = j.value("teacher_momentum_final", s.teacher_momentum);
  s.center_momentum = j.value("center_momentum", s.center_momentum);
  s.center_momentum_is_retention =
      j.value("center_momentum_is_retention", s.center_momentum_is_retention);
  s.student_temp = j.value("student_temp", s.student_temp);
  s.teacher_temp = j.value("teacher_temp", s.teacher_temp);
  s.teacher_temp_warmup_start = j.value("teacher_temp_warmup_start", s.teacher_temp_warmup_start);
  s.validate();
  return s;
}

}  // namespace gaia
