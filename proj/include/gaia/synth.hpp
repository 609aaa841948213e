#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gaia/common.hpp"
#include "gaia/field.hpp"
#include "gaia/metrics.hpp"
#include "gaia/rng.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Desk-scale stand-in for the satellite archive: spatially smooth Gaussian
// random fields advected over time, with missing-data blobs and scanline
// dropouts.
// ---------------------------------------------------------------------------
struct SyntheticConfig {
  int height = 64;
  int width = 192;
  int n_timesteps = 16;
  double correlation_length = 6.0;  // pixels
  int advect_dy = 0;
  int advect_dx = 2;                // pixels per step, periodic wrap
  double innovation = 0.05;         // per-step noise fraction (0 = pure shift)
  double missing_fraction = 0.075;  // post-fill average from the source data
  uint64_t seed = 0;
  int64_t t0_minutes = 0;
  int64_t dt_minutes = 30;
  std::string grid_id = "synth";

  void validate() const {
    check(height >= 1 && width >= 1, "SyntheticConfig: empty grid");
    check(n_timesteps >= 1, "SyntheticConfig: n_timesteps >= 1");
    check(correlation_length >= 1.0, "SyntheticConfig: correlation_length >= 1");
    check(missing_fraction >= 0.0 && missing_fraction < 1.0,
          "SyntheticConfig: missing_fraction in [0,1)");
    check(innovation >= 0.0, "SyntheticConfig: innovation >= 0");
  }
};

namespace detail {

// Separable periodic Gaussian smoothing.
inline MatD gaussian_smooth_periodic(const MatD& src, double sigma) {
  const int hw = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(size_t(2 * hw + 1));
  double sum = 0.0;
  for (int i = -hw; i <= hw; ++i) {
    kernel[size_t(i + hw)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[size_t(i + hw)];
  }
  for (auto& k : kernel) k /= sum;

  MatD tmp(src.rows, src.cols);
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) {
      double acc = 0.0;
      for (int i = -hw; i <= hw; ++i) {
        const int cc = ((c + i) % src.cols + src.cols) % src.cols;
        acc += kernel[size_t(i + hw)] * src.at(r, cc);
      }
      tmp.at(r, c) = acc;
    }
  MatD dst(src.rows, src.cols);
  for (int r = 0; r < src.rows; ++r)
    for (int c = 0; c < src.cols; ++c) {
      double acc = 0.0;
      for (int i = -hw; i <= hw; ++i) {
        const int rr = ((r + i) % src.rows + src.rows) % src.rows;
        acc += kernel[size_t(i + hw)] * tmp.at(rr, c);
      }
      dst.at(r, c) = acc;
    }
  return dst;
}

inline MatD smooth_noise(int h, int w, double sigma, Rng rng) {
  MatD noise(h, w);
  for (auto& x : noise.v) x = rng.next_normal();
  return gaussian_smooth_periodic(noise, sigma);
}

inline MatD shift_periodic(const MatD& src, int dy, int dx) {
  MatD dst(src.rows, src.cols);
  for (int r = 0; r < src.rows; ++r) {
    const int sr = ((r - dy) % src.rows + src.rows) % src.rows;
    for (int c = 0; c < src.cols; ++c) {
      const int sc = ((c - dx) % src.cols + src.cols) % src.cols;
      dst.at(r, c) = src.at(sr, sc);
    }
  }
  return dst;
}

// Missing mask = scanline dropouts (~30% of the budget) + blobs from the
// superlevel set of a smoothed noise field. Hits the pixel budget exactly.
inline MaskGrid missing_mask(int h, int w, double fraction, Rng rng) {
  MaskGrid mask(h, w, 0);
  const int64_t budget = std::llround(fraction * double(h) * double(w));
  if (budget <= 0) return mask;

  int64_t dropped = 0;
  const int64_t scan_budget = budget * 3 / 10;
  Rng scan_rng = rng.split("scanlines");
  while (dropped < scan_budget) {
    const int row = int(scan_rng.next_below(uint64_t(h)));
    const int len = std::min<int64_t>(w, std::max<int64_t>(8, int64_t(scan_rng.next_below(uint64_t(w)))));
    const int start = int(scan_rng.next_below(uint64_t(w)));
    for (int j = 0; j < len && dropped < scan_budget; ++j) {
      const int c = (start + j) % w;
      if (!mask.at(row, c)) {
        mask.at(row, c) = 1;
        ++dropped;
      }
    }
  }

  MatD blob = smooth_noise(h, w, 4.0, rng.split("blobs"));
  std::vector<int> order(size_t(h) * size_t(w));
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return blob.v[size_t(a)] > blob.v[size_t(b)]; });
  for (int idx : order) {
    if (dropped >= budget) break;
    if (!mask.v[size_t(idx)]) {
      mask.v[size_t(idx)] = 1;
      ++dropped;
    }
  }
  return mask;
}

}  // namespace detail

// Deterministic per (seed, frame index): the latent field is a smoothed noise
// image advected by (dy, dx) per step, with optional innovation noise, then
// min-max normalized to [0,1] per frame.
inline std::vector<Field> synth_sequence(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng root = Rng::from_seed(cfg.seed);
  std::vector<MatD> latents;
  latents.reserve(size_t(cfg.n_timesteps));
  latents.push_back(
      detail::smooth_noise(cfg.height, cfg.width, cfg.correlation_length, root.split("latent0")));
  for (int t = 1; t < cfg.n_timesteps; ++t) {
    MatD next = detail::shift_periodic(latents.back(), cfg.advect_dy, cfg.advect_dx);
    if (cfg.innovation > 0.0) {
      MatD innov = detail::smooth_noise(cfg.height, cfg.width, cfg.correlation_length,
                                        root.split("innovation").split(uint64_t(t)));
      for (size_t i = 0; i < next.v.size(); ++i) next.v[i] += cfg.innovation * innov.v[i];
    }
    latents.push_back(std::move(next));
  }

  std::vector<Field> frames;
  frames.reserve(latents.size());
  for (int t = 0; t < cfg.n_timesteps; ++t) {
    const MatD& lat = latents[size_t(t)];
    const auto [mn_it, mx_it] = std::minmax_element(lat.v.begin(), lat.v.end());
    const double mn = *mn_it, mx = *mx_it;
    const double span = mx > mn ? mx - mn : 1.0;
    Field f = Field::make(cfg.height, cfg.width);
    f.timestamp = cfg.t0_minutes + int64_t(t) * cfg.dt_minutes;
    f.grid_id = cfg.grid_id;
    f.normalization = NormalizationSpec{};
    for (size_t i = 0; i < lat.v.size(); ++i)
      f.values.v[i] = float((lat.v[i] - mn) / span);
    if (cfg.missing_fraction > 0.0) {
      f.missing = detail::missing_mask(cfg.height, cfg.width, cfg.missing_fraction,
                                       root.split("missing").split(uint64_t(t)));
      for (size_t i = 0; i < f.missing.v.size(); ++i)
        if (f.missing.v[i]) f.values.v[i] = 0.0f;
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Synthetic downstream labels
// ---------------------------------------------------------------------------

// Precipitation: monotone decreasing map of the value field (cold = wet) with
// multiplicative noise, in mm/hr. The warmest observed pixel always maps to 0.
inline Field synth_precip_label(const Field& frame, uint64_t seed) {
  frame.validate_shape();
  Rng rng = Rng::from_seed(seed).split("precip").split(uint64_t(frame.timestamp));
  std::vector<float> observed;
  for (int r = 0; r < frame.height(); ++r)
    for (int c = 0; c < frame.width(); ++c)
      if (frame.observed(r, c)) observed.push_back(frame.values.at(r, c));
  Field label = Field::make(frame.height(), frame.width());
  label.timestamp = frame.timestamp;
  label.grid_id = frame.grid_id;
  if (observed.empty()) {
    label.missing.fill(1);
    return label;
  }
  std::sort(observed.begin(), observed.end());
  const double theta = observed[size_t(0.3 * double(observed.size() - 1))];
  MatD noise = detail::smooth_noise(frame.height(), frame.width(), 3.0, rng);
  for (int r = 0; r < frame.height(); ++r) {
    for (int c = 0; c < frame.width(); ++c) {
      if (!frame.observed(r, c)) {
        label.missing.at(r, c) = 1;
        continue;
      }
      const double v = frame.values.at(r, c);
      const double cold = std::max(0.0, (theta - v) / std::max(theta, 1e-6));
      const double wobble = std::clamp(1.0 + 0.2 * noise.at(r, c), 0.5, 1.5);
      label.values.at(r, c) = float(20.0 * std::pow(cold, 1.5) * wobble);
    }
  }
  return label;
}

// Atmospheric-river style mask: elongated filaments from an anisotropically
// smoothed gradient magnitude, thresholded by rank to land the positive
// fraction inside [lo, hi].
inline Field synth_ar_label(const Field& frame, uint64_t seed, double lo = 0.03,
                            double hi = 0.15) {
  frame.validate_shape();
  check(0.0 < lo && lo < hi && hi < 1.0, "synth_ar_label: bad fraction band");
  Rng rng = Rng::from_seed(seed).split("ar").split(uint64_t(frame.timestamp));
  const int h = frame.height(), w = frame.width();
  MatD grad(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int rp = (r + 1) % h, rm = (r - 1 + h) % h;
      const int cp = (c + 1) % w, cm = (c - 1 + w) % w;
      const double gy = 0.5 * (frame.values.at(rp, c) - frame.values.at(rm, c));
      const double gx = 0.5 * (frame.values.at(r, cp) - frame.values.at(r, cm));
      grad.at(r, c) = std::sqrt(gx * gx + gy * gy);
    }
  }
  // Long smoothing along x, short along y, to elongate filaments.
  MatD tmp(h, w);
  {
    const double sx = 8.0, sy = 1.5;
    const int hx = int(std::ceil(3 * sx)), hy = int(std::ceil(3 * sy));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        double acc = 0.0, norm = 0.0;
        for (int i = -hx; i <= hx; ++i) {
          const double k = std::exp(-0.5 * i * i / (sx * sx));
          acc += k * grad.at(r, ((c + i) % w + w) % w);
          norm += k;
        }
        tmp.at(r, c) = acc / norm;
      }
    for (int c = 0; c < w; ++c)
      for (int r = 0; r < h; ++r) {
        double acc = 0.0, norm = 0.0;
        for (int i = -hy; i <= hy; ++i) {
          const double k = std::exp(-0.5 * i * i / (sy * sy));
          acc += k * tmp.at(((r + i) % h + h) % h, c);
          norm += k;
        }
        grad.at(r, c) = acc / norm;
      }
  }
  const double target = lo + (hi - lo) * (0.25 + 0.5 * rng.next_unit());
  std::vector<int> order(size_t(h) * size_t(w));
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return grad.v[size_t(a)] > grad.v[size_t(b)]; });
  Field label = Field::make(h, w);
  label.timestamp = frame.timestamp;
  label.grid_id = frame.grid_id;
  label.missing = frame.missing;
  const int positives = int(std::lround(target * double(h) * double(w)));
  for (int i = 0; i < positives; ++i) label.values.v[size_t(order[size_t(i)])] = 1.0f;
  return label;
}

// Synthetic cyclone tracks: drifting centers with fixed radius, boxes sized
// 2*radius, per-frame disc masks. radius 0 yields a 1-pixel box and no mask.
struct SynthTrackOptions {
  int n_tracks = 2;
  double min_radius = 4.0;
  double max_radius = 9.0;
};

struct SynthTcLabels {
  std::vector<TrackRecord> tracks;
  std::vector<Field> disc_masks;  // one per frame, union of track discs
};

inline SynthTcLabels synth_tc_labels(const std::vector<Field>& frames, uint64_t seed,
                                     const SynthTrackOptions& opt = {}) {
  check(!frames.empty(), "synth_tc_labels: no frames");
  const int h = frames[0].height(), w = frames[0].width();
  const int n = int(frames.size());
  Rng rng = Rng::from_seed(seed).split("tc");

  SynthTcLabels out;
  out.disc_masks.reserve(size_t(n));
  for (const Field& f : frames) {
    Field m = Field::make(h, w);
    m.timestamp = f.timestamp;
    m.grid_id = f.grid_id;
    out.disc_masks.push_back(std::move(m));
  }

  for (int k = 0; k < opt.n_tracks; ++k) {
    Rng trng = rng.split(uint64_t(k));
    TrackRecord tr;
    tr.storm_id = "tc" + std::to_string(k);
    const int dur = std::max(1, n / 4 + int(trng.next_below(uint64_t(std::max(1, n / 4)))));
    const int start = int(trng.next_below(uint64_t(std::max(1, n - dur + 1))));
    double cy = 4.0 + trng.next_unit() * (h - 8);
    double cx = 4.0 + trng.next_unit() * (w - 8);
    const double vy = (trng.next_unit() - 0.5) * 2.0;
    const double vx = (trng.next_unit() - 0.5) * 3.0;
    const double radius =
        opt.min_radius + trng.next_unit() * std::max(0.0, opt.max_radius - opt.min_radius);
    for (int t = start; t < std::min(n, start + dur); ++t) {
      const double y = std::clamp(cy + vy * (t - start), 0.0, double(h - 1));
      const double x = std::clamp(cx + vx * (t - start), 0.0, double(w - 1));
      Box box;
      if (radius <= 0.0) {
        box = Box{std::floor(y), std::floor(x), std::floor(y) + 1.0, std::floor(x) + 1.0};
      } else {
        box = Box{std::max(0.0, y - radius), std::max(0.0, x - radius),
                  std::min(double(h), y + radius), std::min(double(w), x + radius)};
      }
      tr.boxes.push_back(TrackBox{frames[size_t(t)].timestamp, box});
      if (radius > 0.0) {
        Field& mask = out.disc_masks[size_t(t)];
        for (int r = std::max(0, int(y - radius)); r <= std::min(h - 1, int(y + radius)); ++r)
          for (int c = std::max(0, int(x - radius)); c <= std::min(w - 1, int(x + radius)); ++c)
            if ((r - y) * (r - y) + (c - x) * (c - x) <= radius * radius)
              mask.values.at(r, c) = 1.0f;
      }
    }
    if (!tr.boxes.empty()) {
      tr.first_label_time = tr.boxes.front().t;
      out.tracks.push_back(std::move(tr));
    }
  }
  return out;
}

}  // namespace gaia
