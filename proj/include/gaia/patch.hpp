#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaia/common.hpp"
#include "gaia/field.hpp"
#include "gaia/rng.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Patchified representation of a Field: either flattened pixel patches
// (d = patch_h*patch_w) or embedding rows (d = token width).
// ---------------------------------------------------------------------------
struct PatchGrid {
  MatF data;  // n_patches x d, row k = patch (k / grid_w, k % grid_w)
  int grid_h = 0;
  int grid_w = 0;
  int patch_h = 0;
  int patch_w = 0;

  int n_patches() const { return grid_h * grid_w; }
};

enum class MaskFamily { random, stripes_v, stripes_h, missing, sweep };

inline std::string to_string(MaskFamily f) {
  switch (f) {
    case MaskFamily::random: return "random";
    case MaskFamily::stripes_v: return "stripes_v";
    case MaskFamily::stripes_h: return "stripes_h";
    case MaskFamily::missing: return "missing";
    case MaskFamily::sweep: return "sweep";
  }
  return "random";
}

inline MaskFamily mask_family_from_string(const std::string& s) {
  if (s == "random") return MaskFamily::random;
  if (s == "stripes_v") return MaskFamily::stripes_v;
  if (s == "stripes_h") return MaskFamily::stripes_h;
  if (s == "missing") return MaskFamily::missing;
  if (s == "sweep") return MaskFamily::sweep;
  check(false, "unknown mask family '", s, "'");
  return MaskFamily::random;
}

// Per-patch visibility partition. hidden[k] = 1 means patch k is masked out.
struct MaskSpec {
  std::vector<uint8_t> hidden;
  double ratio = 0.0;  // requested (random) or achieved (structured) fraction
  MaskFamily family = MaskFamily::random;

  int n_patches() const { return int(hidden.size()); }
  int hidden_count() const {
    int n = 0;
    for (uint8_t h : hidden) n += h ? 1 : 0;
    return n;
  }
  int visible_count() const { return n_patches() - hidden_count(); }
};

// ---------------------------------------------------------------------------
// patchify / unpatchify
// ---------------------------------------------------------------------------
inline std::pair<PatchGrid, MaskGrid> patchify(const Field& field, int patch_h, int patch_w) {
  field.validate_shape();
  check(patch_h >= 1 && patch_w >= 1, "patchify: patch dims must be positive");
  check(field.height() % patch_h == 0 && field.width() % patch_w == 0,
        "patchify: field ", field.height(), "x", field.width(), " not divisible by patch ",
        patch_h, "x", patch_w);
  PatchGrid grid;
  grid.grid_h = field.height() / patch_h;
  grid.grid_w = field.width() / patch_w;
  grid.patch_h = patch_h;
  grid.patch_w = patch_w;
  const int dim = patch_h * patch_w;
  grid.data = MatF(grid.n_patches(), dim);
  MaskGrid patch_missing(grid.n_patches(), dim, 0);
  for (int k = 0; k < grid.n_patches(); ++k) {
    const int r0 = (k / grid.grid_w) * patch_h;
    const int c0 = (k % grid.grid_w) * patch_w;
    for (int i = 0; i < patch_h; ++i) {
      for (int j = 0; j < patch_w; ++j) {
        grid.data.at(k, i * patch_w + j) = field.values.at(r0 + i, c0 + j);
        patch_missing.at(k, i * patch_w + j) = field.missing.at(r0 + i, c0 + j);
      }
    }
  }
  return {std::move(grid), std::move(patch_missing)};
}

inline Field unpatchify(const PatchGrid& grid) {
  check(grid.patch_h >= 1 && grid.patch_w >= 1, "unpatchify: pixel patches required");
  check(grid.data.rows == grid.n_patches(), "unpatchify: row count mismatch");
  check(grid.data.cols == grid.patch_h * grid.patch_w, "unpatchify: patch dim mismatch");
  Field out = Field::make(grid.grid_h * grid.patch_h, grid.grid_w * grid.patch_w);
  for (int k = 0; k < grid.n_patches(); ++k) {
    const int r0 = (k / grid.grid_w) * grid.patch_h;
    const int c0 = (k % grid.grid_w) * grid.patch_w;
    for (int i = 0; i < grid.patch_h; ++i)
      for (int j = 0; j < grid.patch_w; ++j)
        out.values.at(r0 + i, c0 + j) = grid.data.at(k, i * grid.patch_w + j);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fixed 2-D sinusoidal positional embedding. Half the width encodes the row
// index, half the column index, each as interleaved sin/cos pairs on the
// standard geometric frequency ladder.
// ---------------------------------------------------------------------------
template <class T = float>
Mat<T> positional_embedding(int grid_h, int grid_w, int width) {
  check(width >= 4 && width % 4 == 0, "positional_embedding: width must be divisible by 4");
  const int half = width / 2;
  const int n_freq = half / 2;
  Mat<T> emb(grid_h * grid_w, width);
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      T* row = emb[r * grid_w + c];
      for (int i = 0; i < n_freq; ++i) {
        const double omega = std::pow(10000.0, -2.0 * i / double(half));
        row[2 * i] = T(std::sin(r * omega));
        row[2 * i + 1] = T(std::cos(r * omega));
        row[half + 2 * i] = T(std::sin(c * omega));
        row[half + 2 * i + 1] = T(std::cos(c * omega));
      }
    }
  }
  return emb;
}

// ---------------------------------------------------------------------------
// Mask sampling
// ---------------------------------------------------------------------------

// Patches forced hidden because more than half their pixels are missing.
inline std::vector<uint8_t> missing_forced_hidden(const MaskGrid& patch_missing) {
  std::vector<uint8_t> forced(size_t(patch_missing.rows), 0);
  for (int k = 0; k < patch_missing.rows; ++k) {
    int miss = 0;
    for (int j = 0; j < patch_missing.cols; ++j) miss += patch_missing.at(k, j) ? 1 : 0;
    forced[size_t(k)] = (2 * miss > patch_missing.cols) ? 1 : 0;
  }
  return forced;
}

// Uniform random mask. Total hidden count = max(round(ratio*n), #forced);
// forced patches are always hidden, the rest drawn uniformly without
// replacement from the non-forced patches.
inline MaskSpec sample_mask(int n_patches, double ratio, Rng& rng,
                            const std::vector<uint8_t>* forced_hidden = nullptr) {
  check(n_patches >= 1, "sample_mask: need at least one patch");
  check(ratio >= 0.0 && ratio < 1.0, "sample_mask: ratio must be in [0,1), got ", ratio);
  MaskSpec spec;
  spec.family = MaskFamily::random;
  spec.ratio = ratio;
  spec.hidden.assign(size_t(n_patches), 0);

  int n_forced = 0;
  if (forced_hidden) {
    check(int(forced_hidden->size()) == n_patches, "sample_mask: forced mask size mismatch");
    for (int k = 0; k < n_patches; ++k) {
      if ((*forced_hidden)[size_t(k)]) {
        spec.hidden[size_t(k)] = 1;
        ++n_forced;
      }
    }
  }
  const int target = std::max(int(std::lround(ratio * n_patches)), n_forced);
  if (target > n_forced) {
    std::vector<int> candidates;
    candidates.reserve(size_t(n_patches - n_forced));
    for (int k = 0; k < n_patches; ++k)
      if (!spec.hidden[size_t(k)]) candidates.push_back(k);
    std::vector<int> perm = rng.permutation(int(candidates.size()));
    for (int i = 0; i < target - n_forced; ++i) spec.hidden[size_t(candidates[size_t(perm[size_t(i)])])] = 1;
  }
  return spec;
}

// Striped masks. stripes_v hides patch columns c with
// (c - phase) mod period < hidden_width; stripes_h does the same on rows.
inline MaskSpec structured_mask(int grid_h, int grid_w, MaskFamily family, int period,
                                int hidden_width = 1, int phase = 0) {
  check(family == MaskFamily::stripes_v || family == MaskFamily::stripes_h,
        "structured_mask: family must be stripes_v or stripes_h");
  check(period >= 2, "structured_mask: period must be >= 2");
  check(hidden_width >= 0 && hidden_width <= period, "structured_mask: bad hidden_width");
  MaskSpec spec;
  spec.family = family;
  spec.hidden.assign(size_t(grid_h) * size_t(grid_w), 0);
  auto stripe_hit = [&](int idx) {
    const int m = ((idx - phase) % period + period) % period;
    return m < hidden_width;
  };
  for (int r = 0; r < grid_h; ++r)
    for (int c = 0; c < grid_w; ++c)
      if (stripe_hit(family == MaskFamily::stripes_v ? c : r))
        spec.hidden[size_t(r) * size_t(grid_w) + size_t(c)] = 1;
  spec.ratio = double(spec.hidden_count()) / double(grid_h * grid_w);
  return spec;
}

// Procedural stand-in for real missing-data masks: contiguous blobs on the
// patch grid with an exact hidden count of round(ratio*n). Built by ranking a
// smoothed noise field, so the hidden set forms blobby regions.
inline MaskSpec missing_style_mask(int grid_h, int grid_w, double ratio, Rng& rng) {
  check(grid_h >= 1 && grid_w >= 1, "missing_style_mask: empty grid");
  check(ratio >= 0.0 && ratio < 1.0, "missing_style_mask: ratio in [0,1)");
  const int n = grid_h * grid_w;
  MatD noise(grid_h, grid_w);
  for (auto& x : noise.v) x = rng.next_normal();
  // Periodic Gaussian smoothing, sigma ~2 patches, separable.
  const double sigma = 2.0;
  const int hw = int(std::ceil(3 * sigma));
  std::vector<double> kernel(size_t(2 * hw + 1));
  double ksum = 0.0;
  for (int i = -hw; i <= hw; ++i) {
    kernel[size_t(i + hw)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[size_t(i + hw)];
  }
  for (auto& k : kernel) k /= ksum;
  auto smooth_axis = [&](const MatD& src, bool rows_axis) {
    MatD dst(src.rows, src.cols);
    for (int r = 0; r < src.rows; ++r)
      for (int c = 0; c < src.cols; ++c) {
        double acc = 0.0;
        for (int i = -hw; i <= hw; ++i) {
          int rr = r, cc = c;
          if (rows_axis)
            rr = ((r + i) % src.rows + src.rows) % src.rows;
          else
            cc = ((c + i) % src.cols + src.cols) % src.cols;
          acc += kernel[size_t(i + hw)] * src.at(rr, cc);
        }
        dst.at(r, c) = acc;
      }
    return dst;
  };
  noise = smooth_axis(smooth_axis(noise, true), false);

  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return noise.v[size_t(a)] > noise.v[size_t(b)]; });
  MaskSpec spec;
  spec.family = MaskFamily::missing;
  spec.ratio = ratio;
  spec.hidden.assign(size_t(n), 0);
  const int target = int(std::lround(ratio * n));
  for (int i = 0; i < target; ++i) spec.hidden[size_t(order[size_t(i)])] = 1;
  return spec;
}

// ---------------------------------------------------------------------------
// Mask file format: JSON with run-length encoded hidden flags. Runs alternate
// visible/hidden and start with a visible run (possibly length 0).
// ---------------------------------------------------------------------------
inline nlohmann::json mask_to_json(const MaskSpec& spec, int grid_h, int grid_w) {
  check(int(spec.hidden.size()) == grid_h * grid_w, "mask_to_json: grid mismatch");
  std::vector<int> rle;
  uint8_t current = 0;
  int run = 0;
  for (uint8_t h : spec.hidden) {
    if ((h ? 1 : 0) == current) {
      ++run;
    } else {
      rle.push_back(run);
      current = h ? 1 : 0;
      run = 1;
    }
  }
  rle.push_back(run);
  return {{"family", to_string(spec.family)},
          {"ratio", spec.ratio},
          {"grid_h", grid_h},
          {"grid_w", grid_w},
          {"hidden", rle}};
}

inline MaskSpec mask_from_json(const nlohmann::json& j, int* grid_h = nullptr,
                               int* grid_w = nullptr) {
  MaskSpec spec;
  spec.family = mask_family_from_string(j.at("family").get<std::string>());
  spec.ratio = j.at("ratio").get<double>();
  const int gh = j.at("grid_h").get<int>();
  const int gw = j.at("grid_w").get<int>();
  if (grid_h) *grid_h = gh;
  if (grid_w) *grid_w = gw;
  spec.hidden.clear();
  uint8_t current = 0;
  for (int run : j.at("hidden").get<std::vector<int>>()) {
    check(run >= 0, "mask_from_json: negative run");
    spec.hidden.insert(spec.hidden.end(), size_t(run), current);
    current = current ? 0 : 1;
  }
  check(int(spec.hidden.size()) == gh * gw, "mask_from_json: RLE length mismatch");
  return spec;
}

inline void write_mask(const std::string& path, const MaskSpec& spec, int grid_h, int grid_w) {
  std::ofstream os(path);
  check(os.good(), "write_mask: cannot open ", path);
  os << mask_to_json(spec, grid_h, grid_w).dump(2) << "\n";
}

inline MaskSpec read_mask(const std::string& path, int* grid_h = nullptr, int* grid_w = nullptr) {
  std::ifstream is(path);
  check(is.good(), "read_mask: cannot open ", path);
  nlohmann::json j;
  is >> j;
  return mask_from_json(j, grid_h, grid_w);
}

}  // namespace gaia
