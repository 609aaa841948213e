#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaia/common.hpp"

namespace gaia {

// Affine map between kelvin brightness temperature and normalized [0,1] units.
struct NormalizationSpec {
  double t_min = 180.0;
  double t_max = 330.0;

  void validate() const { check(t_min < t_max, "NormalizationSpec: t_min must be < t_max"); }
};

// ---------------------------------------------------------------------------
// A 2-D gridded scalar image with an aligned per-pixel missing mask.
// Missing pixels store 0.0 as a sentinel; the mask is the source of truth and
// no loss or metric ever reads a missing value.
// ---------------------------------------------------------------------------
struct Field {
  MatF values;      // H x W
  MaskGrid missing; // H x W, 1 = unobserved
  int64_t timestamp = 0;        // minutes since epoch
  std::string grid_id = "grid";
  std::optional<NormalizationSpec> normalization;  // set once normalized

  int height() const { return values.rows; }
  int width() const { return values.cols; }

  static Field make(int h, int w, float fill_value = 0.0f) {
    Field f;
    f.values = MatF(h, w, fill_value);
    f.missing = MaskGrid(h, w, 0);
    return f;
  }

  bool observed(int r, int c) const { return missing.at(r, c) == 0; }

  void validate_shape() const {
    check(values.rows == missing.rows && values.cols == missing.cols,
          "Field: values and missing shapes differ");
  }

  double observed_fraction() const {
    if (missing.v.empty()) return 1.0;
    size_t miss = 0;
    for (uint8_t m : missing.v) miss += m ? 1 : 0;
    return 1.0 - double(miss) / double(missing.v.size());
  }
};

// Kelvin -> [0,1], clamped. Missing pixels keep their sentinel.
inline Field normalize(const Field& field, const NormalizationSpec& spec) {
  spec.validate();
  field.validate_shape();
  Field out = field;
  const double span = spec.t_max - spec.t_min;
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      if (!out.observed(r, c)) {
        out.values.at(r, c) = 0.0f;
        continue;
      }
      double v = field.values.at(r, c);
      check(std::isfinite(v), "normalize: non-finite observed value at (", r, ",", c, ")");
      double x = (v - spec.t_min) / span;
      out.values.at(r, c) = float(std::clamp(x, 0.0, 1.0));
    }
  }
  out.normalization = spec;
  return out;
}

// [0,1] -> kelvin. Inverse of normalize on the clamped range.
inline Field denormalize(const Field& field, const NormalizationSpec& spec) {
  spec.validate();
  field.validate_shape();
  Field out = field;
  const double span = spec.t_max - spec.t_min;
  for (int r = 0; r < out.height(); ++r) {
    for (int c = 0; c < out.width(); ++c) {
      if (!out.observed(r, c)) {
        out.values.at(r, c) = 0.0f;
        continue;
      }
      double x = field.values.at(r, c);
      check(std::isfinite(x), "denormalize: non-finite observed value");
      out.values.at(r, c) = float(spec.t_min + x * span);
    }
  }
  out.normalization.reset();
  return out;
}

namespace detail {

// Nearest observed neighbor along one axis, up to `radius` steps in each
// direction. Returns interpolated value if at least one side is observed.
inline bool axis_fill(const Field& f, int r, int c, int dr, int dc, int radius, float* out) {
  int dist_n = 0, dist_p = 0;
  float val_n = 0.0f, val_p = 0.0f;
  for (int d = 1; d <= radius; ++d) {
    int rr = r - d * dr, cc = c - d * dc;
    if (rr < 0 || cc < 0 || rr >= f.height() || cc >= f.width()) break;
    if (f.observed(rr, cc)) {
      dist_n = d;
      val_n = f.values.at(rr, cc);
      break;
    }
  }
  for (int d = 1; d <= radius; ++d) {
    int rr = r + d * dr, cc = c + d * dc;
    if (rr < 0 || cc < 0 || rr >= f.height() || cc >= f.width()) break;
    if (f.observed(rr, cc)) {
      dist_p = d;
      val_p = f.values.at(rr, cc);
      break;
    }
  }
  if (dist_n == 0 && dist_p == 0) return false;
  if (dist_n == 0) {
    *out = val_p;  // one-sided nearest-value fill
  } else if (dist_p == 0) {
    *out = val_n;
  } else {
    *out = float((double(val_n) * dist_p + double(val_p) * dist_n) / double(dist_n + dist_p));
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Local bidirectional gap fill: a missing pixel becomes observed iff an
// observed pixel of the *input* exists within `radius` steps along its row or
// column. Per-axis 1-D linear interpolation between the nearest observed
// neighbors (one-sided nearest-value fill when only one side exists); the two
// axes are averaged when both yield candidates. Observed pixels pass through
// bit-identical. Single pass: fills never become sources within the call.
// ---------------------------------------------------------------------------
inline Field local_gap_fill(const Field& field, int radius = 5) {
  check(radius >= 1, "local_gap_fill: radius must be >= 1");
  field.validate_shape();
  Field out = field;
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      if (field.observed(r, c)) continue;
      float row_val = 0.0f, col_val = 0.0f;
      const bool row_ok = detail::axis_fill(field, r, c, 0, 1, radius, &row_val);
      const bool col_ok = detail::axis_fill(field, r, c, 1, 0, radius, &col_val);
      if (!row_ok && !col_ok) continue;
      float v = row_ok && col_ok ? float((double(row_val) + double(col_val)) / 2.0)
                                 : (row_ok ? row_val : col_val);
      out.values.at(r, c) = v;
      out.missing.at(r, c) = 0;
    }
  }
  return out;
}

// Block-mean downscale. Output pixel = mean of observed input pixels in its
// block; missing iff the whole block is missing.
inline Field downscale(const Field& field, int out_h, int out_w) {
  field.validate_shape();
  check(out_h >= 1 && out_w >= 1, "downscale: output dims must be positive");
  check(out_h <= field.height() && out_w <= field.width(), "downscale: output larger than input");
  check(field.height() % out_h == 0 && field.width() % out_w == 0,
        "downscale: non-integer block ratio ", field.height(), "x", field.width(), " -> ", out_h,
        "x", out_w);
  const int bh = field.height() / out_h;
  const int bw = field.width() / out_w;
  Field out = Field::make(out_h, out_w);
  out.timestamp = field.timestamp;
  out.grid_id = field.grid_id;
  out.normalization = field.normalization;
  for (int r = 0; r < out_h; ++r) {
    for (int c = 0; c < out_w; ++c) {
      double acc = 0.0;
      int n = 0;
      for (int i = r * bh; i < (r + 1) * bh; ++i) {
        for (int j = c * bw; j < (c + 1) * bw; ++j) {
          if (!field.observed(i, j)) continue;
          acc += field.values.at(i, j);
          ++n;
        }
      }
      if (n == 0) {
        out.missing.at(r, c) = 1;
        out.values.at(r, c) = 0.0f;
      } else {
        out.values.at(r, c) = float(acc / n);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// .fld container: one JSON header line, then channels*H*W little-endian f32
// (row-major, channel-major), then H*W mask bytes.
// ---------------------------------------------------------------------------
struct FldFrame {
  std::vector<MatF> channels;  // >= 1 value planes sharing one mask
  MaskGrid missing;
  int64_t timestamp = 0;
  std::string grid_id = "grid";
  std::optional<NormalizationSpec> normalization;
};

inline void write_fld(const std::string& path, const FldFrame& frame) {
  check(!frame.channels.empty(), "write_fld: no channels");
  const int h = frame.channels[0].rows, w = frame.channels[0].cols;
  for (const auto& ch : frame.channels)
    check(ch.rows == h && ch.cols == w, "write_fld: channel shape mismatch");
  check(frame.missing.rows == h && frame.missing.cols == w, "write_fld: mask shape mismatch");

  nlohmann::json header = {
      {"height", h},
      {"width", w},
      {"timestamp", frame.timestamp},
      {"grid_id", frame.grid_id},
      {"normalization", nullptr},
      {"byte_order", "little"},
  };
  if (frame.channels.size() > 1) header["channels"] = frame.channels.size();
  if (frame.normalization) {
    header["normalization"] = {{"t_min", frame.normalization->t_min},
                               {"t_max", frame.normalization->t_max}};
  }
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_fld: cannot open ", path);
  os << header.dump() << "\n";
  for (const auto& ch : frame.channels)
    os.write(reinterpret_cast<const char*>(ch.v.data()), std::streamsize(ch.v.size() * 4));
  os.write(reinterpret_cast<const char*>(frame.missing.v.data()),
           std::streamsize(frame.missing.v.size()));
  check(os.good(), "write_fld: short write to ", path);
}

inline void write_fld(const std::string& path, const Field& field) {
  FldFrame frame;
  frame.channels = {field.values};
  frame.missing = field.missing;
  frame.timestamp = field.timestamp;
  frame.grid_id = field.grid_id;
  frame.normalization = field.normalization;
  write_fld(path, frame);
}

inline FldFrame read_fld_frame(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_fld: cannot open ", path);
  std::string header_line;
  std::getline(is, header_line);
  check(is.good(), "read_fld: truncated header in ", path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  const int h = header.at("height").get<int>();
  const int w = header.at("width").get<int>();
  const int nchan = header.value("channels", 1);
  check(h > 0 && w > 0 && nchan > 0, "read_fld: bad dims in ", path);
  check(header.value("byte_order", "little") == "little", "read_fld: unsupported byte order");

  FldFrame frame;
  frame.timestamp = header.value("timestamp", int64_t(0));
  frame.grid_id = header.value("grid_id", std::string("grid"));
  if (header.contains("normalization") && !header["normalization"].is_null()) {
    NormalizationSpec spec;
    spec.t_min = header["normalization"].at("t_min").get<double>();
    spec.t_max = header["normalization"].at("t_max").get<double>();
    frame.normalization = spec;
  }
  frame.channels.assign(size_t(nchan), MatF(h, w));
  for (auto& ch : frame.channels) {
    is.read(reinterpret_cast<char*>(ch.v.data()), std::streamsize(ch.v.size() * 4));
    check(is.good(), "read_fld: truncated values in ", path);
  }
  frame.missing = MaskGrid(h, w);
  is.read(reinterpret_cast<char*>(frame.missing.v.data()), std::streamsize(frame.missing.v.size()));
  check(is.good(), "read_fld: truncated mask in ", path);
  return frame;
}

inline Field read_fld(const std::string& path) {
  FldFrame frame = read_fld_frame(path);
  check(frame.channels.size() == 1, "read_fld: expected single-channel frame in ", path);
  Field f;
  f.values = std::move(frame.channels[0]);
  f.missing = std::move(frame.missing);
  f.timestamp = frame.timestamp;
  f.grid_id = frame.grid_id;
  f.normalization = frame.normalization;
  return f;
}

// ---------------------------------------------------------------------------
// Dataset manifests: JSON-lines, one record per frame. Paths are stored
// relative to the manifest file and resolved against it on load.
// ---------------------------------------------------------------------------
struct ManifestEntry {
  std::string path;              // resolved, absolute or cwd-relative
  int64_t timestamp = 0;
  std::string label_path;        // optional, resolved
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  check(os.good(), "write_manifest: cannot open ", path);
  const auto base = std::filesystem::path(path).parent_path();
  for (const auto& e : entries) {
    nlohmann::json row = {{"path", std::filesystem::relative(e.path, base).generic_string()},
                          {"timestamp", e.timestamp}};
    if (!e.label_path.empty())
      row["label"] = std::filesystem::relative(e.label_path, base).generic_string();
    os << row.dump() << "\n";
  }
  check(os.good(), "write_manifest: short write to ", path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "read_manifest: cannot open ", path);
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line);
    ManifestEntry e;
    e.path = (base / row.at("path").get<std::string>()).lexically_normal().string();
    e.timestamp = row.at("timestamp").get<int64_t>();
    if (row.contains("label"))
      e.label_path = (base / row["label"].get<std::string>()).lexically_normal().string();
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace gaia
