#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gaia/common.hpp"
#include "gaia/field.hpp"
#include "gaia/patch.hpp"

namespace gaia {

// ---------------------------------------------------------------------------
// Binary classification report. Undefined ratios stay unset and serialize as
// null rather than 0, so degenerate frames never skew aggregates.
// ---------------------------------------------------------------------------
struct BinaryReport {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::optional<double> accuracy;
  std::optional<double> far;        // 1 - precision
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  int64_t total() const { return tp + fp + tn + fn; }

  void derive() {
    const int64_t n = total();
    accuracy = n > 0 ? std::optional<double>(double(tp + tn) / double(n)) : std::nullopt;
    if (tp + fp > 0) {
      precision = double(tp) / double(tp + fp);
      far = 1.0 - *precision;
    } else {
      precision.reset();
      far.reset();
    }
    recall = (tp + fn > 0) ? std::optional<double>(double(tp) / double(tp + fn)) : std::nullopt;
    if (precision && recall && (*precision + *recall) > 0.0) {
      f1 = 2.0 * *precision * *recall / (*precision + *recall);
    } else {
      f1.reset();
    }
  }

  nlohmann::json to_json() const {
    auto opt = [](const std::optional<double>& v) {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    return {{"tp", tp},       {"fp", fp},
            {"tn", tn},       {"fn", fn},
            {"accuracy", opt(accuracy)}, {"far", opt(far)},
            {"precision", opt(precision)}, {"recall", opt(recall)},
            {"f1", opt(f1)}};
  }
};

// Pixelwise thresholding of pred against a binary truth field. Pixels missing
// in either field are excluded. Truth counts as positive when > 0.5.
inline BinaryReport binary_metrics(const Field& pred, const Field& truth, double threshold) {
  pred.validate_shape();
  truth.validate_shape();
  check(pred.values.same_shape(truth.values), "binary_metrics: shape mismatch");
  BinaryReport rep;
  for (int r = 0; r < pred.height(); ++r) {
    for (int c = 0; c < pred.width(); ++c) {
      if (!pred.observed(r, c) || !truth.observed(r, c)) continue;
      const bool p = pred.values.at(r, c) > threshold;
      const bool t = truth.values.at(r, c) > 0.5f;
      if (p && t) ++rep.tp;
      else if (p && !t) ++rep.fp;
      else if (!p && t) ++rep.fn;
      else ++rep.tn;
    }
  }
  rep.derive();
  return rep;
}

// Per-patch arithmetic mean of observed pixels; unset for fully missing
// patches. Backs patch-level classification metrics.
inline std::vector<std::optional<double>> patch_aggregate(const Field& field, int patch_h,
                                                          int patch_w) {
  auto [grid, patch_missing] = patchify(field, patch_h, patch_w);
  std::vector<std::optional<double>> means(static_cast<size_t>(grid.n_patches()));
  for (int k = 0; k < grid.n_patches(); ++k) {
    double acc = 0.0;
    int n = 0;
    for (int j = 0; j < grid.data.cols; ++j) {
      if (patch_missing.at(k, j)) continue;
      acc += grid.data.at(k, j);
      ++n;
    }
    if (n > 0) means[size_t(k)] = acc / n;
  }
  return means;
}

// Patch-level binary report from two aggregated fields.
inline BinaryReport patch_binary_metrics(const Field& pred, const Field& truth, int patch_h,
                                         int patch_w, double pred_threshold,
                                         double truth_threshold = 0.5) {
  const auto p = patch_aggregate(pred, patch_h, patch_w);
  const auto t = patch_aggregate(truth, patch_h, patch_w);
  check(p.size() == t.size(), "patch_binary_metrics: grid mismatch");
  BinaryReport rep;
  for (size_t k = 0; k < p.size(); ++k) {
    if (!p[k] || !t[k]) continue;
    const bool pp = *p[k] > pred_threshold;
    const bool tt = *t[k] > truth_threshold;
    if (pp && tt) ++rep.tp;
    else if (pp && !tt) ++rep.fp;
    else if (!pp && tt) ++rep.fn;
    else ++rep.tn;
  }
  rep.derive();
  return rep;
}

// ---------------------------------------------------------------------------
// Boxes and tracks
// ---------------------------------------------------------------------------
struct Box {
  double y0 = 0, x0 = 0, y1 = 0, x1 = 0;

  void validate() const {
    check(y0 < y1 && x0 < x1, "Box: requires y0<y1 and x0<x1, got [", y0, ",", x0, ",", y1, ",",
          x1, "]");
  }
  double area() const { return (y1 - y0) * (x1 - x0); }
  bool operator<(const Box& o) const {
    if (y0 != o.y0) return y0 < o.y0;
    if (x0 != o.x0) return x0 < o.x0;
    if (y1 != o.y1) return y1 < o.y1;
    return x1 < o.x1;
  }
};

inline double iou(const Box& a, const Box& b) {
  a.validate();
  b.validate();
  const double iy0 = std::max(a.y0, b.y0), ix0 = std::max(a.x0, b.x0);
  const double iy1 = std::min(a.y1, b.y1), ix1 = std::min(a.x1, b.x1);
  const double ih = iy1 - iy0, iw = ix1 - ix0;
  if (ih <= 0.0 || iw <= 0.0) return 0.0;
  const double inter = ih * iw;
  return inter / (a.area() + b.area() - inter);
}

struct TrackBox {
  int64_t t = 0;
  Box box;
};

struct TrackRecord {
  std::string storm_id;
  std::vector<TrackBox> boxes;  // time-ordered
  int64_t first_label_time = 0;

  void validate() const {
    for (size_t i = 0; i < boxes.size(); ++i) {
      boxes[i].box.validate();
      if (i > 0) check(boxes[i].t >= boxes[i - 1].t, "TrackRecord: frames not time-ordered");
    }
  }
};

struct Detection {
  int64_t t = 0;
  double score = 0.0;
  Box box;
};

struct TrackMetricsReport {
  BinaryReport frame;  // tp/fp/fn over all frames (tn unused)
  double storm_recall = 0.0;
  double early_detection_frequency = 0.0;
  int n_tracks = 0;

  nlohmann::json to_json() const {
    return {{"frame", frame.to_json()},
            {"storm_recall", storm_recall},
            {"early_detection_frequency", early_detection_frequency},
            {"n_tracks", n_tracks}};
  }
};

// Frame-level greedy one-to-one matching at iou >= iou_thr, detections taken
// in descending score order (ties: lower frame index first, then lexicographic
// box order). Storm-level recall counts tracks with >= 1 matched frame; early
// detection counts tracks with a valid detection (IoU vs the track's earliest
// box) at t <= first_label_time. Early detections at frames without truth
// boxes still count as frame-level false positives.
inline TrackMetricsReport track_metrics(const std::vector<Detection>& detections,
                                        const std::vector<TrackRecord>& tracks,
                                        double iou_thr = 0.30, double score_thr = 0.0) {
  for (const auto& tr : tracks) tr.validate();

  std::vector<Detection> dets;
  for (const auto& d : detections) {
    d.box.validate();
    if (d.score >= score_thr) dets.push_back(d);
  }
  std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.t != b.t) return a.t < b.t;
    return a.box < b.box;
  });

  // Truth boxes per frame, tagged with their track index.
  struct TruthBox {
    Box box;
    int track = 0;
    bool matched = false;
  };
  std::map<int64_t, std::vector<TruthBox>> truth_by_frame;
  for (size_t ti = 0; ti < tracks.size(); ++ti)
    for (const auto& tb : tracks[ti].boxes)
      truth_by_frame[tb.t].push_back(TruthBox{tb.box, int(ti), false});

  TrackMetricsReport rep;
  rep.n_tracks = int(tracks.size());
  std::vector<uint8_t> track_hit(tracks.size(), 0);

  int64_t tp = 0, fp = 0, total_truth = 0;
  for (auto& [t, boxes] : truth_by_frame) total_truth += int64_t(boxes.size());
  for (const auto& d : dets) {
    auto it = truth_by_frame.find(d.t);
    int best = -1;
    double best_iou = 0.0;
    if (it != truth_by_frame.end()) {
      for (size_t bi = 0; bi < it->second.size(); ++bi) {
        if (it->second[bi].matched) continue;
        const double v = iou(d.box, it->second[bi].box);
        if (v >= iou_thr && v > best_iou) {
          best = int(bi);
          best_iou = v;
        }
      }
    }
    if (best >= 0) {
      it->second[size_t(best)].matched = true;
      track_hit[size_t(it->second[size_t(best)].track)] = 1;
      ++tp;
    } else {
      ++fp;
    }
  }
  rep.frame.tp = tp;
  rep.frame.fp = fp;
  rep.frame.fn = total_truth - tp;
  rep.frame.derive();

  int hits = 0, early = 0;
  for (size_t ti = 0; ti < tracks.size(); ++ti) {
    if (track_hit[ti]) ++hits;
    if (tracks[ti].boxes.empty()) continue;
    const Box& earliest = tracks[ti].boxes.front().box;
    bool found_early = false;
    for (const auto& d : dets) {
      if (d.t > tracks[ti].first_label_time) continue;
      if (iou(d.box, earliest) >= iou_thr) {
        found_early = true;
        break;
      }
    }
    if (found_early) ++early;
  }
  rep.storm_recall = tracks.empty() ? 0.0 : double(hits) / double(tracks.size());
  rep.early_detection_frequency = tracks.empty() ? 0.0 : double(early) / double(tracks.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Threshold sweep: per-threshold binary reports plus the F1-maximizing value
// (first threshold attaining the max when tied).
// ---------------------------------------------------------------------------
struct ThresholdSweepRow {
  double threshold = 0.0;
  BinaryReport report;
};

struct ThresholdSweep {
  std::vector<ThresholdSweepRow> rows;
  std::optional<double> best_threshold;  // unset when no row has a defined F1

  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j = r.report.to_json();
      j["threshold"] = r.threshold;
      out.push_back(j);
    }
    return {{"rows", out},
            {"best_threshold",
             best_threshold ? nlohmann::json(*best_threshold) : nlohmann::json(nullptr)}};
  }
};

template <class MetricFn>
ThresholdSweep sweep_thresholds(const std::vector<double>& thresholds, MetricFn&& metric) {
  ThresholdSweep sweep;
  double best_f1 = -1.0;
  for (double thr : thresholds) {
    ThresholdSweepRow row;
    row.threshold = thr;
    row.report = metric(thr);
    if (row.report.f1 && *row.report.f1 > best_f1) {
      best_f1 = *row.report.f1;
      sweep.best_threshold = thr;
    }
    sweep.rows.push_back(std::move(row));
  }
  return sweep;
}

// ---------------------------------------------------------------------------
// JSON I/O for tracks and detections
// ---------------------------------------------------------------------------
inline nlohmann::json box_to_json(const Box& b) {
  return {{"y0", b.y0}, {"x0", b.x0}, {"y1", b.y1}, {"x1", b.x1}};
}

inline Box box_from_json(const nlohmann::json& j) {
  return Box{j.at("y0").get<double>(), j.at("x0").get<double>(), j.at("y1").get<double>(),
             j.at("x1").get<double>()};
}

inline void write_tracks(const std::string& path, const std::vector<TrackRecord>& tracks) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& tr : tracks) {
    nlohmann::json boxes = nlohmann::json::array();
    for (const auto& tb : tr.boxes) {
      nlohmann::json b = box_to_json(tb.box);
      b["t"] = tb.t;
      boxes.push_back(b);
    }
    arr.push_back({{"storm_id", tr.storm_id},
                   {"first_label_time", tr.first_label_time},
                   {"boxes", boxes}});
  }
  std::ofstream os(path);
  check(os.good(), "write_tracks: cannot open ", path);
  os << nlohmann::json{{"tracks", arr}}.dump(2) << "\n";
}

inline std::vector<TrackRecord> read_tracks(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "read_tracks: cannot open ", path);
  nlohmann::json j;
  is >> j;
  std::vector<TrackRecord> tracks;
  for (const auto& tj : j.at("tracks")) {
    TrackRecord tr;
    tr.storm_id = tj.at("storm_id").get<std::string>();
    tr.first_label_time = tj.at("first_label_time").get<int64_t>();
    for (const auto& bj : tj.at("boxes"))
      tr.boxes.push_back(TrackBox{bj.at("t").get<int64_t>(), box_from_json(bj)});
    tracks.push_back(std::move(tr));
  }
  return tracks;
}

inline void write_detections(const std::string& path, const std::vector<Detection>& dets) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& d : dets) {
    nlohmann::json b = box_to_json(d.box);
    b["t"] = d.t;
    b["score"] = d.score;
    arr.push_back(b);
  }
  std::ofstream os(path);
  check(os.good(), "write_detections: cannot open ", path);
  os << nlohmann::json{{"detections", arr}}.dump(2) << "\n";
}

inline std::vector<Detection> read_detections(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "read_detections: cannot open ", path);
  nlohmann::json j;
  is >> j;
  std::vector<Detection> dets;
  for (const auto& dj : j.at("detections"))
    dets.push_back(Detection{dj.at("t").get<int64_t>(), dj.at("score").get<double>(),
                             box_from_json(dj)});
  return dets;
}

}  // namespace gaia
