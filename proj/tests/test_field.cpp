#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "gaia/field.hpp"
#include "gaia/rng.hpp"
#include "oracle.hpp"

using namespace gaia;

namespace {

Field kelvin_field(int h, int w, float value) {
  Field f = Field::make(h, w, value);
  return f;
}

}  // namespace

TEST(Normalize, AffineEndpoints) {
  NormalizationSpec spec{180.0, 330.0};
  Field f = kelvin_field(2, 2, 180.0f);
  f.values.at(0, 1) = 330.0f;
  f.values.at(1, 0) = 255.0f;
  Field n = normalize(f, spec);
  EXPECT_FLOAT_EQ(n.values.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(n.values.at(0, 1), 1.0f);
  EXPECT_NEAR(n.values.at(1, 0), 0.5, 1e-7);  // (255-180)/150
}

TEST(Normalize, ClampsOutOfRange) {
  NormalizationSpec spec{180.0, 330.0};
  Field f = kelvin_field(1, 2, 100.0f);
  f.values.at(0, 1) = 400.0f;
  Field n = normalize(f, spec);
  EXPECT_FLOAT_EQ(n.values.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(n.values.at(0, 1), 1.0f);
}

TEST(Normalize, RejectsNonFinite) {
  NormalizationSpec spec{180.0, 330.0};
  Field f = kelvin_field(1, 1, std::numeric_limits<float>::quiet_NaN());
  EXPECT_THROW(normalize(f, spec), std::invalid_argument);
}

TEST(Normalize, RoundTripWithinTolerance) {
  NormalizationSpec spec{180.0, 330.0};
  Rng rng = Rng::from_seed(7);
  Field f = kelvin_field(8, 8, 0.0f);
  for (auto& v : f.values.v) v = float(180.0 + 150.0 * rng.next_unit());
  Field round = denormalize(normalize(f, spec), spec);
  for (size_t i = 0; i < f.values.v.size(); ++i)
    EXPECT_NEAR(round.values.v[i], f.values.v[i], 1e-4);  // kelvin scale
  // and in normalized units the round trip is 1e-6 tight
  Field n = normalize(f, spec);
  Field n2 = normalize(denormalize(n, spec), spec);
  for (size_t i = 0; i < n.values.v.size(); ++i)
    EXPECT_NEAR(n2.values.v[i], n.values.v[i], 1e-6);
}

TEST(GapFill, FullyObservedIsIdentity) {
  Field f = kelvin_field(6, 6, 0.4f);
  Field g = local_gap_fill(f, 5);
  EXPECT_EQ(g.values.v, f.values.v);
  EXPECT_EQ(g.missing.v, f.missing.v);
}

TEST(GapFill, SingleMissingPixelRowInterpolation) {
  Field f = Field::make(1, 3);
  f.values.at(0, 0) = 0.2f;
  f.values.at(0, 2) = 0.4f;
  f.missing.at(0, 1) = 1;
  Field g = local_gap_fill(f, 5);
  EXPECT_EQ(g.missing.at(0, 1), 0);
  EXPECT_NEAR(g.values.at(0, 1), oracle::interp_1d(0.2, 1, 0.4, 1), 1e-7);
}

TEST(GapFill, TwoAxisAverage) {
  // Missing center of a plus sign: row neighbors 0.2/0.4, col neighbors 0.8/0.6.
  Field f = Field::make(3, 3);
  f.missing.fill(1);
  f.missing.at(1, 0) = 0; f.values.at(1, 0) = 0.2f;
  f.missing.at(1, 2) = 0; f.values.at(1, 2) = 0.4f;
  f.missing.at(0, 1) = 0; f.values.at(0, 1) = 0.8f;
  f.missing.at(2, 1) = 0; f.values.at(2, 1) = 0.6f;
  f.missing.at(1, 1) = 1;
  Field g = local_gap_fill(f, 2);
  const double row = oracle::interp_1d(0.2, 1, 0.4, 1);
  const double col = oracle::interp_1d(0.8, 1, 0.6, 1);
  EXPECT_NEAR(g.values.at(1, 1), 0.5 * (row + col), 1e-7);
}

TEST(GapFill, OneSidedNearestValue) {
  Field f = Field::make(1, 4);
  f.values.at(0, 0) = 0.9f;
  f.missing.at(0, 1) = 1;
  f.missing.at(0, 2) = 1;
  f.missing.at(0, 3) = 1;
  Field g = local_gap_fill(f, 5);
  EXPECT_FLOAT_EQ(g.values.at(0, 1), 0.9f);
  EXPECT_FLOAT_EQ(g.values.at(0, 3), 0.9f);
}

TEST(GapFill, RadiusBoundsLargeBlock) {
  const int h = 32, w = 32;
  Field f = Field::make(h, w, 0.5f);
  for (int r = 6; r < 26; ++r)
    for (int c = 6; c < 26; ++c) f.missing.at(r, c) = 1;
  Field g = local_gap_fill(f, 5);
  // interior pixels beyond 5 from any block edge stay missing
  for (int r = 11; r < 21; ++r)
    for (int c = 11; c < 21; ++c) EXPECT_EQ(g.missing.at(r, c), 1);
  // near-edge pixels are filled
  EXPECT_EQ(g.missing.at(6, 6), 0);
  EXPECT_EQ(g.missing.at(25, 25), 0);
}

TEST(GapFill, ObservedPixelsBitIdentical) {
  Rng rng = Rng::from_seed(13);
  Field f = Field::make(16, 16);
  for (auto& v : f.values.v) v = float(rng.next_unit());
  for (auto& m : f.missing.v) m = rng.next_unit() < 0.2 ? 1 : 0;
  Field g = local_gap_fill(f, 3);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c)
      if (f.observed(r, c)) {
        EXPECT_EQ(g.values.at(r, c), f.values.at(r, c));
        EXPECT_EQ(g.missing.at(r, c), 0);
      }
}

// Idempotence holds on gaps that the radius can bridge; re-applying the fill
// to such fields changes nothing.
TEST(GapFill, IdempotentOnBridgeableGaps) {
  Rng rng = Rng::from_seed(99);
  for (int trial = 0; trial < 20; ++trial) {
    Field f = Field::make(12, 24);
    for (auto& v : f.values.v) v = float(rng.next_unit());
    // random short runs of missing pixels (length <= 4 < radius)
    for (int k = 0; k < 10; ++k) {
      const int r = int(rng.next_below(12));
      const int c = int(rng.next_below(20));
      const int len = 1 + int(rng.next_below(4));
      for (int j = 0; j < len; ++j) f.missing.at(r, c + j) = 1;
    }
    Field once = local_gap_fill(f, 5);
    Field twice = local_gap_fill(once, 5);
    EXPECT_EQ(once.values.v, twice.values.v);
    EXPECT_EQ(once.missing.v, twice.missing.v);
  }
}

TEST(Downscale, ConstantField) {
  Field f = kelvin_field(8, 8, 0.7f);
  Field d = downscale(f, 4, 2);
  for (float v : d.values.v) EXPECT_FLOAT_EQ(v, 0.7f);
}

TEST(Downscale, BlockMean) {
  Field f = Field::make(2, 2);
  f.values.at(0, 0) = 0.0f;
  f.values.at(0, 1) = 0.2f;
  f.values.at(1, 0) = 0.4f;
  f.values.at(1, 1) = 0.6f;
  Field d = downscale(f, 1, 1);
  EXPECT_NEAR(d.values.at(0, 0), 0.3, 1e-7);
}

TEST(Downscale, MissingPropagation) {
  Field f = Field::make(2, 4);
  for (int c = 0; c < 2; ++c) {
    f.missing.at(0, c) = 1;
    f.missing.at(1, c) = 1;
  }
  f.values.at(0, 2) = 1.0f;
  f.missing.at(0, 3) = 1;
  f.missing.at(1, 2) = 1;
  f.missing.at(1, 3) = 1;
  Field d = downscale(f, 1, 2);
  EXPECT_EQ(d.missing.at(0, 0), 1);
  EXPECT_EQ(d.missing.at(0, 1), 0);
  EXPECT_FLOAT_EQ(d.values.at(0, 1), 1.0f);  // mean of the one observed pixel
}

TEST(Downscale, MeanConservation) {
  Rng rng = Rng::from_seed(3);
  Field f = Field::make(24, 36);
  for (auto& v : f.values.v) v = float(rng.next_unit());
  Field d = downscale(f, 6, 6);
  double mean_in = 0.0, mean_out = 0.0;
  for (float v : f.values.v) mean_in += v;
  for (float v : d.values.v) mean_out += v;
  mean_in /= double(f.values.size());
  mean_out /= double(d.values.size());
  EXPECT_NEAR(mean_in, mean_out, 1e-7);
}

TEST(Downscale, RejectsNonIntegerRatio) {
  Field f = kelvin_field(10, 10, 0.0f);
  EXPECT_THROW(downscale(f, 3, 5), std::invalid_argument);
}

TEST(FldContainer, RoundTrip) {
  Rng rng = Rng::from_seed(21);
  Field f = Field::make(6, 9);
  for (auto& v : f.values.v) v = float(rng.next_unit());
  f.missing.at(2, 3) = 1;
  f.values.at(2, 3) = 0.0f;
  f.timestamp = 12345;
  f.grid_id = "testgrid";
  f.normalization = NormalizationSpec{180, 330};

  const std::string path =
      (std::filesystem::temp_directory_path() / "gaia_test_frame.fld").string();
  write_fld(path, f);
  Field g = read_fld(path);
  EXPECT_EQ(g.values.v, f.values.v);
  EXPECT_EQ(g.missing.v, f.missing.v);
  EXPECT_EQ(g.timestamp, f.timestamp);
  EXPECT_EQ(g.grid_id, f.grid_id);
  ASSERT_TRUE(g.normalization.has_value());
  EXPECT_DOUBLE_EQ(g.normalization->t_min, 180.0);
  std::remove(path.c_str());
}

TEST(Manifest, RoundTripRelativePaths) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "gaia_manifest_test";
  fs::create_directories(dir / "frames");
  Field f = Field::make(2, 2, 0.5f);
  write_fld((dir / "frames" / "a.fld").string(), f);
  std::vector<ManifestEntry> entries = {
      ManifestEntry{(dir / "frames" / "a.fld").string(), 42, ""}};
  write_manifest((dir / "manifest.jsonl").string(), entries);
  auto loaded = read_manifest((dir / "manifest.jsonl").string());
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_EQ(loaded[0].timestamp, 42);
  Field g = read_fld(loaded[0].path);
  EXPECT_EQ(g.values.v, f.values.v);
  fs::remove_all(dir);
}
