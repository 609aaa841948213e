#include <gtest/gtest.h>

#include <set>

#include "gaia/patch.hpp"
#include "gaia/rng.hpp"
#include "gaia/synth.hpp"

using namespace gaia;

TEST(Patchify, PaperGeometryCounts) {
  Field f = Field::make(480, 1440, 0.1f);
  auto [grid, missing] = patchify(f, 30, 30);
  EXPECT_EQ(grid.grid_h, 16);
  EXPECT_EQ(grid.grid_w, 48);
  EXPECT_EQ(grid.n_patches(), 768);
  EXPECT_EQ(grid.data.cols, 900);
  EXPECT_EQ(missing.rows, 768);
}

TEST(Patchify, FourPatches) {
  Field f = Field::make(60, 60, 0.0f);
  auto [grid, missing] = patchify(f, 30, 30);
  EXPECT_EQ(grid.n_patches(), 4);
}

TEST(Patchify, RejectsNonDivisible) {
  Field f = Field::make(50, 60, 0.0f);
  EXPECT_THROW(patchify(f, 30, 30), std::invalid_argument);
}

TEST(Patchify, RoundTripBitExact) {
  SyntheticConfig cfg;
  cfg.height = 40;
  cfg.width = 56;
  cfg.n_timesteps = 1;
  cfg.missing_fraction = 0.0;
  cfg.seed = 3;
  Field f = synth_sequence(cfg)[0];
  auto [grid, missing] = patchify(f, 8, 8);
  Field back = unpatchify(grid);
  EXPECT_EQ(back.values.v, f.values.v);
}

TEST(Patchify, RowMajorLayout) {
  Field f = Field::make(4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) f.values.at(r, c) = float(r * 4 + c);
  auto [grid, missing] = patchify(f, 2, 2);
  // patch k=1 covers columns 2..3 of rows 0..1
  EXPECT_FLOAT_EQ(grid.data.at(1, 0), 2.0f);
  EXPECT_FLOAT_EQ(grid.data.at(1, 1), 3.0f);
  EXPECT_FLOAT_EQ(grid.data.at(1, 2), 6.0f);
  EXPECT_FLOAT_EQ(grid.data.at(1, 3), 7.0f);
}

TEST(Unpatchify, SinglePatch) {
  PatchGrid grid;
  grid.grid_h = grid.grid_w = 1;
  grid.patch_h = 2;
  grid.patch_w = 3;
  grid.data = MatF(1, 6);
  for (int j = 0; j < 6; ++j) grid.data.at(0, j) = float(j);
  Field f = unpatchify(grid);
  EXPECT_EQ(f.height(), 2);
  EXPECT_EQ(f.width(), 3);
  EXPECT_FLOAT_EQ(f.values.at(1, 2), 5.0f);
}

TEST(PositionalEmbedding, RangeAndBasis) {
  const auto emb = positional_embedding<double>(4, 6, 16);
  for (double v : emb.v) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  // frequency index 0 at grid position (0,0): sin -> 0, cos -> 1 on both axes
  EXPECT_DOUBLE_EQ(emb.at(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(emb.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(emb.at(0, 8), 0.0);
  EXPECT_DOUBLE_EQ(emb.at(0, 9), 1.0);
}

TEST(PositionalEmbedding, NoCollisionsOnPaperGrid) {
  const auto emb = positional_embedding<float>(16, 48, 64);
  const int n = emb.rows;
  for (int a = 0; a < n; ++a) {
    for (int b = a + 1; b < n; ++b) {
      bool same = true;
      for (int j = 0; j < emb.cols && same; ++j)
        same = emb.at(a, j) == emb.at(b, j);
      ASSERT_FALSE(same) << "rows " << a << " and " << b << " collide";
    }
  }
}

TEST(PositionalEmbedding, RejectsBadWidth) {
  EXPECT_THROW(positional_embedding<float>(2, 2, 18), std::invalid_argument);
}

TEST(SampleMask, RatioZeroEmpty) {
  Rng rng = Rng::from_seed(1);
  MaskSpec m = sample_mask(100, 0.0, rng);
  EXPECT_EQ(m.hidden_count(), 0);
}

TEST(SampleMask, ExactCount) {
  Rng rng = Rng::from_seed(2);
  MaskSpec m = sample_mask(768, 0.75, rng);
  EXPECT_EQ(m.hidden_count(), 576);
  MaskSpec m2 = sample_mask(192, 0.25, rng);
  EXPECT_EQ(m2.hidden_count(), 48);
}

TEST(SampleMask, ForcedDominates) {
  Rng rng = Rng::from_seed(3);
  std::vector<uint8_t> forced(768, 0);
  for (int i = 0; i < 600; ++i) forced[size_t(i)] = 1;
  MaskSpec m = sample_mask(768, 0.75, rng, &forced);
  EXPECT_EQ(m.hidden_count(), 600);
  for (int i = 0; i < 600; ++i) EXPECT_EQ(m.hidden[size_t(i)], 1);
}

TEST(SampleMask, ForcedSubsetAlwaysHidden) {
  Rng rng = Rng::from_seed(4);
  std::vector<uint8_t> forced(100, 0);
  forced[7] = forced[42] = 1;
  MaskSpec m = sample_mask(100, 0.5, rng, &forced);
  EXPECT_EQ(m.hidden_count(), 50);
  EXPECT_EQ(m.hidden[7], 1);
  EXPECT_EQ(m.hidden[42], 1);
}

TEST(SampleMask, DeterministicPerRngState) {
  Rng a = Rng::from_seed(9).split("mask");
  Rng b = Rng::from_seed(9).split("mask");
  MaskSpec ma = sample_mask(64, 0.5, a);
  MaskSpec mb = sample_mask(64, 0.5, b);
  EXPECT_EQ(ma.hidden, mb.hidden);
}

TEST(SampleMask, RejectsBadRatio) {
  Rng rng = Rng::from_seed(5);
  EXPECT_THROW(sample_mask(10, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(sample_mask(10, -0.1, rng), std::invalid_argument);
}

TEST(StructuredMask, VerticalStripes) {
  MaskSpec m = structured_mask(1, 4, MaskFamily::stripes_v, 2, 1, 0);
  EXPECT_EQ(m.hidden[0], 1);
  EXPECT_EQ(m.hidden[1], 0);
  EXPECT_EQ(m.hidden[2], 1);
  EXPECT_EQ(m.hidden[3], 0);
  EXPECT_DOUBLE_EQ(m.ratio, 0.5);
}

TEST(StructuredMask, HorizontalPhaseMiss) {
  MaskSpec m = structured_mask(1, 6, MaskFamily::stripes_h, 2, 1, 1);
  EXPECT_EQ(m.hidden_count(), 0);
}

TEST(StructuredMask, TransposeSymmetry) {
  const int gh = 5, gw = 7;
  MaskSpec v = structured_mask(gh, gw, MaskFamily::stripes_v, 3, 1, 1);
  MaskSpec h = structured_mask(gw, gh, MaskFamily::stripes_h, 3, 1, 1);
  for (int r = 0; r < gh; ++r)
    for (int c = 0; c < gw; ++c)
      EXPECT_EQ(v.hidden[size_t(r * gw + c)], h.hidden[size_t(c * gh + r)]);
}

TEST(MissingForced, MajorityRule) {
  MaskGrid pm(2, 4, 0);
  pm.at(0, 0) = pm.at(0, 1) = pm.at(0, 2) = 1;  // 3 of 4 missing
  pm.at(1, 0) = pm.at(1, 1) = 1;                // exactly half: not forced
  auto forced = missing_forced_hidden(pm);
  EXPECT_EQ(forced[0], 1);
  EXPECT_EQ(forced[1], 0);
}

TEST(MissingStyleMask, ExactCountAndBlobby) {
  Rng rng = Rng::from_seed(11);
  MaskSpec m = missing_style_mask(16, 24, 0.5, rng);
  EXPECT_EQ(m.hidden_count(), 192);
  // blobby: hidden patches have mostly hidden 4-neighbors
  int boundary = 0, interior = 0;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 24; ++c) {
      if (!m.hidden[size_t(r * 24 + c)]) continue;
      int hidden_neighbors = 0, total = 0;
      const int dr[] = {1, -1, 0, 0}, dc[] = {0, 0, 1, -1};
      for (int k = 0; k < 4; ++k) {
        const int rr = r + dr[k], cc = c + dc[k];
        if (rr < 0 || cc < 0 || rr >= 16 || cc >= 24) continue;
        ++total;
        hidden_neighbors += m.hidden[size_t(rr * 24 + cc)];
      }
      if (hidden_neighbors * 2 >= total) ++interior;
      else ++boundary;
    }
  EXPECT_GT(interior, boundary * 2);
}

TEST(MaskJson, RoundTrip) {
  Rng rng = Rng::from_seed(12);
  MaskSpec m = sample_mask(6 * 8, 0.4, rng);
  nlohmann::json j = mask_to_json(m, 6, 8);
  int gh = 0, gw = 0;
  MaskSpec back = mask_from_json(j, &gh, &gw);
  EXPECT_EQ(gh, 6);
  EXPECT_EQ(gw, 8);
  EXPECT_EQ(back.hidden, m.hidden);
  EXPECT_EQ(back.family, m.family);
  EXPECT_DOUBLE_EQ(back.ratio, m.ratio);
}

TEST(RandomMaskRatioProperty, AchievedMatchesRequested) {
  Rng rng = Rng::from_seed(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 16 + int(rng.next_below(400));
    const double ratio = rng.next_unit() * 0.95;
    MaskSpec m = sample_mask(n, ratio, rng);
    EXPECT_LE(std::abs(double(m.hidden_count()) / n - ratio), 1.0 / n + 1e-12);
  }
}
