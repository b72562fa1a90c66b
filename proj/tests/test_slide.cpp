#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "oracles.hpp"
#include "pbs/error.hpp"
#include "pbs/random.hpp"
#include "pbs/slide.hpp"
#include "pbs/synthetic.hpp"

using namespace pbs;

namespace {

SlideImage blank(int w, int h) { return SlideImage("s", RgbImage(w, h)); }

FunctionScorer constant(double q) {
  return FunctionScorer([q](const SlideImage&, const TileAddress&) { return q; });
}

}  // namespace

TEST(TileGrid, ExactDivision) {
  const auto tiles = tile_grid(blank(2048, 1024));
  ASSERT_EQ(tiles.size(), 8u);
  EXPECT_EQ(tiles[0].row, 0);
  EXPECT_EQ(tiles[0].col, 0);
  EXPECT_EQ(tiles[3].col, 3);
  EXPECT_EQ(tiles[4].row, 1);
  EXPECT_EQ(tiles[4].col, 0);
}

TEST(TileGrid, PartialColumnDropped) { EXPECT_EQ(tile_grid(blank(2047, 1024)).size(), 6u); }

TEST(TileGrid, SmallerThanOneTile) { EXPECT_TRUE(tile_grid(blank(511, 511)).empty()); }

TEST(TileGrid, ZeroSizeIsEmpty) { EXPECT_TRUE(tile_grid("s", 100, 100, 0).empty()); }

TEST(TileGrid, InvalidDimensionsThrow) {
  EXPECT_THROW(tile_grid("s", 0, 100), ValidationError);
  EXPECT_THROW(tile_grid("s", 100, -1), ValidationError);
  EXPECT_THROW(SlideImage("s", RgbImage()), ValidationError);
}

TEST(TileGrid, DisjointInBoundsOverRandomSizes) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng.below(3000));
    const int h = 1 + static_cast<int>(rng.below(3000));
    const auto tiles = tile_grid("s", w, h);
    ASSERT_EQ(tiles.size(), static_cast<std::size_t>((w / 512) * (h / 512)));
    std::set<std::pair<int, int>> origins;
    for (const auto& t : tiles) {
      EXPECT_GE(t.x0(), 0);
      EXPECT_LE(t.x0() + t.size, w);
      EXPECT_LE(t.y0() + t.size, h);
      EXPECT_EQ(t.x0() % 512, 0);
      EXPECT_EQ(t.y0() % 512, 0);
      origins.insert({t.x0(), t.y0()});
    }
    // Aligned origins on a 512 lattice are disjoint iff distinct.
    EXPECT_EQ(origins.size(), tiles.size());
  }
}

TEST(ScoreTiles, BoundaryIsKept) {
  const auto slide = blank(1024, 512);
  const auto scored = score_tiles(slide, tile_grid(slide), constant(0.5), 0.5);
  ASSERT_EQ(scored.size(), 2u);
  EXPECT_TRUE(scored[0].kept);
  EXPECT_TRUE(scored[1].kept);
}

TEST(ScoreTiles, ThresholdZeroKeepsAll) {
  const auto slide = blank(1536, 1024);
  const auto scored = score_tiles(slide, tile_grid(slide), constant(0.0), 0.0);
  EXPECT_EQ(kept_tiles(scored).size(), 6u);
}

TEST(ScoreTiles, OutOfRangeScoreNamesTile) {
  const auto slide = blank(1024, 512);
  try {
    score_tiles(slide, tile_grid(slide), constant(1.5), 0.5);
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("s_r0_c0"), std::string::npos);
  }
  EXPECT_THROW(score_tiles(slide, tile_grid(slide), constant(std::nan("")), 0.5),
               ContractViolation);
}

TEST(ScoreTiles, PreservesInputOrderWithThreads) {
  const auto slide = blank(2048, 2048);
  auto tiles = tile_grid(slide);
  std::reverse(tiles.begin(), tiles.end());
  FunctionScorer by_position([](const SlideImage&, const TileAddress& t) {
    return (t.row * 4 + t.col) / 16.0;
  });
  const auto serial = score_tiles(slide, tiles, by_position, 0.5, 1);
  const auto parallel = score_tiles(slide, tiles, by_position, 0.5, 4);
  ASSERT_EQ(serial.size(), tiles.size());
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    EXPECT_EQ(serial[i].address, tiles[i]);
    EXPECT_EQ(parallel[i].address, tiles[i]);
    EXPECT_EQ(serial[i].quality, parallel[i].quality);
  }
}

TEST(ScoreTiles, KeepCountMonotoneInThreshold) {
  const SyntheticSlide slide({2048, 2048, 3});
  const auto tiles = tile_grid(slide.image());
  HeuristicScorer scorer;
  std::size_t previous = tiles.size() + 1;
  for (int i = 0; i <= 20; ++i) {
    const auto kept = kept_tiles(score_tiles(slide.image(), tiles, scorer, i / 20.0)).size();
    EXPECT_LE(kept, previous);
    previous = kept;
  }
}

TEST(Heuristic, UniformTileScoresLow) {
  const auto b = heuristic_breakdown(uniform_tile({240, 228, 234}));
  EXPECT_EQ(b.sharpness, 0.0);
  EXPECT_LE(b.score, 0.5);
  EXPECT_FALSE(score_tiles(SlideImage("w", uniform_tile({255, 255, 255})),
                           {TileAddress{"w", 0, 0}}, HeuristicScorer{}, 0.5)[0]
                   .kept);
}

TEST(Heuristic, FullForegroundHasZeroDensity) {
  const auto b = heuristic_breakdown(uniform_tile({80, 40, 120}));
  EXPECT_EQ(b.foreground_fraction, 1.0);
  EXPECT_EQ(b.density, 0.0);
}

TEST(Heuristic, ThirtyPercentDisksScoreHigh) {
  const auto tile = disk_tile(0.3, 5);
  const auto b = heuristic_breakdown(tile);
  const auto ref = oracle::heuristic(tile.data, tile.width, tile.height, 0.85);
  EXPECT_NEAR(b.foreground_fraction, ref.foreground, 1e-12);
  EXPECT_NEAR(b.laplacian_variance, ref.laplacian_variance, 1e-12);
  EXPECT_NEAR(ref.foreground, 0.3, 0.02);
  // Reference sub-scores with the documented defaults.
  const HeuristicQualityParams p;
  const double density =
      std::clamp(std::min(ref.foreground - p.band_lo, p.band_hi - ref.foreground) / p.band_ramp,
                 0.0, 1.0);
  const double sharp = ref.laplacian_variance / (ref.laplacian_variance + p.sharpness_half);
  EXPECT_NEAR(b.score, std::sqrt(density * sharp), 1e-12);
  EXPECT_GE(b.score, 0.5);
}

TEST(Heuristic, MonotoneInSubScores) {
  HeuristicQualityParams p;
  // Density ramps up inside the lower band edge, sharpness grows with variance.
  double last = -1.0;
  for (double cov : {0.05, 0.07, 0.09, 0.12}) {
    const double s = heuristic_breakdown(disk_tile(cov, 1), p).density;
    EXPECT_GE(s, last);
    last = s;
  }
}

TEST(Heuristic, RangeOverRandomTiles) {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const int size = 16 + static_cast<int>(rng.below(48));
    RgbImage tile(size, size);
    const int mode = static_cast<int>(rng.below(3));
    for (auto& byte : tile.data)
      byte = mode == 0   ? static_cast<std::uint8_t>(rng.below(256))
             : mode == 1 ? static_cast<std::uint8_t>(200 + rng.below(56))
                         : static_cast<std::uint8_t>(rng.below(2) ? 255 : 60);
    const double q = heuristic_quality(tile);
    ASSERT_GE(q, 0.0);
    ASSERT_LE(q, 1.0);
  }
}

TEST(SlideContext, ThirtyTileSample) {
  std::vector<TileAddress> kept;
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) kept.push_back({"s", r, c});
  const auto a = sample_slide_context(kept, kSlideContextPatches, 4);
  const auto b = sample_slide_context(kept, kSlideContextPatches, 4);
  ASSERT_EQ(a.size(), 30u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(std::set<TileAddress>(a.begin(), a.end()).size(), 30u);
  for (std::uint64_t s = 0; s < 5; ++s)
    EXPECT_NE(sample_slide_context(kept, 30, 2 * s), sample_slide_context(kept, 30, 2 * s + 1));
}

TEST(SlideContext, Clamp) {
  std::vector<TileAddress> kept;
  for (int c = 0; c < 10; ++c) kept.push_back({"s", 0, c});
  EXPECT_TRUE(sample_slide_context(kept, 0, 1).empty());
  EXPECT_EQ(sample_slide_context(kept, 30, 1), kept);
  EXPECT_THROW(sample_slide_context(kept, -1, 1), ValidationError);
}

TEST(SlideContext, IndependentOfInputOrder) {
  std::vector<TileAddress> kept;
  for (int c = 0; c < 40; ++c) kept.push_back({"s", c / 8, c % 8});
  auto shuffled = kept;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(sample_slide_context(kept, 12, 8), sample_slide_context(shuffled, 12, 8));
}

TEST(Ppm, RoundTrip) {
  RgbImage img(7, 5);
  Rng rng(2);
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
  const auto path = std::filesystem::temp_directory_path() / "pbs_test_roundtrip.ppm";
  write_ppm(path, img);
  const auto slide = read_ppm(path);
  EXPECT_EQ(slide.id(), "pbs_test_roundtrip");
  EXPECT_EQ(slide.pixels().data, img.data);
  std::filesystem::remove(path);
}

TEST(Synthetic, ReferenceParsing) {
  const auto spec = parse_synthetic("synthetic:1024x768:42");
  ASSERT_TRUE(spec);
  EXPECT_EQ(spec->width, 1024);
  EXPECT_EQ(spec->height, 768);
  EXPECT_EQ(spec->seed, 42u);
  EXPECT_FALSE(parse_synthetic("slide.ppm"));
  EXPECT_THROW(parse_synthetic("synthetic:12:3"), ValidationError);
  const auto back = parse_synthetic_slide_id(synthetic_slide_id(*spec));
  ASSERT_TRUE(back);
  EXPECT_EQ(back->seed, 42u);
}

TEST(Synthetic, Deterministic) {
  const SyntheticSlide a({1024, 1024, 9}), b({1024, 1024, 9});
  EXPECT_EQ(a.image().pixels().data, b.image().pixels().data);
  EXPECT_EQ(a.diagnosis(), b.diagnosis());
  EXPECT_EQ(a.diagnosis(), synthetic_diagnosis(9));
}
