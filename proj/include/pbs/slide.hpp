#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace pbs {

inline constexpr int kTileSize = 512;
inline constexpr double kDefaultQualityThreshold = 0.5;
inline constexpr double kNominalMagnification = 40.0;
inline constexpr int kSlideContextPatches = 30;

using Rgb = std::array<std::uint8_t, 3>;

// Interleaved 8-bit RGB raster, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {255, 255, 255});

  Rgb at(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = (static_cast<std::size_t>(y) * width + x) * 3;
    data[i] = c[0];
    data[i + 1] = c[1];
    data[i + 2] = c[2];
  }
  RgbImage crop(int x0, int y0, int w, int h) const;
};

class SlideImage {
 public:
  // Throws ValidationError unless pixels is at least 1x1.
  SlideImage(std::string id, RgbImage pixels,
             double magnification = kNominalMagnification);

  const std::string& id() const { return id_; }
  int width() const { return pixels_.width; }
  int height() const { return pixels_.height; }
  double magnification() const { return magnification_; }
  Rgb rgb(int x, int y) const { return pixels_.at(x, y); }
  const RgbImage& pixels() const { return pixels_; }

 private:
  std::string id_;
  RgbImage pixels_;
  double magnification_;
};

struct TileAddress {
  std::string slide_id;
  int row = 0;
  int col = 0;
  int size = kTileSize;

  int x0() const { return col * size; }
  int y0() const { return row * size; }

  friend bool operator==(const TileAddress&, const TileAddress&) = default;
  // Row-major order within a slide.
  friend auto operator<=>(const TileAddress& a, const TileAddress& b) {
    if (auto c = a.slide_id <=> b.slide_id; c != 0) return c;
    if (auto c = a.row <=> b.row; c != 0) return c;
    return a.col <=> b.col;
  }
};

std::string tile_key(const TileAddress& t);

struct ScoredTile {
  TileAddress address;
  double quality = 0.0;
  bool kept = false;
};

// Pluggable QC model. Implementations must return a score in [0, 1].
class QualityScorer {
 public:
  virtual ~QualityScorer() = default;
  virtual double score(const SlideImage& slide, const TileAddress& tile) const = 0;
};

class FunctionScorer final : public QualityScorer {
 public:
  using Fn = std::function<double(const SlideImage&, const TileAddress&)>;
  explicit FunctionScorer(Fn fn) : fn_(std::move(fn)) {}
  double score(const SlideImage& slide, const TileAddress& tile) const override {
    return fn_(slide, tile);
  }

 private:
  Fn fn_;
};

// Foreground-density band times Laplacian sharpness, combined as a geometric
// mean. Foreground is luminance below 0.85 of full scale.
struct HeuristicQualityParams {
  double foreground_luminance = 0.85;
  double band_lo = 0.05;
  double band_hi = 0.60;
  double band_ramp = 0.05;        // linear ramp inside each band edge
  double sharpness_half = 2e-3;   // Laplacian variance scoring 0.5
};

struct QualityBreakdown {
  double foreground_fraction = 0.0;
  double laplacian_variance = 0.0;
  double density = 0.0;
  double sharpness = 0.0;
  double score = 0.0;
};

QualityBreakdown heuristic_breakdown(const RgbImage& tile,
                                     const HeuristicQualityParams& p = {});
double heuristic_quality(const RgbImage& tile, const HeuristicQualityParams& p = {});

class HeuristicScorer final : public QualityScorer {
 public:
  explicit HeuristicScorer(HeuristicQualityParams p = {}) : params_(p) {}
  double score(const SlideImage& slide, const TileAddress& tile) const override;

 private:
  HeuristicQualityParams params_;
};

// Full, non-overlapping tiles in row-major order; partial border strips are
// dropped. size < 1 yields an empty grid.
std::vector<TileAddress> tile_grid(const std::string& slide_id, int width, int height,
                                   int size = kTileSize);
std::vector<TileAddress> tile_grid(const SlideImage& slide, int size = kTileSize);

// Output order matches input order. Scoring runs on `threads` workers (0 = auto).
std::vector<ScoredTile> score_tiles(const SlideImage& slide,
                                    const std::vector<TileAddress>& tiles,
                                    const QualityScorer& scorer,
                                    double threshold = kDefaultQualityThreshold,
                                    unsigned threads = 1);

std::vector<TileAddress> kept_tiles(const std::vector<ScoredTile>& scored);

// Uniform sample of min(k, |kept|) tiles without replacement, sorted row-major.
std::vector<TileAddress> sample_slide_context(std::vector<TileAddress> kept, int k,
                                              std::uint64_t seed);

// Binary (P6) and ASCII (P3) PPM. The slide id defaults to the file stem.
SlideImage read_ppm(const std::filesystem::path& path, std::string slide_id = {});
void write_ppm(const std::filesystem::path& path, const RgbImage& image);

}  // namespace pbs
