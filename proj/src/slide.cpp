#include "pbs/slide.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <Eigen/Core>

#include "pbs/error.hpp"
#include "pbs/random.hpp"

namespace pbs {

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  if (w < 0 || h < 0) throw ValidationError("negative image dimensions");
  data.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill[0];
    data[i + 1] = fill[1];
    data[i + 2] = fill[2];
  }
}

RgbImage RgbImage::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || x0 + w > width || y0 + h > height)
    throw ValidationError("crop outside image bounds");
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto* src = data.data() + (static_cast<std::size_t>(y0 + y) * width + x0) * 3;
    std::copy(src, src + static_cast<std::size_t>(w) * 3,
              out.data.begin() + static_cast<std::ptrdiff_t>(y) * w * 3);
  }
  return out;
}

SlideImage::SlideImage(std::string id, RgbImage pixels, double magnification)
    : id_(std::move(id)), pixels_(std::move(pixels)), magnification_(magnification) {
  if (pixels_.width < 1 || pixels_.height < 1)
    throw ValidationError("slide '" + id_ + "' has invalid dimensions " +
                          std::to_string(pixels_.width) + "x" +
                          std::to_string(pixels_.height));
  if (pixels_.data.size() != static_cast<std::size_t>(pixels_.width) * pixels_.height * 3)
    throw ValidationError("slide '" + id_ + "' pixel buffer size mismatch");
}

std::string tile_key(const TileAddress& t) {
  return t.slide_id + "_r" + std::to_string(t.row) + "_c" + std::to_string(t.col);
}

std::vector<TileAddress> tile_grid(const std::string& slide_id, int width, int height,
                                   int size) {
  if (width < 1 || height < 1)
    throw ValidationError("invalid slide dimensions " + std::to_string(width) + "x" +
                          std::to_string(height));
  std::vector<TileAddress> tiles;
  if (size < 1) return tiles;
  const int cols = width / size;
  const int rows = height / size;
  tiles.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) tiles.push_back({slide_id, r, c, size});
  return tiles;
}

std::vector<TileAddress> tile_grid(const SlideImage& slide, int size) {
  return tile_grid(slide.id(), slide.width(), slide.height(), size);
}

namespace {

Eigen::ArrayXXd luminance(const RgbImage& img) {
  Eigen::ArrayXXd lum(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Rgb c = img.at(x, y);
      lum(y, x) = (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]) / 255.0;
    }
  return lum;
}

}  // namespace

QualityBreakdown heuristic_breakdown(const RgbImage& tile, const HeuristicQualityParams& p) {
  QualityBreakdown q;
  if (tile.width < 3 || tile.height < 3) return q;
  const Eigen::ArrayXXd lum = luminance(tile);
  const Eigen::Index h = lum.rows(), w = lum.cols();

  q.foreground_fraction = (lum < p.foreground_luminance).cast<double>().mean();

  // 4-neighbour discrete Laplacian over interior pixels.
  const Eigen::ArrayXXd lap = lum.block(0, 1, h - 2, w - 2) + lum.block(2, 1, h - 2, w - 2) +
                              lum.block(1, 0, h - 2, w - 2) + lum.block(1, 2, h - 2, w - 2) -
                              4.0 * lum.block(1, 1, h - 2, w - 2);
  const double mean = lap.mean();
  q.laplacian_variance = (lap - mean).square().mean();

  const double f = q.foreground_fraction;
  if (f >= p.band_lo && f <= p.band_hi) {
    q.density = std::clamp(std::min(f - p.band_lo, p.band_hi - f) / p.band_ramp, 0.0, 1.0);
  }
  q.sharpness = q.laplacian_variance / (q.laplacian_variance + p.sharpness_half);
  q.score = std::clamp(std::sqrt(q.density * q.sharpness), 0.0, 1.0);
  return q;
}

double heuristic_quality(const RgbImage& tile, const HeuristicQualityParams& p) {
  return heuristic_breakdown(tile, p).score;
}

double HeuristicScorer::score(const SlideImage& slide, const TileAddress& tile) const {
  return heuristic_quality(slide.pixels().crop(tile.x0(), tile.y0(), tile.size, tile.size),
                           params_);
}

std::vector<ScoredTile> score_tiles(const SlideImage& slide,
                                    const std::vector<TileAddress>& tiles,
                                    const QualityScorer& scorer, double threshold,
                                    unsigned threads) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw ValidationError("quality threshold must lie in [0, 1]");
  for (const auto& t : tiles) {
    if (t.size < 1 || t.row < 0 || t.col < 0 || t.x0() + t.size > slide.width() ||
        t.y0() + t.size > slide.height())
      throw ValidationError("tile " + tile_key(t) + " lies outside the slide");
  }

  std::vector<ScoredTile> out(tiles.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double q = scorer.score(slide, tiles[i]);
      if (!(q >= 0.0 && q <= 1.0)) {
        std::ostringstream msg;
        msg << "quality scorer returned " << q << " for tile " << tile_key(tiles[i])
            << "; expected a value in [0, 1]";
        throw ContractViolation(msg.str());
      }
      out[i] = {tiles[i], q, q >= threshold};
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, tiles.size()));
  if (threads <= 1) {
    work(0, tiles.size());
    return out;
  }
  std::vector<std::future<void>> jobs;
  const std::size_t chunk = (tiles.size() + threads - 1) / threads;
  for (std::size_t b = 0; b < tiles.size(); b += chunk)
    jobs.push_back(std::async(std::launch::async, work, b, std::min(tiles.size(), b + chunk)));
  for (auto& j : jobs) j.get();
  return out;
}

std::vector<TileAddress> kept_tiles(const std::vector<ScoredTile>& scored) {
  std::vector<TileAddress> kept;
  for (const auto& s : scored)
    if (s.kept) kept.push_back(s.address);
  return kept;
}

std::vector<TileAddress> sample_slide_context(std::vector<TileAddress> kept, int k,
                                              std::uint64_t seed) {
  if (k < 0) throw ValidationError("context sample size must be >= 0");
  // Canonical order first so the sample does not depend on input order.
  std::sort(kept.begin(), kept.end());
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(k), kept.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(kept.size() - i);
    std::swap(kept[i], kept[j]);
  }
  kept.resize(n);
  std::sort(kept.begin(), kept.end());
  return kept;
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

int ppm_int(std::istream& in, const std::filesystem::path& path) {
  const std::string tok = ppm_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::exception&) {
    throw ValidationError("malformed PNM header in " + path.string());
  }
}

}  // namespace

SlideImage read_ppm(const std::filesystem::path& path, std::string slide_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open slide image " + path.string());
  const std::string magic = ppm_token(in);
  if (magic != "P6" && magic != "P3")
    throw ValidationError(path.string() + " is not a PPM (P3/P6) image");
  const int w = ppm_int(in, path);
  const int h = ppm_int(in, path);
  const int maxval = ppm_int(in, path);
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw ValidationError("unsupported PPM geometry in " + path.string());
  RgbImage img(w, h);
  if (magic == "P6") {
    in.read(reinterpret_cast<char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.data.size()))
      throw ValidationError("truncated PPM pixel data in " + path.string());
  } else {
    for (auto& v : img.data) {
      const int x = ppm_int(in, path);
      if (x < 0 || x > maxval) throw ValidationError("PPM sample out of range");
      v = static_cast<std::uint8_t>(x);
    }
  }
  if (maxval != 255)
    for (auto& v : img.data) v = static_cast<std::uint8_t>(v * 255 / maxval);
  if (slide_id.empty()) slide_id = path.stem().string();
  return SlideImage(std::move(slide_id), std::move(img));
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
}

}  // namespace pbs
