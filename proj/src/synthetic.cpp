#include "pbs/synthetic.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>

#include "pbs/error.hpp"
#include "pbs/random.hpp"

namespace pbs {

std::string_view to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::Anemia: return "anemia";
    case Diagnosis::MDS: return "MDS";
    case Diagnosis::Control: return "control";
  }
  return "control";
}

std::string_view display_name(Diagnosis d) {
  switch (d) {
    case Diagnosis::Anemia: return "anemia";
    case Diagnosis::MDS: return "myelodysplastic syndrome (MDS)";
    case Diagnosis::Control: return "control";
  }
  return "control";
}

std::optional<Diagnosis> parse_diagnosis(std::string_view s) {
  for (auto d : {Diagnosis::Anemia, Diagnosis::MDS, Diagnosis::Control})
    if (s == to_string(d) || s == display_name(d)) return d;
  return std::nullopt;
}

namespace {

bool parse_int(std::string_view s, auto& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

struct Palette {
  Rgb cytoplasm;
  Rgb nucleus;
};

Palette palette(Subtype s) {
  switch (s) {
    case Subtype::Neutrophil: return {{206, 182, 214}, {92, 52, 138}};
    case Subtype::Eosinophil: return {{232, 150, 118}, {98, 56, 140}};
    case Subtype::Basophil: return {{152, 112, 172}, {60, 30, 96}};
    case Subtype::Lymphocyte: return {{190, 192, 226}, {78, 48, 128}};
    case Subtype::Monocyte: return {{192, 182, 212}, {110, 70, 150}};
    case Subtype::Others: return {{200, 190, 200}, {90, 60, 120}};
  }
  return {{200, 190, 200}, {90, 60, 120}};
}

const std::vector<std::string>& keyword_pool(Diagnosis d, Subtype s) {
  static const std::vector<std::string> mds = {
      "hypolobated nuclei", "hypogranular cytoplasm", "pseudo-Pelger-Huet anomaly",
      "nuclear budding", "abnormal chromatin clumping"};
  static const std::vector<std::string> anemia = {
      "hypersegmented nuclei", "enlarged cell size", "vacuolated cytoplasm"};
  static const std::vector<std::string> common = {
      "membrane damage", "smudged chromatin", "reactive morphology"};
  static const std::vector<std::string> lymph = {"reactive morphology", "large granular lymphocyte",
                                                 "cleaved nucleus"};
  if (s == Subtype::Lymphocyte && d != Diagnosis::MDS) return lymph;
  switch (d) {
    case Diagnosis::MDS: return mds;
    case Diagnosis::Anemia: return anemia;
    case Diagnosis::Control: return common;
  }
  return common;
}

Subtype draw_subtype(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.55) return Subtype::Neutrophil;
  if (u < 0.83) return Subtype::Lymphocyte;
  if (u < 0.93) return Subtype::Monocyte;
  if (u < 0.98) return Subtype::Eosinophil;
  return Subtype::Basophil;
}

// Paints a filled disk; returns nothing, callers paint in id order so the
// last painter owns overlapping pixels in both image and mask.
template <typename Paint>
void for_disk(double cx, double cy, double r, int x_lo, int y_lo, int x_hi, int y_hi,
              Paint&& paint) {
  const int x0 = std::max(x_lo, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(x_hi - 1, static_cast<int>(std::ceil(cx + r)));
  const int y0 = std::max(y_lo, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(y_hi - 1, static_cast<int>(std::ceil(cy + r)));
  const double r2 = r * r;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r2) paint(x, y, dx, dy);
    }
}

void render_cell(RgbImage& img, const SyntheticCell& c) {
  const int W = img.width, H = img.height;
  if (!c.wbc) {
    for_disk(c.x, c.y, c.radius, 0, 0, W, H, [&](int x, int y, double dx, double dy) {
      const double rr = std::sqrt(dx * dx + dy * dy) / c.radius;
      img.set(x, y, rr < 0.4 ? Rgb{228, 168, 176} : Rgb{212, 124, 138});
    });
    return;
  }
  const Palette pal = palette(c.label.subtype);
  for_disk(c.x, c.y, c.radius, 0, 0, W, H,
           [&](int x, int y, double, double) { img.set(x, y, pal.cytoplasm); });
  const double r = c.radius;
  auto nucleus = [&](double ox, double oy, double nr) {
    for_disk(c.x + ox, c.y + oy, nr, 0, 0, W, H,
             [&](int x, int y, double, double) { img.set(x, y, pal.nucleus); });
  };
  switch (c.label.subtype) {
    case Subtype::Neutrophil:
      nucleus(-0.4 * r, -0.2 * r, 0.28 * r);
      nucleus(0.0, 0.25 * r, 0.28 * r);
      nucleus(0.4 * r, -0.15 * r, 0.28 * r);
      break;
    case Subtype::Eosinophil:
      nucleus(-0.35 * r, 0.0, 0.33 * r);
      nucleus(0.35 * r, 0.0, 0.33 * r);
      break;
    case Subtype::Lymphocyte: nucleus(0.0, 0.0, 0.78 * r); break;
    case Subtype::Monocyte: nucleus(0.15 * r, 0.1 * r, 0.6 * r); break;
    case Subtype::Basophil: nucleus(0.0, 0.0, 0.55 * r); break;
    case Subtype::Others: nucleus(0.0, 0.0, 0.5 * r); break;
  }
}

void box_blur(RgbImage& img, int x0, int y0, int x1, int y1, int radius) {
  const RgbImage src = img;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      int sum[3] = {0, 0, 0};
      int n = 0;
      for (int yy = std::max(0, y - radius); yy <= std::min(img.height - 1, y + radius); ++yy)
        for (int xx = std::max(0, x - radius); xx <= std::min(img.width - 1, x + radius);
             ++xx) {
          const Rgb c = src.at(xx, yy);
          sum[0] += c[0];
          sum[1] += c[1];
          sum[2] += c[2];
          ++n;
        }
      img.set(x, y,
              {static_cast<std::uint8_t>(sum[0] / n), static_cast<std::uint8_t>(sum[1] / n),
               static_cast<std::uint8_t>(sum[2] / n)});
    }
}

enum class Regime { Normal, Sparse, Crowded, Blurred };

}  // namespace

std::optional<SyntheticSpec> parse_synthetic(std::string_view source) {
  constexpr std::string_view prefix = "synthetic:";
  if (!source.starts_with(prefix)) return std::nullopt;
  source.remove_prefix(prefix.size());
  const auto colon = source.find(':');
  const auto dims = source.substr(0, colon);
  const auto x = dims.find('x');
  SyntheticSpec spec;
  if (colon == std::string_view::npos || x == std::string_view::npos ||
      !parse_int(dims.substr(0, x), spec.width) || !parse_int(dims.substr(x + 1), spec.height) ||
      !parse_int(source.substr(colon + 1), spec.seed))
    throw ValidationError("synthetic slide reference must look like synthetic:WxH:seed");
  if (spec.width < 1 || spec.height < 1)
    throw ValidationError("synthetic slide dimensions must be positive");
  return spec;
}

std::optional<SyntheticSpec> parse_synthetic_slide_id(std::string_view slide_id) {
  constexpr std::string_view prefix = "synthetic-";
  if (!slide_id.starts_with(prefix)) return std::nullopt;
  slide_id.remove_prefix(prefix.size());
  const auto dash = slide_id.find("-s");
  const auto dims = slide_id.substr(0, dash);
  const auto x = dims.find('x');
  SyntheticSpec spec;
  if (dash == std::string_view::npos || x == std::string_view::npos ||
      !parse_int(dims.substr(0, x), spec.width) || !parse_int(dims.substr(x + 1), spec.height) ||
      !parse_int(slide_id.substr(dash + 2), spec.seed))
    return std::nullopt;
  return spec;
}

std::string synthetic_slide_id(const SyntheticSpec& spec) {
  return "synthetic-" + std::to_string(spec.width) + "x" + std::to_string(spec.height) + "-s" +
         std::to_string(spec.seed);
}

Diagnosis synthetic_diagnosis(std::uint64_t seed) {
  return static_cast<Diagnosis>(Rng(derive_seed(seed, "diagnosis")).below(3));
}

SyntheticSlide::SyntheticSlide(const SyntheticSpec& spec)
    : spec_(spec),
      diagnosis_(synthetic_diagnosis(spec.seed)),
      image_("x", RgbImage(1, 1)) {
  if (spec.width < 1 || spec.height < 1)
    throw ValidationError("synthetic slide dimensions must be positive");
  Rng rng(derive_seed(spec.seed, "cells"));
  constexpr int kBlock = 256;
  const double keyword_rate = diagnosis_ == Diagnosis::MDS      ? 0.5
                              : diagnosis_ == Diagnosis::Anemia ? 0.25
                                                                : 0.08;

  std::vector<std::pair<Regime, std::array<int, 4>>> blocks;
  for (int by = 0; by < spec.height; by += kBlock)
    for (int bx = 0; bx < spec.width; bx += kBlock) {
      const double u = rng.uniform();
      const Regime regime = u < 0.66   ? Regime::Normal
                            : u < 0.78 ? Regime::Sparse
                            : u < 0.90 ? Regime::Crowded
                                       : Regime::Blurred;
      const int bw = std::min(kBlock, spec.width - bx), bh = std::min(kBlock, spec.height - by);
      blocks.push_back({regime, {bx, by, bw, bh}});

      const double coverage = regime == Regime::Sparse    ? 0.01
                              : regime == Regime::Crowded ? 0.85
                                                          : rng.uniform(0.18, 0.32);
      const double mean_area = std::numbers::pi * 14.0 * 14.0;
      const int target = static_cast<int>(coverage * bw * bh / mean_area);
      const bool allow_overlap = regime == Regime::Crowded;
      const std::size_t block_start = cells_.size();
      for (int n = 0, tries = 0; n < target && tries < target * 30; ++tries) {
        SyntheticCell c;
        c.wbc = rng.bernoulli(0.08);
        c.radius = c.wbc ? rng.uniform(18.0, 24.0) : rng.uniform(11.0, 15.0);
        c.x = bx + rng.uniform() * bw;
        c.y = by + rng.uniform() * bh;
        bool clash = false;
        for (std::size_t i = block_start; i < cells_.size() && !clash; ++i) {
          const double d = std::hypot(cells_[i].x - c.x, cells_[i].y - c.y);
          const double min_d = (cells_[i].radius + c.radius) * (allow_overlap ? 0.55 : 1.05);
          clash = d < min_d;
        }
        if (clash) continue;
        if (c.wbc) {
          c.label.subtype = draw_subtype(rng);
          c.label.confidence = rng.uniform(0.35, 1.0);
          if (rng.bernoulli(keyword_rate)) {
            const auto& pool = keyword_pool(diagnosis_, c.label.subtype);
            c.label.keywords.push_back(pool[rng.below(pool.size())]);
          }
        }
        c.id = static_cast<std::int32_t>(cells_.size() + 1);
        cells_.push_back(std::move(c));
        ++n;
      }
    }

  RgbImage img(spec.width, spec.height, {240, 228, 234});
  for (const auto& c : cells_) render_cell(img, c);
  for (const auto& [regime, b] : blocks)
    if (regime == Regime::Blurred) box_blur(img, b[0], b[1], b[0] + b[2], b[1] + b[3], 5);

  image_ = SlideImage(synthetic_slide_id(spec), std::move(img));
}

InstanceMask SyntheticSlide::mask_for(const TileAddress& tile) const {
  InstanceMask mask{tile, LabelGrid::Zero(tile.size, tile.size)};
  const int x0 = tile.x0(), y0 = tile.y0();
  for (const auto& c : cells_) {
    if (c.x + c.radius < x0 || c.x - c.radius > x0 + tile.size || c.y + c.radius < y0 ||
        c.y - c.radius > y0 + tile.size)
      continue;
    for_disk(c.x - x0, c.y - y0, c.radius, 0, 0, tile.size, tile.size,
             [&](int x, int y, double, double) { mask.labels(y, x) = c.id; });
  }
  return mask;
}

TableClassifier SyntheticSlide::classifier_for(const std::vector<TileAddress>& tiles) const {
  TableClassifier table;
  for (const auto& t : tiles)
    for (const auto& c : cells_) {
      if (!c.wbc) continue;
      if (c.x < t.x0() || c.x >= t.x0() + t.size || c.y < t.y0() || c.y >= t.y0() + t.size)
        continue;
      table.add(t, c.id, c.label);
    }
  return table;
}

RgbImage uniform_tile(Rgb colour, int size) { return RgbImage(size, size, colour); }

RgbImage disk_tile(double coverage, std::uint64_t seed, int size) {
  RgbImage img(size, size, {250, 248, 250});
  Rng rng(seed);
  std::vector<std::array<double, 3>> disks;
  double covered = 0.0;
  const double area = static_cast<double>(size) * size;
  for (int tries = 0; covered < coverage * area && tries < 100000; ++tries) {
    const double r = rng.uniform(12.0, 20.0);
    const double x = rng.uniform(r, size - r), y = rng.uniform(r, size - r);
    bool clash = false;
    for (const auto& d : disks)
      if (std::hypot(d[0] - x, d[1] - y) < d[2] + r + 2.0) {
        clash = true;
        break;
      }
    if (clash) continue;
    disks.push_back({x, y, r});
    for_disk(x, y, r, 0, 0, size, size, [&](int px, int py, double, double) {
      img.set(px, py, {150, 60, 110});
      covered += 1.0;
    });
  }
  return img;
}

}  // namespace pbs
