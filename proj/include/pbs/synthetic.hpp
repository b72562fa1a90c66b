#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pbs/cells.hpp"
#include "pbs/slide.hpp"

namespace pbs {

enum class Diagnosis { Anemia, MDS, Control };

std::string_view to_string(Diagnosis d);
std::string_view display_name(Diagnosis d);
std::optional<Diagnosis> parse_diagnosis(std::string_view s);

struct SyntheticCell {
  std::int32_t id = 0;  // 1-based, unique across the slide
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
  bool wbc = false;
  CellLabel label;  // meaningful when wbc
};

struct SyntheticSpec {
  int width = 2048;
  int height = 2048;
  std::uint64_t seed = 0;
};

// "synthetic:WxH:seed"; nullopt when `source` is not a synthetic reference.
std::optional<SyntheticSpec> parse_synthetic(std::string_view source);
// Inverse of the generated slide id "synthetic-WxH-sS".
std::optional<SyntheticSpec> parse_synthetic_slide_id(std::string_view slide_id);
std::string synthetic_slide_id(const SyntheticSpec& spec);
Diagnosis synthetic_diagnosis(std::uint64_t seed);

// Blood-smear-like test slide: red cells and stained white cells on a pale
// background, with block regions that are empty, crowded or defocused so
// that QC has something to reject. Instance masks and WBC labels come from
// the generator, standing in for segmentation and a subtype classifier.
class SyntheticSlide {
 public:
  explicit SyntheticSlide(const SyntheticSpec& spec);

  const SlideImage& image() const { return image_; }
  Diagnosis diagnosis() const { return diagnosis_; }
  const std::vector<SyntheticCell>& cells() const { return cells_; }

  InstanceMask mask_for(const TileAddress& tile) const;
  // Classifier answering from the generator's ground truth.
  TableClassifier classifier_for(const std::vector<TileAddress>& tiles) const;

 private:
  SyntheticSpec spec_;
  Diagnosis diagnosis_;
  std::vector<SyntheticCell> cells_;
  SlideImage image_;
};

// Uniform tile of one colour, and a tile of sharp disks covering
// approximately `coverage` of the area (disks never overlap, so coverage
// saturates near 0.5). Used for scorer checks.
RgbImage uniform_tile(Rgb colour, int size = kTileSize);
RgbImage disk_tile(double coverage, std::uint64_t seed, int size = kTileSize);

}  // namespace pbs
