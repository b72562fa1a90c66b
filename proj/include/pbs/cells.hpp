#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pbs/slide.hpp"

namespace pbs {

inline constexpr double kDefaultContextFactor = 2.0;
inline constexpr double kDefaultMinConfidence = 0.5;

enum class Subtype { Basophil, Eosinophil, Lymphocyte, Monocyte, Neutrophil, Others };

inline constexpr std::array<Subtype, 5> kCanonicalSubtypes = {
    Subtype::Basophil, Subtype::Eosinophil, Subtype::Lymphocyte, Subtype::Monocyte,
    Subtype::Neutrophil};

std::string_view to_string(Subtype s);
// Exact canonical name ("Neutrophil"); case-insensitive.
std::optional<Subtype> parse_subtype(std::string_view name);

using LabelGrid = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// labels(y, x): 0 = background, k >= 1 = instance k.
struct InstanceMask {
  TileAddress tile;
  LabelGrid labels;
};

// Inclusive pixel bounds.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
};

struct Instance {
  std::int32_t id = 0;
  double cx = 0.0;  // mean pixel x
  double cy = 0.0;
  BoundingBox bbox;
  std::int64_t area = 0;
};

struct CropBox {
  int x0 = 0;
  int y0 = 0;
  int side = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

struct CellRecord {
  std::string id;
  TileAddress tile;
  CropBox crop;
  Subtype subtype = Subtype::Others;
  double confidence = 0.0;
  std::vector<std::string> keywords;
};

struct Differential {
  std::array<double, 5> percentages{};  // indexed like kCanonicalSubtypes
  std::array<std::int64_t, 5> counts{};
  std::int64_t n_cells = 0;
  std::int64_t others_count = 0;

  double percent(Subtype s) const;
};

// Instances whose bounding box touches a tile edge are dropped; the rest are
// returned in ascending id order.
std::vector<Instance> extract_instances(const InstanceMask& mask);

CropBox crop_square(const BoundingBox& bbox, double cx, double cy,
                    double context_factor = kDefaultContextFactor,
                    int tile_size = kTileSize);

// (dataset, raw label) -> normalized subtype. The bundled table covers the
// AML-LMU and APL-kaggle vocabularies; dataset "native" (alias "LISC") takes
// canonical names directly.
class LabelMap {
 public:
  struct Row {
    std::string dataset;
    std::string raw_label;
    Subtype subtype;
  };

  static const LabelMap& bundled();
  // Lines of "<dataset>:<raw label>\t<normalized type>"; '#' starts a comment.
  static LabelMap parse(std::string_view text);
  static LabelMap load(const std::filesystem::path& path);

  Subtype normalize(std::string_view dataset, std::string_view raw_label) const;
  const std::vector<Row>& rows() const { return rows_; }

 private:
  std::vector<Row> rows_;
  std::map<std::pair<std::string, std::string>, Subtype, std::less<>> index_;
};

inline Subtype normalize_label(std::string_view dataset, std::string_view raw_label) {
  return LabelMap::bundled().normalize(dataset, raw_label);
}

// Counts cells with confidence >= min_confidence. Percentages cover the five
// canonical subtypes only; Others is tallied separately.
Differential differential(const std::vector<CellRecord>& cells,
                          double min_confidence = kDefaultMinConfidence);

struct CellLabel {
  Subtype subtype = Subtype::Others;
  double confidence = 0.0;
  std::vector<std::string> keywords;
};

// Source of subtype labels for extracted instances. Returning nullopt means
// the instance is not a white blood cell and yields no record.
class CellClassifier {
 public:
  virtual ~CellClassifier() = default;
  virtual std::optional<CellLabel> classify(const TileAddress& tile,
                                            const Instance& instance) const = 0;
};

// Labels keyed by (tile key, instance id).
class TableClassifier final : public CellClassifier {
 public:
  void add(const TileAddress& tile, std::int32_t instance_id, CellLabel label);
  std::optional<CellLabel> classify(const TileAddress& tile,
                                    const Instance& instance) const override;
  std::size_t size() const { return labels_.size(); }

 private:
  std::map<std::pair<std::string, std::int32_t>, CellLabel> labels_;
};

std::string cell_id(const TileAddress& tile, std::int32_t instance_id);

std::vector<CellRecord> extract_cells(const InstanceMask& mask, const CellClassifier& classifier,
                                      double context_factor = kDefaultContextFactor);

// Mask files: 16-bit PGM (P5) or ASCII PGM (P2) named "<slide>_r<row>_c<col>.pgm",
// with an optional sidecar "<same stem>.labels.tsv" of
// "instance_id \t raw_label \t confidence \t kw1;kw2" lines.
std::filesystem::path mask_path(const std::filesystem::path& dir, const TileAddress& tile);
std::filesystem::path labels_path(const std::filesystem::path& dir, const TileAddress& tile);
InstanceMask read_mask(const std::filesystem::path& path, const TileAddress& tile);
void write_mask(const std::filesystem::path& path, const InstanceMask& mask);
void read_labels(const std::filesystem::path& path, const TileAddress& tile,
                 std::string_view dataset, TableClassifier& into);
// Canonical subtype names, readable back with dataset "native".
void write_labels(const std::filesystem::path& path,
                  const std::vector<std::pair<std::int32_t, CellLabel>>& labels);

}  // namespace pbs
