#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pbs/cells.hpp"
#include "pbs/error.hpp"
#include "pbs/io.hpp"
#include "pbs/qa.hpp"
#include "pbs/slide.hpp"

namespace pbs {

inline constexpr int kDefaultContextTiles = 30;

struct RunConfig {
  std::uint64_t seed = 0;
  std::string slide = "synthetic:2048x2048:7";  // PPM path or synthetic:WxH:seed
  std::filesystem::path masks;                  // required for PPM slides
  std::string dataset = "native";
  std::optional<Diagnosis> diagnosis;           // required for PPM slides
  std::filesystem::path mix;                    // empty: one item per supported combination
  std::filesystem::path out = "pbs_run";
  int tile_size = kTileSize;
  double qc_threshold = kDefaultQualityThreshold;
  double context_factor = kDefaultContextFactor;
  double min_confidence = kDefaultMinConfidence;
  int option_count = kDefaultOptionCount;
  double dedupe_threshold = kDefaultDedupeThreshold;
  int context_tiles = kDefaultContextTiles;
  int boot_rounds = kDefaultBootstrapRounds;
  bool evaluate = true;
  unsigned threads = 1;

  // Throws ConfigError naming the first out-of-range field.
  void validate() const;
  // Canonical encoding; its FNV-1a hash identifies the run.
  io::Json to_json() const;
  std::string hash() const;
};

// A stage failed; earlier stage outputs stay on disk.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct StageCount {
  std::string stage;
  std::int64_t count = 0;
};

struct RunReport {
  std::vector<StageCount> stages;
  std::filesystem::path summary;
};

RunReport run_pipeline(const RunConfig& config);

// Stage building blocks shared with the CLI.

// Reads "<masks>/<tile>.pgm" (and the optional labels sidecar) for every kept
// tile. A kept tile without a mask file is an error.
std::vector<CellRecord> extract_cells_from_masks(const std::vector<ScoredTile>& tiles,
                                                 const std::filesystem::path& masks,
                                                 std::string_view dataset,
                                                 double context_factor);

// One summary per slide, in slide-id order, covering every slide with cells
// plus `slide_ids`. `diagnosis_for` resolves a slide's diagnosis; nullopt is
// an error.
std::vector<SlideSummary> summarize_slides(
    const std::vector<CellRecord>& cells, double min_confidence,
    const std::function<std::optional<Diagnosis>(const std::string&)>& diagnosis_for,
    const std::vector<std::string>& slide_ids = {});

// Diagnosis of generated slides, recovered from their id.
std::optional<Diagnosis> synthetic_slide_diagnosis(const std::string& slide_id);

// Cell items in cell order, then slide items; near-duplicates are removed
// per image.
std::vector<QAItem> generate_qa(const std::vector<CellRecord>& cells,
                                const std::vector<SlideSummary>& slides,
                                const TaskTypeMix& mix, std::uint64_t seed,
                                double dedupe_threshold = kDefaultDedupeThreshold);

// Chance-level reference predictor: a seeded guess for closed questions and
// the question text echoed back for open ones.
std::vector<io::Prediction> baseline_predictions(const std::vector<QAItem>& items,
                                                 std::uint64_t seed);

}  // namespace pbs
