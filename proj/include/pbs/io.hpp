#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "pbs/cells.hpp"
#include "pbs/metrics.hpp"
#include "pbs/qa.hpp"
#include "pbs/slide.hpp"

namespace pbs::io {

using Json = nlohmann::ordered_json;

// Object encodings with a fixed key order. The *_from_json readers throw
// ValidationError naming the offending field.
Json to_json(const TileAddress& t);
Json to_json(const ScoredTile& t);
Json to_json(const CellRecord& c);
Json to_json(const Differential& d);
Json to_json(const SlideSummary& s);
Json to_json(const QAItem& q);

ScoredTile scored_tile_from_json(const Json& j);
CellRecord cell_from_json(const Json& j);
Differential differential_from_json(const Json& j);
SlideSummary slide_from_json(const Json& j);
QAItem qa_from_json(const Json& j);

struct Prediction {
  std::string qa_id;
  std::string prediction;
};

Json to_json(const Prediction& p);
Prediction prediction_from_json(const Json& j);

// One compact object per line, '\n' terminated.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

template <typename T>
void write_records(const std::filesystem::path& path, const std::vector<T>& records) {
  std::vector<Json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) rows.push_back(to_json(r));
  write_jsonl(path, rows);
}

// Calls `fn(line_number, object)` for each non-blank line. Parse errors are
// rethrown as ValidationError carrying "<path>:<line>".
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(int, const Json&)>& fn);

std::vector<ScoredTile> read_tiles(const std::filesystem::path& path);
std::vector<CellRecord> read_cells(const std::filesystem::path& path);
std::vector<SlideSummary> read_slides(const std::filesystem::path& path);
std::vector<QAItem> read_qa(const std::filesystem::path& path);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);

using StatsKey = std::tuple<std::string, Level, Task, QType>;  // split first

struct ManifestStats {
  std::map<StatsKey, std::int64_t> counts;

  std::int64_t total() const;
  void add(const std::string& split, const QAItem& item);
  // split,level,task,qtype,count rows followed by a total row.
  std::string to_csv() const;
  friend bool operator==(const ManifestStats&, const ManifestStats&) = default;
};

ManifestStats stats_of(const std::vector<QAItem>& items, const std::string& split);

struct ManifestIssue {
  int line = 0;
  std::string message;
};

struct ManifestReport {
  ManifestStats stats;  // valid lines only
  std::vector<ManifestIssue> errors;
  bool ok() const { return errors.empty(); }
};

// Every non-blank line must decode to a QAItem with no rule violations.
// Throws ValidationError only when the file cannot be opened.
ManifestReport validate_manifest(const std::filesystem::path& path,
                                 const std::string& split = "all");

// Pairs each QA item with its prediction; missing predictions score as the
// empty string. Predictions for unknown ids are counted in `unmatched`.
std::vector<EvalRecord> join_predictions(const std::vector<QAItem>& items,
                                         const std::vector<Prediction>& preds,
                                         std::size_t* unmatched = nullptr);

}  // namespace pbs::io
