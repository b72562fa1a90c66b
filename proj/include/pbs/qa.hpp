#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "pbs/cells.hpp"
#include "pbs/synthetic.hpp"

namespace pbs {

enum class Level { Cell, Slide };
enum class Task { Morphology, Abnormality, Subtyping, Knowledge, Differential, Diagnosis };
enum class QType { TrueFalse, Mcq, FillBlank, Open };

inline constexpr std::array<Level, 2> kLevels = {Level::Cell, Level::Slide};
inline constexpr std::array<Task, 6> kTasks = {Task::Morphology, Task::Abnormality,
                                              Task::Subtyping,  Task::Knowledge,
                                              Task::Differential, Task::Diagnosis};
inline constexpr std::array<QType, 4> kQTypes = {QType::TrueFalse, QType::Mcq, QType::FillBlank,
                                                 QType::Open};

inline constexpr int kDefaultOptionCount = 4;
inline constexpr double kDefaultDedupeThreshold = 0.9;
inline constexpr int kFillBlankMaxWords = 10;  // answers must be strictly shorter
inline constexpr std::string_view kTemplateBankVersion = "pbs-templates/1";

std::string_view to_string(Level v);
std::string_view to_string(Task v);
std::string_view to_string(QType v);
std::optional<Level> parse_level(std::string_view s);
std::optional<Task> parse_task(std::string_view s);
std::optional<QType> parse_qtype(std::string_view s);

struct QAItem {
  std::string id;
  Level level = Level::Cell;
  Task task = Task::Morphology;
  QType qtype = QType::TrueFalse;
  std::string image_ref;
  std::string question;
  std::vector<std::string> options;
  std::string answer;
  std::uint64_t seed = 0;

  friend bool operator==(const QAItem&, const QAItem&) = default;
};

struct SlideSummary {
  std::string slide_id;
  Diagnosis diagnosis = Diagnosis::Control;
  Differential differential;
  std::vector<std::string> findings;
};

// Keywords of counted cells, most frequent first (ties alphabetical).
std::vector<std::string> collect_findings(const std::vector<CellRecord>& cells,
                                          double min_confidence = kDefaultMinConfidence);

using Combo = std::tuple<Level, Task, QType>;

std::string combo_key(const Combo& c);  // "cell.subtyping.mcq"

// True when the template bank carries a template for this combination.
// Mirrors the non-empty cells of the benchmark's question breakdown.
bool has_template(const Combo& c);
std::vector<Combo> supported_combos();

struct TaskTypeMix {
  std::map<Combo, int> counts;
  int option_count = kDefaultOptionCount;
  int max_retries = 8;

  // Text of "level.task.qtype = count" lines; '#' starts a comment and an
  // "options = N" line sets the MCQ option count. Throws ConfigError on
  // unknown names or combinations without a template.
  static TaskTypeMix parse(std::string_view text);
  // One item for every supported combination.
  static TaskTypeMix all_supported(int per_combo = 1);
  void validate() const;
};

// Rule violations of the QAItem type; empty when the item is valid.
std::vector<std::string> item_violations(const QAItem& item);

int word_count(std::string_view s);

enum class RejectReason { None, AnswerLeak, Length, DuplicateOptions, EmptyAnswer };
std::string_view to_string(RejectReason r);

struct FilterVerdict {
  RejectReason reason = RejectReason::None;
  bool accepted() const { return reason == RejectReason::None; }
};

FilterVerdict qa_quality_filter(const QAItem& item);

// Fisher-Yates permutation determined by `seed`.
std::vector<std::string> shuffle_options(std::vector<std::string> options, std::uint64_t seed);

enum class DedupeScope { Global, PerImage };

// Greedy, order-preserving. An item is dropped when the Jaccard similarity of
// its normalized question tokens to a retained item's reaches `threshold`.
// PerImage only compares items sharing an image_ref.
std::vector<QAItem> dedupe(const std::vector<QAItem>& items,
                           double threshold = kDefaultDedupeThreshold,
                           DedupeScope scope = DedupeScope::Global);

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b);

std::vector<QAItem> generate_cell_qa(const CellRecord& cell, const TaskTypeMix& mix,
                                     std::uint64_t seed);
std::vector<QAItem> generate_slide_qa(const SlideSummary& summary, const TaskTypeMix& mix,
                                      std::uint64_t seed);

}  // namespace pbs
