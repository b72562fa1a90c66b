#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "pbs/io.hpp"
#include "pbs/pipeline.hpp"

using namespace pbs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pbs_test_" + name);
  fs::remove_all(p);
  return p;
}

QAItem valid_item(Task task, QType q, int n) {
  QAItem item{"item-" + std::to_string(n), Level::Cell, task, q, "img-" + std::to_string(n % 97),
              "Question number " + std::to_string(n) + "?", {}, "", static_cast<std::uint64_t>(n)};
  switch (q) {
    case QType::TrueFalse: item.answer = n % 2 ? "True" : "False"; break;
    case QType::Mcq:
      item.options = {"Basophil", "Monocyte", "Neutrophil", "Eosinophil"};
      item.answer = item.options[static_cast<std::size_t>(n % 4)];
      break;
    case QType::FillBlank: item.answer = "Auer rods"; break;
    case QType::Open: item.answer = "A round nucleus with fine chromatin."; break;
  }
  return item;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Json, QaRoundTripKeepsKeyOrder) {
  const auto item = valid_item(Task::Subtyping, QType::Mcq, 3);
  const auto j = io::to_json(item);
  EXPECT_EQ(j.begin().key(), "id");
  EXPECT_EQ(io::qa_from_json(j), item);
  auto bad = j;
  bad.erase("answer");
  try {
    io::qa_from_json(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("answer"), std::string::npos);
  }
}

TEST(Json, CellAndSlideRoundTrip) {
  const CellRecord c{"s_r1_c2_5", TileAddress{"s", 1, 2}, {10, 20, 64}, Subtype::Monocyte, 0.75,
                     {"vacuolated cytoplasm"}};
  const auto back = io::cell_from_json(io::to_json(c));
  EXPECT_EQ(back.id, c.id);
  EXPECT_EQ(back.tile, c.tile);
  EXPECT_EQ(back.crop, c.crop);
  EXPECT_EQ(back.subtype, c.subtype);
  EXPECT_EQ(back.confidence, c.confidence);
  EXPECT_EQ(back.keywords, c.keywords);

  SlideSummary s{"s", Diagnosis::MDS, differential({c}), {"vacuolated cytoplasm"}};
  const auto sb = io::slide_from_json(io::to_json(s));
  EXPECT_EQ(sb.diagnosis, Diagnosis::MDS);
  EXPECT_EQ(sb.differential.counts, s.differential.counts);
  EXPECT_EQ(sb.findings, s.findings);
}

TEST(Manifest, CellTrainBreakdownTotals) {
  const std::map<Task, std::array<int, 4>> table{
      {Task::Morphology, {4972, 4481, 3263, 877}},
      {Task::Abnormality, {1702, 1729, 808, 3294}},
      {Task::Subtyping, {134, 647, 2360, 401}},
      {Task::Knowledge, {334, 1183, 397, 719}},
  };
  std::vector<QAItem> items;
  int n = 0;
  for (const auto& [task, row] : table)
    for (std::size_t q = 0; q < 4; ++q)
      for (int i = 0; i < row[q]; ++i) items.push_back(valid_item(task, kQTypes[q], n++));
  const auto path = scratch("manifest.jsonl");
  io::write_records(path, items);
  const auto report = io::validate_manifest(path, "train");
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.stats.total(), 27301);
  EXPECT_EQ(report.stats, io::stats_of(items, "train"));
  EXPECT_EQ((report.stats.counts.at({"train", Level::Cell, Task::Abnormality, QType::Open})), 3294);
  fs::remove(path);
}

TEST(Manifest, MalformedLineIsNamed) {
  const auto path = scratch("bad.jsonl");
  std::vector<io::Json> rows{io::to_json(valid_item(Task::Morphology, QType::Open, 1))};
  io::write_jsonl(path, rows);
  {
    std::ofstream out(path, std::ios::app);
    out << "{not json\n";
    auto broken = io::to_json(valid_item(Task::Morphology, QType::Mcq, 2));
    broken["answer"] = "Lymphocyte";
    out << broken.dump() << "\n";
    out << io::to_json(valid_item(Task::Knowledge, QType::TrueFalse, 3)).dump() << "\n";
  }
  const auto report = io::validate_manifest(path);
  ASSERT_EQ(report.errors.size(), 2u);
  EXPECT_EQ(report.errors[0].line, 2);
  EXPECT_EQ(report.errors[1].line, 3);
  EXPECT_EQ(report.stats.total(), 2);
  fs::remove(path);
}

TEST(Manifest, EmptyFileAndMissingFile) {
  const auto path = scratch("empty.jsonl");
  io::write_text(path, "");
  const auto report = io::validate_manifest(path);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.stats.total(), 0);
  EXPECT_EQ(report.stats.to_csv(), "split,level,task,qtype,count\ntotal,,,,0\n");
  fs::remove(path);
  EXPECT_THROW(io::validate_manifest(path), ValidationError);
}

TEST(Predictions, JoinCountsMissingAndUnknown) {
  const std::vector<QAItem> items{valid_item(Task::Morphology, QType::TrueFalse, 1),
                                  valid_item(Task::Morphology, QType::TrueFalse, 2)};
  std::size_t unmatched = 0;
  const auto records =
      io::join_predictions(items, {{"item-1", "True"}, {"ghost", "False"}}, &unmatched);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].prediction, "True");
  EXPECT_EQ(records[1].prediction, "");
  EXPECT_EQ(unmatched, 1u);
}

TEST(RunConfig, Validation) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  c.qc_threshold = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.option_count = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig{};
  c.slide = "slide.ppm";
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(RunConfig, HashIgnoresOutputLocation) {
  RunConfig a, b;
  b.out = "elsewhere";
  b.threads = 4;
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Pipeline, InvalidConfigDoesNoWork) {
  RunConfig c;
  c.qc_threshold = 1.5;
  c.out = scratch("invalid");
  EXPECT_THROW(run_pipeline(c), ConfigError);
  EXPECT_FALSE(fs::exists(c.out));
}

TEST(Pipeline, DeterministicEndToEnd) {
  RunConfig c;
  c.slide = "synthetic:1024x1024:7";
  c.seed = 3;
  c.boot_rounds = 200;
  c.out = scratch("run_a");
  const auto ra = run_pipeline(c);
  c.out = scratch("run_b");
  c.threads = 2;
  run_pipeline(c);
  for (const char* f : {"tiles.jsonl", "cells.jsonl", "diff.json", "slides.jsonl", "qa.jsonl",
                        "context.jsonl", "preds.jsonl", "report.csv", "summary.json"}) {
    const auto a = slurp(fs::temp_directory_path() / "pbs_test_run_a" / f);
    EXPECT_FALSE(a.empty()) << f;
    EXPECT_EQ(a, slurp(c.out / f)) << f;
  }
  EXPECT_TRUE(io::validate_manifest(c.out / "qa.jsonl").ok());
  EXPECT_EQ(ra.stages.front().stage, "tile");
  fs::remove_all(fs::temp_directory_path() / "pbs_test_run_a");
  fs::remove_all(c.out);
}

TEST(Pipeline, StageErrorKeepsEarlierOutputs) {
  const auto dir = scratch("stage_error");
  const auto slide_path = dir / "slide.ppm";
  fs::create_directories(dir);
  write_ppm(slide_path, disk_tile(0.3, 1));
  RunConfig c;
  c.slide = slide_path.string();
  c.masks = dir / "no_masks";
  c.diagnosis = Diagnosis::Control;
  c.out = dir / "out";
  try {
    run_pipeline(c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "extract-cells");
  }
  EXPECT_TRUE(fs::exists(c.out / "tiles.jsonl"));
  EXPECT_FALSE(fs::exists(c.out / "qa.jsonl"));
  fs::remove_all(dir);
}
