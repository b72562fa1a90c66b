#include "pbs/pipeline.hpp"

#include <cstdio>
#include <map>
#include <set>

#include "pbs/error.hpp"
#include "pbs/random.hpp"
#include "pbs/synthetic.hpp"
#include "pbs/version.hpp"

namespace pbs {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool unit_interval(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

void RunConfig::validate() const {
  require(!slide.empty(), "slide source is empty");
  require(tile_size >= 16 && tile_size <= 16384, "tile size must lie in [16, 16384]");
  require(unit_interval(qc_threshold), "QC threshold must lie in [0, 1]");
  require(context_factor >= 1.0 && context_factor <= 16.0,
          "context factor must lie in [1, 16]");
  require(unit_interval(min_confidence), "minimum confidence must lie in [0, 1]");
  require(option_count >= 2 && option_count <= 26, "MCQ option count must lie in [2, 26]");
  require(dedupe_threshold > 0.0 && dedupe_threshold <= 1.0,
          "dedupe threshold must lie in (0, 1]");
  require(context_tiles >= 1, "context tile count must be >= 1");
  require(boot_rounds >= 1, "bootstrap rounds must be >= 1");
  require(!out.empty(), "output directory is empty");
  if (!parse_synthetic(slide)) {
    require(!masks.empty(), "a PPM slide needs a masks directory");
    require(diagnosis.has_value(), "a PPM slide needs a diagnosis");
  }
}

io::Json RunConfig::to_json() const {
  // The output directory and thread count do not change any output, so they
  // are left out of the identity.
  return io::Json{{"seed", seed},
                  {"slide", slide},
                  {"masks", masks.generic_string()},
                  {"dataset", dataset},
                  {"diagnosis", diagnosis ? std::string(to_string(*diagnosis)) : ""},
                  {"mix", mix.generic_string()},
                  {"tile_size", tile_size},
                  {"qc_threshold", qc_threshold},
                  {"context_factor", context_factor},
                  {"min_confidence", min_confidence},
                  {"option_count", option_count},
                  {"dedupe_threshold", dedupe_threshold},
                  {"context_tiles", context_tiles},
                  {"boot_rounds", boot_rounds},
                  {"evaluate", evaluate}};
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

std::vector<CellRecord> extract_cells_from_masks(const std::vector<ScoredTile>& tiles,
                                                 const std::filesystem::path& masks,
                                                 std::string_view dataset,
                                                 double context_factor) {
  std::vector<CellRecord> out;
  for (const auto& t : tiles) {
    if (!t.kept) continue;
    const auto mpath = mask_path(masks, t.address);
    if (!std::filesystem::exists(mpath))
      throw ValidationError("no mask for kept tile " + tile_key(t.address) + " (expected " +
                            mpath.string() + ")");
    const InstanceMask mask = read_mask(mpath, t.address);
    TableClassifier labels;
    const auto lpath = labels_path(masks, t.address);
    if (std::filesystem::exists(lpath)) read_labels(lpath, t.address, dataset, labels);
    auto cells = extract_cells(mask, labels, context_factor);
    out.insert(out.end(), std::make_move_iterator(cells.begin()),
               std::make_move_iterator(cells.end()));
  }
  return out;
}

std::optional<Diagnosis> synthetic_slide_diagnosis(const std::string& slide_id) {
  if (auto spec = parse_synthetic_slide_id(slide_id)) return synthetic_diagnosis(spec->seed);
  return std::nullopt;
}

std::vector<SlideSummary> summarize_slides(
    const std::vector<CellRecord>& cells, double min_confidence,
    const std::function<std::optional<Diagnosis>(const std::string&)>& diagnosis_for,
    const std::vector<std::string>& slide_ids) {
  std::map<std::string, std::vector<CellRecord>> by_slide;
  for (const auto& id : slide_ids) by_slide[id];
  for (const auto& c : cells) by_slide[c.tile.slide_id].push_back(c);
  std::vector<SlideSummary> out;
  for (const auto& [id, group] : by_slide) {
    const auto dx = diagnosis_for(id);
    if (!dx) throw ValidationError("no diagnosis known for slide " + id);
    out.push_back({id, *dx, differential(group, min_confidence),
                   collect_findings(group, min_confidence)});
  }
  return out;
}

std::vector<QAItem> generate_qa(const std::vector<CellRecord>& cells,
                                const std::vector<SlideSummary>& slides,
                                const TaskTypeMix& mix, std::uint64_t seed,
                                double dedupe_threshold) {
  mix.validate();
  std::vector<QAItem> items;
  for (const auto& c : cells) {
    auto qa = generate_cell_qa(c, mix, seed);
    items.insert(items.end(), std::make_move_iterator(qa.begin()),
                 std::make_move_iterator(qa.end()));
  }
  for (const auto& s : slides) {
    auto qa = generate_slide_qa(s, mix, seed);
    items.insert(items.end(), std::make_move_iterator(qa.begin()),
                 std::make_move_iterator(qa.end()));
  }
  return dedupe(items, dedupe_threshold, DedupeScope::PerImage);
}

std::vector<io::Prediction> baseline_predictions(const std::vector<QAItem>& items,
                                                 std::uint64_t seed) {
  std::vector<io::Prediction> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    Rng rng(derive_seed(seed, item.id));
    std::string guess;
    switch (item.qtype) {
      case QType::TrueFalse: guess = rng.below(2) ? "True" : "False"; break;
      case QType::Mcq:
        guess = item.options.empty() ? "" : item.options[rng.below(item.options.size())];
        break;
      case QType::FillBlank:
      case QType::Open: guess = item.question; break;
    }
    out.push_back({item.id, std::move(guess)});
  }
  return out;
}

namespace {

template <typename F>
auto run_stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

struct LoadedSlide {
  std::optional<SyntheticSlide> synthetic;
  std::optional<SlideImage> image;
  const SlideImage& get() const { return synthetic ? synthetic->image() : *image; }
};

}  // namespace

RunReport run_pipeline(const RunConfig& config) {
  config.validate();
  const auto& out = config.out;
  std::filesystem::create_directories(out);
  RunReport report;
  auto count = [&](const char* stage, std::int64_t n) { report.stages.push_back({stage, n}); };

  LoadedSlide slide;
  const auto scored = run_stage("tile", [&] {
    if (auto spec = parse_synthetic(config.slide))
      slide.synthetic.emplace(*spec);
    else
      slide.image = read_ppm(config.slide);
    const auto& img = slide.get();
    auto tiles = score_tiles(img, tile_grid(img, config.tile_size), HeuristicScorer{},
                             config.qc_threshold, config.threads);
    io::write_records(out / "tiles.jsonl", tiles);
    return tiles;
  });
  const auto kept = kept_tiles(scored);
  count("tile", static_cast<std::int64_t>(scored.size()));
  count("tile.kept", static_cast<std::int64_t>(kept.size()));

  const auto cells = run_stage("extract-cells", [&] {
    std::vector<CellRecord> all;
    if (slide.synthetic) {
      const auto classifier = slide.synthetic->classifier_for(kept);
      for (const auto& t : kept) {
        auto c = extract_cells(slide.synthetic->mask_for(t), classifier, config.context_factor);
        all.insert(all.end(), c.begin(), c.end());
      }
    } else {
      all = extract_cells_from_masks(scored, config.masks, config.dataset,
                                     config.context_factor);
    }
    io::write_records(out / "cells.jsonl", all);
    return all;
  });
  count("extract-cells", static_cast<std::int64_t>(cells.size()));

  const auto slides = run_stage("differential", [&] {
    const std::string id = slide.get().id();
    auto summaries = summarize_slides(
        cells, config.min_confidence,
        [&](const std::string& s) -> std::optional<Diagnosis> {
          if (s == id && config.diagnosis) return config.diagnosis;
          if (s == id && slide.synthetic) return slide.synthetic->diagnosis();
          return std::nullopt;
        },
        {id});
    io::Json diff{{"min_conf", config.min_confidence}, {"slides", io::Json::array()}};
    for (const auto& s : summaries)
      diff["slides"].push_back(
          io::Json{{"slide_id", s.slide_id}, {"differential", io::to_json(s.differential)}});
    io::write_text(out / "diff.json", diff.dump(2) + "\n");
    io::write_records(out / "slides.jsonl", summaries);
    return summaries;
  });
  count("differential", static_cast<std::int64_t>(slides.size()));

  const auto items = run_stage("gen-qa", [&] {
    TaskTypeMix mix = TaskTypeMix::all_supported(1);
    mix.option_count = config.option_count;
    if (!config.mix.empty()) mix = TaskTypeMix::parse(io::read_text(config.mix));
    auto qa = generate_qa(cells, slides, mix, config.seed, config.dedupe_threshold);
    io::write_records(out / "qa.jsonl", qa);
    return qa;
  });
  count("gen-qa", static_cast<std::int64_t>(items.size()));

  run_stage("context", [&] {
    const auto picked =
        sample_slide_context(kept, config.context_tiles, derive_seed(config.seed, "context"));
    io::Json tiles = io::Json::array();
    for (const auto& t : picked) tiles.push_back(io::to_json(t));
    io::write_jsonl(out / "context.jsonl",
                    {io::Json{{"slide_id", slide.get().id()}, {"tiles", tiles}}});
    count("context", static_cast<std::int64_t>(picked.size()));
    return 0;
  });

  if (config.evaluate) {
    run_stage("evaluate", [&] {
      const auto preds = baseline_predictions(items, derive_seed(config.seed, "baseline"));
      io::write_records(out / "preds.jsonl", preds);
      const auto records = io::join_predictions(items, preds);
      const auto metrics =
          evaluate(records, config.boot_rounds, config.seed);
      io::write_text(out / "report.csv", metrics.to_csv());
      count("evaluate", static_cast<std::int64_t>(metrics.cells.size()));
      return 0;
    });
  }

  io::Json stages = io::Json::array();
  for (const auto& s : report.stages) stages.push_back(io::Json{{"stage", s.stage}, {"count", s.count}});
  const io::Json summary{{"tool", "pbs"},
                         {"version", std::string(kVersion)},
                         {"template_bank", std::string(kTemplateBankVersion)},
                         {"seed", config.seed},
                         {"config_hash", config.hash()},
                         {"config", config.to_json()},
                         {"stages", stages}};
  report.summary = out / "summary.json";
  io::write_text(report.summary, summary.dump(2) + "\n");
  return report;
}

}  // namespace pbs
