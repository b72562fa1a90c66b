#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "pbs/cells.hpp"
#include "pbs/error.hpp"
#include "pbs/io.hpp"
#include "pbs/metrics.hpp"
#include "pbs/pipeline.hpp"
#include "pbs/qa.hpp"
#include "pbs/slide.hpp"
#include "pbs/synthetic.hpp"
#include "pbs/train.hpp"
#include "pbs/version.hpp"

namespace fs = std::filesystem;
using namespace pbs;

namespace {

struct Tile {
  std::string slide;
  int size = kTileSize;
  double threshold = kDefaultQualityThreshold;
  fs::path out = "tiles.jsonl";
  fs::path masks_out;
  unsigned threads = 1;
};

struct Extract {
  fs::path tiles = "tiles.jsonl";
  fs::path masks;
  double factor = kDefaultContextFactor;
  std::string dataset = "native";
  fs::path out = "cells.jsonl";
};

struct Diff {
  fs::path cells = "cells.jsonl";
  double min_conf = kDefaultMinConfidence;
  std::string diagnosis;
  fs::path out = "diff.json";
  fs::path slides_out = "slides.jsonl";
};

struct GenQa {
  fs::path cells = "cells.jsonl";
  fs::path slides;
  fs::path mix;
  int options = kDefaultOptionCount;
  double dedupe = kDefaultDedupeThreshold;
  std::uint64_t seed = 0;
  fs::path out = "qa.jsonl";
};

struct Eval {
  fs::path qa = "qa.jsonl";
  fs::path pred = "preds.jsonl";
  int boot = kDefaultBootstrapRounds;
  std::uint64_t seed = 0;
  fs::path out = "report.csv";
};

struct AlignTrain {
  std::string phase = "align";
  int pairs = 256;
  int tokens = train::kQueryTokens;
  int dim = 16;
  int layers = 1;
  int classes = 8;
  double noise = 0.0;
  double empty_fraction = 0.0;
  int steps = train::kDefaultTotalSteps;
  int batch = 32;
  double lr = 0.2;
  double warmup = train::kDefaultWarmupFrac;
  double local_weight = 1.0;
  double temperature = 0.07;
  bool no_align = false;
  std::uint64_t seed = 0;
  fs::path trace = "trace.csv";
  fs::path checkpoint;
};

struct Validate {
  fs::path manifest;
  std::string split = "all";
  fs::path stats_out;
};

void write_synthetic_masks(const SyntheticSlide& slide, const std::vector<TileAddress>& kept,
                           const fs::path& dir) {
  fs::create_directories(dir);
  const auto classifier = slide.classifier_for(kept);
  for (const auto& t : kept) {
    const InstanceMask mask = slide.mask_for(t);
    write_mask(mask_path(dir, t), mask);
    std::vector<std::pair<std::int32_t, CellLabel>> labels;
    std::set<std::int32_t> ids(mask.labels.data(), mask.labels.data() + mask.labels.size());
    for (auto id : ids) {
      if (id == 0) continue;
      Instance inst;
      inst.id = id;
      if (auto label = classifier.classify(t, inst)) labels.emplace_back(id, *label);
    }
    write_labels(labels_path(dir, t), labels);
  }
}

int cmd_tile(const Tile& o) {
  std::optional<SyntheticSlide> synthetic;
  std::optional<SlideImage> image;
  if (auto spec = parse_synthetic(o.slide))
    synthetic.emplace(*spec);
  else
    image = read_ppm(o.slide);
  const SlideImage& slide = synthetic ? synthetic->image() : *image;
  const auto scored =
      score_tiles(slide, tile_grid(slide, o.size), HeuristicScorer{}, o.threshold, o.threads);
  io::write_records(o.out, scored);
  const auto kept = kept_tiles(scored);
  if (!o.masks_out.empty()) {
    if (!synthetic) throw ConfigError("--masks-out is only available for synthetic slides");
    write_synthetic_masks(*synthetic, kept, o.masks_out);
  }
  std::cerr << slide.id() << ": " << scored.size() << " tiles, " << kept.size() << " kept\n";
  return 0;
}

int cmd_extract(const Extract& o) {
  const auto cells =
      extract_cells_from_masks(io::read_tiles(o.tiles), o.masks, o.dataset, o.factor);
  io::write_records(o.out, cells);
  std::cerr << cells.size() << " cells\n";
  return 0;
}

int cmd_differential(const Diff& o) {
  std::optional<Diagnosis> fixed;
  if (!o.diagnosis.empty()) {
    fixed = parse_diagnosis(o.diagnosis);
    if (!fixed) throw ConfigError("unknown diagnosis '" + o.diagnosis + "'");
  }
  const auto cells = io::read_cells(o.cells);
  const auto slides = summarize_slides(cells, o.min_conf, [&](const std::string& id) {
    return fixed ? fixed : synthetic_slide_diagnosis(id);
  });
  io::Json diff{{"min_conf", o.min_conf}, {"slides", io::Json::array()}};
  for (const auto& s : slides)
    diff["slides"].push_back(
        io::Json{{"slide_id", s.slide_id}, {"differential", io::to_json(s.differential)}});
  io::write_text(o.out, diff.dump(2) + "\n");
  if (!o.slides_out.empty()) io::write_records(o.slides_out, slides);
  std::cerr << slides.size() << " slides\n";
  return 0;
}

int cmd_gen_qa(const GenQa& o) {
  TaskTypeMix mix = TaskTypeMix::all_supported(1);
  mix.option_count = o.options;
  if (!o.mix.empty()) mix = TaskTypeMix::parse(io::read_text(o.mix));
  const auto cells = io::read_cells(o.cells);
  const auto slides = o.slides.empty() ? std::vector<SlideSummary>{} : io::read_slides(o.slides);
  const auto items = generate_qa(cells, slides, mix, o.seed, o.dedupe);
  io::write_records(o.out, items);
  std::cerr << items.size() << " items\n";
  return 0;
}

int cmd_evaluate(const Eval& o) {
  const auto items = io::read_qa(o.qa);
  std::size_t unmatched = 0;
  const auto records = io::join_predictions(items, io::read_predictions(o.pred), &unmatched);
  if (unmatched) std::cerr << "warning: " << unmatched << " predictions match no QA item\n";
  const auto report = evaluate(records, o.boot, o.seed);
  io::write_text(o.out, report.to_csv());
  std::cerr << report.cells.size() << " metric cells over " << records.size() << " items\n";
  return 0;
}

int cmd_align_train(const AlignTrain& o) {
  train::Model model = train::Model::init(o.tokens, o.dim, o.seed, o.layers);
  train::Schedule schedule{o.lr, o.warmup, o.steps, 0.0};
  train::PhasePlan plan;
  train::DataSource data;
  if (o.phase == "align") {
    plan = train::PhasePlan::cell_patch_align(!o.no_align);
    data = train::synth_paired_tokens(o.pairs, o.tokens, o.dim, o.noise, o.seed,
                                      o.empty_fraction);
  } else if (o.phase == "repr") {
    if (o.no_align) throw ConfigError("--no-align applies to the align phase only");
    plan = train::PhasePlan::repr_learning();
    data = train::synth_itc_pairs(o.pairs, o.tokens, o.dim, o.classes, o.noise, o.seed);
  } else {
    throw ConfigError("--phase must be 'align' or 'repr'");
  }
  plan.batch_size = o.batch;
  plan.loss = {o.local_weight, o.temperature};

  std::optional<train::AlignmentEval> before;
  if (o.phase == "align")
    before = train::evaluate_alignment(model, std::get<train::PairedTokens>(data), plan.loss);
  train::TrainingTrace trace;
  try {
    trace = train::run_phase(model, plan, data, schedule, o.seed);
  } catch (const train::TrainingError& e) {
    io::write_text(o.trace, e.trace().to_csv());
    throw;
  }
  io::write_text(o.trace, trace.to_csv());
  if (!o.checkpoint.empty()) train::save_model(o.checkpoint, model);
  if (before) {
    const auto after = train::evaluate_alignment(model, std::get<train::PairedTokens>(data), plan.loss);
    std::printf("loss %.6f -> %.6f, top1 %.4f -> %.4f over %d pairs\n", before->loss_total,
                after.loss_total, before->top1, after.top1, after.pairs);
  } else if (!trace.rows.empty() && trace.rows.back().loss_total) {
    std::printf("itc loss %.6f -> %.6f\n", *trace.rows.front().loss_total,
                *trace.rows.back().loss_total);
  }
  return 0;
}

int cmd_validate(const Validate& o) {
  const auto report = io::validate_manifest(o.manifest, o.split);
  for (const auto& e : report.errors)
    std::cerr << o.manifest.string() << ":" << e.line << ": " << e.message << '\n';
  const std::string csv = report.stats.to_csv();
  if (o.stats_out.empty())
    std::cout << csv;
  else
    io::write_text(o.stats_out, csv);
  std::cerr << report.stats.total() << " valid items, " << report.errors.size()
            << " invalid lines\n";
  return report.ok() ? 0 : 1;
}

int cmd_run(const RunConfig& config) {
  const auto report = run_pipeline(config);
  for (const auto& s : report.stages) std::cerr << s.stage << ": " << s.count << '\n';
  std::cerr << "summary: " << report.summary.string() << '\n';
  return 0;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("PBS_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("PBS_SEED must be an unsigned integer, got '") + env + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peripheral blood smear benchmark toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  const std::string seed_help = "Random seed (default from PBS_SEED, else 0)";

  Tile tile;
  auto* tile_cmd = app.add_subcommand("tile", "Grid a slide into tiles and score them for QC");
  tile_cmd->add_option("--slide", tile.slide, "PPM path or synthetic:WxH:seed")->required();
  tile_cmd->add_option("--size", tile.size, "Tile side in pixels")->check(CLI::Range(1, 1 << 20));
  tile_cmd->add_option("--threshold", tile.threshold, "Keep tiles with quality >= threshold")
      ->check(CLI::Range(0.0, 1.0));
  tile_cmd->add_option("--out", tile.out, "Tile manifest (JSONL)");
  tile_cmd->add_option("--masks-out", tile.masks_out,
                       "Synthetic slides only: write instance masks and labels of kept tiles here");
  tile_cmd->add_option("--threads", tile.threads, "Scoring workers (0 = hardware concurrency)");

  Extract extract;
  auto* extract_cmd =
      app.add_subcommand("extract-cells", "Turn instance masks of kept tiles into cell records");
  extract_cmd->add_option("--tiles", extract.tiles, "Tile manifest from 'tile'");
  extract_cmd->add_option("--masks", extract.masks, "Directory of <tile>.pgm masks")->required();
  extract_cmd->add_option("--factor", extract.factor, "Context factor of the square crop")
      ->check(CLI::Range(1.0, 16.0));
  extract_cmd->add_option("--dataset", extract.dataset,
                          "Label vocabulary of the .labels.tsv sidecars (native, LISC, AML-LMU, "
                          "APL-kaggle)");
  extract_cmd->add_option("--out", extract.out, "Cell manifest (JSONL)");

  Diff diff;
  auto* diff_cmd = app.add_subcommand("differential", "Per-slide WBC differential counts");
  diff_cmd->add_option("--cells", diff.cells, "Cell manifest");
  diff_cmd->add_option("--min-conf", diff.min_conf, "Minimum classifier confidence counted")
      ->check(CLI::Range(0.0, 1.0));
  diff_cmd->add_option("--diagnosis", diff.diagnosis,
                       "Diagnosis for every slide (anemia, MDS, control); synthetic slides "
                       "default to their generated diagnosis");
  diff_cmd->add_option("--out", diff.out, "Differential report (JSON)");
  diff_cmd->add_option("--slides-out", diff.slides_out,
                       "Slide summaries for gen-qa (JSONL); empty to skip");

  GenQa gen;
  gen.seed = seed;
  auto* gen_cmd = app.add_subcommand("gen-qa", "Generate template QA items");
  gen_cmd->add_option("--cells", gen.cells, "Cell manifest");
  gen_cmd->add_option("--slides", gen.slides, "Slide summaries; empty for cell-level items only");
  gen_cmd->add_option("--mix", gen.mix,
                      "Mix file of 'level.task.qtype = count' lines; empty for one item per "
                      "supported combination");
  gen_cmd->add_option("--options", gen.options, "MCQ option count when no mix file is given")
      ->check(CLI::Range(2, 26));
  gen_cmd->add_option("--dedupe", gen.dedupe,
                      "Drop items whose question Jaccard similarity reaches this value")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--seed", gen.seed, seed_help);
  gen_cmd->add_option("--out", gen.out, "QA manifest (JSONL)");

  Eval eval;
  eval.seed = seed;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score predictions against a QA manifest");
  eval_cmd->add_option("--qa", eval.qa, "QA manifest");
  eval_cmd->add_option("--pred", eval.pred, "Predictions, one {qa_id, prediction} per line");
  eval_cmd->add_option("--boot", eval.boot, "Bootstrap rounds")->check(CLI::Range(1, 1 << 24));
  eval_cmd->add_option("--seed", eval.seed, seed_help);
  eval_cmd->add_option("--out", eval.out, "Metric report (CSV)");

  AlignTrain at;
  at.seed = seed;
  auto* at_cmd = app.add_subcommand("align-train", "Toy alignment training on synthetic tokens");
  at_cmd->add_option("--phase", at.phase, "align (cell-patch alignment) or repr (ITC)");
  at_cmd->add_option("--pairs", at.pairs, "Synthetic training pairs")->check(CLI::Range(1, 1 << 24));
  at_cmd->add_option("--tokens", at.tokens, "Tokens per sample (N)")->check(CLI::Range(1, 4096));
  at_cmd->add_option("--dim", at.dim, "Embedding dimension (d)")->check(CLI::Range(1, 4096));
  at_cmd->add_option("--layers", at.layers, "Resampler layers")->check(CLI::Range(1, 64));
  at_cmd->add_option("--classes", at.classes, "Caption classes (repr phase)")
      ->check(CLI::Range(1, 1 << 20));
  at_cmd->add_option("--noise", at.noise, "Noise level of the synthetic data")
      ->check(CLI::NonNegativeNumber);
  at_cmd->add_option("--empty-fraction", at.empty_fraction,
                     "Fraction of patches without cells (align phase)")
      ->check(CLI::Range(0.0, 1.0));
  at_cmd->add_option("--steps", at.steps, "Training steps")->check(CLI::Range(1, 1 << 24));
  at_cmd->add_option("--batch", at.batch, "Minibatch size")->check(CLI::Range(1, 1 << 20));
  at_cmd->add_option("--lr", at.lr, "Peak learning rate")
      ->check(CLI::PositiveNumber);
  at_cmd->add_option("--warmup", at.warmup, "Warm-up fraction of the steps")
      ->check(CLI::Range(0.0, 0.999));
  at_cmd->add_option("--local-weight", at.local_weight, "Weight of the local alignment loss")
      ->check(CLI::NonNegativeNumber);
  at_cmd->add_option("--temperature", at.temperature, "ITC temperature")
      ->check(CLI::PositiveNumber);
  at_cmd->add_flag("--no-align", at.no_align, "Ablation: skip the alignment losses");
  at_cmd->add_option("--seed", at.seed, seed_help);
  at_cmd->add_option("--trace", at.trace, "Training trace (CSV)");
  at_cmd->add_option("--checkpoint", at.checkpoint, "Write final parameters here; empty to skip");

  Validate val;
  auto* val_cmd = app.add_subcommand("validate", "Check a QA manifest and count its items");
  val_cmd->add_option("manifest,--manifest", val.manifest, "QA manifest (JSONL)")->required();
  val_cmd->add_option("--split", val.split, "Split name used in the statistics");
  val_cmd->add_option("--stats-out", val.stats_out, "Write statistics CSV here instead of stdout");

  RunConfig run;
  run.seed = seed;
  std::string run_dx;
  bool no_eval = false;
  auto* run_cmd = app.add_subcommand("run", "Run tile, extract-cells, differential, gen-qa and evaluate");
  run_cmd->add_option("--slide", run.slide, "PPM path or synthetic:WxH:seed");
  run_cmd->add_option("--masks", run.masks, "Mask directory (PPM slides)");
  run_cmd->add_option("--dataset", run.dataset, "Label vocabulary of the mask sidecars");
  run_cmd->add_option("--diagnosis", run_dx, "Slide diagnosis (PPM slides)");
  run_cmd->add_option("--mix", run.mix, "QA mix file; empty for one item per combination");
  run_cmd->add_option("--out", run.out, "Output directory");
  run_cmd->add_option("--seed", run.seed, seed_help);
  run_cmd->add_option("--size", run.tile_size, "Tile side in pixels");
  run_cmd->add_option("--threshold", run.qc_threshold, "QC keep threshold");
  run_cmd->add_option("--factor", run.context_factor, "Cell crop context factor");
  run_cmd->add_option("--min-conf", run.min_confidence, "Minimum confidence for differentials");
  run_cmd->add_option("--options", run.option_count, "MCQ option count when no mix file is given");
  run_cmd->add_option("--dedupe", run.dedupe_threshold, "QA near-duplicate threshold");
  run_cmd->add_option("--context", run.context_tiles, "Tiles sampled as slide context");
  run_cmd->add_option("--boot", run.boot_rounds, "Bootstrap rounds");
  run_cmd->add_flag("--no-eval", no_eval, "Skip the baseline evaluation stage");
  run_cmd->add_option("--threads", run.threads, "QC scoring workers (0 = hardware concurrency)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors share the config-error exit status.
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*tile_cmd) return cmd_tile(tile);
    if (*extract_cmd) return cmd_extract(extract);
    if (*diff_cmd) return cmd_differential(diff);
    if (*gen_cmd) return cmd_gen_qa(gen);
    if (*eval_cmd) return cmd_evaluate(eval);
    if (*at_cmd) return cmd_align_train(at);
    if (*val_cmd) return cmd_validate(val);
    if (*run_cmd) {
      if (!run_dx.empty()) {
        run.diagnosis = parse_diagnosis(run_dx);
        if (!run.diagnosis) throw ConfigError("unknown diagnosis '" + run_dx + "'");
      }
      run.evaluate = !no_eval;
      return cmd_run(run);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MappingMiss& e) {
    std::cerr << "mapping miss: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
