#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "pbs/train.hpp"

using namespace pbs;
using namespace pbs::train;

namespace {

Schedule toy_schedule(int steps, double lr = 0.2) {
  Schedule s;
  s.base_lr = lr;
  s.total_steps = steps;
  return s;
}

PairedTokens small_pairs(double noise = 0.0, double empty = 0.0) {
  return synth_paired_tokens(64, 8, 16, noise, 7, empty);
}

}  // namespace

TEST(Schedule, Defaults) {
  const Schedule s;
  EXPECT_EQ(s.warmup_steps(), 50);
  EXPECT_EQ(lr_at(s, 0), 0.0);
  EXPECT_EQ(lr_at(s, 50), 5e-5);
  EXPECT_EQ(lr_at(s, 500), 0.0);
  EXPECT_NEAR(lr_at(s, 25), 2.5e-5, 1e-18);
  EXPECT_NEAR(lr_at(s, 275), 2.5e-5, 1e-18);
}

TEST(Schedule, ContinuousAtJunction) {
  for (int total : {10, 97, 500, 1001}) {
    Schedule s;
    s.total_steps = total;
    const double w = s.warmup_steps();
    EXPECT_NEAR(schedule_detail::warmup_lr(s, w), schedule_detail::cosine_lr(s, w), 1e-12);
    EXPECT_EQ(lr_at(s, s.warmup_steps()), s.base_lr);
    EXPECT_EQ(lr_at(s, total), 0.0);
  }
}

TEST(Schedule, MonotonePieces) {
  const Schedule s;
  for (int t = 1; t <= s.warmup_steps(); ++t) EXPECT_GT(lr_at(s, t), lr_at(s, t - 1));
  for (int t = s.warmup_steps() + 1; t <= s.total_steps; ++t)
    EXPECT_LE(lr_at(s, t), lr_at(s, t - 1));
}

TEST(Schedule, WarmupCeilAndErrors) {
  Schedule s;
  s.total_steps = 15;
  EXPECT_EQ(s.warmup_steps(), 2);
  s.warmup_frac = 0.0;
  EXPECT_EQ(s.warmup_steps(), 0);
  EXPECT_EQ(lr_at(s, 0), s.base_lr);
  EXPECT_THROW(lr_at(s, -1), DomainError);
  EXPECT_THROW(lr_at(s, 16), DomainError);
  s.warmup_frac = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s.warmup_frac = 0.1;
  s.base_lr = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Synth, NoiseZeroInputsPermuteCellTokens) {
  const auto data = small_pairs(0.0, 0.25);
  int empty = 0;
  for (const auto& s : data.samples) {
    if (!s.has_cells()) {
      ++empty;
      continue;
    }
    ASSERT_EQ(s.inputs.rows(), s.cell_tokens.rows());
    for (Eigen::Index i = 0; i < s.inputs.rows(); ++i) {
      bool found = false;
      for (Eigen::Index j = 0; j < s.cell_tokens.rows() && !found; ++j)
        found = (s.inputs.row(i) - s.cell_tokens.row(j)).cwiseAbs().maxCoeff() < 1e-12;
      EXPECT_TRUE(found);
    }
  }
  EXPECT_GT(empty, 0);
  EXPECT_LT(empty, 64);
}

TEST(Synth, ExistenceConstructionHasZeroGlobalLoss) {
  const auto data = small_pairs();
  auto model = Model::init(8, 16, 1);
  model.patch_perceiver = Params::zeros(8, 16);
  model.patch_perceiver.wv.setIdentity();
  model.patch_perceiver.wo.setIdentity();
  model.shared_map.setIdentity();
  const auto e = evaluate_alignment(model, data);
  EXPECT_LT(e.loss_global, 1e-12);
  EXPECT_EQ(e.pairs, 64);
}

TEST(Plans, GroupsAreDisjoint) {
  for (const auto& p : {PhasePlan::repr_learning(), PhasePlan::cell_patch_align(),
                        PhasePlan::cell_instruction(), PhasePlan::slide_instruction()}) {
    EXPECT_NO_THROW(p.validate());
    for (auto g : p.trainable) EXPECT_FALSE(p.frozen.count(g)) << to_string(g);
  }
  EXPECT_TRUE(PhasePlan::cell_patch_align().frozen.count(Group::CellQFormer));
  EXPECT_TRUE(PhasePlan::cell_patch_align().trainable.count(Group::SharedMap));
  EXPECT_TRUE(PhasePlan::repr_learning().trainable.count(Group::CellQFormer));
}

TEST(Align, LearnsAndLeavesFrozenGroupsAlone) {
  const auto data = small_pairs();
  auto model = Model::init(8, 16, 3);
  const auto before = model;
  const auto e0 = evaluate_alignment(model, data);
  const auto trace = run_phase(model, PhasePlan::cell_patch_align(), data, toy_schedule(200), 5);
  const auto e1 = evaluate_alignment(model, data);
  ASSERT_EQ(trace.rows.size(), 200u);
  EXPECT_LT(e1.loss_total, 0.5 * e0.loss_total);
  EXPECT_GT(e1.top1, e0.top1);
  for (auto g : PhasePlan::cell_patch_align().frozen)
    EXPECT_EQ(model.group_bytes(g), before.group_bytes(g)) << to_string(g);
  EXPECT_NE(model.group_bytes(Group::PatchPerceiver), before.group_bytes(Group::PatchPerceiver));
}

TEST(Align, Deterministic) {
  const auto data = small_pairs(0.1);
  auto a = Model::init(8, 16, 3), b = Model::init(8, 16, 3);
  const auto ta = run_phase(a, PhasePlan::cell_patch_align(), data, toy_schedule(30), 11);
  const auto tb = run_phase(b, PhasePlan::cell_patch_align(), data, toy_schedule(30), 11);
  EXPECT_EQ(ta, tb);
  EXPECT_EQ(ta.to_csv(), tb.to_csv());
  EXPECT_EQ(a.group_bytes(Group::PatchPerceiver), b.group_bytes(Group::PatchPerceiver));
}

TEST(Align, SkipsPatchesWithoutCells) {
  const auto data = small_pairs(0.0, 0.5);
  int with_cells = 0;
  for (const auto& s : data.samples) with_cells += s.has_cells();
  EXPECT_EQ(evaluate_alignment(Model::init(8, 16, 1), data).pairs, with_cells);
  auto model = Model::init(8, 16, 1);
  EXPECT_NO_THROW(run_phase(model, PhasePlan::cell_patch_align(), data, toy_schedule(5), 1));

  PairedTokens none = data;
  for (auto& s : none.samples) s.cell_tokens.resize(0, 16);
  EXPECT_THROW(run_phase(model, PhasePlan::cell_patch_align(), none, toy_schedule(5), 1),
               ValidationError);
}

TEST(Align, AblationRecordsNoLosses) {
  const auto data = small_pairs();
  auto model = Model::init(8, 16, 3);
  const auto before = model;
  const auto trace =
      run_phase(model, PhasePlan::cell_patch_align(false), data, toy_schedule(20), 5);
  ASSERT_EQ(trace.rows.size(), 20u);
  for (const auto& r : trace.rows) {
    EXPECT_FALSE(r.loss_global);
    EXPECT_FALSE(r.loss_local);
    EXPECT_FALSE(r.loss_total);
  }
  EXPECT_NE(trace.to_csv().find("align=off"), std::string::npos);
  EXPECT_EQ(model.group_bytes(Group::PatchPerceiver), before.group_bytes(Group::PatchPerceiver));
}

TEST(Align, DivergenceRaisesWithTrace) {
  const auto data = small_pairs();
  auto model = Model::init(8, 16, 3);
  try {
    run_phase(model, PhasePlan::cell_patch_align(), data, toy_schedule(200, 1e6), 5);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_FALSE(e.trace().rows.empty());
    EXPECT_LT(e.trace().rows.size(), 200u);
  }
}

TEST(Align, WrongDataSourceIsConfigError) {
  auto model = Model::init(8, 16, 3);
  EXPECT_THROW(run_phase(model, PhasePlan::cell_patch_align(), ItcPairs{}, toy_schedule(5), 1),
               ConfigError);
  EXPECT_THROW(run_phase(model, PhasePlan::cell_instruction(), small_pairs(), toy_schedule(5), 1),
               ConfigError);
}

TEST(Repr, ItcLossDecreases) {
  const auto data = synth_itc_pairs(128, 8, 16, 4, 0.1, 3);
  auto model = Model::init(8, 16, 2);
  const auto before = model;
  const auto trace = run_phase(model, PhasePlan::repr_learning(), data, toy_schedule(150), 9);
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 10; ++i) {
    head += *trace.rows[static_cast<std::size_t>(i)].loss_total;
    tail += *trace.rows[trace.rows.size() - 1 - static_cast<std::size_t>(i)].loss_total;
  }
  EXPECT_LT(tail, head);
  EXPECT_EQ(model.group_bytes(Group::PatchPerceiver), before.group_bytes(Group::PatchPerceiver));
}

TEST(Instruction, ExternalLossOnProjector) {
  auto model = Model::init(4, 6, 1);
  const auto before = model;
  const auto plan = PhasePlan::slide_instruction();
  ASSERT_TRUE(plan.trainable.count(Group::Projector));
  auto quadratic = [](const Model& m, int) {
    ExternalStep s{m.projector.squaredNorm(), Model::zeros_like(m)};
    s.grad.projector = 2.0 * m.projector;
    return s;
  };
  const auto trace = run_instruction_phase(model, plan, toy_schedule(40), quadratic);
  EXPECT_LT(*trace.rows.back().loss_total, *trace.rows.front().loss_total);
  for (auto g : plan.frozen) EXPECT_EQ(model.group_bytes(g), before.group_bytes(g));
  EXPECT_THROW(run_instruction_phase(model, PhasePlan::cell_patch_align(), toy_schedule(5), quadratic),
               ConfigError);
}

TEST(Checkpoint, RoundTrip) {
  auto model = Model::init(4, 6, 8, 2);
  const auto path = std::filesystem::temp_directory_path() / "pbs_test_model.txt";
  save_model(path, model);
  const auto back = load_model(path);
  for (auto g : {Group::CellQFormer, Group::PatchPerceiver, Group::SharedMap, Group::SlidePerceiver,
                 Group::Projector})
    EXPECT_EQ(back.group_bytes(g), model.group_bytes(g));
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path), Error);
}

TEST(Trace, CsvLayout) {
  TrainingTrace t{Phase::CellPatchAlign, true, {{0, 0.0, 1.0, 2.0, 3.0}, {1, 0.5, {}, {}, {}}}};
  const auto csv = t.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "# phase=" + std::string(to_string(t.phase)) + " align=on");
  EXPECT_NE(csv.find("step,lr,loss_global,loss_local,loss_total\n"), std::string::npos);
  EXPECT_NE(csv.find("\n1,0.5,,,\n"), std::string::npos);
}
