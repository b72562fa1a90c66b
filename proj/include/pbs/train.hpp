#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pbs/align.hpp"
#include "pbs/error.hpp"

namespace pbs::train {

using Mat = align::TokenMatrix<double>;
using Params = align::ResamplerParams<double>;

inline constexpr double kDefaultBaseLr = 5e-5;
inline constexpr double kDefaultWarmupFrac = 0.10;
inline constexpr int kDefaultTotalSteps = 500;
inline constexpr int kQueryTokens = 32;

struct Schedule {
  double base_lr = kDefaultBaseLr;
  double warmup_frac = kDefaultWarmupFrac;
  int total_steps = kDefaultTotalSteps;
  double final_lr = 0.0;

  // ceil(warmup_frac * total_steps)
  int warmup_steps() const;
  void validate() const;
};

// Linear ramp 0 -> base_lr over the warm-up steps, then cosine decay to final_lr
// at total_steps. Throws DomainError outside [0, total_steps].
double lr_at(const Schedule& s, int step);

namespace schedule_detail {
// The two branches of lr_at on a continuous step axis.
double warmup_lr(const Schedule& s, double t);
double cosine_lr(const Schedule& s, double t);
}  // namespace schedule_detail

enum class Phase { ReprLearning, CellPatchAlign, CellInstruction, SlideInstruction };
enum class Group { CellQFormer, PatchPerceiver, SharedMap, SlidePerceiver, Projector };

std::string_view to_string(Phase p);
std::string_view to_string(Group g);

// Parameter groups of the multi-scale model. Backbones and the language
// model are external and never materialized here.
struct Model {
  Params cell_qformer;
  Params patch_perceiver;
  Mat shared_map;  // d x d, applied to cell tokens
  Params slide_perceiver;
  Mat projector;  // d x d, feeds the external VLM in instruction phases

  static Model init(int tokens, int dim, std::uint64_t seed, int layers = 1);
  // Same shapes, all zeros; used as a gradient accumulator.
  static Model zeros_like(const Model& m);

  // Raw bytes of one group, for immutability checks.
  std::string group_bytes(Group g) const;
  void axpy(double alpha, const Model& grad, const std::set<Group>& groups);
  bool all_finite() const;
};

void save_model(const std::filesystem::path& path, const Model& m);
Model load_model(const std::filesystem::path& path);

// One patch with its aligned cell tokens. A patch without cells carries a
// cell_tokens matrix with zero rows and is skipped by the alignment phase.
struct PatchSample {
  Mat inputs;       // M x d patch tokens from the frozen backbone
  Mat cell_tokens;  // N x d frozen cell Q-former outputs
  bool has_cells() const { return cell_tokens.rows() > 0; }
};

struct PairedTokens {
  std::vector<PatchSample> samples;
  Mat dictionary;  // (N * atoms) x d; rows [i*atoms, (i+1)*atoms) feed token slot i
  int tokens = 0;
  int dim = 0;
};

// Cell tokens are drawn per slot from a fixed random dictionary; patch inputs
// are row-shuffled noisy mixtures (I + noise R) Vc + noise E. At noise 0 the
// patch inputs are a permutation of the cell tokens.
PairedTokens synth_paired_tokens(int n_pairs, int tokens, int dim, double noise,
                                 std::uint64_t seed, double empty_fraction = 0.0,
                                 int atoms_per_slot = 4);

struct ItcSample {
  Mat cell_inputs;  // backbone tokens of the cell crop
  Mat text;         // 1 x d frozen caption embedding
};

struct ItcPairs {
  std::vector<ItcSample> samples;
};

// Cells from `classes` prototypes; each caption embedding is its class's
// fixed random vector plus noise.
ItcPairs synth_itc_pairs(int n, int tokens, int dim, int classes, double noise,
                         std::uint64_t seed);

using DataSource = std::variant<PairedTokens, ItcPairs>;

struct LossSpec {
  double local_weight = 1.0;   // lambda in L_global + lambda * L_local
  double temperature = 0.07;   // ITC
};

struct PhasePlan {
  Phase phase = Phase::CellPatchAlign;
  std::set<Group> frozen;
  std::set<Group> trainable;
  LossSpec loss;
  int batch_size = 32;
  bool align_enabled = true;

  static PhasePlan repr_learning();
  static PhasePlan cell_patch_align(bool align_enabled = true);
  static PhasePlan cell_instruction();
  static PhasePlan slide_instruction();
  void validate() const;
};

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  std::optional<double> loss_global;
  std::optional<double> loss_local;
  std::optional<double> loss_total;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

struct TrainingTrace {
  Phase phase = Phase::CellPatchAlign;
  bool align_enabled = true;
  std::vector<TraceRow> rows;

  // "# phase=... align=on|off" comment line, then
  // step,lr,loss_global,loss_local,loss_total with empty cells for absent losses.
  std::string to_csv() const;
  friend bool operator==(const TrainingTrace&, const TrainingTrace&) = default;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, TrainingTrace trace)
      : Error(what), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const { return trace_; }

 private:
  TrainingTrace trace_;
};

// Plain SGD on the plan's trainable groups for schedule.total_steps steps
// (one trace row per step, lr = lr_at(step)). Frozen groups are left untouched.
TrainingTrace run_phase(Model& model, const PhasePlan& plan, const DataSource& data,
                        const Schedule& schedule, std::uint64_t seed);

// Instruction-tuning hook: the caller supplies the loss and its gradient
// (shaped like Model; only trainable groups are read).
struct ExternalStep {
  double loss = 0.0;
  Model grad;
};
using ExternalLoss = std::function<ExternalStep(const Model&, int step)>;

TrainingTrace run_instruction_phase(Model& model, const PhasePlan& plan,
                                    const Schedule& schedule, const ExternalLoss& loss);

// Cell tokens from the (frozen) cell Q-former.
Mat encode_cells(const Model& model, const Mat& cell_inputs);
// Patch feature vector: mean of the patch Perceiver's output tokens.
Mat patch_feature(const Model& model, const Mat& patch_inputs);

struct AlignmentEval {
  double loss_global = 0.0;
  double loss_local = 0.0;
  double loss_total = 0.0;
  double top1 = 0.0;  // fraction of patch tokens whose best dot-product match is their own cell token
  int pairs = 0;
};

AlignmentEval evaluate_alignment(const Model& model, const PairedTokens& data,
                                 const LossSpec& loss = {});

}  // namespace pbs::train
