#include "pbs/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <utility>

#include "pbs/random.hpp"

namespace pbs::train {

int Schedule::warmup_steps() const {
  // Shave a relative 1e-12 so products like 0.1 * 30 = 3.0000000000000004 do
  // not round up to an extra warm-up step.
  return static_cast<int>(std::ceil(warmup_frac * total_steps * (1.0 - 1e-12)));
}

void Schedule::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr))
    throw ConfigError("base learning rate must be positive");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0))
    throw ConfigError("warm-up fraction must lie in [0, 1)");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!std::isfinite(final_lr) || final_lr < 0.0)
    throw ConfigError("final learning rate must be finite and >= 0");
}

namespace schedule_detail {

double warmup_lr(const Schedule& s, double t) {
  const int warm = s.warmup_steps();
  return warm > 0 ? s.base_lr * t / warm : s.base_lr;
}

double cosine_lr(const Schedule& s, double t) {
  const int warm = s.warmup_steps();
  const int span = s.total_steps - warm;
  if (span <= 0) return s.base_lr;
  const double progress = (t - warm) / span;
  return s.final_lr +
         (s.base_lr - s.final_lr) * (0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace schedule_detail

double lr_at(const Schedule& s, int step) {
  s.validate();
  if (step < 0 || step > s.total_steps)
    throw DomainError("step " + std::to_string(step) + " outside [0, " +
                      std::to_string(s.total_steps) + "]");
  if (step < s.warmup_steps()) return schedule_detail::warmup_lr(s, step);
  return schedule_detail::cosine_lr(s, step);
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::ReprLearning: return "repr_learning";
    case Phase::CellPatchAlign: return "cell_patch_align";
    case Phase::CellInstruction: return "cell_instruction";
    case Phase::SlideInstruction: return "slide_instruction";
  }
  return "";
}

std::string_view to_string(Group g) {
  switch (g) {
    case Group::CellQFormer: return "cell_qformer";
    case Group::PatchPerceiver: return "patch_perceiver";
    case Group::SharedMap: return "shared_map";
    case Group::SlidePerceiver: return "slide_perceiver";
    case Group::Projector: return "projector";
  }
  return "";
}

Model Model::init(int tokens, int dim, std::uint64_t seed, int layers) {
  if (tokens < 1 || dim < 1) throw ValidationError("model needs tokens >= 1 and dim >= 1");
  Rng rng(derive_seed(seed, "model-init"));
  Model m;
  m.cell_qformer = Params::random(tokens, dim, rng, layers);
  m.patch_perceiver = Params::random(tokens, dim, rng, layers, 0.1);
  m.shared_map = Mat::Identity(dim, dim);
  m.slide_perceiver = Params::random(tokens, dim, rng, layers);
  m.projector = Mat::Identity(dim, dim);
  return m;
}

Model Model::zeros_like(const Model& m) {
  auto zp = [](const Params& p) { return Params::zeros(p.tokens(), p.dim(), p.layers); };
  return {zp(m.cell_qformer), zp(m.patch_perceiver),
          Mat::Zero(m.shared_map.rows(), m.shared_map.cols()), zp(m.slide_perceiver),
          Mat::Zero(m.projector.rows(), m.projector.cols())};
}

namespace {

void append_bytes(std::string& out, const Mat& m) {
  out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size());
}

void append_bytes(std::string& out, const Params& p) {
  for (const auto* m : {&p.latents, &p.wq, &p.wk, &p.wv, &p.wo}) append_bytes(out, *m);
  out.append(reinterpret_cast<const char*>(&p.layers), sizeof p.layers);
}

void add_scaled(Params& p, double alpha, const Params& g) {
  p.latents += alpha * g.latents;
  p.wq += alpha * g.wq;
  p.wk += alpha * g.wk;
  p.wv += alpha * g.wv;
  p.wo += alpha * g.wo;
}

bool finite(const Params& p) {
  return p.latents.allFinite() && p.wq.allFinite() && p.wk.allFinite() && p.wv.allFinite() &&
         p.wo.allFinite();
}

}  // namespace

std::string Model::group_bytes(Group g) const {
  std::string out;
  switch (g) {
    case Group::CellQFormer: append_bytes(out, cell_qformer); break;
    case Group::PatchPerceiver: append_bytes(out, patch_perceiver); break;
    case Group::SharedMap: append_bytes(out, shared_map); break;
    case Group::SlidePerceiver: append_bytes(out, slide_perceiver); break;
    case Group::Projector: append_bytes(out, projector); break;
  }
  return out;
}

void Model::axpy(double alpha, const Model& grad, const std::set<Group>& groups) {
  for (auto g : groups) switch (g) {
      case Group::CellQFormer: add_scaled(cell_qformer, alpha, grad.cell_qformer); break;
      case Group::PatchPerceiver: add_scaled(patch_perceiver, alpha, grad.patch_perceiver); break;
      case Group::SharedMap: shared_map += alpha * grad.shared_map; break;
      case Group::SlidePerceiver: add_scaled(slide_perceiver, alpha, grad.slide_perceiver); break;
      case Group::Projector: projector += alpha * grad.projector; break;
    }
}

bool Model::all_finite() const {
  return finite(cell_qformer) && finite(patch_perceiver) && shared_map.allFinite() &&
         finite(slide_perceiver) && projector.allFinite();
}

void save_model(const std::filesystem::path& path, const Model& m) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  auto params = [&](std::string_view name, const Params& p) {
    out << name << " layers " << p.layers << '\n';
    for (const auto* w : {&p.latents, &p.wq, &p.wk, &p.wv, &p.wo}) align::write_matrix(out, *w);
  };
  params("cell_qformer", m.cell_qformer);
  params("patch_perceiver", m.patch_perceiver);
  out << "shared_map\n";
  align::write_matrix(out, m.shared_map);
  params("slide_perceiver", m.slide_perceiver);
  out << "projector\n";
  align::write_matrix(out, m.projector);
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  auto expect = [&](std::string_view name) {
    std::string tok;
    if (!(in >> tok) || tok != name)
      throw ValidationError("checkpoint: expected '" + std::string(name) + "'");
  };
  auto params = [&](std::string_view name) {
    expect(name);
    expect("layers");
    Params p;
    if (!(in >> p.layers)) throw ValidationError("checkpoint: bad layer count");
    for (auto* w : {&p.latents, &p.wq, &p.wk, &p.wv, &p.wo}) *w = align::read_matrix<double>(in);
    p.validate();
    return p;
  };
  Model m;
  m.cell_qformer = params("cell_qformer");
  m.patch_perceiver = params("patch_perceiver");
  expect("shared_map");
  m.shared_map = align::read_matrix<double>(in);
  m.slide_perceiver = params("slide_perceiver");
  expect("projector");
  m.projector = align::read_matrix<double>(in);
  return m;
}

PairedTokens synth_paired_tokens(int n_pairs, int tokens, int dim, double noise,
                                 std::uint64_t seed, double empty_fraction, int atoms_per_slot) {
  if (n_pairs < 0 || tokens < 1 || dim < 1 || atoms_per_slot < 1)
    throw ValidationError("synth_paired_tokens: bad sizes");
  if (!(noise >= 0.0)) throw ValidationError("noise must be >= 0");
  if (!(empty_fraction >= 0.0 && empty_fraction <= 1.0))
    throw ValidationError("empty fraction must lie in [0, 1]");
  Rng rng(derive_seed(seed, "paired-tokens"));
  PairedTokens data;
  data.tokens = tokens;
  data.dim = dim;
  // Slot centres with per-atom jitter: tokens in one slot resemble each other.
  data.dictionary.resize(static_cast<Eigen::Index>(tokens) * atoms_per_slot, dim);
  for (int i = 0; i < tokens; ++i) {
    const Mat centre = align::random_tokens<double>(1, dim, rng);
    for (int a = 0; a < atoms_per_slot; ++a)
      data.dictionary.row(i * atoms_per_slot + a) =
          centre + align::random_tokens<double>(1, dim, rng, 0.5);
  }
  for (int p = 0; p < n_pairs; ++p) {
    PatchSample s;
    if (rng.bernoulli(empty_fraction)) {
      s.inputs = align::random_tokens<double>(tokens, dim, rng);
      s.cell_tokens.resize(0, dim);
      data.samples.push_back(std::move(s));
      continue;
    }
    s.cell_tokens.resize(tokens, dim);
    for (int i = 0; i < tokens; ++i)
      s.cell_tokens.row(i) =
          data.dictionary.row(i * atoms_per_slot + static_cast<int>(rng.below(atoms_per_slot)));
    Mat mixing = Mat::Identity(tokens, tokens);
    if (noise > 0.0)
      mixing += align::random_tokens<double>(tokens, tokens, rng, noise / std::sqrt(tokens));
    Mat inputs = mixing * s.cell_tokens;
    if (noise > 0.0) inputs += align::random_tokens<double>(tokens, dim, rng, noise);
    // Patch tokens carry no slot order.
    std::vector<int> perm(static_cast<std::size_t>(tokens));
    for (int i = 0; i < tokens; ++i) perm[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    s.inputs.resize(tokens, dim);
    for (int i = 0; i < tokens; ++i) s.inputs.row(i) = inputs.row(perm[static_cast<std::size_t>(i)]);
    data.samples.push_back(std::move(s));
  }
  return data;
}

ItcPairs synth_itc_pairs(int n, int tokens, int dim, int classes, double noise,
                         std::uint64_t seed) {
  if (n < 0 || tokens < 1 || dim < 1 || classes < 1)
    throw ValidationError("synth_itc_pairs: bad sizes");
  Rng rng(derive_seed(seed, "itc-pairs"));
  std::vector<Mat> prototypes, captions;
  for (int c = 0; c < classes; ++c) {
    prototypes.push_back(align::random_tokens<double>(tokens, dim, rng));
    captions.push_back(align::random_tokens<double>(1, dim, rng));
  }
  ItcPairs out;
  for (int i = 0; i < n; ++i) {
    const auto c = rng.below(static_cast<std::uint64_t>(classes));
    out.samples.push_back(
        {prototypes[c] + align::random_tokens<double>(tokens, dim, rng, noise),
         captions[c] + align::random_tokens<double>(1, dim, rng, noise)});
  }
  return out;
}

PhasePlan PhasePlan::repr_learning() {
  PhasePlan p;
  p.phase = Phase::ReprLearning;
  p.trainable = {Group::CellQFormer};
  p.frozen = {Group::PatchPerceiver, Group::SharedMap, Group::SlidePerceiver, Group::Projector};
  return p;
}

PhasePlan PhasePlan::cell_patch_align(bool align_enabled) {
  PhasePlan p;
  p.phase = Phase::CellPatchAlign;
  p.trainable = {Group::PatchPerceiver, Group::SharedMap};
  p.frozen = {Group::CellQFormer, Group::SlidePerceiver, Group::Projector};
  p.align_enabled = align_enabled;
  return p;
}

PhasePlan PhasePlan::cell_instruction() {
  PhasePlan p;
  p.phase = Phase::CellInstruction;
  p.trainable = {Group::CellQFormer, Group::Projector};
  p.frozen = {Group::PatchPerceiver, Group::SharedMap, Group::SlidePerceiver};
  return p;
}

PhasePlan PhasePlan::slide_instruction() {
  PhasePlan p;
  p.phase = Phase::SlideInstruction;
  p.trainable = {Group::SlidePerceiver, Group::Projector};
  p.frozen = {Group::CellQFormer, Group::PatchPerceiver, Group::SharedMap};
  return p;
}

void PhasePlan::validate() const {
  for (auto g : frozen)
    if (trainable.count(g))
      throw ConfigError("group " + std::string(to_string(g)) + " is both frozen and trainable");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(loss.temperature > 0.0)) throw ConfigError("ITC temperature must be positive");
  if (!(loss.local_weight >= 0.0)) throw ConfigError("local loss weight must be >= 0");
}

std::string TrainingTrace::to_csv() const {
  std::ostringstream out;
  out << "# phase=" << to_string(phase) << " align=" << (align_enabled ? "on" : "off") << '\n';
  out << "step,lr,loss_global,loss_local,loss_total\n";
  out << std::setprecision(17);
  auto cell = [&](const std::optional<double>& v) {
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.step << ',' << r.lr << ',';
    cell(r.loss_global);
    out << ',';
    cell(r.loss_local);
    out << ',';
    cell(r.loss_total);
    out << '\n';
  }
  return out.str();
}

Mat encode_cells(const Model& model, const Mat& cell_inputs) {
  return align::resample(model.cell_qformer, cell_inputs);
}

Mat patch_feature(const Model& model, const Mat& patch_inputs) {
  return align::resample(model.patch_perceiver, patch_inputs).colwise().mean();
}

namespace {

// Epoch-shuffled minibatches over a fixed index set.
class Batcher {
 public:
  Batcher(std::vector<std::size_t> indices, int batch_size, std::uint64_t seed)
      : indices_(std::move(indices)),
        batch_(static_cast<std::size_t>(batch_size)),
        rng_(derive_seed(seed, "batches")) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    const std::size_t want = std::min(batch_, indices_.size());
    while (out.size() < want) {
      if (pos_ == indices_.size()) reshuffle();
      out.push_back(indices_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    for (std::size_t i = indices_.size(); i > 1; --i)
      std::swap(indices_[i - 1], indices_[rng_.below(i)]);
    pos_ = 0;
  }

  std::vector<std::size_t> indices_;
  std::size_t batch_;
  Rng rng_;
  std::size_t pos_ = 0;
};

struct StepResult {
  double loss_global = 0.0;
  double loss_local = 0.0;
  double loss_total = 0.0;
};

StepResult align_step(const Model& model, const PairedTokens& data,
                      const std::vector<std::size_t>& batch, const LossSpec& spec, Model& grad) {
  StepResult r;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (auto idx : batch) {
    const auto& s = data.samples[idx];
    const auto tape = align::resample_forward(model.patch_perceiver, s.inputs);
    const Mat mapped = s.cell_tokens * model.shared_map;
    const auto lg = align::loss_global(tape.output, mapped);
    const auto ll = align::loss_local(tape.output, mapped);
    r.loss_global += scale * lg.value;
    r.loss_local += scale * ll.value;
    const Mat d_vp = scale * (lg.grad_a + spec.local_weight * ll.grad_a);
    const Mat d_mapped = scale * (lg.grad_b + spec.local_weight * ll.grad_b);
    grad.shared_map.noalias() += s.cell_tokens.transpose() * d_mapped;
    const auto g = align::resample_backward(model.patch_perceiver, s.inputs, tape, d_vp);
    add_scaled(grad.patch_perceiver, 1.0, g.params);
  }
  r.loss_total = r.loss_global + spec.local_weight * r.loss_local;
  return r;
}

double itc_step(const Model& model, const ItcPairs& data, const std::vector<std::size_t>& batch,
                const LossSpec& spec, Model& grad) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto d = model.cell_qformer.dim();
  Mat img(b, d), txt(b, d);
  std::vector<align::ResamplerTape<double>> tapes;
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& s = data.samples[batch[static_cast<std::size_t>(i)]];
    tapes.push_back(align::resample_forward(model.cell_qformer, s.cell_inputs));
    img.row(i) = tapes.back().output.colwise().mean();
    txt.row(i) = s.text;
  }
  const auto itc = align::loss_itc(img, txt, spec.temperature);
  const auto n = model.cell_qformer.tokens();
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& s = data.samples[batch[static_cast<std::size_t>(i)]];
    const Mat d_out = Mat::Ones(n, 1) * itc.grad_a.row(i) / static_cast<double>(n);
    const auto g = align::resample_backward(model.cell_qformer, s.cell_inputs,
                                            tapes[static_cast<std::size_t>(i)], d_out);
    add_scaled(grad.cell_qformer, 1.0, g.params);
  }
  return itc.value;
}

std::vector<std::pair<Group, std::string>> snapshot(const Model& m, const std::set<Group>& groups) {
  std::vector<std::pair<Group, std::string>> out;
  for (auto g : groups) out.emplace_back(g, m.group_bytes(g));
  return out;
}

void verify_frozen(const Model& m, const std::vector<std::pair<Group, std::string>>& before) {
  for (const auto& [g, bytes] : before)
    if (m.group_bytes(g) != bytes)
      throw Error("frozen group " + std::string(to_string(g)) + " was modified");
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainingTrace run_phase(Model& model, const PhasePlan& plan, const DataSource& data,
                        const Schedule& schedule, std::uint64_t seed) {
  plan.validate();
  schedule.validate();
  const auto frozen = snapshot(model, plan.frozen);
  TrainingTrace trace{plan.phase, plan.align_enabled, {}};

  if (plan.phase == Phase::CellPatchAlign) {
    const auto* paired = std::get_if<PairedTokens>(&data);
    if (!paired) throw ConfigError("cell-patch alignment needs paired patch/cell tokens");
    // Patches without cells take no part in alignment.
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < paired->samples.size(); ++i)
      if (paired->samples[i].has_cells()) usable.push_back(i);
    if (plan.align_enabled && usable.empty())
      throw ValidationError("no patch in the data source contains cells");
    Batcher batches(usable, plan.batch_size, seed);
    for (int step = 0; step < schedule.total_steps; ++step) {
      TraceRow row{step, lr_at(schedule, step), std::nullopt, std::nullopt, std::nullopt};
      if (!plan.align_enabled) {
        trace.rows.push_back(row);
        continue;
      }
      Model grad = Model::zeros_like(model);
      const auto r = align_step(model, *paired, batches.next(), plan.loss, grad);
      row.loss_global = r.loss_global;
      row.loss_local = r.loss_local;
      row.loss_total = r.loss_total;
      trace.rows.push_back(row);
      if (!finite(r.loss_total))
        throw TrainingError("non-finite loss at step " + std::to_string(step), trace);
      model.axpy(-row.lr, grad, plan.trainable);
      if (!model.all_finite())
        throw TrainingError("non-finite parameters after step " + std::to_string(step), trace);
    }
  } else if (plan.phase == Phase::ReprLearning) {
    const auto* itc = std::get_if<ItcPairs>(&data);
    if (!itc) throw ConfigError("representation learning needs image/text pairs");
    if (itc->samples.empty()) throw ValidationError("empty image/text data source");
    std::vector<std::size_t> all(itc->samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Batcher batches(all, plan.batch_size, seed);
    for (int step = 0; step < schedule.total_steps; ++step) {
      TraceRow row{step, lr_at(schedule, step), std::nullopt, std::nullopt, std::nullopt};
      Model grad = Model::zeros_like(model);
      row.loss_total = itc_step(model, *itc, batches.next(), plan.loss, grad);
      trace.rows.push_back(row);
      if (!finite(*row.loss_total))
        throw TrainingError("non-finite loss at step " + std::to_string(step), trace);
      model.axpy(-row.lr, grad, plan.trainable);
    }
  } else {
    throw ConfigError("instruction phases run through run_instruction_phase");
  }
  verify_frozen(model, frozen);
  return trace;
}

TrainingTrace run_instruction_phase(Model& model, const PhasePlan& plan,
                                    const Schedule& schedule, const ExternalLoss& loss) {
  plan.validate();
  schedule.validate();
  if (plan.phase != Phase::CellInstruction && plan.phase != Phase::SlideInstruction)
    throw ConfigError("run_instruction_phase only drives instruction-tuning phases");
  if (!loss) throw ConfigError("instruction phase needs an external loss callback");
  const auto frozen = snapshot(model, plan.frozen);
  TrainingTrace trace{plan.phase, plan.align_enabled, {}};
  for (int step = 0; step < schedule.total_steps; ++step) {
    TraceRow row{step, lr_at(schedule, step), std::nullopt, std::nullopt, std::nullopt};
    ExternalStep ext = loss(std::as_const(model), step);
    row.loss_total = ext.loss;
    trace.rows.push_back(row);
    if (!finite(ext.loss))
      throw TrainingError("non-finite loss at step " + std::to_string(step), trace);
    model.axpy(-row.lr, ext.grad, plan.trainable);
  }
  verify_frozen(model, frozen);
  return trace;
}

AlignmentEval evaluate_alignment(const Model& model, const PairedTokens& data,
                                 const LossSpec& loss) {
  AlignmentEval e;
  std::int64_t hits = 0, total = 0;
  for (const auto& s : data.samples) {
    if (!s.has_cells()) continue;
    const Mat vp = align::resample(model.patch_perceiver, s.inputs);
    const Mat mapped = s.cell_tokens * model.shared_map;
    e.loss_global += align::loss_global(vp, mapped).value;
    e.loss_local += align::loss_local(vp, mapped).value;
    const Mat logits = vp * mapped.transpose();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index best = 0;
      logits.row(i).maxCoeff(&best);
      hits += best == i;
      ++total;
    }
    ++e.pairs;
  }
  if (e.pairs > 0) {
    e.loss_global /= e.pairs;
    e.loss_local /= e.pairs;
    e.top1 = static_cast<double>(hits) / static_cast<double>(total);
  }
  e.loss_total = e.loss_global + loss.local_weight * e.loss_local;
  return e;
}

}  // namespace pbs::train
