#include "pbs/qa.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "pbs/error.hpp"
#include "pbs/metrics.hpp"
#include "pbs/random.hpp"

namespace pbs {

std::string_view to_string(Level v) { return v == Level::Cell ? "cell" : "slide"; }

std::string_view to_string(Task v) {
  switch (v) {
    case Task::Morphology: return "morphology";
    case Task::Abnormality: return "abnormality";
    case Task::Subtyping: return "subtyping";
    case Task::Knowledge: return "knowledge";
    case Task::Differential: return "differential";
    case Task::Diagnosis: return "diagnosis";
  }
  return "morphology";
}

std::string_view to_string(QType v) {
  switch (v) {
    case QType::TrueFalse: return "true_false";
    case QType::Mcq: return "mcq";
    case QType::FillBlank: return "fill_blank";
    case QType::Open: return "open";
  }
  return "open";
}

std::optional<Level> parse_level(std::string_view s) {
  for (auto v : kLevels)
    if (s == to_string(v)) return v;
  return std::nullopt;
}

std::optional<Task> parse_task(std::string_view s) {
  for (auto v : kTasks)
    if (s == to_string(v)) return v;
  return std::nullopt;
}

std::optional<QType> parse_qtype(std::string_view s) {
  for (auto v : kQTypes)
    if (s == to_string(v)) return v;
  return std::nullopt;
}

std::string combo_key(const Combo& c) {
  const auto& [l, t, q] = c;
  return std::string(to_string(l)) + "." + std::string(to_string(t)) + "." +
         std::string(to_string(q));
}

bool has_template(const Combo& c) {
  const auto& [level, task, qtype] = c;
  if (level == Level::Cell)
    return task == Task::Morphology || task == Task::Abnormality || task == Task::Subtyping ||
           task == Task::Knowledge;
  switch (task) {
    case Task::Morphology:
    case Task::Abnormality:
    case Task::Diagnosis: return true;
    case Task::Differential: return qtype != QType::Open;
    case Task::Knowledge: return qtype == QType::Mcq || qtype == QType::Open;
    case Task::Subtyping: return false;
  }
  return false;
}

std::vector<Combo> supported_combos() {
  std::vector<Combo> out;
  for (auto l : kLevels)
    for (auto t : kTasks)
      for (auto q : kQTypes)
        if (has_template({l, t, q})) out.emplace_back(l, t, q);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

TaskTypeMix TaskTypeMix::parse(std::string_view text) {
  TaskTypeMix mix;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto where = "mix line " + std::to_string(line_no) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = count'");
    const auto key = trim(body.substr(0, eq));
    int value = 0;
    try {
      std::size_t used = 0;
      const std::string v(trim(body.substr(eq + 1)));
      value = std::stoi(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError(where + "count must be an integer");
    }
    if (key == "options") {
      mix.option_count = value;
      continue;
    }
    const auto d1 = key.find('.');
    const auto d2 = key.find('.', d1 == std::string_view::npos ? d1 : d1 + 1);
    if (d1 == std::string_view::npos || d2 == std::string_view::npos)
      throw ConfigError(where + "key must be level.task.qtype");
    const auto level = parse_level(key.substr(0, d1));
    const auto task = parse_task(key.substr(d1 + 1, d2 - d1 - 1));
    const auto qtype = parse_qtype(key.substr(d2 + 1));
    if (!level || !task || !qtype) throw ConfigError(where + "unknown name in '" + std::string(key) + "'");
    const Combo combo{*level, *task, *qtype};
    if (!has_template(combo))
      throw ConfigError(where + "no template for " + combo_key(combo));
    if (value < 0) throw ConfigError(where + "count must be >= 0");
    mix.counts[combo] = value;
  }
  mix.validate();
  return mix;
}

TaskTypeMix TaskTypeMix::all_supported(int per_combo) {
  TaskTypeMix mix;
  for (const auto& c : supported_combos()) mix.counts[c] = per_combo;
  return mix;
}

void TaskTypeMix::validate() const {
  if (option_count < 2) throw ConfigError("MCQ option count must be >= 2");
  if (max_retries < 1) throw ConfigError("retry budget must be >= 1");
  for (const auto& [combo, n] : counts) {
    if (!has_template(combo)) throw ConfigError("no template for " + combo_key(combo));
    if (n < 0) throw ConfigError("negative count for " + combo_key(combo));
  }
}

int word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::string w;
  int n = 0;
  while (in >> w) ++n;
  return n;
}

std::vector<std::string> item_violations(const QAItem& item) {
  std::vector<std::string> v;
  if (item.id.empty()) v.emplace_back("empty id");
  if (item.qtype == QType::Mcq) {
    if (item.options.size() < 2) v.emplace_back("mcq needs at least two options");
    const auto hits = std::count(item.options.begin(), item.options.end(), item.answer);
    if (hits != 1) v.emplace_back("mcq answer must appear exactly once among options");
  } else if (!item.options.empty()) {
    v.emplace_back("options are only allowed on mcq items");
  }
  if (item.qtype == QType::FillBlank && word_count(item.answer) >= kFillBlankMaxWords)
    v.emplace_back("fill-blank answer must be shorter than 10 words");
  if (item.qtype == QType::TrueFalse && item.answer != "True" && item.answer != "False")
    v.emplace_back("true/false answer must be True or False");
  if ((item.task == Task::Differential || item.task == Task::Diagnosis) &&
      item.level != Level::Slide)
    v.emplace_back(std::string(to_string(item.task)) + " items must be slide level");
  if (item.task == Task::Subtyping && item.level != Level::Cell)
    v.emplace_back("subtyping items must be cell level");
  return v;
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "accepted";
    case RejectReason::AnswerLeak: return "answer-leaking";
    case RejectReason::Length: return "length";
    case RejectReason::DuplicateOptions: return "duplicate-options";
    case RejectReason::EmptyAnswer: return "empty-answer";
  }
  return "accepted";
}

FilterVerdict qa_quality_filter(const QAItem& item) {
  const auto answer = normalize(item.answer);
  if (answer.empty()) return {RejectReason::EmptyAnswer};
  if (normalize(item.question).find(answer) != std::string::npos)
    return {RejectReason::AnswerLeak};
  if (item.qtype == QType::FillBlank && word_count(item.answer) >= kFillBlankMaxWords)
    return {RejectReason::Length};
  if (item.qtype == QType::Mcq) {
    std::set<std::string> seen;
    for (const auto& o : item.options)
      if (!seen.insert(normalize(o)).second) return {RejectReason::DuplicateOptions};
  }
  return {};
}

std::vector<std::string> shuffle_options(std::vector<std::string> options, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = options.size(); i > 1; --i) std::swap(options[i - 1], options[rng.below(i)]);
  return options;
}

double jaccard(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& t : sa) inter += sb.count(t);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

std::vector<QAItem> dedupe(const std::vector<QAItem>& items, double threshold, DedupeScope scope) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw ValidationError("dedupe threshold must lie in (0, 1]");
  std::vector<QAItem> kept;
  std::map<std::string, std::vector<std::vector<std::string>>> retained;
  for (const auto& item : items) {
    auto toks = tokens(item.question);
    auto& group = retained[scope == DedupeScope::PerImage ? item.image_ref : std::string()];
    const bool dup = std::any_of(group.begin(), group.end(), [&](const auto& other) {
      return jaccard(toks, other) >= threshold;
    });
    if (dup) continue;
    group.push_back(std::move(toks));
    kept.push_back(item);
  }
  return kept;
}

std::vector<std::string> collect_findings(const std::vector<CellRecord>& cells,
                                          double min_confidence) {
  std::map<std::string, int> counts;
  for (const auto& c : cells)
    if (c.confidence >= min_confidence)
      for (const auto& k : c.keywords) ++counts[k];
  std::vector<std::pair<std::string, int>> sorted(counts.begin(), counts.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (auto& [k, n] : sorted) out.push_back(k);
  return out;
}

// ---------------------------------------------------------------------------
// Template bank

namespace {

struct SubtypeFacts {
  std::string_view name;
  std::string_view plural;
  std::string_view nucleus;
  std::string_view cytoplasm;
  std::string_view increase_term;
  std::string_view condition;
  std::string_view function;
};

const SubtypeFacts& facts(Subtype s) {
  static const std::array<SubtypeFacts, 5> table = {{
      {"Basophil", "basophils", "lobed nucleus obscured by granules",
       "dense dark purple granules", "basophilia", "chronic myeloid leukemia",
       "releasing histamine and heparin in allergic and inflammatory reactions"},
      {"Eosinophil", "eosinophils", "bilobed nucleus", "large orange-red granules",
       "eosinophilia", "parasitic infection",
       "defending against parasites and modulating allergic responses"},
      {"Lymphocyte", "lymphocytes", "round nucleus with dense chromatin",
       "scant pale blue cytoplasm", "lymphocytosis", "viral infection",
       "mediating the adaptive immune response"},
      {"Monocyte", "monocytes", "folded kidney-shaped nucleus",
       "abundant grey-blue vacuolated cytoplasm", "monocytosis", "chronic inflammation",
       "migrating into tissues and maturing into macrophages"},
      {"Neutrophil", "neutrophils", "segmented nucleus with three to five lobes",
       "pale cytoplasm with fine lilac granules", "neutrophilia", "bacterial infection",
       "phagocytosing bacteria in acute inflammation"},
  }};
  return table[static_cast<std::size_t>(s)];
}

struct Abnormality {
  std::string_view keyword;
  std::string_view association;
};

constexpr std::array<Abnormality, 12> kAbnormalities = {{
    {"hypolobated nuclei", "a myelodysplastic process"},
    {"hypogranular cytoplasm", "dysgranulopoiesis in myelodysplastic syndrome"},
    {"pseudo-Pelger-Huet anomaly", "myelodysplastic syndrome"},
    {"nuclear budding", "dysplastic maturation"},
    {"abnormal chromatin clumping", "dysplastic granulopoiesis"},
    {"hypersegmented nuclei", "megaloblastic anemia"},
    {"enlarged cell size", "vitamin B12 or folate deficiency"},
    {"vacuolated cytoplasm", "sepsis or toxic change"},
    {"membrane damage", "a smear preparation artifact"},
    {"smudged chromatin", "fragile cells in lymphoproliferative disorders"},
    {"reactive morphology", "a viral infection"},
    {"cleaved nucleus", "a lymphoproliferative disorder"},
}};

constexpr std::string_view kNoAbnormality = "no notable abnormality";

std::string association_of(std::string_view keyword) {
  for (const auto& a : kAbnormalities)
    if (normalize(a.keyword) == normalize(keyword)) return std::string(a.association);
  return "an underlying hematologic disorder";
}

constexpr std::array<std::string_view, 4> kExtraConditions = {
    "acute myeloid leukemia (AML)", "chronic lymphocytic leukemia (CLL)",
    "acute promyelocytic leukemia (APL)", "immune thrombocytopenia (ITP)"};

std::string_view diagnosis_rationale(Diagnosis d) {
  switch (d) {
    case Diagnosis::MDS:
      return "dysplastic white cells such as hypolobated or hypogranular neutrophils point to "
             "disordered myeloid maturation";
    case Diagnosis::Anemia:
      return "red cell changes dominate while white cell morphology is largely preserved";
    case Diagnosis::Control:
      return "white cell counts and morphology are within normal limits";
  }
  return "";
}

std::string_view diagnosis_significance(Diagnosis d) {
  switch (d) {
    case Diagnosis::MDS:
      return "Dysplastic white cell features suggest a myelodysplastic process and warrant "
             "bone marrow evaluation.";
    case Diagnosis::Anemia:
      return "The findings support an anemia work-up including iron studies, vitamin B12 and "
             "folate levels.";
    case Diagnosis::Control:
      return "The smear does not suggest a hematologic disorder and needs no further work-up.";
  }
  return "";
}

std::string article(std::string_view word) {
  const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(word.front())));
  return std::string(std::string_view("aeiou").find(c) != std::string_view::npos ? "an " : "a ") +
         std::string(word);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string join(const std::vector<std::string>& parts) {
  if (parts.empty()) return "";
  if (parts.size() == 1) return parts[0];
  std::string out;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) out += (i ? ", " : "") + parts[i];
  return out + " and " + parts.back();
}

struct Draft {
  std::string question;
  std::string answer;
  std::vector<std::string> distractors;  // MCQ only
};

// Picks `n` distinct entries from `pool` that differ from `exclude` (normalized).
std::vector<std::string> pick_distinct(std::vector<std::string> pool,
                                       const std::vector<std::string>& exclude, std::size_t n,
                                       Rng& rng) {
  std::set<std::string> banned;
  for (const auto& e : exclude) banned.insert(normalize(e));
  std::vector<std::string> candidates;
  for (auto& p : pool)
    if (banned.insert(normalize(p)).second) candidates.push_back(std::move(p));
  n = std::min(n, candidates.size());
  for (std::size_t i = 0; i < n; ++i)
    std::swap(candidates[i], candidates[i + rng.below(candidates.size() - i)]);
  candidates.resize(n);
  return candidates;
}

Subtype other_subtype(Subtype s, Rng& rng) {
  std::vector<Subtype> others;
  for (auto c : kCanonicalSubtypes)
    if (c != s) others.push_back(c);
  return others[rng.below(others.size())];
}

template <typename F>
std::vector<std::string> subtype_field(F&& field) {
  std::vector<std::string> out;
  for (auto s : kCanonicalSubtypes) out.emplace_back(field(facts(s)));
  return out;
}

std::vector<std::string> lexicon_keywords() {
  std::vector<std::string> out;
  for (const auto& a : kAbnormalities) out.emplace_back(a.keyword);
  return out;
}

std::string tf(bool v) { return v ? "True" : "False"; }

// Cell-level builders. nullopt means the template does not apply to this record.
std::optional<Draft> build_cell(Task task, QType qtype, const CellRecord& cell, Rng& rng) {
  const bool canonical = cell.subtype != Subtype::Others;
  switch (task) {
    case Task::Morphology: {
      if (!canonical) return std::nullopt;
      const auto& f = facts(cell.subtype);
      const bool about_nucleus = rng.bernoulli(0.5);
      auto field = [&](const SubtypeFacts& x) { return about_nucleus ? x.nucleus : x.cytoplasm; };
      switch (qtype) {
        case QType::TrueFalse: {
          const bool truth = rng.bernoulli(0.5);
          const auto& probe = truth ? f : facts(other_subtype(cell.subtype, rng));
          return Draft{about_nucleus
                           ? "Does this cell have " + article(probe.nucleus) + "?"
                           : "Does this cell show " + std::string(probe.cytoplasm) + "?",
                       tf(truth), {}};
        }
        case QType::Mcq:
          return Draft{about_nucleus ? "Which description best matches the nucleus of this cell?"
                                     : "Which description best matches the cytoplasm of this cell?",
                       std::string(field(f)), subtype_field(field)};
        case QType::FillBlank:
          return Draft{about_nucleus ? "The nucleus of this cell is best described as ____."
                                     : "The cytoplasm of this cell shows ____.",
                       std::string(field(f)), {}};
        case QType::Open:
          return Draft{rng.bernoulli(0.5) ? "Describe the morphology of this cell."
                                          : "What are the key morphological features of this cell?",
                       "The cell shows " + article(f.nucleus) + " and " +
                           std::string(f.cytoplasm) + ".",
                       {}};
      }
      break;
    }
    case Task::Abnormality: {
      const bool abnormal = !cell.keywords.empty();
      const std::string kw =
          abnormal ? cell.keywords[rng.below(cell.keywords.size())] : std::string(kNoAbnormality);
      switch (qtype) {
        case QType::TrueFalse: {
          if (abnormal && rng.bernoulli(0.5))
            return Draft{"Does this cell exhibit " + kw + "?", "True", {}};
          if (!abnormal && rng.bernoulli(0.5))
            return Draft{"Does this cell appear morphologically normal?", "True", {}};
          const auto probe = pick_distinct(lexicon_keywords(), cell.keywords, 1, rng);
          return Draft{"Does this cell exhibit " + probe.front() + "?", "False", {}};
        }
        case QType::Mcq: {
          auto pool = lexicon_keywords();
          if (abnormal) pool.emplace_back(kNoAbnormality);
          return Draft{"Which abnormal morphological feature, if any, is present in this cell?",
                       kw, std::move(pool)};
        }
        case QType::FillBlank:
          return Draft{"The abnormal morphological feature seen in this cell is ____.", kw, {}};
        case QType::Open:
          return Draft{"Describe any abnormal morphology in this cell and its possible significance.",
                       abnormal ? "This cell shows " + kw + ", which may suggest " +
                                      association_of(kw) + "."
                                : std::string("No notable morphological abnormality is observed; "
                                              "the cell appears within normal limits."),
                       {}};
      }
      break;
    }
    case Task::Subtyping: {
      if (!canonical) return std::nullopt;
      const auto& f = facts(cell.subtype);
      switch (qtype) {
        case QType::TrueFalse: {
          const bool truth = rng.bernoulli(0.5);
          const auto& probe = truth ? f : facts(other_subtype(cell.subtype, rng));
          return Draft{"Is this cell " + article(lower(probe.name)) + "?", tf(truth), {}};
        }
        case QType::Mcq:
          return Draft{"Which type of white blood cell is shown in this image?",
                       std::string(f.name),
                       subtype_field([](const SubtypeFacts& x) { return x.name; })};
        case QType::FillBlank:
          return Draft{"The type of white blood cell shown in this image is ____.",
                       std::string(f.name), {}};
        case QType::Open:
          return Draft{"What type of white blood cell is this, and which features support it?",
                       "This is " + article(lower(f.name)) + ", identified by its " +
                           std::string(f.nucleus) + " and " + std::string(f.cytoplasm) + ".",
                       {}};
      }
      break;
    }
    case Task::Knowledge: {
      if (!canonical) return std::nullopt;
      const auto& f = facts(cell.subtype);
      switch (qtype) {
        case QType::TrueFalse: {
          const bool truth = rng.bernoulli(0.5);
          const auto& probe = truth ? f : facts(other_subtype(cell.subtype, rng));
          return Draft{"Is an increased count of the cell type shown here called " +
                           std::string(probe.increase_term) + "?",
                       tf(truth), {}};
        }
        case QType::Mcq:
          return Draft{"Which condition most commonly raises the count of the cell type shown?",
                       std::string(f.condition),
                       subtype_field([](const SubtypeFacts& x) { return x.condition; })};
        case QType::FillBlank:
          return Draft{"An abnormally high count of the cell type shown is termed ____.",
                       std::string(f.increase_term), {}};
        case QType::Open:
          return Draft{"What is the main physiological role of the cell type shown?",
                       "Its main role is " + std::string(f.function) + ".", {}};
      }
      break;
    }
    case Task::Differential:
    case Task::Diagnosis: break;
  }
  return std::nullopt;
}

// Canonical subtype with the highest percentage; nullopt when empty or tied.
std::optional<Subtype> dominant(const Differential& d) {
  if (d.n_cells <= 0) return std::nullopt;
  std::optional<Subtype> best;
  std::int64_t best_count = -1;
  bool tie = false;
  for (auto s : kCanonicalSubtypes) {
    const auto c = d.counts[static_cast<std::size_t>(s)];
    if (c > best_count) {
      best = s;
      best_count = c;
      tie = false;
    } else if (c == best_count) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

std::string percent_label(double p) { return std::to_string(std::lround(p)) + "%"; }

std::optional<Draft> build_slide(Task task, QType qtype, const SlideSummary& s, Rng& rng) {
  const auto dom = dominant(s.differential);
  const bool abnormal = !s.findings.empty();
  switch (task) {
    case Task::Morphology: {
      switch (qtype) {
        case QType::TrueFalse: {
          if (s.differential.n_cells <= 0) return std::nullopt;
          const auto probe = kCanonicalSubtypes[rng.below(kCanonicalSubtypes.size())];
          const bool present = s.differential.counts[static_cast<std::size_t>(probe)] > 0;
          return Draft{"Are " + std::string(facts(probe).plural) +
                           " present among the white blood cells on this slide?",
                       tf(present), {}};
        }
        case QType::Mcq:
          if (!dom) return std::nullopt;
          return Draft{"Which nuclear description fits the predominant white blood cells on "
                       "this slide?",
                       std::string(facts(*dom).nucleus),
                       subtype_field([](const SubtypeFacts& x) { return x.nucleus; })};
        case QType::FillBlank:
          if (!dom) return std::nullopt;
          return Draft{"The predominant white blood cells on this slide have a nucleus best "
                       "described as ____.",
                       std::string(facts(*dom).nucleus), {}};
        case QType::Open: {
          if (!dom) return std::nullopt;
          std::vector<std::string> top(s.findings.begin(),
                                       s.findings.begin() + std::min<std::size_t>(3, s.findings.size()));
          return Draft{"Describe the overall white blood cell morphology on this slide.",
                       "The white blood cells are predominantly " +
                           std::string(facts(*dom).plural) + " with " +
                           article(facts(*dom).nucleus) + "; " +
                           (abnormal ? "notable findings include " + join(top) + "."
                                     : std::string("no notable abnormal findings are seen.")),
                       {}};
        }
      }
      break;
    }
    case Task::Abnormality: {
      const std::string kw =
          abnormal ? s.findings[rng.below(s.findings.size())] : std::string(kNoAbnormality);
      switch (qtype) {
        case QType::TrueFalse: {
          if (abnormal && rng.bernoulli(0.5))
            return Draft{"Does this slide show white blood cells with " + kw + "?", "True", {}};
          const auto probe = pick_distinct(lexicon_keywords(), s.findings, 1, rng);
          return Draft{"Does this slide show white blood cells with " + probe.front() + "?",
                       "False", {}};
        }
        case QType::Mcq: {
          auto pool = lexicon_keywords();
          if (abnormal) pool.emplace_back(kNoAbnormality);
          return Draft{"Which abnormal white blood cell finding, if any, is present on this "
                       "slide?",
                       kw, std::move(pool)};
        }
        case QType::FillBlank:
          return Draft{"An abnormal white blood cell finding on this slide is ____.", kw, {}};
        case QType::Open: {
          std::vector<std::string> top(s.findings.begin(),
                                       s.findings.begin() + std::min<std::size_t>(3, s.findings.size()));
          return Draft{"Summarize the abnormal white blood cell findings on this slide.",
                       abnormal ? "The slide shows " + join(top) + "."
                                : std::string("No notable abnormal white blood cell morphology "
                                              "is seen on this slide."),
                       {}};
        }
      }
      break;
    }
    case Task::Differential: {
      if (s.differential.n_cells <= 0) return std::nullopt;
      const bool by_share = rng.bernoulli(0.5);
      switch (qtype) {
        case QType::TrueFalse: {
          if (!dom) return std::nullopt;
          const auto probe = rng.bernoulli(0.5) ? *dom : other_subtype(*dom, rng);
          return Draft{"Are " + std::string(facts(probe).plural) +
                           " the most frequent white blood cells on this slide?",
                       tf(probe == *dom), {}};
        }
        case QType::Mcq: {
          if (by_share || !dom) {
            const auto probe = kCanonicalSubtypes[rng.below(kCanonicalSubtypes.size())];
            const long q = std::lround(s.differential.percent(probe));
            std::vector<std::string> pool;
            for (long off = 10; off <= 60; off += 10) {
              if (q + off <= 100) pool.push_back(std::to_string(q + off) + "%");
              if (q - off >= 0) pool.push_back(std::to_string(q - off) + "%");
            }
            return Draft{"Approximately what share of the white blood cells on this slide are " +
                             std::string(facts(probe).plural) + "?",
                         std::to_string(q) + "%", std::move(pool)};
          }
          return Draft{"Which white blood cell type is most frequent on this slide?",
                       std::string(facts(*dom).name),
                       subtype_field([](const SubtypeFacts& x) { return x.name; })};
        }
        case QType::FillBlank: {
          if (by_share || !dom) {
            const auto probe = kCanonicalSubtypes[rng.below(kCanonicalSubtypes.size())];
            return Draft{capitalize(std::string(facts(probe).plural)) +
                             " make up approximately ____ of the white blood cells on this slide.",
                         percent_label(s.differential.percent(probe)), {}};
          }
          return Draft{"The most frequent white blood cell type on this slide is ____.",
                       std::string(facts(*dom).name), {}};
        }
        case QType::Open: break;
      }
      break;
    }
    case Task::Knowledge: {
      const std::string kw = abnormal ? s.findings[rng.below(s.findings.size())]
                                      : std::string(kAbnormalities[rng.below(kAbnormalities.size())].keyword);
      switch (qtype) {
        case QType::Mcq: {
          std::vector<std::string> pool;
          for (const auto& a : kAbnormalities) pool.emplace_back(a.association);
          return Draft{"Which condition is classically associated with white blood cells showing " +
                           kw + "?",
                       association_of(kw), std::move(pool)};
        }
        case QType::Open:
          return Draft{"What is the clinical significance of the findings on this slide?",
                       std::string(diagnosis_significance(s.diagnosis)), {}};
        default: break;
      }
      break;
    }
    case Task::Diagnosis: {
      const std::string dx(display_name(s.diagnosis));
      switch (qtype) {
        case QType::TrueFalse: {
          const bool truth = rng.bernoulli(0.5);
          Diagnosis probe = s.diagnosis;
          if (!truth) {
            std::vector<Diagnosis> others;
            for (auto d : {Diagnosis::Anemia, Diagnosis::MDS, Diagnosis::Control})
              if (d != s.diagnosis) others.push_back(d);
            probe = others[rng.below(others.size())];
          }
          return Draft{probe == Diagnosis::Control
                           ? "Is this slide consistent with a healthy control?"
                           : "Is this slide consistent with " + std::string(display_name(probe)) + "?",
                       tf(truth), {}};
        }
        case QType::Mcq: {
          // Cohort labels are always offered first; extra conditions only pad.
          std::vector<std::string> pool;
          for (auto d : {Diagnosis::Anemia, Diagnosis::MDS, Diagnosis::Control})
            if (d != s.diagnosis) pool.emplace_back(display_name(d));
          Draft draft{"Which condition is most consistent with the findings on this slide?", dx,
                      std::move(pool)};
          for (auto c : kExtraConditions) draft.distractors.emplace_back(c);
          return draft;
        }
        case QType::FillBlank:
          return Draft{"The most likely diagnosis for this patient is ____.", dx, {}};
        case QType::Open:
          return Draft{"What is the most likely diagnosis for this slide, and why?",
                       "The findings are most consistent with " + dx + "; " +
                           std::string(diagnosis_rationale(s.diagnosis)) + ".",
                       {}};
      }
      break;
    }
    case Task::Subtyping: break;
  }
  return std::nullopt;
}

// Distractor selection. Diagnosis MCQs keep the cohort labels ahead of the
// padding conditions; everything else samples uniformly from the pool.
std::vector<std::string> choose_distractors(const Combo& combo, const Draft& d, int option_count,
                                            Rng& rng) {
  const std::size_t want = static_cast<std::size_t>(option_count - 1);
  if (std::get<1>(combo) != Task::Diagnosis)
    return pick_distinct(d.distractors, {d.answer}, want, rng);
  std::vector<std::string> cohort(d.distractors.begin(), d.distractors.begin() + 2);
  std::vector<std::string> extra(d.distractors.begin() + 2, d.distractors.end());
  auto out = pick_distinct(cohort, {d.answer}, want, rng);
  if (out.size() < want) {
    auto pad = pick_distinct(extra, {d.answer}, want - out.size(), rng);
    out.insert(out.end(), pad.begin(), pad.end());
  }
  return out;
}

template <typename Build>
std::vector<QAItem> generate(Level level, const std::string& image_ref, const TaskTypeMix& mix,
                             std::uint64_t seed, Build&& build) {
  mix.validate();
  std::vector<QAItem> out;
  for (const auto& [combo, count] : mix.counts) {
    const auto& [l, task, qtype] = combo;
    if (l != level) continue;
    const auto key = combo_key(combo);
    for (int k = 0; k < count; ++k) {
      for (int attempt = 0; attempt < mix.max_retries; ++attempt) {
        const std::uint64_t item_seed = derive_seed(
            seed, image_ref + "|" + key + "|" + std::to_string(k) + "|" + std::to_string(attempt));
        Rng rng(item_seed);
        auto draft = build(task, qtype, rng);
        if (!draft) break;
        QAItem item;
        item.id = image_ref + ":" + key + ":" + std::to_string(k);
        item.level = level;
        item.task = task;
        item.qtype = qtype;
        item.image_ref = image_ref;
        item.question = std::move(draft->question);
        item.answer = draft->answer;
        item.seed = item_seed;
        if (qtype == QType::Mcq) {
          auto options = choose_distractors(combo, *draft, mix.option_count, rng);
          if (options.empty()) break;
          options.push_back(item.answer);
          item.options = shuffle_options(std::move(options), derive_seed(item_seed, "shuffle"));
        }
        if (!item_violations(item).empty() || !qa_quality_filter(item).accepted()) continue;
        out.push_back(std::move(item));
        break;
      }
    }
  }
  return out;
}

}  // namespace

std::vector<QAItem> generate_cell_qa(const CellRecord& cell, const TaskTypeMix& mix,
                                     std::uint64_t seed) {
  return generate(Level::Cell, cell.id, mix, seed,
                  [&](Task t, QType q, Rng& rng) { return build_cell(t, q, cell, rng); });
}

std::vector<QAItem> generate_slide_qa(const SlideSummary& summary, const TaskTypeMix& mix,
                                      std::uint64_t seed) {
  return generate(Level::Slide, summary.slide_id, mix, seed,
                  [&](Task t, QType q, Rng& rng) { return build_slide(t, q, summary, rng); });
}

}  // namespace pbs
