#include "pbs/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>
#include <unordered_map>

#include "pbs/error.hpp"
#include "pbs/random.hpp"

namespace pbs {

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    const bool keep = c >= 0x80 || std::isalnum(c);
    if (!keep) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c >= 0x80 ? static_cast<char>(c) : static_cast<char>(std::tolower(c)));
  }
  return out;
}

std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in(normalize(text));
  std::string t;
  while (in >> t) out.push_back(std::move(t));
  return out;
}

bool exact_match(std::string_view pred, std::string_view gold) {
  return normalize(pred) == normalize(gold);
}

bool partial_match(std::string_view pred, std::string_view gold) {
  const auto g = normalize(gold);
  if (g.empty()) return false;
  return normalize(pred).find(g) != std::string::npos;
}

double bleu1(std::string_view pred, std::string_view gold) {
  const auto p = tokens(pred);
  const auto g = tokens(gold);
  if (p.empty()) return 0.0;
  std::unordered_map<std::string, int> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  std::unordered_map<std::string, int> pred_counts;
  for (const auto& t : p) ++pred_counts[t];
  std::int64_t clipped = 0;
  for (const auto& [tok, n] : pred_counts) {
    const auto it = gold_counts.find(tok);
    if (it != gold_counts.end()) clipped += std::min(n, it->second);
  }
  const double precision = static_cast<double>(clipped) / static_cast<double>(p.size());
  const double bp =
      std::exp(std::min(0.0, 1.0 - static_cast<double>(g.size()) / static_cast<double>(p.size())));
  return precision * bp;
}

double rouge_l(std::string_view pred, std::string_view gold) {
  const auto p = tokens(pred);
  const auto g = tokens(gold);
  if (p.empty() || g.empty()) return 0.0;
  std::vector<int> prev(g.size() + 1, 0), cur(g.size() + 1, 0);
  for (std::size_t i = 1; i <= p.size(); ++i) {
    for (std::size_t j = 1; j <= g.size(); ++j)
      cur[j] = p[i - 1] == g[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = prev[g.size()];
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(p.size());
  const double recall = lcs / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> BagOfWordsProvider::embed_pair(
    std::string_view a, std::string_view b) const {
  const auto ta = tokens(a);
  const auto tb = tokens(b);
  std::map<std::string, Eigen::Index> vocab;
  for (const auto* seq : {&ta, &tb})
    for (const auto& t : *seq) vocab.emplace(t, 0);
  Eigen::Index next = 0;
  for (auto& [tok, idx] : vocab) idx = next++;
  Eigen::VectorXd va = Eigen::VectorXd::Zero(next), vb = Eigen::VectorXd::Zero(next);
  for (const auto& t : ta) va[vocab.at(t)] += 1.0;
  for (const auto& t : tb) vb[vocab.at(t)] += 1.0;
  return {va, vb};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> FunctionEmbedder::embed_pair(
    std::string_view a, std::string_view b) const {
  auto va = fn_(a);
  auto vb = fn_(b);
  if (va.size() != vb.size()) throw Error("embedding provider returned mismatched dimensions");
  return {std::move(va), std::move(vb)};
}

const EmbeddingProvider& default_embedding_provider() {
  static const BagOfWordsProvider provider;
  return provider;
}

double semantic_sim(std::string_view pred, std::string_view gold,
                    const EmbeddingProvider& provider) {
  const auto [a, b] = provider.embed_pair(pred, gold);
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

BootstrapResult bootstrap_std(const std::vector<double>& scores, int rounds, std::uint64_t seed) {
  if (scores.empty()) throw DomainError("bootstrap over an empty score list");
  if (rounds < 1) throw DomainError("bootstrap needs at least one resample");
  const std::size_t n = scores.size();
  BootstrapResult r;
  for (double s : scores) r.mean += s;
  r.mean /= static_cast<double>(n);

  // Welford: identical resample means give exactly zero variance.
  Rng rng(seed);
  double mean = 0.0, m2 = 0.0;
  for (int b = 1; b <= rounds; ++b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += scores[rng.below(n)];
    const double m = sum / static_cast<double>(n);
    const double delta = m - mean;
    mean += delta / b;
    m2 += delta * (m - mean);
  }
  r.std = std::sqrt(m2 / rounds);
  return r;
}

EvalRecord make_eval_record(const QAItem& item, std::string prediction) {
  return {item.id, std::move(prediction), item.answer, item.qtype,
          item.task, item.level, item.options};
}

bool closed_answer_correct(const EvalRecord& r) {
  if (exact_match(r.prediction, r.gold)) return true;
  if (r.qtype != QType::Mcq) return false;
  static const std::regex letter_only(R"(^\s*\(?([A-Za-z])\)?[.:]?\s*$)");
  static const std::regex letter_lead(R"(^\s*\(?([A-Za-z])[).:].*$)");
  std::smatch m;
  const std::string pred = r.prediction;
  if (!std::regex_match(pred, m, letter_only) && !std::regex_match(pred, m, letter_lead))
    return false;
  const auto idx = static_cast<std::size_t>(std::toupper(m[1].str()[0]) - 'A');
  return idx < r.options.size() && exact_match(r.options[idx], r.gold);
}

std::vector<std::string> metrics_for(QType q) {
  switch (q) {
    case QType::TrueFalse:
    case QType::Mcq: return {"accuracy"};
    case QType::FillBlank: return {"ematch", "pmatch"};
    case QType::Open: return {"bleu1", "rouge_l", "similarity"};
  }
  throw ValidationError("unknown question type");
}

std::vector<std::pair<std::string, double>> score_record(const EvalRecord& r,
                                                         const EmbeddingProvider& provider) {
  switch (r.qtype) {
    case QType::TrueFalse:
    case QType::Mcq: return {{"accuracy", closed_answer_correct(r) ? 1.0 : 0.0}};
    case QType::FillBlank:
      return {{"ematch", exact_match(r.prediction, r.gold) ? 1.0 : 0.0},
              {"pmatch", partial_match(r.prediction, r.gold) ? 1.0 : 0.0}};
    case QType::Open:
      return {{"bleu1", bleu1(r.prediction, r.gold)},
              {"rouge_l", rouge_l(r.prediction, r.gold)},
              {"similarity", semantic_sim(r.prediction, r.gold, provider)}};
  }
  throw ValidationError("record " + r.qa_id + " has an unknown question type");
}

MetricReport evaluate(const std::vector<EvalRecord>& records, int rounds, std::uint64_t seed,
                      const EmbeddingProvider& provider) {
  std::map<MetricKey, std::vector<double>> scores;
  for (const auto& r : records)
    for (auto& [metric, value] : score_record(r, provider))
      scores[{r.level, r.task, r.qtype, metric}].push_back(value);

  MetricReport report;
  for (auto& [key, values] : scores) {
    // Sorting makes the bootstrap depend on the score multiset only.
    std::sort(values.begin(), values.end());
    const auto& [level, task, qtype, metric] = key;
    const std::string cell = combo_key({level, task, qtype}) + "." + metric;
    const auto b = bootstrap_std(values, rounds, derive_seed(seed, cell));
    report.cells[key] = {b.mean, b.std, static_cast<std::int64_t>(values.size())};
  }
  return report;
}

std::string MetricReport::to_csv() const {
  std::string out = "level,task,qtype,metric,mean,std,n\n";
  char buf[96];
  for (const auto& [key, cell] : cells) {
    const auto& [level, task, qtype, metric] = key;
    out += std::string(to_string(level)) + "," + std::string(to_string(task)) + "," +
           std::string(to_string(qtype)) + "," + metric + ",";
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%lld\n", cell.mean, cell.std,
                  static_cast<long long>(cell.n));
    out += buf;
  }
  return out;
}

}  // namespace pbs
