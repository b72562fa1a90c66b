#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pbs/qa.hpp"

namespace pbs {

inline constexpr int kDefaultBootstrapRounds = 1000;

// Case-folds ASCII, replaces every non-alphanumeric ASCII character with a
// space, collapses whitespace and trims. Bytes >= 0x80 are kept so UTF-8
// words survive intact.
std::string normalize(std::string_view text);
std::vector<std::string> tokens(std::string_view text);

bool exact_match(std::string_view pred, std::string_view gold);
// normalize(gold) is a substring of normalize(pred). An empty gold never matches.
bool partial_match(std::string_view pred, std::string_view gold);

// Clipped unigram precision times brevity penalty exp(min(0, 1 - |gold|/|pred|)).
double bleu1(std::string_view pred, std::string_view gold);
// LCS F1 over normalized tokens.
double rouge_l(std::string_view pred, std::string_view gold);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  // Both strings embedded into one space of equal dimension.
  virtual std::pair<Eigen::VectorXd, Eigen::VectorXd> embed_pair(std::string_view a,
                                                                 std::string_view b) const = 0;
};

// Term-count vectors over the joint normalized vocabulary of the pair.
class BagOfWordsProvider final : public EmbeddingProvider {
 public:
  std::pair<Eigen::VectorXd, Eigen::VectorXd> embed_pair(std::string_view a,
                                                         std::string_view b) const override;
};

// Adapts a per-string encoder (e.g. precomputed sentence embeddings).
class FunctionEmbedder final : public EmbeddingProvider {
 public:
  using Fn = std::function<Eigen::VectorXd(std::string_view)>;
  explicit FunctionEmbedder(Fn fn) : fn_(std::move(fn)) {}
  std::pair<Eigen::VectorXd, Eigen::VectorXd> embed_pair(std::string_view a,
                                                         std::string_view b) const override;

 private:
  Fn fn_;
};

const EmbeddingProvider& default_embedding_provider();

// Cosine of the two embeddings; 0 when either is the zero vector.
double semantic_sim(std::string_view pred, std::string_view gold,
                    const EmbeddingProvider& provider = default_embedding_provider());

struct BootstrapResult {
  double mean = 0.0;
  double std = 0.0;
};

// Mean of `scores` plus the population std of `rounds` resampled means.
BootstrapResult bootstrap_std(const std::vector<double>& scores, int rounds,
                              std::uint64_t seed);

struct EvalRecord {
  std::string qa_id;
  std::string prediction;
  std::string gold;
  QType qtype = QType::Open;
  Task task = Task::Morphology;
  Level level = Level::Cell;
  std::vector<std::string> options;  // MCQ only; used to resolve option letters
};

EvalRecord make_eval_record(const QAItem& item, std::string prediction);

// Correctness of a closed-ended answer. MCQ predictions may give the option
// text or a leading option letter such as "B", "(B)" or "B) ...".
bool closed_answer_correct(const EvalRecord& r);

struct MetricCell {
  double mean = 0.0;
  double std = 0.0;
  std::int64_t n = 0;
};

// (level, task, qtype, metric) -> aggregate.
using MetricKey = std::tuple<Level, Task, QType, std::string>;

struct MetricReport {
  std::map<MetricKey, MetricCell> cells;

  std::string to_csv() const;
};

// Metric names emitted per question type.
std::vector<std::string> metrics_for(QType q);

// Per-item scores for one record, keyed by metric name.
std::vector<std::pair<std::string, double>> score_record(
    const EvalRecord& r, const EmbeddingProvider& provider = default_embedding_provider());

MetricReport evaluate(const std::vector<EvalRecord>& records,
                      int rounds = kDefaultBootstrapRounds, std::uint64_t seed = 0,
                      const EmbeddingProvider& provider = default_embedding_provider());

}  // namespace pbs
