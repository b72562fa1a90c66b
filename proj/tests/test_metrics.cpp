#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "match_table.hpp"
#include "oracles.hpp"
#include "pbs/error.hpp"
#include "pbs/metrics.hpp"
#include "pbs/random.hpp"

using namespace pbs;

namespace {

const std::vector<std::string> kVocab{"a", "b", "c", "d", "cell", "blast", "nucleus", "granule"};

oracle::Tokens random_tokens(Rng& rng, std::size_t max_len) {
  oracle::Tokens t(rng.below(max_len + 1));
  for (auto& w : t) w = kVocab[rng.below(kVocab.size())];
  return t;
}

std::string join(const oracle::Tokens& t) {
  std::string s;
  for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
  return s;
}

std::string random_text(Rng& rng) {
  static const std::string alphabet = "abAB c.-_,!?  \t0123\xc3\xa9";
  std::string s(rng.below(16), ' ');
  for (auto& ch : s) ch = alphabet[rng.below(alphabet.size())];
  return s;
}

EvalRecord record(QType q, std::string pred, std::string gold, Task task = Task::Morphology,
                  std::vector<std::string> options = {}) {
  static int next = 0;
  return {"r" + std::to_string(next++), std::move(pred), std::move(gold), q, task, Level::Cell,
          std::move(options)};
}

}  // namespace

TEST(Normalize, Examples) {
  EXPECT_EQ(normalize("  Neutrophil. "), "neutrophil");
  EXPECT_EQ(normalize("hyper-lobated"), "hyper lobated");
  EXPECT_EQ(normalize(""), "");
  EXPECT_EQ(normalize("caf\xc3\xa9 Au"), "caf\xc3\xa9 au");
}

TEST(Match, HandWrittenTable) {
  for (const auto& c : kMatchTable) {
    EXPECT_EQ(exact_match(c.pred, c.gold), c.ematch) << c.pred << " | " << c.gold;
    EXPECT_EQ(partial_match(c.pred, c.gold), c.pmatch) << c.pred << " | " << c.gold;
  }
}

TEST(Match, SymmetryAndWitness) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_text(rng), b = random_text(rng);
    EXPECT_EQ(exact_match(a, b), exact_match(b, a));
    EXPECT_NEAR(semantic_sim(a, b), semantic_sim(b, a), 1e-15);
  }
  EXPECT_TRUE(partial_match("a neutrophil", "neutrophil"));
  EXPECT_FALSE(partial_match("neutrophil", "a neutrophil"));
}

TEST(Bleu, Examples) {
  EXPECT_DOUBLE_EQ(bleu1("the cell is round", "the cell is round"), 1.0);
  EXPECT_DOUBLE_EQ(bleu1("a b", "a c"), 0.5);
  EXPECT_DOUBLE_EQ(bleu1("", "a"), 0.0);
  EXPECT_NEAR(bleu1("a", "a b"), std::exp(1.0 - 2.0), 1e-15);
}

TEST(Rouge, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l("x y", "x y"), 1.0);
  EXPECT_NEAR(rouge_l("a b c", "a c"), 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(rouge_l("a b", "c d"), 0.0);
}

TEST(Similarity, Examples) {
  EXPECT_NEAR(semantic_sim("blast cell", "Blast cell."), 1.0, 1e-15);
  EXPECT_EQ(semantic_sim("a b", "c d"), 0.0);
  EXPECT_NEAR(semantic_sim("a b", "a"), 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_EQ(semantic_sim("", "a"), 0.0);
}

TEST(Similarity, CustomProviderAndErrors) {
  FunctionEmbedder fixed([](std::string_view s) {
    Eigen::VectorXd v(2);
    v << static_cast<double>(s.size()), 1.0;
    return v;
  });
  EXPECT_NEAR(semantic_sim("ab", "ab", fixed), 1.0, 1e-15);
  FunctionEmbedder broken([](std::string_view) -> Eigen::VectorXd {
    throw std::runtime_error("encoder offline");
  });
  EXPECT_THROW(semantic_sim("a", "b", broken), std::runtime_error);
}

TEST(Oracle, BleuAndRougeOnRandomPairs) {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_tokens(rng, 12), g = random_tokens(rng, 12);
    EXPECT_NEAR(bleu1(join(p), join(g)), oracle::bleu1(p, g), 1e-9) << join(p) << " | " << join(g);
    EXPECT_NEAR(rouge_l(join(p), join(g)), oracle::rouge_l(p, g), 1e-9)
        << join(p) << " | " << join(g);
  }
}

TEST(Codomain, TenThousandRandomPairs) {
  Rng rng(23);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_text(rng), b = random_text(rng);
    const double bl = bleu1(a, b), rl = rouge_l(a, b), sim = semantic_sim(a, b);
    ASSERT_TRUE(bl >= 0.0 && bl <= 1.0);
    ASSERT_TRUE(rl >= 0.0 && rl <= 1.0);
    ASSERT_TRUE(sim >= -1.0 && sim <= 1.0);
  }
}

TEST(Bootstrap, ConstantAndSingleton) {
  EXPECT_EQ(bootstrap_std(std::vector<double>(50, 0.7), 1000, 1).std, 0.0);
  const auto one = bootstrap_std({0.3}, 1000, 1);
  EXPECT_EQ(one.mean, 0.3);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_THROW(bootstrap_std({}, 10, 1), DomainError);
  EXPECT_THROW(bootstrap_std({1.0}, 0, 1), DomainError);
}

TEST(Bootstrap, BernoulliMatchesAnalyticStd) {
  Rng rng(5);
  std::vector<double> s(100);
  for (auto& v : s) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const auto r = bootstrap_std(s, 1000, 9);
  EXPECT_EQ(r.mean, oracle::mean(s));
  EXPECT_NEAR(r.std, 0.05, 0.01);
  EXPECT_EQ(r.std, bootstrap_std(s, 1000, 9).std);
}

TEST(Evaluate, ClosedAnswers) {
  const std::vector<std::string> opts{"Monocyte", "Neutrophil", "Basophil", "Eosinophil"};
  EXPECT_TRUE(closed_answer_correct(record(QType::Mcq, "B", "Neutrophil", {}, opts)));
  EXPECT_TRUE(closed_answer_correct(record(QType::Mcq, "(b)", "Neutrophil", {}, opts)));
  EXPECT_TRUE(closed_answer_correct(record(QType::Mcq, "B) Neutrophil", "Neutrophil", {}, opts)));
  EXPECT_TRUE(closed_answer_correct(record(QType::Mcq, "neutrophil", "Neutrophil", {}, opts)));
  EXPECT_FALSE(closed_answer_correct(record(QType::Mcq, "A", "Neutrophil", {}, opts)));
  EXPECT_FALSE(closed_answer_correct(record(QType::Mcq, "F", "Neutrophil", {}, opts)));
  EXPECT_FALSE(closed_answer_correct(record(QType::TrueFalse, "B", "True")));
}

TEST(Evaluate, SingleTrueFalseCell) {
  const auto report = evaluate({record(QType::TrueFalse, "True", "True")}, 100, 1);
  ASSERT_EQ(report.cells.size(), 1u);
  const auto& [key, cell] = *report.cells.begin();
  EXPECT_EQ(std::get<3>(key), "accuracy");
  EXPECT_EQ(cell.mean, 1.0);
  EXPECT_EQ(cell.std, 0.0);
  EXPECT_EQ(cell.n, 1);
}

TEST(Evaluate, MeansMatchRecomputation) {
  Rng rng(31);
  std::vector<EvalRecord> records;
  std::vector<double> tf_truth, fill_exact, open_bleu, open_rouge;
  for (int i = 0; i < 300; ++i) {
    switch (i % 3) {
      case 0: {
        const bool right = rng.bernoulli(0.6);
        tf_truth.push_back(right);
        records.push_back(record(QType::TrueFalse, right ? "True" : "False", "True"));
        break;
      }
      case 1: {
        const bool right = rng.bernoulli(0.3);
        fill_exact.push_back(right);
        records.push_back(record(QType::FillBlank, right ? "Auer rods" : "the Auer rods are visible",
                                 "Auer rods", Task::Abnormality));
        break;
      }
      default: {
        const auto p = random_tokens(rng, 10), g = random_tokens(rng, 10);
        open_bleu.push_back(oracle::bleu1(p, g));
        open_rouge.push_back(oracle::rouge_l(p, g));
        records.push_back(record(QType::Open, join(p), join(g), Task::Knowledge));
      }
    }
  }
  const auto report = evaluate(records, 200, 4);
  auto cell = [&](Task t, QType q, const char* m) {
    return report.cells.at({Level::Cell, t, q, m});
  };
  EXPECT_NEAR(cell(Task::Morphology, QType::TrueFalse, "accuracy").mean, oracle::mean(tf_truth),
              1e-12);
  EXPECT_NEAR(cell(Task::Abnormality, QType::FillBlank, "ematch").mean, oracle::mean(fill_exact),
              1e-12);
  EXPECT_EQ(cell(Task::Abnormality, QType::FillBlank, "pmatch").mean, 1.0);
  EXPECT_NEAR(cell(Task::Knowledge, QType::Open, "bleu1").mean, oracle::mean(open_bleu), 1e-12);
  EXPECT_NEAR(cell(Task::Knowledge, QType::Open, "rouge_l").mean, oracle::mean(open_rouge), 1e-12);
  EXPECT_EQ(cell(Task::Knowledge, QType::Open, "similarity").n, 100);

  auto shuffled = records;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto again = evaluate(shuffled, 200, 4);
  for (const auto& [key, c] : report.cells) {
    EXPECT_NEAR(again.cells.at(key).mean, c.mean, 1e-12);
    EXPECT_EQ(again.cells.at(key).std, c.std);
    EXPECT_EQ(again.cells.at(key).n, c.n);
  }
}

TEST(Evaluate, CsvShape) {
  const auto csv = evaluate({record(QType::TrueFalse, "True", "True")}, 10, 1).to_csv();
  EXPECT_EQ(csv, "level,task,qtype,metric,mean,std,n\ncell,morphology,true_false,accuracy,"
                 "1.000000,0.000000,1\n");
}
