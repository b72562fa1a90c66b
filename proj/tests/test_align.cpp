#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "pbs/align.hpp"
#include "pbs/error.hpp"

using namespace pbs;
using namespace pbs::align;
using Mat = TokenMatrix<double>;

namespace {

Mat rows(std::initializer_list<std::initializer_list<double>> r) {
  Mat m(static_cast<Eigen::Index>(r.size()), static_cast<Eigen::Index>(r.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

Mat permute_rows(const Mat& m, const std::vector<int>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

}  // namespace

TEST(LossGlobal, Examples) {
  Rng rng(1);
  const Mat a = random_tokens<double>(3, 4, rng);
  EXPECT_EQ(loss_global(a, a).value, 0.0);
  EXPECT_TRUE(loss_global(a, a).grad_a.isZero());
  EXPECT_DOUBLE_EQ(loss_global(rows({{3, 4}}), rows({{0, 0}})).value, 5.0);
  const Mat b = random_tokens<double>(2, 2, rng), c = random_tokens<double>(2, 2, rng);
  const double dx = (b(0, 0) + b(1, 0) - c(0, 0) - c(1, 0)) / 2;
  const double dy = (b(0, 1) + b(1, 1) - c(0, 1) - c(1, 1)) / 2;
  EXPECT_NEAR(loss_global(b, c).value, std::hypot(dx, dy), 1e-15);
  EXPECT_THROW(loss_global(a, b), ValidationError);
}

TEST(LossLocal, Examples) {
  EXPECT_EQ(loss_local(rows({{1, 2}}), rows({{-3, 5}})).value, 0.0);
  const Mat same = Mat::Constant(4, 3, 0.7);
  EXPECT_NEAR(loss_local(same, same).value, std::log(4.0), 1e-12);
  const Mat eye = Mat::Identity(2, 2);
  EXPECT_NEAR(loss_local(eye, eye).value, std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(loss_local(eye, eye).value, 0.3133, 5e-5);
}

TEST(LossLocal, PermutationAndShiftInvariance) {
  Rng rng(2);
  const Mat vp = random_tokens<double>(4, 3, rng), vc = random_tokens<double>(4, 3, rng);
  const std::vector<int> perm{2, 0, 3, 1};
  EXPECT_NEAR(loss_local(vp, vc).value, loss_local(permute_rows(vp, perm), permute_rows(vc, perm)).value,
              1e-12);
  // Appending a column of 1s to Vc and a per-row constant to Vp adds that
  // constant to every logit of the row.
  Mat vp2(4, 4), vc2(4, 4);
  vp2 << vp, Eigen::Vector4d(5, -3, 100, 0.5);
  vc2 << vc, Eigen::Vector4d::Ones();
  EXPECT_NEAR(loss_local(vp2, vc2).value, loss_local(vp, vc).value, 1e-12);
}

TEST(LossLocal, LargeLogitsStayFinite) {
  const Mat big = Mat::Identity(3, 3) * 200.0;
  const auto l = loss_local(big, big);
  EXPECT_TRUE(std::isfinite(l.value));
  EXPECT_TRUE(l.grad_a.allFinite());
}

TEST(LossItc, Examples) {
  Rng rng(3);
  const Mat one = random_tokens<double>(1, 5, rng);
  EXPECT_NEAR(loss_itc(one, random_tokens<double>(1, 5, rng), 0.07).value, 0.0, 1e-15);
  const Mat eye = Mat::Identity(2, 2);
  EXPECT_NEAR(loss_itc(eye, eye, 1.0).value, std::log1p(std::exp(-1.0)), 1e-15);

  const Mat img = random_tokens<double>(5, 4, rng), txt = random_tokens<double>(5, 4, rng);
  const std::vector<int> perm{4, 2, 0, 1, 3};
  EXPECT_NEAR(loss_itc(img, txt, 0.3).value,
              loss_itc(permute_rows(img, perm), permute_rows(txt, perm), 0.3).value, 1e-12);
}

TEST(LossItc, Errors) {
  Mat zero_row = Mat::Identity(2, 2);
  zero_row.row(1).setZero();
  EXPECT_THROW(loss_itc(zero_row, Mat(Mat::Identity(2, 2)), 1.0), DomainError);
  EXPECT_THROW(loss_itc(Mat(Mat::Identity(2, 2)), Mat(Mat::Identity(2, 2)), 0.0), DomainError);
}

TEST(Resampler, MatchesReference) {
  Rng rng(4);
  for (int layers : {1, 3}) {
    const auto p = ResamplerParams<double>::random(2, 4, rng, layers);
    const Mat x = random_tokens<double>(5, 4, rng);
    const Mat ref = oracle::resample(p.latents, p.wq, p.wk, p.wv, p.wo, layers, x);
    EXPECT_LT((resample(p, x) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Resampler, SingleKeyBroadcast) {
  Rng rng(5);
  auto p = ResamplerParams<double>::random(3, 4, rng);
  p.wv.setIdentity();
  p.wo.setIdentity();
  const Mat x = random_tokens<double>(1, 4, rng);
  const Mat expected = p.latents.rowwise() + x.row(0);
  EXPECT_LT((resample(p, x) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Resampler, ShapeIndependentOfInputCount) {
  Rng rng(6);
  const auto p = ResamplerParams<double>::random(32, 8, rng);
  const Mat out = resample(p, random_tokens<double>(1000, 8, rng));
  EXPECT_EQ(out.rows(), 32);
  EXPECT_EQ(out.cols(), 8);
  EXPECT_THROW(resample(p, random_tokens<double>(4, 7, rng)), ValidationError);
}

TEST(Resampler, InputPermutationInvariant) {
  Rng rng(7);
  const auto p = ResamplerParams<double>::random(4, 6, rng, 2);
  const Mat x = random_tokens<double>(9, 6, rng);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> perm(9);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    EXPECT_LT((resample(p, x) - resample(p, permute_rows(x, perm))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(GradCheck, EveryOpOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& o : gradsuite::run(seed))
      EXPECT_TRUE(o.report.passed) << o.name << " seed " << seed << " rel "
                                   << o.report.max_rel_error;
}

TEST(GradCheck, TightOnSimpleLosses) {
  Rng rng(8);
  const Mat a = random_tokens<double>(2, 2, rng), b = random_tokens<double>(2, 2, rng);
  auto global = [](const std::vector<Mat>& in) {
    const auto l = loss_global(in[0], in[1]);
    return Differentiated<double>{l.value, {l.grad_a, l.grad_b}};
  };
  auto local = [](const std::vector<Mat>& in) {
    const auto l = loss_local(in[0], in[1]);
    return Differentiated<double>{l.value, {l.grad_a, l.grad_b}};
  };
  EXPECT_LT(grad_check<double>(global, {a, b}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check<double>(local, {a, b}).max_rel_error, 1e-5);
}

TEST(GradCheck, DetectsWrongGradient) {
  auto wrong = [](const std::vector<Mat>& in) {
    return Differentiated<double>{in[0].squaredNorm(), {in[0]}};  // should be 2x
  };
  Rng rng(9);
  EXPECT_FALSE(grad_check<double>(wrong, {random_tokens<double>(2, 3, rng)}).passed);
  GradCheckOptions<double> bad;
  bad.eps = 0.0;
  EXPECT_THROW(grad_check<double>(wrong, {Mat::Ones(1, 1)}, bad), DomainError);
}

TEST(Tensor, MatrixTextRoundTrip) {
  Rng rng(10);
  const Mat m = random_tokens<double>(3, 5, rng);
  std::stringstream s;
  write_matrix(s, m);
  EXPECT_EQ(read_matrix<double>(s), m);
  std::stringstream truncated("2 2\n1 2 3");
  EXPECT_THROW(read_matrix<double>(truncated), ValidationError);
}

TEST(Tensor, FloatInstantiation) {
  const TokenMatrix<float> eye = TokenMatrix<float>::Identity(2, 2);
  EXPECT_NEAR(loss_local(eye, eye).value, std::log1p(std::exp(-1.0f)), 1e-6f);
}
