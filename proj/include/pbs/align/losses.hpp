#pragma once

#include <cmath>

#include "pbs/align/tensor.hpp"

namespace pbs::align {

// Loss value with gradients w.r.t. the first and second argument.
template <typename Scalar>
struct LossValue {
  Scalar value = Scalar(0);
  TokenMatrix<Scalar> grad_a;
  TokenMatrix<Scalar> grad_b;
};

// Euclidean norm of the mean token difference, ||(1/N) sum_i (Vp_i - Vc_i)||.
// The subgradient at a zero difference is taken to be zero.
template <typename Scalar>
LossValue<Scalar> loss_global(const TokenMatrix<Scalar>& vp, const TokenMatrix<Scalar>& vc) {
  require_tokens(vp, "patch tokens");
  require_tokens(vc, "cell tokens");
  require_same_shape(vp, vc, "loss_global");
  const auto n = static_cast<Scalar>(vp.rows());
  const RowVector<Scalar> mean_diff = (vp - vc).colwise().sum() / n;
  LossValue<Scalar> out;
  out.value = mean_diff.norm();
  out.grad_a = TokenMatrix<Scalar>::Zero(vp.rows(), vp.cols());
  if (out.value > Scalar(0))
    out.grad_a.rowwise() = mean_diff / (n * out.value);
  out.grad_b = -out.grad_a;
  return out;
}

// -(1/N) sum_i log softmax_j(Vp_i . Vc_j)[i]: each patch token must pick out
// its own cell token among the N cell tokens of the pair.
template <typename Scalar>
LossValue<Scalar> loss_local(const TokenMatrix<Scalar>& vp, const TokenMatrix<Scalar>& vc) {
  require_tokens(vp, "patch tokens");
  require_tokens(vc, "cell tokens");
  require_same_shape(vp, vc, "loss_local");
  const auto n = vp.rows();
  const TokenMatrix<Scalar> logits = vp * vc.transpose();
  LossValue<Scalar> out;
  out.value = (logsumexp_rows(logits) - logits.diagonal()).sum() / static_cast<Scalar>(n);
  TokenMatrix<Scalar> dlogits = softmax_rows(logits);
  dlogits.diagonal().array() -= Scalar(1);
  dlogits /= static_cast<Scalar>(n);
  out.grad_a = dlogits * vc;
  out.grad_b = dlogits.transpose() * vp;
  return out;
}

// Symmetric InfoNCE over the B x B cosine-similarity matrix scaled by
// 1/temperature; matching pairs sit on the diagonal.
template <typename Scalar>
LossValue<Scalar> loss_itc(const TokenMatrix<Scalar>& img, const TokenMatrix<Scalar>& txt,
                           Scalar temperature) {
  require_tokens(img, "image embeddings");
  require_tokens(txt, "text embeddings");
  require_same_shape(img, txt, "loss_itc");
  if (!(temperature > Scalar(0))) throw DomainError("ITC temperature must be positive");
  const auto b = img.rows();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> img_norm = img.rowwise().norm();
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> txt_norm = txt.rowwise().norm();
  if ((img_norm.array() == Scalar(0)).any() || (txt_norm.array() == Scalar(0)).any())
    throw DomainError("ITC embedding row has zero norm; cosine similarity is undefined");
  const TokenMatrix<Scalar> u = img_norm.asDiagonal().inverse() * img;
  const TokenMatrix<Scalar> w = txt_norm.asDiagonal().inverse() * txt;
  const TokenMatrix<Scalar> logits = u * w.transpose() / temperature;
  const TokenMatrix<Scalar> logits_t = logits.transpose();

  LossValue<Scalar> out;
  const Scalar i2t = (logsumexp_rows(logits) - logits.diagonal()).sum();
  const Scalar t2i = (logsumexp_rows(logits_t) - logits.diagonal()).sum();
  out.value = (i2t + t2i) / (Scalar(2) * static_cast<Scalar>(b));

  TokenMatrix<Scalar> d_rows = softmax_rows(logits);
  d_rows.diagonal().array() -= Scalar(1);
  TokenMatrix<Scalar> d_cols = softmax_rows(logits_t);
  d_cols.diagonal().array() -= Scalar(1);
  const TokenMatrix<Scalar> dlogits =
      (d_rows + d_cols.transpose()) / (Scalar(2) * static_cast<Scalar>(b) * temperature);

  const TokenMatrix<Scalar> du = dlogits * w;
  const TokenMatrix<Scalar> dw = dlogits.transpose() * u;
  // d(x/|x|) = (I - u u^T) / |x|
  auto through_norm = [](const TokenMatrix<Scalar>& unit, const TokenMatrix<Scalar>& d_unit,
                         const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& norms) {
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> proj =
        unit.cwiseProduct(d_unit).rowwise().sum();
    TokenMatrix<Scalar> g = d_unit - proj.asDiagonal() * unit;
    return TokenMatrix<Scalar>(norms.asDiagonal().inverse() * g);
  };
  out.grad_a = through_norm(u, du, img_norm);
  out.grad_b = through_norm(w, dw, txt_norm);
  return out;
}

}  // namespace pbs::align
