#pragma once

#include <cmath>
#include <vector>

#include "pbs/align/tensor.hpp"

namespace pbs::align {

// Single-head cross-attention resampler with residual latents. Projections
// are shared across layers:
//   Z_{l+1} = Z_l + softmax(Z_l Wq (X Wk)^T / sqrt(d)) (X Wv) Wo
// Output has as many rows as `latents`, whatever the number of inputs.
template <typename Scalar>
struct ResamplerParams {
  TokenMatrix<Scalar> latents;  // N x d
  TokenMatrix<Scalar> wq, wk, wv, wo;  // d x d
  int layers = 1;

  Eigen::Index tokens() const { return latents.rows(); }
  Eigen::Index dim() const { return latents.cols(); }

  static ResamplerParams zeros(Eigen::Index n, Eigen::Index d, int layers = 1) {
    return {TokenMatrix<Scalar>::Zero(n, d), TokenMatrix<Scalar>::Zero(d, d),
            TokenMatrix<Scalar>::Zero(d, d), TokenMatrix<Scalar>::Zero(d, d),
            TokenMatrix<Scalar>::Zero(d, d), layers};
  }

  // Latents ~ N(0, latent_scale^2); projections ~ N(0, 1/d).
  static ResamplerParams random(Eigen::Index n, Eigen::Index d, Rng& rng, int layers = 1,
                                Scalar latent_scale = Scalar(1)) {
    const Scalar w = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
    ResamplerParams p{random_tokens<Scalar>(n, d, rng, latent_scale),
                      random_tokens<Scalar>(d, d, rng, w), random_tokens<Scalar>(d, d, rng, w),
                      random_tokens<Scalar>(d, d, rng, w), random_tokens<Scalar>(d, d, rng, w),
                      layers};
    return p;
  }

  void validate() const {
    require_tokens(latents, "resampler latents");
    const auto d = dim();
    for (const auto* w : {&wq, &wk, &wv, &wo}) {
      if (w->rows() != d || w->cols() != d)
        throw ValidationError("resampler projection must be d x d");
      if (!w->allFinite()) throw ValidationError("resampler projection has non-finite entries");
    }
    if (layers < 1) throw ValidationError("resampler needs at least one layer");
  }

  ResamplerParams& operator+=(const ResamplerParams& o) {
    latents += o.latents;
    wq += o.wq;
    wk += o.wk;
    wv += o.wv;
    wo += o.wo;
    return *this;
  }
  ResamplerParams& operator*=(Scalar s) {
    latents *= s;
    wq *= s;
    wk *= s;
    wv *= s;
    wo *= s;
    return *this;
  }
};

template <typename Scalar>
struct ResamplerTape {
  struct Layer {
    TokenMatrix<Scalar> z;     // latents entering the layer
    TokenMatrix<Scalar> q;     // N x d
    TokenMatrix<Scalar> attn;  // N x M, row-stochastic
    TokenMatrix<Scalar> h;     // attn * V, N x d
  };
  TokenMatrix<Scalar> k, v;  // M x d, shared by all layers
  std::vector<Layer> layers;
  TokenMatrix<Scalar> output;
};

template <typename Scalar>
ResamplerTape<Scalar> resample_forward(const ResamplerParams<Scalar>& params,
                                       const TokenMatrix<Scalar>& inputs) {
  params.validate();
  require_tokens(inputs, "resampler inputs");
  if (inputs.cols() != params.dim())
    throw ValidationError("resampler input dim " + std::to_string(inputs.cols()) +
                          " does not match parameter dim " + std::to_string(params.dim()));
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(params.dim()));
  ResamplerTape<Scalar> tape;
  tape.k = inputs * params.wk;
  tape.v = inputs * params.wv;
  TokenMatrix<Scalar> z = params.latents;
  for (int l = 0; l < params.layers; ++l) {
    typename ResamplerTape<Scalar>::Layer layer;
    layer.z = z;
    layer.q = z * params.wq;
    layer.attn = softmax_rows(TokenMatrix<Scalar>(layer.q * tape.k.transpose() * inv_sqrt_d));
    layer.h = layer.attn * tape.v;
    z = z + layer.h * params.wo;
    tape.layers.push_back(std::move(layer));
  }
  tape.output = std::move(z);
  return tape;
}

template <typename Scalar>
TokenMatrix<Scalar> resample(const ResamplerParams<Scalar>& params,
                             const TokenMatrix<Scalar>& inputs) {
  return resample_forward(params, inputs).output;
}

template <typename Scalar>
struct ResamplerGrads {
  ResamplerParams<Scalar> params;  // same shapes as the parameters
  TokenMatrix<Scalar> inputs;
};

// Reverse pass given dLoss/dOutput.
template <typename Scalar>
ResamplerGrads<Scalar> resample_backward(const ResamplerParams<Scalar>& params,
                                         const TokenMatrix<Scalar>& inputs,
                                         const ResamplerTape<Scalar>& tape,
                                         const TokenMatrix<Scalar>& d_output) {
  require_same_shape(d_output, tape.output, "resampler output gradient");
  const auto d = params.dim();
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  ResamplerGrads<Scalar> g{ResamplerParams<Scalar>::zeros(params.tokens(), d, params.layers),
                           TokenMatrix<Scalar>::Zero(inputs.rows(), inputs.cols())};
  TokenMatrix<Scalar> dk = TokenMatrix<Scalar>::Zero(tape.k.rows(), d);
  TokenMatrix<Scalar> dv = TokenMatrix<Scalar>::Zero(tape.v.rows(), d);
  TokenMatrix<Scalar> dz = d_output;
  for (int l = params.layers - 1; l >= 0; --l) {
    const auto& layer = tape.layers[static_cast<std::size_t>(l)];
    // z_out = z + h Wo
    g.params.wo.noalias() += layer.h.transpose() * dz;
    const TokenMatrix<Scalar> dh = dz * params.wo.transpose();
    // h = A V
    const TokenMatrix<Scalar> da = dh * tape.v.transpose();
    dv.noalias() += layer.attn.transpose() * dh;
    // softmax backward, row-wise
    TokenMatrix<Scalar> ds = layer.attn.cwiseProduct(da);
    const auto row_dot = ds.rowwise().sum().eval();
    ds -= layer.attn.cwiseProduct(row_dot.replicate(1, layer.attn.cols()));
    ds *= inv_sqrt_d;
    // S = Q K^T
    const TokenMatrix<Scalar> dq = ds * tape.k;
    dk.noalias() += ds.transpose() * layer.q;
    g.params.wq.noalias() += layer.z.transpose() * dq;
    dz = dz + dq * params.wq.transpose();
  }
  g.params.latents = dz;
  g.params.wk.noalias() += inputs.transpose() * dk;
  g.params.wv.noalias() += inputs.transpose() * dv;
  g.inputs.noalias() += dk * params.wk.transpose();
  g.inputs.noalias() += dv * params.wv.transpose();
  return g;
}

}  // namespace pbs::align
