#pragma once

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Core>

#include "pbs/error.hpp"
#include "pbs/random.hpp"

namespace pbs::align {

// N tokens (rows) by d embedding dimensions (cols).
template <typename Scalar>
using TokenMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Derived>
void require_tokens(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (m.rows() < 1 || m.cols() < 1)
    throw ValidationError(std::string(what) + " must have at least one row and column");
  if (!m.allFinite()) throw ValidationError(std::string(what) + " has non-finite entries");
}

template <typename DerivedA, typename DerivedB>
void require_same_shape(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream msg;
    msg << what << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
        << b.cols();
    throw ValidationError(msg.str());
  }
}

// Entries drawn i.i.d. from N(0, scale^2).
template <typename Scalar>
TokenMatrix<Scalar> random_tokens(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                  Scalar scale = Scalar(1)) {
  TokenMatrix<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * static_cast<Scalar>(rng.normal());
  return m;
}

// Numerically stable row-wise softmax.
template <typename Derived>
auto softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  TokenMatrix<Scalar> p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename Derived>
auto logsumexp_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar m = logits.row(i).maxCoeff();
    out(i) = m + std::log((logits.row(i).array() - m).exp().sum());
  }
  return out;
}

// Text checkpoint format: "rows cols" header line, then one row per line,
// values written with round-trip precision.
template <typename Derived>
void write_matrix(std::ostream& out, const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  out << m.rows() << ' ' << m.cols() << '\n';
  out << std::setprecision(std::numeric_limits<Scalar>::max_digits10);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << m(i, j);
    out << '\n';
  }
}

template <typename Scalar>
TokenMatrix<Scalar> read_matrix(std::istream& in) {
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0)
    throw ValidationError("malformed matrix header");
  TokenMatrix<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      if (!(in >> m(i, j))) throw ValidationError("truncated matrix data");
  return m;
}

}  // namespace pbs::align
