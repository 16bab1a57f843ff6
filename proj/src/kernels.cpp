#include "upil/kernels.hpp"

#include <cmath>
#include <limits>

#include "upil/errors.hpp"

namespace upil::kernels {

namespace {

void check_matmul(const char* name, std::size_t inner_a, std::size_t inner_b, const Tensor2& A, const Tensor2& B,
                  const Tensor2& C, std::size_t out_rows, std::size_t out_cols) {
  if (inner_a != inner_b || C.rows() != out_rows || C.cols() != out_cols)
    throw DimensionError(std::string(name) + ": A" + A.shape_str() + " B" + B.shape_str() + " C" + C.shape_str());
}

// C row i of A·B. The k-outer loop keeps the summation order over k fixed
// for each C(i, j).
inline void matmul_row(const Tensor2& A, const Tensor2& B, Tensor2& C, std::size_t i) {
  auto c = C.row(i);
  std::fill(c.begin(), c.end(), 0.0);
  const auto a = A.row(i);
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double aik = a[k];
    const auto b = B.row(k);
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += aik * b[j];
  }
}

// C row i of Aᵀ·B, i indexes columns of A.
inline void matmul_tn_row(const Tensor2& A, const Tensor2& B, Tensor2& C, std::size_t i) {
  auto c = C.row(i);
  std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t k = 0; k < A.rows(); ++k) {
    const double aki = A(k, i);
    const auto b = B.row(k);
    for (std::size_t j = 0; j < c.size(); ++j) c[j] += aki * b[j];
  }
}

inline void matmul_nt_row(const Tensor2& A, const Tensor2& B, Tensor2& C, std::size_t i) {
  const auto a = A.row(i);
  auto c = C.row(i);
  for (std::size_t j = 0; j < B.rows(); ++j) {
    const auto b = B.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    c[j] = s;
  }
}

inline void supcon_anchor(const Tensor2& S, std::span<const int> y, std::span<const double> w,
                          const SupConAnchorTerms& out, std::size_t i) {
  const std::size_t m = S.rows();
  out.positive_mass[i] = 0.0;
  out.log_denominator[i] = 0.0;
  out.positive_logit_mass[i] = 0.0;
  out.loss[i] = 0.0;
  out.active[i] = 0;
  if (w[i] == 0.0) return;

  const auto s = S.row(i);
  double pos_mass = 0.0;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < m; ++a) {
    if (a == i || w[a] == 0.0) continue;
    if (y[a] == y[i]) pos_mass += w[a];
    if (s[a] > mx) mx = s[a];
  }
  out.positive_mass[i] = pos_mass;
  if (pos_mass < kAnchorSkipMass) return;

  double denom = 0.0;
  double logit_mass = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    if (a == i || w[a] == 0.0) continue;
    denom += w[a] * std::exp(s[a] - mx);
    if (y[a] == y[i]) logit_mass += w[a] * (s[a] + std::log(w[a]));
  }
  const double log_denom = mx + std::log(denom);
  out.log_denominator[i] = log_denom;
  out.positive_logit_mass[i] = logit_mass;
  out.loss[i] = log_denom - logit_mass / pos_mass;
  out.active[i] = 1;
}

void check_supcon(const Tensor2& S, std::span<const int> y, std::span<const double> w, const SupConAnchorTerms& out) {
  const std::size_t m = S.rows();
  if (S.cols() != m || y.size() != m || w.size() != m || out.positive_mass.size() != m ||
      out.log_denominator.size() != m || out.positive_logit_mass.size() != m || out.loss.size() != m ||
      out.active.size() != m)
    throw DimensionError("supcon_anchor_terms: inconsistent lengths for S" + S.shape_str());
}

}  // namespace

void matmul(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul", A.cols(), B.rows(), A, B, C, A.rows(), B.cols());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(A.rows()); ++i) matmul_row(A, B, C, i);
}

void matmul_tn(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul_tn", A.rows(), B.rows(), A, B, C, A.cols(), B.cols());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(A.cols()); ++i) matmul_tn_row(A, B, C, i);
}

void matmul_nt(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul_nt", A.cols(), B.cols(), A, B, C, A.rows(), B.rows());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(A.rows()); ++i) matmul_nt_row(A, B, C, i);
}

void supcon_anchor_terms(const Tensor2& S, std::span<const int> labels, std::span<const double> weights,
                         const SupConAnchorTerms& out) {
  check_supcon(S, labels, weights, out);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(S.rows()); ++i)
    supcon_anchor(S, labels, weights, out, i);
}

namespace serial {

void matmul(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul", A.cols(), B.rows(), A, B, C, A.rows(), B.cols());
  for (std::size_t i = 0; i < A.rows(); ++i) matmul_row(A, B, C, i);
}

void matmul_tn(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul_tn", A.rows(), B.rows(), A, B, C, A.cols(), B.cols());
  for (std::size_t i = 0; i < A.cols(); ++i) matmul_tn_row(A, B, C, i);
}

void matmul_nt(const Tensor2& A, const Tensor2& B, Tensor2& C) {
  check_matmul("matmul_nt", A.cols(), B.cols(), A, B, C, A.rows(), B.rows());
  for (std::size_t i = 0; i < A.rows(); ++i) matmul_nt_row(A, B, C, i);
}

void supcon_anchor_terms(const Tensor2& S, std::span<const int> labels, std::span<const double> weights,
                         const SupConAnchorTerms& out) {
  check_supcon(S, labels, weights, out);
  for (std::size_t i = 0; i < S.rows(); ++i) supcon_anchor(S, labels, weights, out, i);
}

}  // namespace serial

}  // namespace upil::kernels
