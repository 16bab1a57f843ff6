#pragma once

// Data-parallel inner loops. Every kernel has an OpenMP version and a serial
// reference in `kernels::serial`. Both share the same per-row body, so each
// output element is produced by the same sequence of floating-point
// operations and the two agree bitwise regardless of thread count.

#include <cstddef>
#include <cstdint>
#include <span>

#include "upil/tensor.hpp"

namespace upil::kernels {

// C = A·B
void matmul(const Tensor2& A, const Tensor2& B, Tensor2& C);
// C = Aᵀ·B
void matmul_tn(const Tensor2& A, const Tensor2& B, Tensor2& C);
// C = A·Bᵀ
void matmul_nt(const Tensor2& A, const Tensor2& B, Tensor2& C);

// Per-anchor terms of the weighted supervised contrastive loss over a
// precomputed similarity matrix S (already divided by the temperature).
struct SupConAnchorTerms {
  // Σ_{p∈P(i)} w_p; anchors below the skip threshold are inactive.
  std::span<double> positive_mass;
  // log Σ_{a≠i} w_a·exp(S_ia)
  std::span<double> log_denominator;
  // Σ_{p∈P(i)} w_p·(S_ip + log w_p)
  std::span<double> positive_logit_mass;
  // loss_i; 0 for skipped anchors
  std::span<double> loss;
  // 1 when anchor i contributes to the subset loss
  std::span<std::uint8_t> active;
};

inline constexpr double kAnchorSkipMass = 1e-9;

void supcon_anchor_terms(const Tensor2& S, std::span<const int> labels, std::span<const double> weights,
                         const SupConAnchorTerms& out);

// Score every canonical 2-subset assignment of m instances (instance 0 fixed
// in subset 0) with `score(mask)` and return the lowest-index maximiser.
// Mask bit (m-1-j) holds the subset of instance j, so ascending mask order is
// lexicographic order of assignment vectors.
struct MaskArgmax {
  std::uint64_t mask = 0;
  double score = 0.0;
};

template <typename ScoreFn>
MaskArgmax argmax_over_masks(std::uint64_t count, ScoreFn&& score);

namespace serial {
void matmul(const Tensor2& A, const Tensor2& B, Tensor2& C);
void matmul_tn(const Tensor2& A, const Tensor2& B, Tensor2& C);
void matmul_nt(const Tensor2& A, const Tensor2& B, Tensor2& C);
void supcon_anchor_terms(const Tensor2& S, std::span<const int> labels, std::span<const double> weights,
                         const SupConAnchorTerms& out);
template <typename ScoreFn>
MaskArgmax argmax_over_masks(std::uint64_t count, ScoreFn&& score);
}  // namespace serial

}  // namespace upil::kernels

#include "upil/kernels_inl.hpp"
