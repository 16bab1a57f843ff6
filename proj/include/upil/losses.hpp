#pragma once

#include <span>
#include <vector>

#include "upil/tensor.hpp"

namespace upil {

inline constexpr double kDefaultTau = 0.5;
inline constexpr double kDefaultLambda = 0.1;

// Per-subset losses combined as Σ(active losses) + λ·Var(active losses),
// with the population variance. Inactive subsets contribute 0 and are left
// out of the variance; fewer than two active subsets give variance 0.
struct SubsetLossBreakdown {
  std::vector<double> per_subset;
  std::vector<bool> active_mask;
  double total = 0.0;
  double variance = 0.0;
  double objective = 0.0;
};

SubsetLossBreakdown combine_subsets(std::vector<double> per_subset, std::vector<bool> active_mask, double lambda);

// d objective / d per_subset[e]; zero for inactive subsets.
std::vector<double> subset_loss_sensitivity(const SubsetLossBreakdown& b, double lambda);

// Cosine similarities of the rows of Z divided by tau.
struct ScaledSimilarity {
  Tensor2 features;    // Z as given
  Tensor2 normalized;  // rows of Z scaled to unit norm
  Tensor2 scaled;      // normalized·normalizedᵀ / tau
  double tau = kDefaultTau;
};

ScaledSimilarity scaled_similarity(const Tensor2& Z, double tau);

struct SupConValue {
  double loss = 0.0;
  bool active = false;
};

// Weighted supervised contrastive loss of one subset. Positives of anchor i
// are the other members with the same label; weights act as fractional
// membership in both the positive terms and the denominator.
SupConValue supcon_subset(const Tensor2& Z, std::span<const int> labels, std::span<const double> weights, double tau);
SupConValue supcon_subset(const ScaledSimilarity& sim, std::span<const int> labels, std::span<const double> weights);

struct SupConGrad {
  double loss = 0.0;
  bool active = false;
  // d loss / d weight_j. Entries with weight 0 omit the w·log w term, whose
  // derivative is unbounded there.
  std::vector<double> d_weights;
  // d loss / d Z; empty unless requested.
  Tensor2 d_features;
};

SupConGrad supcon_subset_grad(const Tensor2& Z, std::span<const int> labels, std::span<const double> weights,
                              double tau, bool want_features = true);
SupConGrad supcon_subset_grad(const ScaledSimilarity& sim, std::span<const int> labels,
                              std::span<const double> weights);

// Partition-discovery objective with hard membership (assignment[i] in [0,k)).
SubsetLossBreakdown unfair_objective_hard(const Tensor2& Z, std::span<const int> labels,
                                          std::span<const std::size_t> assignment, std::size_t k, double tau,
                                          double lambda);
SubsetLossBreakdown unfair_objective_hard(const ScaledSimilarity& sim, std::span<const int> labels,
                                          std::span<const std::size_t> assignment, std::size_t k, double lambda);

struct SoftObjective {
  SubsetLossBreakdown breakdown;
  Tensor2 d_assign;  // d objective / d P, same shape as P
};

// Soft relaxation: column e of the row-stochastic P weights subset e.
// Z is treated as a constant.
SoftObjective unfair_objective_soft(const Tensor2& Z, std::span<const int> labels, const Tensor2& P, double tau,
                                    double lambda);
SoftObjective unfair_objective_soft(const ScaledSimilarity& sim, std::span<const int> labels, const Tensor2& P,
                                    double lambda);

// Cross-entropy variant of the partition objective: subset e scores the
// P-weighted mean of the per-instance losses `instance_ce`.
SoftObjective soft_ce_partition_objective(std::span<const double> instance_ce, const Tensor2& P, double lambda);
SubsetLossBreakdown hard_ce_partition_objective(std::span<const double> instance_ce,
                                                std::span<const std::size_t> assignment, std::size_t k,
                                                double lambda);

// -log softmax(logits_i)[y_i] per row.
std::vector<double> cross_entropy_per_instance(const Tensor2& logits, std::span<const int> labels);
double cross_entropy(const Tensor2& logits, std::span<const int> labels);

struct LossWithGrad {
  double loss = 0.0;
  Tensor2 d_logits;
};

LossWithGrad cross_entropy_grad(const Tensor2& logits, std::span<const int> labels);

// Per-subset mean cross-entropy combined with the variance penalty.
// membership[i] is the subset of batch row i; values >= k are an error.
SubsetLossBreakdown invariant_objective(const Tensor2& logits, std::span<const int> labels,
                                        std::span<const std::size_t> membership, std::size_t k, double lambda);

struct InvariantGrad {
  SubsetLossBreakdown breakdown;
  Tensor2 d_logits;
};

InvariantGrad invariant_objective_grad(const Tensor2& logits, std::span<const int> labels,
                                       std::span<const std::size_t> membership, std::size_t k, double lambda);

// Mean of invariant_objective over several partitions of the same batch.
double multi_partition_objective(const Tensor2& logits, std::span<const int> labels,
                                 std::span<const std::vector<std::size_t>> memberships, std::size_t k, double lambda);
LossWithGrad multi_partition_objective_grad(const Tensor2& logits, std::span<const int> labels,
                                            std::span<const std::vector<std::size_t>> memberships, std::size_t k,
                                            double lambda);

}  // namespace upil
