#include "upil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "upil/errors.hpp"
#include "upil/kernels.hpp"

namespace upil {

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kStochasticTol = 1e-9;

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature tau must be positive, got " + std::to_string(tau));
}

void check_labels(std::span<const int> labels, std::size_t rows, const char* what) {
  if (labels.size() != rows)
    throw DimensionError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " rows");
}

struct AnchorBuffers {
  explicit AnchorBuffers(std::size_t m) : pos_mass(m), log_den(m), logit_mass(m), loss(m), active(m) {}
  std::vector<double> pos_mass, log_den, logit_mass, loss;
  std::vector<std::uint8_t> active;

  kernels::SupConAnchorTerms view() { return {pos_mass, log_den, logit_mass, loss, active}; }
};

struct SupConReduced {
  double loss = 0.0;
  bool active = false;
  double anchor_mass = 0.0;  // Σ_{active i} w_i
};

SupConReduced reduce_anchors(const AnchorBuffers& buf, std::span<const double> w) {
  SupConReduced r;
  double weighted = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!buf.active[i]) continue;
    r.anchor_mass += w[i];
    weighted += w[i] * buf.loss[i];
  }
  if (r.anchor_mass > 0.0) {
    r.active = true;
    r.loss = weighted / r.anchor_mass;
  }
  return r;
}

void check_weights(std::span<const double> w, std::size_t m) {
  if (w.size() != m) throw DimensionError("supcon: " + std::to_string(w.size()) + " weights for " + std::to_string(m) + " rows");
  for (double v : w)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("supcon: member weights must lie in [0,1]");
}

}  // namespace

SubsetLossBreakdown combine_subsets(std::vector<double> per_subset, std::vector<bool> active_mask, double lambda) {
  if (per_subset.size() != active_mask.size()) throw DimensionError("combine_subsets: mask length mismatch");
  SubsetLossBreakdown b;
  std::size_t n = 0;
  for (std::size_t e = 0; e < per_subset.size(); ++e) {
    if (!active_mask[e]) {
      per_subset[e] = 0.0;
      continue;
    }
    b.total += per_subset[e];
    ++n;
  }
  if (n >= 2) {
    // Pairwise form, Σ_{e<f} (L_e − L_f)² / n², is exactly 0 for equal losses.
    double ss = 0.0;
    for (std::size_t e = 0; e < per_subset.size(); ++e)
      for (std::size_t f = e + 1; f < per_subset.size(); ++f)
        if (active_mask[e] && active_mask[f]) ss += (per_subset[e] - per_subset[f]) * (per_subset[e] - per_subset[f]);
    b.variance = ss / static_cast<double>(n * n);
  }
  b.objective = b.total + lambda * b.variance;
  b.per_subset = std::move(per_subset);
  b.active_mask = std::move(active_mask);
  return b;
}

std::vector<double> subset_loss_sensitivity(const SubsetLossBreakdown& b, double lambda) {
  std::vector<double> s(b.per_subset.size(), 0.0);
  const auto n = static_cast<std::size_t>(std::count(b.active_mask.begin(), b.active_mask.end(), true));
  const double mean = n > 0 ? b.total / static_cast<double>(n) : 0.0;
  for (std::size_t e = 0; e < s.size(); ++e) {
    if (!b.active_mask[e]) continue;
    s[e] = 1.0;
    if (n >= 2) s[e] += lambda * 2.0 * (b.per_subset[e] - mean) / static_cast<double>(n);
  }
  return s;
}

ScaledSimilarity scaled_similarity(const Tensor2& Z, double tau) {
  check_tau(tau);
  ScaledSimilarity sim;
  sim.tau = tau;
  sim.features = Z;
  sim.normalized = l2_normalize_rows(Z, kNormEps);
  sim.scaled = Tensor2(Z.rows(), Z.rows());
  kernels::matmul_nt(sim.normalized, sim.normalized, sim.scaled);
  for (double& v : sim.scaled.values()) v /= tau;
  return sim;
}

SupConValue supcon_subset(const ScaledSimilarity& sim, std::span<const int> labels, std::span<const double> weights) {
  const std::size_t m = sim.scaled.rows();
  check_labels(labels, m, "supcon");
  check_weights(weights, m);
  AnchorBuffers buf(m);
  kernels::supcon_anchor_terms(sim.scaled, labels, weights, buf.view());
  const auto r = reduce_anchors(buf, weights);
  return {r.loss, r.active};
}

SupConValue supcon_subset(const Tensor2& Z, std::span<const int> labels, std::span<const double> weights, double tau) {
  return supcon_subset(scaled_similarity(Z, tau), labels, weights);
}

namespace {

SupConGrad supcon_grad_impl(const ScaledSimilarity& sim, std::span<const int> y, std::span<const double> w,
                            bool want_features) {
  const std::size_t m = sim.scaled.rows();
  check_labels(y, m, "supcon");
  check_weights(w, m);
  AnchorBuffers buf(m);
  kernels::supcon_anchor_terms(sim.scaled, y, w, buf.view());
  const auto r = reduce_anchors(buf, w);

  SupConGrad g;
  g.loss = r.loss;
  g.active = r.active;
  g.d_weights.assign(m, 0.0);
  if (want_features) g.d_features = Tensor2(m, sim.features.cols());
  if (!r.active) return g;

  const double M = r.anchor_mass;
  const double T = r.loss;
  const Tensor2& S = sim.scaled;

  // C(i, j) = w_i · dL_i/dw_j and G(i, j) = dT/dS_ij, one row per anchor.
  Tensor2 C(m, m);
  Tensor2 G(want_features ? m : 0, want_features ? m : 0);
#pragma omp parallel for schedule(static)
  for (std::int64_t si = 0; si < static_cast<std::int64_t>(m); ++si) {
    const auto i = static_cast<std::size_t>(si);
    if (!buf.active[i]) continue;
    const double Wi = buf.pos_mass[i];
    const double Qi = buf.logit_mass[i];
    const double logD = buf.log_den[i];
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double soft = std::exp(S(i, j) - logD);
      double dl = soft;
      if (y[j] == y[i]) {
        const double log_term = w[j] > 0.0 ? std::log(w[j]) + 1.0 : 0.0;
        dl += -(S(i, j) + log_term) / Wi + Qi / (Wi * Wi);
      }
      C(i, j) = w[i] * dl;
      if (want_features && w[j] > 0.0) {
        double ds = w[j] * soft;
        if (y[j] == y[i]) ds -= w[j] / Wi;
        G(i, j) = w[i] / M * ds;
      }
    }
  }
#pragma omp parallel for schedule(static)
  for (std::int64_t sj = 0; sj < static_cast<std::int64_t>(m); ++sj) {
    const auto j = static_cast<std::size_t>(sj);
    double acc = buf.active[j] ? buf.loss[j] - T : 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += C(i, j);
    g.d_weights[j] = acc / M;
  }

  if (want_features) {
    Tensor2 H(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) H(i, j) = (G(i, j) + G(j, i)) / sim.tau;
    Tensor2 d_norm(m, sim.normalized.cols());
    kernels::matmul(H, sim.normalized, d_norm);
    g.d_features = l2_normalize_rows_backward(sim.features, d_norm, kNormEps);
  }
  return g;
}

void check_stochastic(const Tensor2& P, std::size_t m) {
  if (P.rows() != m) throw DimensionError("soft assignment " + P.shape_str() + " for " + std::to_string(m) + " rows");
  if (P.cols() < 2) throw DimensionError("soft assignment needs at least 2 subsets, got " + P.shape_str());
  for (std::size_t r = 0; r < P.rows(); ++r) {
    double sum = 0.0;
    for (double v : P.row(r)) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("soft assignment row " + std::to_string(r) + " has entries outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kStochasticTol)
      throw DataError("soft assignment row " + std::to_string(r) + " sums to " + std::to_string(sum));
  }
}

std::vector<double> column(const Tensor2& P, std::size_t e) {
  std::vector<double> c(P.rows());
  for (std::size_t r = 0; r < P.rows(); ++r) c[r] = P(r, e);
  return c;
}

void check_assignment(std::span<const std::size_t> assignment, std::size_t rows, std::size_t k, const char* what) {
  if (assignment.size() != rows)
    throw DimensionError(std::string(what) + ": assignment of " + std::to_string(assignment.size()) + " rows for " +
                         std::to_string(rows) + " instances");
  if (k < 1) throw ConfigError(std::string(what) + ": k must be positive");
  for (auto a : assignment)
    if (a >= k) throw DataError(std::string(what) + ": subset id " + std::to_string(a) + " outside [0," + std::to_string(k) + ")");
}

}  // namespace

SupConGrad supcon_subset_grad(const ScaledSimilarity& sim, std::span<const int> labels,
                              std::span<const double> weights) {
  return supcon_grad_impl(sim, labels, weights, true);
}

SupConGrad supcon_subset_grad(const Tensor2& Z, std::span<const int> labels, std::span<const double> weights,
                              double tau, bool want_features) {
  return supcon_grad_impl(scaled_similarity(Z, tau), labels, weights, want_features);
}

SubsetLossBreakdown unfair_objective_hard(const ScaledSimilarity& sim, std::span<const int> labels,
                                          std::span<const std::size_t> assignment, std::size_t k, double lambda) {
  check_assignment(assignment, sim.scaled.rows(), k, "unfair_objective_hard");
  std::vector<double> per(k, 0.0);
  std::vector<bool> active(k, false);
  std::vector<double> w(assignment.size());
  for (std::size_t e = 0; e < k; ++e) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = assignment[i] == e ? 1.0 : 0.0;
    const auto v = supcon_subset(sim, labels, w);
    per[e] = v.loss;
    active[e] = v.active;
  }
  return combine_subsets(std::move(per), std::move(active), lambda);
}

SubsetLossBreakdown unfair_objective_hard(const Tensor2& Z, std::span<const int> labels,
                                          std::span<const std::size_t> assignment, std::size_t k, double tau,
                                          double lambda) {
  if (assignment.size() != Z.rows())
    throw DimensionError("unfair_objective_hard: assignment of " + std::to_string(assignment.size()) + " rows for Z" +
                         Z.shape_str());
  return unfair_objective_hard(scaled_similarity(Z, tau), labels, assignment, k, lambda);
}

SoftObjective unfair_objective_soft(const ScaledSimilarity& sim, std::span<const int> labels, const Tensor2& P,
                                    double lambda) {
  const std::size_t m = sim.scaled.rows();
  check_stochastic(P, m);
  const std::size_t k = P.cols();
  std::vector<double> per(k, 0.0);
  std::vector<bool> active(k, false);
  std::vector<std::vector<double>> dw(k);
  for (std::size_t e = 0; e < k; ++e) {
    const auto w = column(P, e);
    auto g = supcon_grad_impl(sim, labels, w, false);
    per[e] = g.loss;
    active[e] = g.active;
    dw[e] = std::move(g.d_weights);
  }
  SoftObjective out;
  out.breakdown = combine_subsets(std::move(per), std::move(active), lambda);
  const auto sens = subset_loss_sensitivity(out.breakdown, lambda);
  out.d_assign = Tensor2(m, k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t e = 0; e < k; ++e) out.d_assign(i, e) = sens[e] * dw[e][i];
  return out;
}

SoftObjective unfair_objective_soft(const Tensor2& Z, std::span<const int> labels, const Tensor2& P, double tau,
                                    double lambda) {
  if (P.rows() != Z.rows()) throw DimensionError("unfair_objective_soft: P" + P.shape_str() + " vs Z" + Z.shape_str());
  return unfair_objective_soft(scaled_similarity(Z, tau), labels, P, lambda);
}

SoftObjective soft_ce_partition_objective(std::span<const double> instance_ce, const Tensor2& P, double lambda) {
  const std::size_t m = instance_ce.size();
  check_stochastic(P, m);
  const std::size_t k = P.cols();
  std::vector<double> per(k, 0.0), mass(k, 0.0);
  std::vector<bool> active(k, false);
  for (std::size_t e = 0; e < k; ++e) {
    double num = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      mass[e] += P(i, e);
      num += P(i, e) * instance_ce[i];
    }
    if (mass[e] > kernels::kAnchorSkipMass) {
      active[e] = true;
      per[e] = num / mass[e];
    }
  }
  SoftObjective out;
  out.breakdown = combine_subsets(std::move(per), std::move(active), lambda);
  const auto sens = subset_loss_sensitivity(out.breakdown, lambda);
  out.d_assign = Tensor2(m, k);
  for (std::size_t e = 0; e < k; ++e) {
    if (!out.breakdown.active_mask[e]) continue;
    for (std::size_t i = 0; i < m; ++i)
      out.d_assign(i, e) = sens[e] * (instance_ce[i] - out.breakdown.per_subset[e]) / mass[e];
  }
  return out;
}

SubsetLossBreakdown hard_ce_partition_objective(std::span<const double> instance_ce,
                                                std::span<const std::size_t> assignment, std::size_t k,
                                                double lambda) {
  check_assignment(assignment, instance_ce.size(), k, "hard_ce_partition_objective");
  std::vector<double> sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    sum[assignment[i]] += instance_ce[i];
    ++count[assignment[i]];
  }
  std::vector<double> per(k, 0.0);
  std::vector<bool> active(k, false);
  for (std::size_t e = 0; e < k; ++e) {
    if (count[e] == 0) continue;
    active[e] = true;
    per[e] = sum[e] / static_cast<double>(count[e]);
  }
  return combine_subsets(std::move(per), std::move(active), lambda);
}

namespace {

void check_logits(const Tensor2& logits, std::span<const int> labels, const char* what) {
  if (logits.rows() == 0) throw DataError(std::string(what) + ": empty batch");
  check_labels(labels, logits.rows(), what);
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols())
      throw DataError(std::string(what) + ": label " + std::to_string(y) + " outside logits " + logits.shape_str());
}

double log_sum_exp(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - mx);
  return mx + std::log(s);
}

}  // namespace

std::vector<double> cross_entropy_per_instance(const Tensor2& logits, std::span<const int> labels) {
  check_logits(logits, labels, "cross_entropy");
  std::vector<double> ce(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) ce[r] = log_sum_exp(logits.row(r)) - logits(r, labels[r]);
  return ce;
}

double cross_entropy(const Tensor2& logits, std::span<const int> labels) {
  const auto ce = cross_entropy_per_instance(logits, labels);
  double s = 0.0;
  for (double v : ce) s += v;
  return s / static_cast<double>(ce.size());
}

LossWithGrad cross_entropy_grad(const Tensor2& logits, std::span<const int> labels) {
  LossWithGrad out;
  out.loss = cross_entropy(logits, labels);
  out.d_logits = softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    out.d_logits(r, labels[r]) -= 1.0;
    for (double& v : out.d_logits.row(r)) v *= inv_n;
  }
  return out;
}

InvariantGrad invariant_objective_grad(const Tensor2& logits, std::span<const int> labels,
                                       std::span<const std::size_t> membership, std::size_t k, double lambda) {
  check_logits(logits, labels, "invariant_objective");
  if (membership.size() != logits.rows())
    throw DataError("invariant_objective: membership known for " + std::to_string(membership.size()) + " of " +
                    std::to_string(logits.rows()) + " instances");
  for (auto s : membership)
    if (s >= k) throw DataError("invariant_objective: instance with unknown membership (subset " + std::to_string(s) + ")");
  const auto ce = cross_entropy_per_instance(logits, labels);
  InvariantGrad out;
  out.breakdown = hard_ce_partition_objective(ce, membership, k, lambda);
  std::vector<std::size_t> count(k, 0);
  for (auto s : membership) ++count[s];
  const auto sens = subset_loss_sensitivity(out.breakdown, lambda);
  out.d_logits = softmax_rows(logits);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const std::size_t e = membership[r];
    out.d_logits(r, labels[r]) -= 1.0;
    const double scale = sens[e] / static_cast<double>(count[e]);
    for (double& v : out.d_logits.row(r)) v *= scale;
  }
  return out;
}

SubsetLossBreakdown invariant_objective(const Tensor2& logits, std::span<const int> labels,
                                        std::span<const std::size_t> membership, std::size_t k, double lambda) {
  return invariant_objective_grad(logits, labels, membership, k, lambda).breakdown;
}

LossWithGrad multi_partition_objective_grad(const Tensor2& logits, std::span<const int> labels,
                                            std::span<const std::vector<std::size_t>> memberships, std::size_t k,
                                            double lambda) {
  if (memberships.empty()) throw ConfigError("multi_partition_objective: empty partition registry");
  LossWithGrad out;
  out.d_logits = Tensor2(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(memberships.size());
  for (const auto& mem : memberships) {
    const auto g = invariant_objective_grad(logits, labels, mem, k, lambda);
    out.loss += g.breakdown.objective;
    auto dst = out.d_logits.values();
    auto src = g.d_logits.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  out.loss *= inv;
  for (double& v : out.d_logits.values()) v *= inv;
  return out;
}

double multi_partition_objective(const Tensor2& logits, std::span<const int> labels,
                                 std::span<const std::vector<std::size_t>> memberships, std::size_t k, double lambda) {
  return multi_partition_objective_grad(logits, labels, memberships, k, lambda).loss;
}

}  // namespace upil
