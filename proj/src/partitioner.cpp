#include "upil/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "upil/errors.hpp"
#include "upil/kernels.hpp"
#include "upil/seeding.hpp"

namespace upil {

using nlohmann::json;

Tensor2 PartitionMatrix::one_hot() const {
  Tensor2 A(assignment.size(), k);
  for (std::size_t i = 0; i < assignment.size(); ++i) A(i, assignment[i]) = 1.0;
  return A;
}

void PartitionMatrix::validate() const {
  if (k < 2) throw DataError("partition: k must be >= 2");
  if (!std::isfinite(score)) throw DataError("partition: score is not finite");
  for (auto a : assignment)
    if (a >= k) throw DataError("partition: subset id " + std::to_string(a) + " outside [0," + std::to_string(k) + ")");
}

json to_json(const PartitionMatrix& p) {
  return {{"epoch", p.epoch}, {"k", p.k}, {"score", p.score}, {"assignment", p.assignment}};
}

PartitionMatrix partition_from_json(const json& j) {
  try {
    PartitionMatrix p;
    p.epoch = j.at("epoch").get<std::size_t>();
    p.k = j.at("k").get<std::size_t>();
    p.score = j.at("score").get<double>();
    p.assignment = j.at("assignment").get<std::vector<std::size_t>>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed partition record: ") + e.what());
  }
}

void dump_partition(const PartitionMatrix& p, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write partition dump '" + path.string() + "'");
  out << to_json(p).dump() << '\n';
}

PartitionRegistry::PartitionRegistry(std::size_t capacity, Policy policy) : capacity_(capacity), policy_(policy) {
  if (capacity_ == 0) throw ConfigError("partition registry capacity must be positive");
}

bool PartitionRegistry::record(PartitionMatrix candidate) {
  candidate.validate();
  for (const auto& e : entries_)
    if (e.assignment == candidate.assignment) return false;
  if (policy_ == Policy::keep_latest) {
    entries_.assign(1, std::move(candidate));
    return true;
  }
  auto pos = std::find_if(entries_.begin(), entries_.end(),
                          [&](const PartitionMatrix& e) { return e.score < candidate.score; });
  if (pos == entries_.end() && entries_.size() >= capacity_) return false;
  entries_.insert(pos, std::move(candidate));
  if (entries_.size() > capacity_) entries_.resize(capacity_);
  return true;
}

std::vector<std::vector<std::size_t>> PartitionRegistry::memberships(std::span<const std::size_t> rows) const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    auto& m = out.emplace_back();
    m.reserve(rows.size());
    for (auto r : rows) {
      if (r >= e.assignment.size())
        throw DataError("partition registry: row " + std::to_string(r) + " has no recorded membership");
      m.push_back(e.assignment[r]);
    }
  }
  return out;
}

json to_json(const PartitionRegistry& r) {
  json entries = json::array();
  for (const auto& e : r.entries()) entries.push_back(to_json(e));
  return {{"capacity", r.capacity()},
          {"policy", r.policy() == PartitionRegistry::Policy::keep_best ? "keep_best" : "keep_latest"},
          {"entries", std::move(entries)}};
}

PartitionRegistry registry_from_json(const json& j) {
  try {
    const auto policy_name = j.at("policy").get<std::string>();
    PartitionRegistry::Policy policy;
    if (policy_name == "keep_best")
      policy = PartitionRegistry::Policy::keep_best;
    else if (policy_name == "keep_latest")
      policy = PartitionRegistry::Policy::keep_latest;
    else
      throw DataError("unknown registry policy '" + policy_name + "'");
    PartitionRegistry r(j.at("capacity").get<std::size_t>(), policy);
    std::vector<PartitionMatrix> entries;
    for (const auto& e : j.at("entries")) entries.push_back(partition_from_json(e));
    if (entries.size() > r.capacity()) throw DataError("partition registry exceeds its capacity");
    for (std::size_t i = 1; i < entries.size(); ++i)
      if (entries[i].score > entries[i - 1].score) throw DataError("partition registry is not sorted by score");
    // Entries are already ordered, so re-recording them reproduces the registry.
    for (auto& e : entries)
      if (!r.record(std::move(e))) throw DataError("partition registry holds duplicate entries");
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed partition registry: ") + e.what());
  }
}

namespace {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

}  // namespace

double partition_score(const ModelBundle& bundle, const Dataset& train, std::span<const std::size_t> assignment,
                       const PartitionStepConfig& cfg) {
  const Tensor2 Z = extract(bundle, train.feature_matrix());
  const auto y = train.labels();
  if (cfg.use_supcon) return unfair_objective_hard(Z, y, assignment, bundle.config.k, cfg.tau, cfg.lambda).objective;
  const auto ce = cross_entropy_per_instance(classify(bundle, Z), y);
  return hard_ce_partition_objective(ce, assignment, bundle.config.k, cfg.lambda).objective;
}

HeadObjective soft_partition_objective(const ModelBundle& bundle, const Tensor2& Z, std::span<const int> labels,
                                       std::span<const double> instance_ce, const PartitionStepConfig& cfg) {
  const Tensor2 P = softmax_rows(partition_logits(bundle, Z));
  const SoftObjective obj = cfg.use_supcon ? unfair_objective_soft(Z, labels, P, cfg.tau, cfg.lambda)
                                           : soft_ce_partition_objective(instance_ce, P, cfg.lambda);
  const Tensor2 d_logits = softmax_rows_backward(P, obj.d_assign);
  AffineGrads g = affine_backward(bundle.partition_head.tensors[0], Z, d_logits, false);
  return {obj.breakdown.objective, {std::move(g.dW), std::move(g.db)}};
}

PartitionMatrix unfair_partition_step(ModelBundle& bundle, const Dataset& train, const PartitionStepConfig& cfg) {
  if (!bundle.phi.frozen || !bundle.classifier.frozen)
    throw InvariantError("unfair_partition_step: feature extractor and classifier must be frozen");
  if (bundle.partition_head.frozen) throw InvariantError("unfair_partition_step: partition head is frozen");
  if (train.empty()) throw DataError("unfair_partition_step: empty training set");
  if (cfg.batch == 0) throw ConfigError("unfair_partition_step: batch must be positive");

  const std::size_t m = train.size();
  const Tensor2 Z = extract(bundle, train.feature_matrix());
  const auto y = train.labels();
  std::vector<double> ce;
  if (!cfg.use_supcon) ce = cross_entropy_per_instance(classify(bundle, Z), y);

  std::vector<std::size_t> order = all_rows(m);
  std::mt19937_64 rng(mix_seed(cfg.seed, streams::partition_batches, cfg.epoch));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t batch = std::min(cfg.batch, m);
  const SgdConfig sgd{cfg.partition_lr, cfg.clip_norm};
  std::size_t cursor = 0;
  std::vector<std::size_t> rows(batch);
  std::vector<int> yb(batch);
  std::vector<double> ceb(cfg.use_supcon ? 0 : batch);
  for (std::size_t step = 0; step < cfg.ascent_steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      rows[b] = order[cursor];
      cursor = (cursor + 1) % m;
      yb[b] = y[rows[b]];
      if (!cfg.use_supcon) ceb[b] = ce[rows[b]];
    }
    HeadObjective h = soft_partition_objective(bundle, Z.gather_rows(rows), yb, ceb, cfg);
    // Only the head receives a gradient; the step is applied to it alone.
    GroupGrads grads{std::move(h.d_head)};
    sgd_step(std::span<ParamGroup>(&bundle.partition_head, 1), grads, sgd, StepDirection::ascend);
  }

  PartitionMatrix out;
  out.k = bundle.config.k;
  out.epoch = cfg.epoch;
  out.assignment = argmax_rows(partition_logits(bundle, Z));
  if (cfg.use_supcon) {
    out.score = unfair_objective_hard(Z, y, out.assignment, out.k, cfg.tau, cfg.lambda).objective;
  } else {
    out.score = hard_ce_partition_objective(ce, out.assignment, out.k, cfg.lambda).objective;
  }
  return out;
}

namespace {

std::vector<std::size_t> mask_to_assignment(std::uint64_t mask, std::size_t m) {
  std::vector<std::size_t> a(m);
  for (std::size_t j = 0; j < m; ++j) a[j] = (mask >> (m - 1 - j)) & 1U;
  return a;
}

template <typename Argmax>
OracleResult oracle_impl(const Tensor2& Z, std::span<const int> labels, std::size_t k, double tau, double lambda,
                         Argmax&& argmax) {
  const std::size_t m = Z.rows();
  if (m > kOracleMaxInstances)
    throw SizeError("brute_force_oracle: " + std::to_string(m) + " instances exceeds the limit of " +
                    std::to_string(kOracleMaxInstances));
  if (m == 0) throw DataError("brute_force_oracle: no instances");
  if (k != 2) throw ConfigError("brute_force_oracle: only k = 2 is supported");
  if (labels.size() != m) throw DimensionError("brute_force_oracle: label count does not match Z" + Z.shape_str());
  const ScaledSimilarity sim = scaled_similarity(Z, tau);
  auto score = [&](std::uint64_t mask) {
    return unfair_objective_hard(sim, labels, mask_to_assignment(mask, m), k, lambda).objective;
  };
  const auto best = argmax(std::uint64_t{1} << (m - 1), score);
  return {mask_to_assignment(best.mask, m), best.score};
}

}  // namespace

OracleResult brute_force_oracle(const Tensor2& Z, std::span<const int> labels, std::size_t k, double tau,
                                double lambda) {
  return oracle_impl(Z, labels, k, tau, lambda,
                     [](std::uint64_t n, auto& f) { return kernels::argmax_over_masks(n, f); });
}

namespace serial {
OracleResult brute_force_oracle(const Tensor2& Z, std::span<const int> labels, std::size_t k, double tau,
                                double lambda) {
  return oracle_impl(Z, labels, k, tau, lambda,
                     [](std::uint64_t n, auto& f) { return kernels::serial::argmax_over_masks(n, f); });
}
}  // namespace serial

}  // namespace upil
