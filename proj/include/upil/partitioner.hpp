#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "upil/dataio.hpp"
#include "upil/losses.hpp"
#include "upil/models.hpp"

namespace upil {

// Hard assignment of m training instances to k subsets, stored as subset ids
// rather than one-hot rows.
struct PartitionMatrix {
  std::vector<std::size_t> assignment;
  std::size_t k = 2;
  double score = 0.0;  // hard partition objective when recorded
  std::size_t epoch = 0;

  // The equivalent {0,1}^{m×k} matrix.
  Tensor2 one_hot() const;
  void validate() const;

  friend bool operator==(const PartitionMatrix&, const PartitionMatrix&) = default;
};

nlohmann::json to_json(const PartitionMatrix& p);
PartitionMatrix partition_from_json(const nlohmann::json& j);
void dump_partition(const PartitionMatrix& p, const std::filesystem::path& path);

inline constexpr std::size_t kRegistryCapacity = 6;

// The highest-scoring partitions seen so far, in descending score order.
// Equal scores keep the earlier entry first.
class PartitionRegistry {
 public:
  enum class Policy {
    keep_best,   // insert by score, truncate to capacity
    keep_latest  // hold only the most recent distinct candidate
  };

  explicit PartitionRegistry(std::size_t capacity = kRegistryCapacity, Policy policy = Policy::keep_best);

  // Returns false when the candidate duplicates a stored assignment or falls
  // below the lowest stored score of a full registry.
  bool record(PartitionMatrix candidate);

  const std::vector<PartitionMatrix>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t capacity() const { return capacity_; }
  Policy policy() const { return policy_; }

  // Membership of the given training rows under every stored partition.
  std::vector<std::vector<std::size_t>> memberships(std::span<const std::size_t> rows) const;

  friend bool operator==(const PartitionRegistry&, const PartitionRegistry&) = default;

 private:
  std::size_t capacity_;
  Policy policy_;
  std::vector<PartitionMatrix> entries_;
};

nlohmann::json to_json(const PartitionRegistry& r);
PartitionRegistry registry_from_json(const nlohmann::json& j);

struct PartitionStepConfig {
  std::size_t ascent_steps = 20;
  double partition_lr = 0.05;
  std::size_t batch = 256;
  double tau = kDefaultTau;
  double lambda = kDefaultLambda;
  // false scores subsets with the frozen classifier's cross-entropy instead
  // of the contrastive loss.
  bool use_supcon = true;
  std::optional<double> clip_norm = 5.0;
  std::uint64_t seed = 17;
  std::size_t epoch = 0;
};

// Hard partition objective of `assignment` over the whole training set,
// using the current extractor (and classifier when use_supcon is false).
double partition_score(const ModelBundle& bundle, const Dataset& train, std::span<const std::size_t> assignment,
                       const PartitionStepConfig& cfg);

struct HeadObjective {
  double objective = 0.0;
  std::vector<Tensor2> d_head;  // aligned with bundle.partition_head.tensors
};

// Soft partition objective of a batch of frozen features Z under the head's
// soft assignment softmax(FC(Z)), and its gradient w.r.t. the head.
// `instance_ce` is only read when cfg.use_supcon is false.
HeadObjective soft_partition_objective(const ModelBundle& bundle, const Tensor2& Z, std::span<const int> labels,
                                       std::span<const double> instance_ce, const PartitionStepConfig& cfg);

// Gradient ascent on the soft partition objective over the partition head
// only, then the hard assignment of the full training set and its score.
// Requires phi and classifier to be frozen and the head to be trainable.
PartitionMatrix unfair_partition_step(ModelBundle& bundle, const Dataset& train, const PartitionStepConfig& cfg);

inline constexpr std::size_t kOracleMaxInstances = 16;

struct OracleResult {
  std::vector<std::size_t> assignment;
  double score = 0.0;
};

// Exhaustive maximiser of the hard partition objective for k = 2. Instance 0
// is pinned to subset 0; ties go to the lexicographically smallest assignment.
OracleResult brute_force_oracle(const Tensor2& Z, std::span<const int> labels, std::size_t k, double tau,
                                double lambda);

namespace serial {
OracleResult brute_force_oracle(const Tensor2& Z, std::span<const int> labels, std::size_t k, double tau,
                                double lambda);
}

}  // namespace upil
