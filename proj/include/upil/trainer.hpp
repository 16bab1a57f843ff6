#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "upil/dataio.hpp"
#include "upil/models.hpp"
#include "upil/partitioner.hpp"

namespace upil {

enum class Ablation {
  full,
  static_partition,  // one fixed partition from a ground-truth attribute
  no_supcon,         // partition search scores subsets by cross-entropy
  no_variance,       // lambda = 0 in both objectives
  no_record,         // keep only the latest partition
  erm                // plain cross-entropy throughout; the baseline
};

std::string_view to_string(Ablation a);
Ablation ablation_from_string(std::string_view name);

struct TrainConfig {
  std::size_t k = 2;
  double lambda = kDefaultLambda;
  double tau = kDefaultTau;
  std::size_t warmup_epochs = 5;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::size_t batch = 256;
  double lr = 0.05;
  double partition_lr = 0.05;
  std::size_t ascent_steps = 20;
  std::uint64_t seed = 17;
  Ablation ablation = Ablation::full;
  std::optional<std::string> static_attr;
  std::vector<std::size_t> phi_widths{32, 16};
  std::optional<double> clip_norm = 5.0;
  std::size_t registry_capacity = kRegistryCapacity;

  void validate() const;
  // validate() plus the checks that need the training data.
  void validate_for(const Dataset& train) const;

  // lambda after ablation overrides.
  double effective_lambda() const { return ablation == Ablation::no_variance ? 0.0 : lambda; }
  ModelConfig model_config(std::size_t feature_dim) const { return {feature_dim, phi_widths, k}; }
  PartitionStepConfig partition_config(std::size_t epoch) const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

nlohmann::json to_json(const TrainConfig& cfg);
// Missing keys keep their defaults; unknown keys are a ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

enum class Phase { warmup, partition, invariant, erm };
std::string_view to_string(Phase p);

struct EpochRecord {
  std::size_t epoch = 0;
  Phase phase = Phase::warmup;
  double train_objective = 0.0;
  double val_accuracy = 0.0;
  std::size_t registry_size = 0;
  std::optional<double> partition_score;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

nlohmann::json to_json(const TrainHistory& h);

// Snapshot of one training phase, handed to an observer before the next
// phase begins.
struct PhaseEvent {
  std::size_t epoch;
  Phase phase;
  const ModelBundle& before;
  const ModelBundle& after;
  const PartitionRegistry& registry;
};

using PhaseObserver = std::function<void(const PhaseEvent&)>;

struct TrainResult {
  ModelBundle bundle;
  PartitionRegistry registry;
  TrainHistory history;
};

// Plain cross-entropy epochs over phi and the classifier.
void warmup(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg);

// Warmup, then alternating partition discovery and invariant learning with
// early stopping on validation accuracy. Returns the best checkpoint.
TrainResult train(const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                  const PhaseObserver& observer = {});

// Subset per training instance from the group values of `attr`: the value's
// index in the sorted schema, modulo k.
std::vector<std::size_t> static_assignment(const Dataset& train, const std::string& attr, std::size_t k);

double accuracy_on(const ModelBundle& bundle, const Dataset& ds);

}  // namespace upil
