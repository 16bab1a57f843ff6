#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "upil/tensor.hpp"

namespace upil {

// Label convention used everywhere: 0 = non-rumor, 1 = rumor.
struct Instance {
  std::string id;
  std::vector<double> features;
  int label = 0;
  // Sensitive attributes. Only read by fairness evaluation.
  std::map<std::string, std::string> attrs;

  friend bool operator==(const Instance&, const Instance&) = default;
};

using AttrSchema = std::map<std::string, std::vector<std::string>>;

// Immutable after construction; make_dataset validates every invariant.
class Dataset {
 public:
  Dataset() = default;

  const std::vector<Instance>& instances() const { return instances_; }
  std::size_t size() const { return instances_.size(); }
  bool empty() const { return instances_.empty(); }
  std::size_t feature_dim() const { return feature_dim_; }
  const AttrSchema& attr_schema() const { return schema_; }

  Tensor2 feature_matrix() const;
  Tensor2 feature_matrix(std::span<const std::size_t> rows) const;
  std::vector<int> labels() const;
  // Group value per instance; instances lacking the attribute get "".
  std::vector<std::string> attr_column(const std::string& name) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  friend Dataset make_dataset(std::vector<Instance>, std::optional<std::size_t>);
  std::vector<Instance> instances_;
  std::size_t feature_dim_ = 0;
  AttrSchema schema_;
};

// Validates and infers the schema (group values sorted). `feature_dim`, when
// given, is required of every instance; otherwise the first instance sets it.
Dataset make_dataset(std::vector<Instance> instances, std::optional<std::size_t> feature_dim = std::nullopt);

Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const Dataset& ds, const std::filesystem::path& path);

struct SplitRatios {
  double train = 0.6;
  double val = 0.1;
  double test = 0.3;
};

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Seeded shuffle, then floor-sized parts; the remainder goes to train.
DataSplit split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

struct AttributeSpec {
  std::string name;
  std::size_t cardinality = 2;
  double confound_strength = 0.9;

  friend bool operator==(const AttributeSpec&, const AttributeSpec&) = default;
};

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t d_causal = 8;
  std::size_t d_conf = 8;
  double class_balance = 0.5;
  std::vector<AttributeSpec> attributes{{"platform", 2, 0.9}, {"domain", 4, 0.9}};
  double noise_sigma = 1.0;
  double prototype_scale = 1.0;
  std::uint64_t seed = 17;

  void validate() const;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

// Everything needed to rebuild the confounder block of a generated dataset.
struct SyntheticMeta {
  SyntheticSpec spec;
  Tensor2 causal_prototypes;                  // 2 × d_causal, rows u_0, u_1
  std::vector<Tensor2> confounder_prototypes; // per attribute: cardinality × d_conf

  friend bool operator==(const SyntheticMeta&, const SyntheticMeta&) = default;
};

struct SyntheticData {
  Dataset dataset;
  SyntheticMeta meta;
};

std::string group_name(std::size_t index);

SyntheticData generate_confounded(const SyntheticSpec& spec);

// Resample group memberships with new confound strengths (by attribute name;
// attributes not listed keep their original strength) and rebuild the
// confounder block. Labels, ids and the causal block are kept.
Dataset reshuffle_attrs(const Dataset& ds, const SyntheticMeta& meta,
                        const std::map<std::string, double>& strength_overrides, std::uint64_t seed);

// Generate, split 6:1:3, and optionally reshuffle the test part so every
// attribute has confound strength `test_strength`. Train and val keep the
// generating strengths.
struct SyntheticSplit {
  DataSplit split;
  SyntheticMeta meta;
};
SyntheticSplit generate_split(const SyntheticSpec& spec, std::optional<double> test_strength);

std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path);
void save_meta(const SyntheticMeta& meta, const std::filesystem::path& path);
SyntheticMeta load_meta(const std::filesystem::path& path);

}  // namespace upil
