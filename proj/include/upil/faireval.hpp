#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "upil/dataio.hpp"
#include "upil/models.hpp"

namespace upil {

inline constexpr std::size_t kDefaultMinSupport = 10;

struct ClassificationScores {
  double accuracy = 0.0;
  double f1_binary = 0.0;  // positive class = 1 (rumor)
  double f1_macro = 0.0;
};

ClassificationScores accuracy_f1(std::span<const int> preds, std::span<const int> labels);

struct GroupRate {
  std::size_t count = 0;
  double positive_rate = 0.0;
};

struct ParityGap {
  double gap = 0.0;
  std::map<std::string, GroupRate> rates;  // included groups only
  std::vector<std::string> excluded;       // below min_support, sorted
  bool degenerate = false;                 // fewer than two included groups
};

ParityGap demographic_parity_gap(std::span<const int> preds, std::span<const std::string> groups,
                                 std::size_t min_support = kDefaultMinSupport);

struct MetricsReport {
  ClassificationScores scores;
  std::map<std::string, ParityGap> parity;  // by attribute name
  std::size_t n = 0;
  std::size_t min_support = kDefaultMinSupport;
};

MetricsReport evaluate(const ModelBundle& bundle, const Dataset& test, std::size_t min_support = kDefaultMinSupport);
MetricsReport evaluate_predictions(std::span<const int> preds, const Dataset& test,
                                   std::size_t min_support = kDefaultMinSupport);
nlohmann::json to_json(const MetricsReport& r);

struct InterventionCounts {
  std::size_t base_wrong = 0;
  std::size_t base_correct = 0;
  std::size_t wrong_to_correct = 0;
  std::size_t correct_to_wrong = 0;

  // Absent when the corresponding denominator is zero.
  std::optional<double> w_to_c() const;
  std::optional<double> c_to_w() const;
};

struct InterventionReport {
  InterventionCounts overall;
  std::map<std::string, std::map<std::string, InterventionCounts>> by_group;  // attribute → group → counts
};

using GroupsByAttribute = std::map<std::string, std::vector<std::string>>;

InterventionReport intervention(std::span<const int> base_preds, std::span<const int> ours_preds,
                                std::span<const int> labels, const GroupsByAttribute& groups = {});
nlohmann::json to_json(const InterventionReport& r);

// One JSON line per instance: {"id", "z", "label", "attrs"}.
void dump_features(const ModelBundle& bundle, const Dataset& ds, const std::filesystem::path& path);

// Per-instance predictions: {"id", "label", "prediction", "attrs"}.
struct PredictionRecord {
  std::string id;
  int label = 0;
  int prediction = 0;
  std::map<std::string, std::string> attrs;
};

std::vector<PredictionRecord> prediction_records(const ModelBundle& bundle, const Dataset& ds);
void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path);
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

// Audit two prediction files over the same ids (matched by id, base order).
InterventionReport audit(const std::vector<PredictionRecord>& base, const std::vector<PredictionRecord>& ours);

// Sorted keys, no whitespace, floats printed with six decimals.
std::string canonical_dump(const nlohmann::json& j);
void write_canonical(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace upil
