#include "upil/faireval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "upil/errors.hpp"

namespace upil {

using nlohmann::json;

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw DataError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

double ratio_or_zero(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f1_for(std::span<const int> preds, std::span<const int> labels, int positive) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == positive;
    const bool l = labels[i] == positive;
    tp += p && l;
    fp += p && !l;
    fn += !p && l;
  }
  const double precision = ratio_or_zero(tp, tp + fp);
  const double recall = ratio_or_zero(tp, tp + fn);
  return ratio_or_zero(2.0 * precision * recall, precision + recall);
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void canonical_into(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (const auto& [key, value] : j.items()) {  // object_t is a std::map, so keys iterate sorted
        if (!first) out += ',';
        first = false;
        out += json(key).dump();
        out += ':';
        canonical_into(value, out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        canonical_into(j[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      if (!std::isfinite(v)) throw EvaluationError("canonical_dump: non-finite number");
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", v == 0.0 ? 0.0 : v);
      std::string s = buf;
      if (s == "-0.000000") s = "0.000000";
      out += s;
      break;
    }
    default:
      out += j.dump();
  }
}

json counts_json(const InterventionCounts& c) {
  json j = {{"base_wrong", c.base_wrong},
            {"base_correct", c.base_correct},
            {"wrong_to_correct", c.wrong_to_correct},
            {"correct_to_wrong", c.correct_to_wrong}};
  j["w_to_c"] = c.w_to_c() ? json(*c.w_to_c()) : json(nullptr);
  j["c_to_w"] = c.c_to_w() ? json(*c.c_to_w()) : json(nullptr);
  return j;
}

void tally(InterventionCounts& c, bool base_ok, bool ours_ok) {
  if (base_ok) {
    ++c.base_correct;
    c.correct_to_wrong += !ours_ok;
  } else {
    ++c.base_wrong;
    c.wrong_to_correct += ours_ok;
  }
}

}  // namespace

ClassificationScores accuracy_f1(std::span<const int> preds, std::span<const int> labels) {
  require_same_length(preds.size(), labels.size(), "accuracy_f1");
  if (preds.empty()) throw DataError("accuracy_f1: empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
  ClassificationScores s;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(preds.size());
  s.f1_binary = f1_for(preds, labels, 1);
  s.f1_macro = 0.5 * (f1_for(preds, labels, 0) + s.f1_binary);
  return s;
}

ParityGap demographic_parity_gap(std::span<const int> preds, std::span<const std::string> groups,
                                 std::size_t min_support) {
  require_same_length(preds.size(), groups.size(), "demographic_parity_gap");
  if (min_support < 1) throw ConfigError("demographic_parity_gap: min_support must be at least 1");
  std::map<std::string, std::pair<std::size_t, std::size_t>> tallies;  // group → (count, positives)
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& t = tallies[groups[i]];
    ++t.first;
    t.second += preds[i] == 1;
  }
  ParityGap out;
  double lo = 1.0, hi = 0.0;
  for (const auto& [group, t] : tallies) {
    if (t.first < min_support) {
      out.excluded.push_back(group);
      continue;
    }
    const double rate = static_cast<double>(t.second) / static_cast<double>(t.first);
    out.rates[group] = {t.first, rate};
    lo = std::min(lo, rate);
    hi = std::max(hi, rate);
  }
  out.degenerate = out.rates.size() < 2;
  out.gap = out.degenerate ? 0.0 : hi - lo;
  return out;
}

MetricsReport evaluate_predictions(std::span<const int> preds, const Dataset& test, std::size_t min_support) {
  require_same_length(preds.size(), test.size(), "evaluate");
  const auto labels = test.labels();
  MetricsReport r;
  r.scores = accuracy_f1(preds, labels);
  r.n = test.size();
  r.min_support = min_support;
  for (const auto& [attr, values] : test.attr_schema()) {
    const auto column = test.attr_column(attr);
    r.parity[attr] = demographic_parity_gap(preds, column, min_support);
  }
  return r;
}

MetricsReport evaluate(const ModelBundle& bundle, const Dataset& test, std::size_t min_support) {
  if (test.feature_dim() != bundle.config.feature_dim)
    throw DimensionError("evaluate: model expects feature_dim " + std::to_string(bundle.config.feature_dim) +
                         ", dataset has " + std::to_string(test.feature_dim()));
  const auto preds = predict_labels(classify(bundle, extract(bundle, test.feature_matrix())));
  return evaluate_predictions(preds, test, min_support);
}

json to_json(const MetricsReport& r) {
  json dp = json::object();
  json rates = json::object();
  json excluded = json::object();
  json degenerate = json::object();
  for (const auto& [attr, p] : r.parity) {
    dp[attr] = p.gap;
    json g = json::object();
    for (const auto& [group, rate] : p.rates) g[group] = {{"count", rate.count}, {"positive_rate", rate.positive_rate}};
    rates[attr] = std::move(g);
    excluded[attr] = p.excluded;
    degenerate[attr] = p.degenerate;
  }
  return {{"n", r.n},
          {"min_support", r.min_support},
          {"accuracy", r.scores.accuracy},
          {"f1_binary", r.scores.f1_binary},
          {"f1_macro", r.scores.f1_macro},
          {"dp_gaps", std::move(dp)},
          {"group_rates", std::move(rates)},
          {"excluded_groups", std::move(excluded)},
          {"single_group_attrs", std::move(degenerate)}};
}

std::optional<double> InterventionCounts::w_to_c() const {
  if (base_wrong == 0) return std::nullopt;
  return static_cast<double>(wrong_to_correct) / static_cast<double>(base_wrong);
}

std::optional<double> InterventionCounts::c_to_w() const {
  if (base_correct == 0) return std::nullopt;
  return static_cast<double>(correct_to_wrong) / static_cast<double>(base_correct);
}

InterventionReport intervention(std::span<const int> base_preds, std::span<const int> ours_preds,
                                std::span<const int> labels, const GroupsByAttribute& groups) {
  require_same_length(base_preds.size(), labels.size(), "intervention");
  require_same_length(ours_preds.size(), labels.size(), "intervention");
  for (const auto& [attr, column] : groups) require_same_length(column.size(), labels.size(), "intervention");
  InterventionReport r;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool base_ok = base_preds[i] == labels[i];
    const bool ours_ok = ours_preds[i] == labels[i];
    tally(r.overall, base_ok, ours_ok);
    for (const auto& [attr, column] : groups) tally(r.by_group[attr][column[i]], base_ok, ours_ok);
  }
  return r;
}

json to_json(const InterventionReport& r) {
  json j = counts_json(r.overall);
  json groups = json::object();
  for (const auto& [attr, per] : r.by_group) {
    json g = json::object();
    for (const auto& [group, c] : per) g[group] = counts_json(c);
    groups[attr] = std::move(g);
  }
  j["by_group"] = std::move(groups);
  return j;
}

void dump_features(const ModelBundle& bundle, const Dataset& ds, const std::filesystem::path& path) {
  if (ds.feature_dim() != bundle.config.feature_dim)
    throw DimensionError("dump_features: model expects feature_dim " + std::to_string(bundle.config.feature_dim) +
                         ", dataset has " + std::to_string(ds.feature_dim()));
  const Tensor2 Z = extract(bundle, ds.feature_matrix());
  std::string text;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& inst = ds.instances()[i];
    const auto z = Z.row(i);
    json line = {{"id", inst.id},
                 {"z", std::vector<double>(z.begin(), z.end())},
                 {"label", inst.label},
                 {"attrs", inst.attrs}};
    text += line.dump();
    text += '\n';
  }
  write_text(text, path);
}

std::vector<PredictionRecord> prediction_records(const ModelBundle& bundle, const Dataset& ds) {
  if (ds.feature_dim() != bundle.config.feature_dim)
    throw DimensionError("predictions: model expects feature_dim " + std::to_string(bundle.config.feature_dim) +
                         ", dataset has " + std::to_string(ds.feature_dim()));
  const auto preds = predict_labels(classify(bundle, extract(bundle, ds.feature_matrix())));
  std::vector<PredictionRecord> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& inst = ds.instances()[i];
    out.push_back({inst.id, inst.label, preds[i], inst.attrs});
  }
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
  std::string text;
  for (const auto& r : records) {
    json line = {{"id", r.id}, {"label", r.label}, {"prediction", r.prediction}, {"attrs", r.attrs}};
    text += line.dump();
    text += '\n';
  }
  write_text(text, path);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions file '" + path.string() + "'");
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      PredictionRecord r;
      r.id = j.at("id").get<std::string>();
      r.label = j.at("label").get<int>();
      r.prediction = j.at("prediction").get<int>();
      if (j.contains("attrs")) r.attrs = j.at("attrs").get<std::map<std::string, std::string>>();
      if ((r.label != 0 && r.label != 1) || (r.prediction != 0 && r.prediction != 1))
        throw DataError("line " + std::to_string(line_no) + ": label and prediction must be 0 or 1");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError("empty predictions file: '" + path.string() + "'");
  return out;
}

InterventionReport audit(const std::vector<PredictionRecord>& base, const std::vector<PredictionRecord>& ours) {
  require_same_length(base.size(), ours.size(), "audit");
  std::map<std::string, const PredictionRecord*> by_id;
  for (const auto& r : ours)
    if (!by_id.emplace(r.id, &r).second) throw DataError("audit: duplicate id '" + r.id + "'");
  std::vector<int> b, o, labels;
  std::set<std::string> attr_names;
  for (const auto& r : base)
    for (const auto& [name, value] : r.attrs) attr_names.insert(name);
  GroupsByAttribute groups;
  for (const auto& r : base) {
    const auto it = by_id.find(r.id);
    if (it == by_id.end()) throw DataError("audit: id '" + r.id + "' missing from the second prediction file");
    if (it->second->label != r.label) throw DataError("audit: label disagreement for id '" + r.id + "'");
    b.push_back(r.prediction);
    o.push_back(it->second->prediction);
    labels.push_back(r.label);
    for (const auto& name : attr_names) {
      const auto a = r.attrs.find(name);
      groups[name].push_back(a == r.attrs.end() ? std::string() : a->second);
    }
  }
  return intervention(b, o, labels, groups);
}

std::string canonical_dump(const json& j) {
  std::string out;
  canonical_into(j, out);
  return out;
}

void write_canonical(const json& j, const std::filesystem::path& path) { write_text(canonical_dump(j) + "\n", path); }

}  // namespace upil
