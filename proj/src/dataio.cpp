#include "upil/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "upil/errors.hpp"
#include "upil/seeding.hpp"

namespace upil {

using nlohmann::json;

Tensor2 Dataset::feature_matrix() const {
  Tensor2 X(instances_.size(), feature_dim_);
  for (std::size_t r = 0; r < instances_.size(); ++r)
    std::copy(instances_[r].features.begin(), instances_[r].features.end(), X.row(r).begin());
  return X;
}

Tensor2 Dataset::feature_matrix(std::span<const std::size_t> rows) const {
  Tensor2 X(rows.size(), feature_dim_);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& f = instances_.at(rows[r]).features;
    std::copy(f.begin(), f.end(), X.row(r).begin());
  }
  return X;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> y;
  y.reserve(instances_.size());
  for (const auto& inst : instances_) y.push_back(inst.label);
  return y;
}

std::vector<std::string> Dataset::attr_column(const std::string& name) const {
  std::vector<std::string> col;
  col.reserve(instances_.size());
  for (const auto& inst : instances_) {
    auto it = inst.attrs.find(name);
    col.push_back(it == inst.attrs.end() ? std::string{} : it->second);
  }
  return col;
}

Dataset make_dataset(std::vector<Instance> instances, std::optional<std::size_t> feature_dim) {
  Dataset ds;
  if (!feature_dim && !instances.empty()) feature_dim = instances.front().features.size();
  ds.feature_dim_ = feature_dim.value_or(0);
  std::set<std::string> ids;
  std::map<std::string, std::set<std::string>> schema;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string where = "instance " + std::to_string(i) + " (id '" + inst.id + "')";
    if (inst.features.empty()) throw DataError(where + ": empty feature vector");
    if (inst.features.size() != ds.feature_dim_)
      throw DataError(where + ": feature_dim " + std::to_string(inst.features.size()) + " != " +
                      std::to_string(ds.feature_dim_));
    for (double v : inst.features)
      if (!std::isfinite(v)) throw DataError(where + ": non-finite feature value");
    if (inst.label != 0 && inst.label != 1) throw DataError(where + ": label must be 0 or 1");
    if (!ids.insert(inst.id).second) throw DataError(where + ": duplicate id");
    for (const auto& [name, value] : inst.attrs) schema[name].insert(value);
  }
  for (auto& [name, values] : schema) ds.schema_[name] = {values.begin(), values.end()};
  ds.instances_ = std::move(instances);
  return ds;
}

namespace {

Instance parse_record(const std::string& line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw DataError(where + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw DataError(where + ": record must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "id" && key != "features" && key != "label" && key != "attrs")
      throw DataError(where + ": unknown key '" + key + "'");
  Instance inst;
  if (!j.contains("id") || !j["id"].is_string()) throw DataError(where + ": 'id' must be a string");
  inst.id = j["id"].get<std::string>();
  if (!j.contains("features") || !j["features"].is_array())
    throw DataError(where + ": 'features' must be an array");
  for (const auto& v : j["features"]) {
    if (!v.is_number()) throw DataError(where + ": non-numeric feature");
    inst.features.push_back(v.get<double>());
  }
  if (!j.contains("label") || !j["label"].is_number_integer()) throw DataError(where + ": 'label' must be 0 or 1");
  const auto label = j["label"].get<std::int64_t>();
  if (label != 0 && label != 1) throw DataError(where + ": 'label' must be 0 or 1");
  inst.label = static_cast<int>(label);
  if (j.contains("attrs")) {
    if (!j["attrs"].is_object()) throw DataError(where + ": 'attrs' must be an object");
    for (const auto& [k, v] : j["attrs"].items()) {
      if (!v.is_string()) throw DataError(where + ": attribute '" + k + "' must be a string");
      inst.attrs[k] = v.get<std::string>();
    }
  }
  return inst;
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path.string() + "'");
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> dim;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Instance inst = parse_record(line, line_no);
    if (inst.features.empty()) throw DataError("line " + std::to_string(line_no) + ": empty feature vector");
    if (!dim) dim = inst.features.size();
    if (inst.features.size() != *dim)
      throw DataError("line " + std::to_string(line_no) + ": feature_dim " + std::to_string(inst.features.size()) +
                      " inconsistent with " + std::to_string(*dim));
    if (!ids.insert(inst.id).second)
      throw DataError("line " + std::to_string(line_no) + ": duplicate id '" + inst.id + "'");
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw DataError("empty dataset: '" + path.string() + "'");
  return make_dataset(std::move(instances), dim);
}

void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset file '" + path.string() + "'");
  for (const auto& inst : ds.instances()) {
    json j;
    j["id"] = inst.id;
    j["features"] = inst.features;
    j["label"] = inst.label;
    j["attrs"] = inst.attrs;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

DataSplit split(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9)
    throw ConfigError("split ratios must be positive and sum to 1");
  const std::size_t n = ds.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  // 1e-9 guards against products such as 0.3 * 10 landing just below an integer.
  const auto n_val = static_cast<std::size_t>(std::floor(ratios.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n) + 1e-9));
  if (n_val + n_test >= n || n_val == 0 || n_test == 0)
    throw DataError("split of " + std::to_string(n) + " instances leaves an empty part");

  auto take = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
    std::sort(idx.begin(), idx.end());
    std::vector<Instance> part;
    part.reserve(idx.size());
    for (auto i : idx) part.push_back(ds.instances()[i]);
    return make_dataset(std::move(part), ds.feature_dim());
  };
  const std::size_t n_train = n - n_val - n_test;
  return {take(0, n_train), take(n_train, n_train + n_val), take(n_train + n_val, n)};
}

void SyntheticSpec::validate() const {
  if (n == 0) throw ConfigError("synthetic spec: n must be positive");
  if (d_causal < 1 || d_conf < 1) throw ConfigError("synthetic spec: d_causal and d_conf must be >= 1");
  if (!(class_balance >= 0.0 && class_balance <= 1.0)) throw ConfigError("synthetic spec: class_balance not in [0,1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise_sigma must be >= 0");
  if (!(prototype_scale > 0.0)) throw ConfigError("synthetic spec: prototype_scale must be > 0");
  std::set<std::string> names;
  for (const auto& a : attributes) {
    if (a.name.empty()) throw ConfigError("synthetic spec: attribute name empty");
    if (!names.insert(a.name).second) throw ConfigError("synthetic spec: duplicate attribute '" + a.name + "'");
    if (a.cardinality < 2) throw ConfigError("synthetic spec: attribute '" + a.name + "' cardinality < 2");
    if (!(a.confound_strength >= 0.0 && a.confound_strength <= 1.0))
      throw ConfigError("synthetic spec: attribute '" + a.name + "' confound_strength not in [0,1]");
  }
}

std::string group_name(std::size_t index) { return "g" + std::to_string(index); }

namespace {

SyntheticMeta make_prototypes(const SyntheticSpec& spec) {
  SyntheticMeta meta;
  meta.spec = spec;
  std::mt19937_64 rng(mix_seed(spec.seed, streams::prototypes));
  std::normal_distribution<double> normal(0.0, 1.0);

  // Orthogonal causal prototypes via Gram-Schmidt, each with norm prototype_scale.
  // With a single causal dimension u_0 is the zero vector.
  Tensor2 U(2, spec.d_causal);
  std::vector<double> a(spec.d_causal), b(spec.d_causal);
  for (auto& v : a) v = normal(rng);
  for (auto& v : b) v = normal(rng);
  auto norm = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  const double na = norm(a);
  for (auto& v : a) v /= na;
  if (spec.d_causal == 1) {
    for (auto& v : b) v = 0.0;
    std::swap(a, b);
  } else {
    double dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
    for (std::size_t i = 0; i < a.size(); ++i) b[i] -= dot * a[i];
    const double nb = norm(b);
    for (auto& v : b) v /= nb;
  }
  for (std::size_t i = 0; i < spec.d_causal; ++i) {
    U(0, i) = a[i] * spec.prototype_scale;
    U(1, i) = b[i] * spec.prototype_scale;
  }
  meta.causal_prototypes = std::move(U);

  // Confounder prototypes: i.i.d. Gaussian entries with std prototype_scale,
  // so group identity stands out more than the class signal.
  const double scale = spec.prototype_scale;
  for (const auto& attr : spec.attributes) {
    Tensor2 V(attr.cardinality, spec.d_conf);
    for (double& v : V.values()) v = normal(rng) * scale;
    meta.confounder_prototypes.push_back(std::move(V));
  }
  return meta;
}

// One instance's worth of draws from the instance stream. Generation and
// reshuffling replay the same sequence so equal seeds give equal draws.
struct InstanceDraw {
  int label = 0;
  std::vector<std::size_t> groups;
  std::vector<double> causal_noise;
  std::vector<double> conf_noise;
};

class InstanceSampler {
 public:
  InstanceSampler(const SyntheticSpec& spec, std::uint64_t seed) : spec_(spec), rng_(seed) {}

  // `label` conditions group draws; when absent the drawn label is used.
  InstanceDraw next(std::optional<int> label, const std::vector<double>& strengths) {
    InstanceDraw d;
    const int drawn = unit_(rng_) < spec_.class_balance ? 1 : 0;
    d.label = label.value_or(drawn);
    for (std::size_t a = 0; a < spec_.attributes.size(); ++a) {
      const std::size_t card = spec_.attributes[a].cardinality;
      const std::size_t half = card / 2;
      std::size_t g;
      if (unit_(rng_) < strengths[a]) {
        const std::size_t lo = d.label == 1 ? half : 0;
        const std::size_t hi = d.label == 1 ? card : half;
        g = lo + std::uniform_int_distribution<std::size_t>(0, hi - lo - 1)(rng_);
      } else {
        g = std::uniform_int_distribution<std::size_t>(0, card - 1)(rng_);
      }
      d.groups.push_back(g);
    }
    d.causal_noise.resize(spec_.d_causal);
    for (auto& v : d.causal_noise) v = normal_(rng_) * spec_.noise_sigma;
    d.conf_noise.resize(spec_.d_conf);
    for (auto& v : d.conf_noise) v = normal_(rng_) * spec_.noise_sigma;
    return d;
  }

 private:
  const SyntheticSpec& spec_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

void fill_confounder_block(const SyntheticMeta& meta, const InstanceDraw& d, std::span<double> out) {
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = d.conf_noise[j];
  for (std::size_t a = 0; a < d.groups.size(); ++a) {
    const auto proto = meta.confounder_prototypes[a].row(d.groups[a]);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += proto[j];
  }
}

std::string instance_id(std::size_t i, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(5, std::to_string(n).size());
  std::string num = std::to_string(i);
  return "syn-" + std::string(width - num.size(), '0') + num;
}

}  // namespace

SyntheticData generate_confounded(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData out;
  out.meta = make_prototypes(spec);
  std::vector<double> strengths;
  for (const auto& a : spec.attributes) strengths.push_back(a.confound_strength);

  InstanceSampler sampler(spec, spec.seed);
  std::vector<Instance> instances;
  instances.reserve(spec.n);
  const std::size_t dim = spec.d_causal + spec.d_conf;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const InstanceDraw d = sampler.next(std::nullopt, strengths);
    Instance inst;
    inst.id = instance_id(i, spec.n);
    inst.label = d.label;
    inst.features.resize(dim);
    const auto u = out.meta.causal_prototypes.row(static_cast<std::size_t>(d.label));
    for (std::size_t j = 0; j < spec.d_causal; ++j) inst.features[j] = u[j] + d.causal_noise[j];
    fill_confounder_block(out.meta, d, std::span<double>(inst.features).subspan(spec.d_causal));
    for (std::size_t a = 0; a < spec.attributes.size(); ++a)
      inst.attrs[spec.attributes[a].name] = group_name(d.groups[a]);
    instances.push_back(std::move(inst));
  }
  out.dataset = make_dataset(std::move(instances), dim);
  return out;
}

Dataset reshuffle_attrs(const Dataset& ds, const SyntheticMeta& meta,
                        const std::map<std::string, double>& strength_overrides, std::uint64_t seed) {
  const auto& spec = meta.spec;
  if (ds.feature_dim() != spec.d_causal + spec.d_conf)
    throw DataError("reshuffle_attrs: dataset feature_dim " + std::to_string(ds.feature_dim()) +
                    " does not match metadata (" + std::to_string(spec.d_causal + spec.d_conf) + ")");
  if (meta.confounder_prototypes.size() != spec.attributes.size())
    throw DataError("reshuffle_attrs: metadata prototype count does not match attributes");
  std::vector<double> strengths;
  for (const auto& a : spec.attributes) {
    if (!ds.attr_schema().contains(a.name))
      throw DataError("reshuffle_attrs: dataset lacks attribute '" + a.name + "'");
    strengths.push_back(a.confound_strength);
  }
  if (ds.attr_schema().size() != spec.attributes.size())
    throw DataError("reshuffle_attrs: dataset attributes do not match the metadata");
  for (const auto& [name, rho] : strength_overrides) {
    auto it = std::find_if(spec.attributes.begin(), spec.attributes.end(),
                           [&](const AttributeSpec& a) { return a.name == name; });
    if (it == spec.attributes.end()) throw DataError("reshuffle_attrs: unknown attribute '" + name + "'");
    if (!(rho >= 0.0 && rho <= 1.0)) throw ConfigError("reshuffle_attrs: strength for '" + name + "' not in [0,1]");
    strengths[static_cast<std::size_t>(it - spec.attributes.begin())] = rho;
  }

  InstanceSampler sampler(spec, seed);
  std::vector<Instance> instances = ds.instances();
  for (auto& inst : instances) {
    const InstanceDraw d = sampler.next(inst.label, strengths);
    fill_confounder_block(meta, d, std::span<double>(inst.features).subspan(spec.d_causal));
    for (std::size_t a = 0; a < spec.attributes.size(); ++a)
      inst.attrs[spec.attributes[a].name] = group_name(d.groups[a]);
  }
  return make_dataset(std::move(instances), ds.feature_dim());
}

SyntheticSplit generate_split(const SyntheticSpec& spec, std::optional<double> test_strength) {
  SyntheticData data = generate_confounded(spec);
  SyntheticSplit out{split(data.dataset, {}, mix_seed(spec.seed, streams::split)), std::move(data.meta)};
  if (test_strength) {
    std::map<std::string, double> overrides;
    for (const auto& a : spec.attributes) overrides[a.name] = *test_strength;
    out.split.test = reshuffle_attrs(out.split.test, out.meta, overrides, mix_seed(spec.seed, streams::test_reshuffle));
  }
  return out;
}

std::filesystem::path meta_path_for(const std::filesystem::path& dataset_path) {
  auto p = dataset_path;
  p.replace_extension(".meta.json");
  return p;
}

namespace {

json tensor_to_json(const Tensor2& t) {
  json rows = json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) rows.push_back(std::vector<double>(t.row(r).begin(), t.row(r).end()));
  return rows;
}

Tensor2 tensor_from_json(const json& j, std::size_t rows, std::size_t cols, const std::string& what) {
  if (!j.is_array() || j.size() != rows) throw DataError("metadata: '" + what + "' has wrong row count");
  Tensor2 t(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw DataError("metadata: '" + what + "' has wrong column count");
    for (std::size_t c = 0; c < cols; ++c) t(r, c) = j[r][c].get<double>();
  }
  return t;
}

}  // namespace

void save_meta(const SyntheticMeta& meta, const std::filesystem::path& path) {
  const auto& s = meta.spec;
  json j;
  json attrs = json::array();
  for (std::size_t a = 0; a < s.attributes.size(); ++a) {
    attrs.push_back({{"name", s.attributes[a].name},
                     {"cardinality", s.attributes[a].cardinality},
                     {"confound_strength", s.attributes[a].confound_strength},
                     {"prototypes", tensor_to_json(meta.confounder_prototypes[a])}});
  }
  j["spec"] = {{"n", s.n},
               {"d_causal", s.d_causal},
               {"d_conf", s.d_conf},
               {"class_balance", s.class_balance},
               {"noise_sigma", s.noise_sigma},
               {"prototype_scale", s.prototype_scale},
               {"seed", s.seed}};
  j["attributes"] = std::move(attrs);
  j["causal_prototypes"] = tensor_to_json(meta.causal_prototypes);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write metadata file '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

SyntheticMeta load_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open metadata file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
    SyntheticMeta meta;
    auto& s = meta.spec;
    const auto& js = j.at("spec");
    s.n = js.at("n").get<std::size_t>();
    s.d_causal = js.at("d_causal").get<std::size_t>();
    s.d_conf = js.at("d_conf").get<std::size_t>();
    s.class_balance = js.at("class_balance").get<double>();
    s.noise_sigma = js.at("noise_sigma").get<double>();
    s.prototype_scale = js.at("prototype_scale").get<double>();
    s.seed = js.at("seed").get<std::uint64_t>();
    s.attributes.clear();
    for (const auto& ja : j.at("attributes")) {
      AttributeSpec a{ja.at("name").get<std::string>(), ja.at("cardinality").get<std::size_t>(),
                      ja.at("confound_strength").get<double>()};
      meta.confounder_prototypes.push_back(tensor_from_json(ja.at("prototypes"), a.cardinality, s.d_conf, a.name));
      s.attributes.push_back(std::move(a));
    }
    meta.causal_prototypes = tensor_from_json(j.at("causal_prototypes"), 2, s.d_causal, "causal_prototypes");
    s.validate();
    return meta;
  } catch (const json::exception& e) {
    throw DataError("malformed metadata file '" + path.string() + "': " + e.what());
  }
}

}  // namespace upil
