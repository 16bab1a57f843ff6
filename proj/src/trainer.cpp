#include "upil/trainer.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <random>

#include "upil/errors.hpp"
#include "upil/losses.hpp"
#include "upil/seeding.hpp"

namespace upil {

using nlohmann::json;

namespace {
constexpr std::array<std::pair<Ablation, std::string_view>, 6> kAblationNames{{
    {Ablation::full, "full"},
    {Ablation::static_partition, "static_partition"},
    {Ablation::no_supcon, "no_supcon"},
    {Ablation::no_variance, "no_variance"},
    {Ablation::no_record, "no_record"},
    {Ablation::erm, "erm"},
}};
}  // namespace

std::string_view to_string(Ablation a) {
  for (const auto& [v, name] : kAblationNames)
    if (v == a) return name;
  return "unknown";
}

Ablation ablation_from_string(std::string_view name) {
  for (const auto& [v, n] : kAblationNames)
    if (n == name) return v;
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::warmup: return "warmup";
    case Phase::partition: return "partition";
    case Phase::invariant: return "invariant";
    case Phase::erm: return "erm";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  if (k < 2) throw ConfigError("config: k must be >= 2");
  if (!(lambda >= 0.0)) throw ConfigError("config: lambda must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("config: tau must be > 0");
  if (max_epochs < warmup_epochs) throw ConfigError("config: max_epochs must be >= warmup_epochs");
  if (patience < 1) throw ConfigError("config: patience must be >= 1");
  if (batch < 1) throw ConfigError("config: batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("config: lr must be > 0");
  if (!(partition_lr > 0.0)) throw ConfigError("config: partition_lr must be > 0");
  if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("config: clip_norm must be > 0 when set");
  if (registry_capacity < 1) throw ConfigError("config: registry_capacity must be >= 1");
  for (auto w : phi_widths)
    if (w == 0) throw ConfigError("config: phi_widths entries must be positive");
  if (ablation == Ablation::static_partition && !static_attr)
    throw ConfigError("config: ablation static_partition requires static_attr");
}

void TrainConfig::validate_for(const Dataset& train) const {
  validate();
  if (ablation == Ablation::static_partition && !train.attr_schema().contains(*static_attr))
    throw ConfigError("config: static_attr '" + *static_attr + "' is not an attribute of the training data");
}

PartitionStepConfig TrainConfig::partition_config(std::size_t epoch) const {
  PartitionStepConfig p;
  p.ascent_steps = ascent_steps;
  p.partition_lr = partition_lr;
  p.batch = batch;
  p.tau = tau;
  p.lambda = effective_lambda();
  p.use_supcon = ablation != Ablation::no_supcon;
  p.clip_norm = clip_norm;
  p.seed = seed;
  p.epoch = epoch;
  return p;
}

json to_json(const TrainConfig& c) {
  return {{"k", c.k},
          {"lambda", c.lambda},
          {"tau", c.tau},
          {"warmup_epochs", c.warmup_epochs},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch", c.batch},
          {"lr", c.lr},
          {"partition_lr", c.partition_lr},
          {"ascent_steps", c.ascent_steps},
          {"seed", c.seed},
          {"ablation", std::string(to_string(c.ablation))},
          {"static_attr", c.static_attr ? json(*c.static_attr) : json(nullptr)},
          {"phi_widths", c.phi_widths},
          {"clip_norm", c.clip_norm ? json(*c.clip_norm) : json(nullptr)},
          {"registry_capacity", c.registry_capacity}};
}

namespace {

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) throw ConfigError("config: '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
  return v.get<double>();
}

}  // namespace

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "k") c.k = get_count(v, key);
    else if (key == "lambda") c.lambda = get_real(v, key);
    else if (key == "tau") c.tau = get_real(v, key);
    else if (key == "warmup_epochs") c.warmup_epochs = get_count(v, key);
    else if (key == "max_epochs") c.max_epochs = get_count(v, key);
    else if (key == "patience") c.patience = get_count(v, key);
    else if (key == "batch") c.batch = get_count(v, key);
    else if (key == "lr") c.lr = get_real(v, key);
    else if (key == "partition_lr") c.partition_lr = get_real(v, key);
    else if (key == "ascent_steps") c.ascent_steps = get_count(v, key);
    else if (key == "seed") c.seed = get_count(v, key);
    else if (key == "ablation") {
      if (!v.is_string()) throw ConfigError("config: 'ablation' must be a string");
      c.ablation = ablation_from_string(v.get<std::string>());
    } else if (key == "static_attr") {
      if (v.is_null()) c.static_attr.reset();
      else if (v.is_string()) c.static_attr = v.get<std::string>();
      else throw ConfigError("config: 'static_attr' must be a string or null");
    } else if (key == "phi_widths") {
      if (!v.is_array()) throw ConfigError("config: 'phi_widths' must be an array");
      c.phi_widths.clear();
      for (const auto& w : v) c.phi_widths.push_back(get_count(w, key));
    } else if (key == "clip_norm") {
      if (v.is_null()) c.clip_norm.reset();
      else c.clip_norm = get_real(v, key);
    } else if (key == "registry_capacity") c.registry_capacity = get_count(v, key);
    else throw ConfigError("config: unknown key '" + key + "'");
  }
  return c;
}

json to_json(const TrainHistory& h) {
  json epochs = json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"phase", std::string(to_string(e.phase))},
                      {"train_objective", e.train_objective},
                      {"val_accuracy", e.val_accuracy},
                      {"registry_size", e.registry_size},
                      {"partition_score", e.partition_score ? json(*e.partition_score) : json(nullptr)}});
  }
  return {{"best_epoch", h.best_epoch}, {"epochs", std::move(epochs)}};
}

namespace {

void set_trainable(ModelBundle& b, bool phi_and_classifier, bool head) {
  b.phi.frozen = !phi_and_classifier;
  b.classifier.frozen = !phi_and_classifier;
  b.partition_head.frozen = !head;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, streams::train_batches, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

// Batch loss and its gradient with respect to the classifier logits.
using LogitLoss = std::function<LossWithGrad(const Tensor2& logits, std::span<const int> labels,
                                             std::span<const std::size_t> rows)>;

// One pass of mini-batch SGD over phi and the classifier. Returns the mean batch loss.
double sgd_epoch(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg, std::size_t epoch,
                 const LogitLoss& loss_fn) {
  const std::size_t n = train.size();
  const auto order = epoch_order(n, cfg.seed, epoch);
  const auto y = train.labels();
  const SgdConfig sgd{cfg.lr, cfg.clip_norm};
  double total = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch) {
    const std::size_t end = std::min(n, start + cfg.batch);
    std::span<const std::size_t> rows(order.data() + start, end - start);
    std::vector<int> yb(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) yb[i] = y[rows[i]];

    const ExtractTrace trace = extract_traced(bundle, train.feature_matrix(rows));
    const Tensor2 logits = classify(bundle, trace.output);
    const LossWithGrad lg = loss_fn(logits, yb, rows);
    AffineGrads cg = affine_backward(bundle.classifier.tensors[0], trace.output, lg.d_logits, true);

    GroupGrads grads(3);
    grads[0] = extract_backward(bundle, trace, cg.dX);
    grads[1] = {std::move(cg.dW), std::move(cg.db)};
    grads[2] = {Tensor2(bundle.partition_head.tensors[0].rows(), bundle.partition_head.tensors[0].cols()),
                Tensor2(1, bundle.partition_head.tensors[1].cols())};
    const auto groups = bundle.groups();
    sgd_step(groups, grads, sgd, StepDirection::descend);

    total += lg.loss;
    ++batches;
  }
  return batches ? total / static_cast<double>(batches) : 0.0;
}

double ce_epoch(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg, std::size_t epoch) {
  return sgd_epoch(bundle, train, cfg, epoch,
                   [](const Tensor2& logits, std::span<const int> y, std::span<const std::size_t>) {
                     return cross_entropy_grad(logits, y);
                   });
}

double invariant_epoch(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg, std::size_t epoch,
                       const PartitionRegistry& registry) {
  const double lambda = cfg.effective_lambda();
  return sgd_epoch(bundle, train, cfg, epoch,
                   [&](const Tensor2& logits, std::span<const int> y, std::span<const std::size_t> rows) {
                     const auto memberships = registry.memberships(rows);
                     return multi_partition_objective_grad(logits, y, memberships, cfg.k, lambda);
                   });
}

PartitionRegistry make_registry(const TrainConfig& cfg) {
  if (cfg.ablation == Ablation::no_record) return PartitionRegistry(1, PartitionRegistry::Policy::keep_latest);
  return PartitionRegistry(cfg.registry_capacity, PartitionRegistry::Policy::keep_best);
}

}  // namespace

double accuracy_on(const ModelBundle& bundle, const Dataset& ds) {
  if (ds.empty()) throw DataError("accuracy_on: empty dataset");
  const auto preds = predict_labels(classify(bundle, extract(bundle, ds.feature_matrix())));
  const auto y = ds.labels();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += preds[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(y.size());
}

void warmup(ModelBundle& bundle, const Dataset& train, const TrainConfig& cfg) {
  if (train.empty()) throw DataError("warmup: empty training set");
  set_trainable(bundle, true, false);
  for (std::size_t e = 0; e < cfg.warmup_epochs; ++e) ce_epoch(bundle, train, cfg, e);
}

std::vector<std::size_t> static_assignment(const Dataset& train, const std::string& attr, std::size_t k) {
  auto it = train.attr_schema().find(attr);
  if (it == train.attr_schema().end()) throw ConfigError("static partition: unknown attribute '" + attr + "'");
  const auto& values = it->second;
  std::vector<std::size_t> out;
  out.reserve(train.size());
  for (const auto& v : train.attr_column(attr)) {
    auto pos = std::lower_bound(values.begin(), values.end(), v);
    if (v.empty() || pos == values.end() || *pos != v)
      throw DataError("static partition: instance without a value for '" + attr + "'");
    out.push_back(static_cast<std::size_t>(pos - values.begin()) % k);
  }
  return out;
}

TrainResult train(const Dataset& train_ds, const Dataset& val, const TrainConfig& cfg, const PhaseObserver& observer) {
  if (train_ds.empty()) throw DataError("train: empty training set");
  if (val.empty()) throw DataError("train: empty validation set");
  if (val.feature_dim() != train_ds.feature_dim())
    throw DimensionError("train: validation feature_dim " + std::to_string(val.feature_dim()) + " != training " +
                         std::to_string(train_ds.feature_dim()));
  cfg.validate_for(train_ds);

  ModelBundle bundle = init_bundle(cfg.model_config(train_ds.feature_dim()), mix_seed(cfg.seed, streams::model_init));
  PartitionRegistry registry = make_registry(cfg);
  TrainResult best{bundle, registry, {}};
  TrainHistory history;
  double best_acc = -1.0;

  auto notify = [&](std::size_t epoch, Phase phase, const ModelBundle& before) {
    if (observer) observer(PhaseEvent{epoch, phase, before, bundle, registry});
  };

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    if (epoch < cfg.warmup_epochs || cfg.ablation == Ablation::erm) {
      rec.phase = epoch < cfg.warmup_epochs ? Phase::warmup : Phase::erm;
      set_trainable(bundle, true, false);
      const ModelBundle before = observer ? bundle : ModelBundle{};
      rec.train_objective = ce_epoch(bundle, train_ds, cfg, epoch);
      notify(epoch, rec.phase, before);
    } else {
      // (a) partition discovery with phi and the classifier frozen.
      set_trainable(bundle, false, true);
      ModelBundle before = observer ? bundle : ModelBundle{};
      if (cfg.ablation == Ablation::static_partition) {
        if (registry.empty()) {
          PartitionMatrix p;
          p.k = cfg.k;
          p.epoch = epoch;
          p.assignment = static_assignment(train_ds, *cfg.static_attr, cfg.k);
          p.score = partition_score(bundle, train_ds, p.assignment, cfg.partition_config(epoch));
          rec.partition_score = p.score;
          registry.record(std::move(p));
        }
      } else {
        PartitionMatrix p = unfair_partition_step(bundle, train_ds, cfg.partition_config(epoch));
        rec.partition_score = p.score;
        registry.record(std::move(p));
      }
      notify(epoch, Phase::partition, before);

      // (b) invariant learning with the partition head frozen.
      set_trainable(bundle, true, false);
      if (observer) before = bundle;
      rec.phase = Phase::invariant;
      rec.train_objective = invariant_epoch(bundle, train_ds, cfg, epoch, registry);
      notify(epoch, Phase::invariant, before);
    }
    rec.registry_size = registry.size();
    rec.val_accuracy = accuracy_on(bundle, val);
    history.epochs.push_back(rec);

    if (rec.val_accuracy > best_acc) {
      best_acc = rec.val_accuracy;
      history.best_epoch = epoch;
      best.bundle = bundle;
      best.registry = registry;
    }
    if (epoch - history.best_epoch >= cfg.patience) break;
  }
  set_trainable(best.bundle, true, true);
  best.history = std::move(history);
  return best;
}

}  // namespace upil
