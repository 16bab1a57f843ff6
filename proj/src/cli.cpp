#include "upil/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "upil/checkpoint.hpp"
#include "upil/dataio.hpp"
#include "upil/errors.hpp"
#include "upil/faireval.hpp"
#include "upil/partitioner.hpp"
#include "upil/trainer.hpp"

namespace upil {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit : int { kOk = 0, kConfig = 2, kData = 3, kInternal = 4 };

struct GenArgs {
  std::string out;
  SyntheticSpec spec;
  std::optional<double> rho;
  std::optional<double> test_rho;
  bool split = false;
};

struct TrainArgs {
  std::string train, val, out;
  std::optional<std::string> config, history, dump_partitions;
  std::vector<std::string> overrides;
};

struct EvalArgs {
  std::string checkpoint, data;
  std::optional<std::string> out, predictions, config;
  std::size_t min_support = kDefaultMinSupport;
};

struct AuditArgs {
  std::string base, ours;
  std::optional<std::string> out;
};

struct OracleArgs {
  std::string data;
  std::optional<std::string> checkpoint, out;
  std::size_t k = 2;
  double tau = kDefaultTau;
  double lambda = kDefaultLambda;
};

struct DumpArgs {
  std::string checkpoint, data, out;
};

void emit(const std::string& text, const std::optional<std::string>& path) {
  if (!path) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(*path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + *path + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + *path + "'");
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

// key=value, where value is parsed as JSON when possible and taken as a
// string otherwise (so `ablation=erm` needs no quoting).
void apply_override(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + kv + "' is not of the form key=value");
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  cfg[key] = std::move(value);
}

TrainConfig effective_config(const std::optional<std::string>& path, const std::vector<std::string>& overrides) {
  json j = path ? read_config_file(*path) : json::object();
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& kv : overrides) apply_override(j, kv);
  TrainConfig cfg = train_config_from_json(j);
  cfg.validate();
  return cfg;
}

fs::path sibling(const fs::path& out, const std::string& part) {
  fs::path p = out;
  p.replace_extension("." + part + ".jsonl");
  return p;
}

int cmd_gen(GenArgs a) {
  if (a.rho)
    for (auto& attr : a.spec.attributes) attr.confound_strength = *a.rho;
  a.spec.validate();
  const fs::path out = a.out;
  if (!a.split) {
    if (a.test_rho) throw ConfigError("--test-rho requires --split");
    const SyntheticData data = generate_confounded(a.spec);
    save_jsonl(data.dataset, out);
    save_meta(data.meta, meta_path_for(out));
    return kOk;
  }
  const SyntheticSplit s = generate_split(a.spec, a.test_rho);
  save_meta(s.meta, meta_path_for(out));
  save_jsonl(s.split.train, sibling(out, "train"));
  save_jsonl(s.split.val, sibling(out, "val"));
  save_jsonl(s.split.test, sibling(out, "test"));
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = effective_config(a.config, a.overrides);
  const Dataset train_ds = load_jsonl(a.train);
  const Dataset val_ds = load_jsonl(a.val);
  if (val_ds.feature_dim() != train_ds.feature_dim())
    throw DimensionError("validation feature_dim " + std::to_string(val_ds.feature_dim()) + " differs from training " +
                         std::to_string(train_ds.feature_dim()));
  const TrainResult result = train(train_ds, val_ds, cfg);
  save_checkpoint(result.bundle, result.registry, cfg, a.out);
  if (a.history) {
    json h = to_json(result.history);
    h["config"] = to_json(cfg);
    emit(h.dump(2) + "\n", a.history);
  }
  if (a.dump_partitions) {
    fs::create_directories(*a.dump_partitions);
    const auto& entries = result.registry.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "partition_%02zu.json", i);
      dump_partition(entries[i], fs::path(*a.dump_partitions) / name);
    }
  }
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const Dataset ds = load_jsonl(a.data);
  if (a.config) check_compatible(ck, effective_config(a.config, {}), ds.feature_dim());
  const MetricsReport report = evaluate(ck.bundle, ds, a.min_support);
  for (const auto& [attr, p] : report.parity) {
    if (p.degenerate) std::cerr << "warning: attribute '" << attr << "' has fewer than two groups with support >= "
                                << a.min_support << "; dp gap reported as 0\n";
  }
  if (a.predictions) save_predictions(prediction_records(ck.bundle, ds), *a.predictions);
  emit(canonical_dump(to_json(report)) + "\n", a.out);
  return kOk;
}

int cmd_audit(const AuditArgs& a) {
  const InterventionReport r = audit(load_predictions(a.base), load_predictions(a.ours));
  emit(canonical_dump(to_json(r)) + "\n", a.out);
  return kOk;
}

int cmd_oracle(const OracleArgs& a) {
  const Dataset ds = load_jsonl(a.data);
  if (ds.size() > kOracleMaxInstances)
    throw SizeError("oracle: dataset has " + std::to_string(ds.size()) + " instances; exhaustive search is limited to " +
                    std::to_string(kOracleMaxInstances));
  Tensor2 Z = ds.feature_matrix();
  if (a.checkpoint) {
    const Checkpoint ck = load_checkpoint(*a.checkpoint);
    if (ck.bundle.config.feature_dim != ds.feature_dim())
      throw DimensionError("oracle: checkpoint expects feature_dim " + std::to_string(ck.bundle.config.feature_dim) +
                           ", dataset has " + std::to_string(ds.feature_dim()));
    Z = extract(ck.bundle, Z);
  }
  const auto labels = ds.labels();
  const OracleResult r = brute_force_oracle(Z, labels, a.k, a.tau, a.lambda);
  std::vector<std::string> ids;
  for (const auto& inst : ds.instances()) ids.push_back(inst.id);
  const json out = {{"k", a.k}, {"tau", a.tau}, {"lambda", a.lambda},
                    {"ids", ids}, {"assignment", r.assignment}, {"score", r.score}};
  emit(canonical_dump(out) + "\n", a.out);
  return kOk;
}

int cmd_dump(const DumpArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  dump_features(ck.bundle, load_jsonl(a.data), a.out);
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfig;
  if (dynamic_cast<const DataError*>(&e)) return kData;
  return kInternal;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Unfair-partition invariant learning for confounder-robust detection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a confounded synthetic dataset");
  g->add_option("--out", gen.out, "Output JSON Lines path")->required();
  g->add_option("--n", gen.spec.n, "Number of instances");
  g->add_option("--d-causal", gen.spec.d_causal, "Causal feature dimension");
  g->add_option("--d-conf", gen.spec.d_conf, "Confounder feature dimension");
  g->add_option("--class-balance", gen.spec.class_balance, "P(label = 1)");
  g->add_option("--noise", gen.spec.noise_sigma, "Noise standard deviation");
  g->add_option("--scale", gen.spec.prototype_scale, "Prototype scale");
  g->add_option("--seed", gen.spec.seed, "Random seed");
  g->add_option("--rho", gen.rho, "Confound strength for every attribute");
  g->add_flag("--split", gen.split, "Also write .train/.val/.test parts (6:1:3)");
  g->add_option("--test-rho", gen.test_rho, "Reshuffle the test part to this confound strength");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--train", tr.train, "Training JSON Lines")->required();
  t->add_option("--val", tr.val, "Validation JSON Lines")->required();
  t->add_option("--config", tr.config, "JSON config with TrainConfig fields");
  t->add_option("--set", tr.overrides, "key=value override, repeatable");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--history", tr.history, "Per-epoch history JSON");
  t->add_option("--dump-partitions", tr.dump_partitions, "Directory for recorded partitions");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Accuracy, F1 and parity gaps of a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--out", ev.out, "Report path (default stdout)");
  e->add_option("--min-support", ev.min_support, "Minimum group size for parity gaps")->check(CLI::PositiveNumber);
  e->add_option("--predictions", ev.predictions, "Also write per-instance predictions");
  e->add_option("--config", ev.config, "Fail unless the checkpoint matches this config");

  AuditArgs au;
  auto* a = app.add_subcommand("audit", "Wrong-to-correct / correct-to-wrong analysis of two prediction files");
  a->add_option("--base", au.base)->required();
  a->add_option("--ours", au.ours)->required();
  a->add_option("--out", au.out, "Report path (default stdout)");

  OracleArgs orc;
  auto* o = app.add_subcommand("oracle", "Exhaustive best partition of a tiny dataset");
  o->add_option("--data", orc.data)->required();
  o->add_option("--checkpoint", orc.checkpoint, "Score extracted features instead of raw features");
  o->add_option("--k", orc.k);
  o->add_option("--tau", orc.tau);
  o->add_option("--lambda", orc.lambda);
  o->add_option("--out", orc.out, "Result path (default stdout)");

  DumpArgs du;
  auto* d = app.add_subcommand("dump-features", "Write learned representations as JSON Lines");
  d->add_option("--checkpoint", du.checkpoint)->required();
  d->add_option("--data", du.data)->required();
  d->add_option("--out", du.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err, std::cerr, std::cerr);
    return kConfig;
  }

  try {
    if (g->parsed()) return cmd_gen(gen);
    if (t->parsed()) return cmd_train(tr);
    if (e->parsed()) return cmd_eval(ev);
    if (a->parsed()) return cmd_audit(au);
    if (o->parsed()) return cmd_oracle(orc);
    if (d->parsed()) return cmd_dump(du);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return exit_code_for(err);
  }
  return kInternal;
}

}  // namespace upil
