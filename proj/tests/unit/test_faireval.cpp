#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "upil/errors.hpp"
#include "upil/faireval.hpp"

using namespace upil;
using upil::test::TempDir;

namespace {

std::vector<int> bernoulli(std::size_t n, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  std::vector<int> v(n);
  for (auto& x : v) x = b(rng);
  return v;
}

double accuracy(std::span<const int> p, std::span<const int> y) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == y[i];
  return static_cast<double>(c) / static_cast<double>(p.size());
}

}  // namespace

TEST_CASE("accuracy and F1 hand cases") {
  const std::vector<int> y{1, 0, 1, 0};
  auto s = accuracy_f1(y, y);
  CHECK(s.accuracy == 1.0);
  CHECK(s.f1_binary == 1.0);
  CHECK(s.f1_macro == 1.0);

  s = accuracy_f1(std::vector{1, 1, 1, 1}, y);
  CHECK(std::abs(s.accuracy - 0.5) < 1e-12);
  CHECK(std::abs(s.f1_binary - 2.0 / 3.0) < 1e-12);
  CHECK(std::abs(s.f1_macro - 1.0 / 3.0) < 1e-12);  // class 0 F1 is 0

  s = accuracy_f1(std::vector{0, 0, 0}, std::vector{1, 1, 1});
  CHECK(s.f1_binary == 0.0);
  CHECK(s.accuracy == 0.0);

  CHECK_THROWS_AS(accuracy_f1(std::vector{0, 1}, std::vector{0}), DataError);
  CHECK_THROWS_AS(accuracy_f1(std::vector<int>{}, std::vector<int>{}), DataError);
}

TEST_CASE("demographic parity gap hand cases") {
  std::vector<int> preds;
  std::vector<std::string> groups;
  for (int i = 0; i < 20; ++i) preds.push_back(i % 2), groups.push_back("a");       // rate 0.5
  for (int i = 0; i < 20; ++i) preds.push_back(i % 4 != 0), groups.push_back("b");  // rate 0.75
  for (int i = 0; i < 3; ++i) preds.push_back(1), groups.push_back("c");            // too small
  const ParityGap g = demographic_parity_gap(preds, groups, 10);
  CHECK(std::abs(g.gap - 0.25) < 1e-12);
  CHECK(g.excluded == std::vector<std::string>{"c"});
  CHECK(g.rates.size() == 2);
  CHECK(g.rates.at("b").count == 20);
  CHECK(!g.degenerate);

  const ParityGap one = demographic_parity_gap(std::vector{1, 0, 1}, std::vector<std::string>{"x", "x", "x"}, 1);
  CHECK(one.degenerate);
  CHECK(one.gap == 0.0);

  CHECK_THROWS_AS(demographic_parity_gap(std::vector{1}, std::vector<std::string>{"x", "y"}, 1), DataError);
  CHECK_THROWS_AS(demographic_parity_gap(std::vector{1}, std::vector<std::string>{"x"}, 0), ConfigError);
}

TEST_CASE("parity gap properties") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 20 + rng() % 80;
    const auto preds = bernoulli(n, 0.4, rng);
    std::vector<std::string> groups(n);
    for (auto& g : groups) g = "g" + std::to_string(rng() % 4);
    const std::size_t ms = 1 + rng() % 5;
    const ParityGap g = demographic_parity_gap(preds, groups, ms);
    CHECK(g.gap >= 0.0);
    CHECK(g.gap <= 1.0);

    std::vector<std::string> renamed(n);
    for (std::size_t i = 0; i < n; ++i) renamed[i] = "other_" + groups[i];
    CHECK(demographic_parity_gap(preds, renamed, ms).gap == g.gap);

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> p2(n);
    std::vector<std::string> g2(n);
    for (std::size_t i = 0; i < n; ++i) p2[i] = preds[perm[i]], g2[i] = groups[perm[i]];
    CHECK(demographic_parity_gap(p2, g2, ms).gap == g.gap);

    CHECK(demographic_parity_gap(std::vector<int>(n, 1), groups, ms).gap == 0.0);
  }
}

TEST_CASE("intervention hand cases") {
  const std::vector<int> y{1, 1, 1};
  const InterventionReport r = intervention(std::vector{0, 0, 1}, std::vector{1, 0, 1}, y);
  CHECK(std::abs(*r.overall.w_to_c() - 0.5) < 1e-12);
  CHECK(*r.overall.c_to_w() == 0.0);

  const InterventionReport same = intervention(std::vector{0, 1, 1}, std::vector{0, 1, 1}, y);
  CHECK(*same.overall.w_to_c() == 0.0);
  CHECK(*same.overall.c_to_w() == 0.0);

  const InterventionReport perfect = intervention(y, std::vector{0, 1, 1}, y);
  CHECK(!perfect.overall.w_to_c().has_value());
  CHECK(std::abs(*perfect.overall.c_to_w() - 1.0 / 3.0) < 1e-12);
  CHECK(to_json(perfect).at("w_to_c").is_null());

  const InterventionReport grouped =
      intervention(std::vector{0, 0, 1}, std::vector{1, 0, 1}, y, {{"p", {"a", "b", "b"}}});
  CHECK(*grouped.by_group.at("p").at("a").w_to_c() == 1.0);
  CHECK(*grouped.by_group.at("p").at("b").w_to_c() == 0.0);

  CHECK_THROWS_AS(intervention(std::vector{0}, std::vector{0, 1}, std::vector{0, 1}), DataError);
}

TEST_CASE("intervention accuracy identity on random prediction pairs") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const auto y = bernoulli(n, 0.5, rng);
    const auto base = bernoulli(n, 0.5, rng);
    const auto ours = bernoulli(n, 0.5, rng);
    const InterventionCounts c = intervention(base, ours, y).overall;
    const double ba = accuracy(base, y);
    const double lhs = ba + c.w_to_c().value_or(0.0) * (1.0 - ba) - c.c_to_w().value_or(0.0) * ba;
    CHECK(std::abs(lhs - accuracy(ours, y)) < 1e-12);
  }
}

TEST_CASE("evaluate without attributes reports scores only") {
  std::vector<Instance> v{{"a", {1.0, 0.0}, 0, {}}, {"b", {0.0, 1.0}, 1, {}}};
  const Dataset ds = make_dataset(v);
  const ModelBundle b = init_bundle({2, {}, 2}, 3);
  const MetricsReport r = evaluate(b, ds);
  CHECK(r.parity.empty());
  CHECK(r.n == 2);
  CHECK(to_json(r).at("dp_gaps").empty());
  CHECK_THROWS_AS(evaluate(init_bundle({3, {}, 2}, 3), ds), DimensionError);
}

TEST_CASE("confounder-only classifier shows a large parity gap at full confounding") {
  SyntheticSpec spec;  // default dimensions, reduced noise so the shortcut is learnable
  spec.n = 1000;
  spec.noise_sigma = 0.5;
  spec.attributes = {{"platform", 2, 1.0}};
  const SyntheticData data = generate_confounded(spec);
  ModelBundle b = init_bundle({spec.d_causal + spec.d_conf, {}, 2}, 1);
  Tensor2& W = b.classifier.tensors[0];
  Tensor2& bias = b.classifier.tensors[1];
  for (double& x : W.values()) x = 0.0;
  const Tensor2& V = data.meta.confounder_prototypes[0];
  double n0 = 0.0, n1 = 0.0;
  for (std::size_t j = 0; j < spec.d_conf; ++j) {
    W(spec.d_causal + j, 0) = V(0, j);
    W(spec.d_causal + j, 1) = V(1, j);
    n0 += V(0, j) * V(0, j);
    n1 += V(1, j) * V(1, j);
  }
  bias(0, 0) = -n0 / 2.0;
  bias(0, 1) = -n1 / 2.0;
  const MetricsReport r = evaluate(b, data.dataset);
  MESSAGE("shortcut dp_gap " << r.parity.at("platform").gap);
  CHECK(r.parity.at("platform").gap >= 0.9);
}

TEST_CASE("report JSON is canonical and deterministic") {
  const SyntheticData data = generate_confounded(test::small_spec(2, 200));
  const ModelBundle b = init_bundle({8, {4}, 2}, 5);
  const std::string a = canonical_dump(to_json(evaluate(b, data.dataset)));
  CHECK(a == canonical_dump(to_json(evaluate(b, data.dataset))));
  CHECK(a.find(' ') == std::string::npos);
  CHECK(a.find("\"accuracy\":") != std::string::npos);
  CHECK(canonical_dump({{"b", 1.0 / 3.0}, {"a", -0.0}}) == "{\"a\":0.000000,\"b\":0.333333}");
}

TEST_CASE("feature dump and prediction files") {
  TempDir dir("faireval");
  const SyntheticData data = generate_confounded(test::small_spec(2, 50));
  const ModelBundle b = init_bundle({8, {6, 3}, 2}, 5);
  dump_features(b, data.dataset, dir / "z.jsonl");
  const std::string text = test::read_file(dir / "z.jsonl");
  std::istringstream in(text);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("z").size() == 3);
    CHECK(j.contains("attrs"));
    ++lines;
  }
  CHECK(lines == data.dataset.size());
  dump_features(b, data.dataset, dir / "z2.jsonl");
  CHECK(test::read_file(dir / "z2.jsonl") == text);

  const auto recs = prediction_records(b, data.dataset);
  save_predictions(recs, dir / "p.jsonl");
  const auto back = load_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == recs.size());
  CHECK(back[0].id == recs[0].id);
  const InterventionReport self = audit(recs, back);
  CHECK(self.overall.wrong_to_correct == 0);
  CHECK(self.overall.correct_to_wrong == 0);

  auto mislabeled = back;
  mislabeled[0].label = 1 - mislabeled[0].label;
  CHECK_THROWS_AS(audit(recs, mislabeled), DataError);
}
