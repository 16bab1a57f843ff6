#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "support.hpp"
#include "upil/errors.hpp"
#include "upil/kernels.hpp"
#include "upil/losses.hpp"

using namespace upil;
using upil::test::random_labels;
using upil::test::random_stochastic;
using upil::test::random_tensor;

namespace {

// Direct transcription of the weighted SupCon definition, no shared code.
double supcon_reference(const Tensor2& Z, std::span<const int> y, std::span<const double> w, double tau) {
  const std::size_t n = Z.rows();
  std::vector<std::vector<double>> zn(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : Z.row(i)) s += v * v;
    const double norm = std::sqrt(s);
    for (double v : Z.row(i)) zn[i].push_back(norm < 1e-12 ? v : v / norm);
  }
  auto sim = [&](std::size_t i, std::size_t j) {
    return std::inner_product(zn[i].begin(), zn[i].end(), zn[j].begin(), 0.0) / tau;
  };
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    double pos_mass = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && y[p] == y[i]) pos_mass += w[p];
    if (pos_mass < 1e-9) continue;
    double denom = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      if (a != i) denom += w[a] * std::exp(sim(i, a));
    double acc = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && y[p] == y[i] && w[p] > 0.0) acc += w[p] * std::log(std::exp(sim(i, p)) * w[p] / denom);
    num += w[i] * (-acc / pos_mass);
    den += w[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

double population_variance(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

std::vector<double> ones(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace

TEST_CASE("supcon hand cases") {
  const Tensor2 same = Tensor2::from_rows({{1, 2}, {1, 2}});
  for (double tau : {0.1, 0.5, 3.0}) CHECK(std::abs(supcon_subset(same, std::vector{0, 0}, ones(2), tau).loss) < 1e-15);

  const Tensor2 Z = Tensor2::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}});
  const auto v = supcon_subset(Z, std::vector{0, 0, 1, 1}, ones(4), 1.0);
  CHECK(v.active);
  CHECK(std::abs(v.loss - std::log(1.0 + 2.0 / std::exp(1.0))) < 1e-12);

  const auto single = supcon_subset(Z, std::vector{0, 0, 1, 1}, std::vector{1.0, 0.0, 0.0, 0.0}, 1.0);
  CHECK(!single.active);
  CHECK(single.loss == 0.0);
}

TEST_CASE("supcon errors") {
  const Tensor2 Z = Tensor2::from_rows({{1, 0}, {0, 1}});
  CHECK_THROWS_AS(supcon_subset(Z, std::vector{0, 0}, ones(2), 0.0), ConfigError);
  CHECK_THROWS_AS(supcon_subset(Z, std::vector{0, 0}, std::vector{1.0, 1.5}, 0.5), DataError);
  CHECK_THROWS_AS(supcon_subset(Z, std::vector{0, 0, 1}, ones(2), 0.5), DimensionError);
}

TEST_CASE("supcon agrees with the reference formula") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng() % 10;
    const Tensor2 Z = random_tensor(n, 3, rng);
    const auto y = random_labels(n, rng);
    std::vector<double> w(n);
    for (auto& x : w) x = trial % 2 ? u(rng) : static_cast<double>(rng() % 2);
    const double tau = 0.2 + u(rng);
    const double ref = supcon_reference(Z, y, w, tau);
    CHECK(std::abs(supcon_subset(Z, y, w, tau).loss - ref) <= 1e-10 * (1.0 + std::abs(ref)));
  }
}

TEST_CASE("supcon anchor kernel is bitwise equal to its serial twin") {
  std::mt19937_64 rng(77);
  for (std::size_t n : {2, 9, 130}) {
    const Tensor2 Z = random_tensor(n, 4, rng);
    const auto y = random_labels(n, rng);
    std::vector<double> w(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& x : w) x = u(rng);
    const Tensor2 S = scaled_similarity(Z, 0.5).scaled;
    std::vector<double> a[8];
    for (auto& v : a) v.assign(n, 0.0);
    std::vector<std::uint8_t> act1(n), act2(n);
    kernels::supcon_anchor_terms(S, y, w, {a[0], a[1], a[2], a[3], act1});
    kernels::serial::supcon_anchor_terms(S, y, w, {a[4], a[5], a[6], a[7], act2});
    for (int k = 0; k < 4; ++k)
      CHECK(test::bitwise_equal(Tensor2::row_vector(a[k]), Tensor2::row_vector(a[k + 4])));
    CHECK(act1 == act2);
  }
}

TEST_CASE("combine_subsets") {
  const auto b = combine_subsets({0.0, 2.0}, {true, true}, 0.1);
  CHECK(std::abs(b.objective - 2.1) < 1e-12);
  CHECK(std::abs(b.variance - 1.0) < 1e-12);
  const auto one = combine_subsets({1.5, 0.0}, {true, false}, 0.1);
  CHECK(one.variance == 0.0);
  CHECK(one.objective == 1.5);
  CHECK(combine_subsets({0.7, 0.7, 0.7}, {true, true, true}, 5.0).variance == 0.0);
}

TEST_CASE("subset variance properties") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + rng() % 4);
    for (auto& x : v) x = u(rng);
    const auto b = combine_subsets(v, std::vector<bool>(v.size(), true), 0.3);
    CHECK(std::abs(b.variance - population_variance(v)) < 1e-12);
    CHECK(std::abs(b.objective - (std::accumulate(v.begin(), v.end(), 0.0) + 0.3 * b.variance)) < 1e-12);
    std::vector<double> r(v.rbegin(), v.rend());
    CHECK(std::abs(combine_subsets(r, std::vector<bool>(r.size(), true), 0.3).variance - b.variance) < 1e-12);
  }
}

TEST_CASE("unfair_objective_hard") {
  std::mt19937_64 rng(5);
  const Tensor2 Z = random_tensor(8, 3, rng);
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 1, 0};
  const std::vector<std::size_t> all0(8, 0);
  const auto b = unfair_objective_hard(Z, y, all0, 2, 0.5, 0.1);
  CHECK(!b.active_mask[1]);
  CHECK(b.variance == 0.0);
  CHECK(std::abs(b.objective - supcon_subset(Z, y, ones(8), 0.5).loss) < 1e-12);

  const std::vector<std::size_t> split{0, 0, 1, 1, 0, 1, 0, 1};
  const auto s = unfair_objective_hard(Z, y, split, 2, 0.5, 0.1);
  std::vector<double> per;
  for (std::size_t e = 0; e < 2; ++e) {
    std::vector<double> w(8);
    for (std::size_t i = 0; i < 8; ++i) w[i] = split[i] == e;
    per.push_back(supcon_reference(Z, y, w, 0.5));
  }
  CHECK(std::abs(s.objective - (per[0] + per[1] + 0.1 * population_variance(per))) < 1e-10);

  CHECK_THROWS_AS(unfair_objective_hard(Z, y, std::vector<std::size_t>(7, 0), 2, 0.5, 0.1), DimensionError);
  CHECK_THROWS_AS(unfair_objective_hard(Z, y, std::vector<std::size_t>(8, 2), 2, 0.5, 0.1), DataError);
}

TEST_CASE("unfair_objective_soft vertex consistency and symmetry") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 3 + rng() % 8;
    const Tensor2 Z = random_tensor(n, 4, rng);
    const auto y = random_labels(n, rng);
    std::vector<std::size_t> a(n);
    Tensor2 P(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng() % 2;
      P(i, a[i]) = 1.0;
    }
    const double hard = unfair_objective_hard(Z, y, a, 2, 0.5, 0.1).objective;
    CHECK(std::abs(unfair_objective_soft(Z, y, P, 0.5, 0.1).breakdown.objective - hard) < 1e-10);

    const Tensor2 U(n, 2, 0.5);
    const auto sym = unfair_objective_soft(Z, y, U, 0.5, 0.1).breakdown;
    CHECK(sym.variance < 1e-20);
    CHECK(std::abs(sym.per_subset[0] - sym.per_subset[1]) < 1e-12);
  }
  CHECK_THROWS_AS(unfair_objective_soft(Tensor2(2, 2, 1.0), std::vector{0, 1}, Tensor2(2, 2, 0.4), 0.5, 0.1),
                  DataError);
}

TEST_CASE("cross_entropy hand cases") {
  CHECK(std::abs(cross_entropy(Tensor2::from_rows({{0, 0}}), std::vector{1}) - std::log(2.0)) < 1e-15);
  const double big = cross_entropy(Tensor2::from_rows({{1000, 0}}), std::vector{0});
  CHECK(std::isfinite(big));
  CHECK(big < 1e-300);
  CHECK(std::abs(cross_entropy(Tensor2::from_rows({{std::log(1.0), std::log(3.0)}}), std::vector{1}) +
                 std::log(0.75)) < 1e-12);
  CHECK_THROWS_AS(cross_entropy(Tensor2(0, 2), std::vector<int>{}), DataError);
}

TEST_CASE("invariant_objective hand cases") {
  const Tensor2 logits = Tensor2::from_rows({{0, 0}, {50, -50}});
  const auto b = invariant_objective(logits, std::vector{0, 0}, std::vector<std::size_t>{0, 1}, 2, 0.1);
  CHECK(std::abs(b.objective - (std::log(2.0) + 0.1 * std::pow(std::log(2.0) / 2.0, 2))) < 1e-12);

  const Tensor2 same = Tensor2::from_rows({{0.3, -0.2}, {0.3, -0.2}});
  const auto s = invariant_objective(same, std::vector{1, 1}, std::vector<std::size_t>{0, 1}, 2, 0.1);
  CHECK(s.variance == 0.0);
  const auto only0 = invariant_objective(same, std::vector{1, 1}, std::vector<std::size_t>{0, 0}, 2, 0.1);
  CHECK(std::abs(only0.objective - cross_entropy(same, std::vector{1, 1})) < 1e-15);
  CHECK_THROWS_AS(invariant_objective(same, std::vector{1, 1}, std::vector<std::size_t>{0, 2}, 2, 0.1), DataError);
}

TEST_CASE("multi_partition_objective is the mean over partitions") {
  std::mt19937_64 rng(12);
  const Tensor2 logits = random_tensor(6, 2, rng);
  const auto y = random_labels(6, rng);
  const std::vector<std::vector<std::size_t>> parts{{0, 1, 0, 1, 0, 1}, {1, 1, 0, 0, 1, 0}};
  const double o1 = invariant_objective(logits, y, parts[0], 2, 0.1).objective;
  const double o2 = invariant_objective(logits, y, parts[1], 2, 0.1).objective;
  CHECK(std::abs(multi_partition_objective(logits, y, parts, 2, 0.1) - (o1 + o2) / 2) < 1e-12);
  CHECK(std::abs(multi_partition_objective(logits, y, std::span(parts).first(1), 2, 0.1) - o1) < 1e-15);
  const std::vector<std::vector<std::size_t>> twice{parts[0], parts[0]};
  CHECK(std::abs(multi_partition_objective(logits, y, twice, 2, 0.1) - o1) < 1e-15);
  CHECK_THROWS_AS(multi_partition_objective(logits, y, std::vector<std::vector<std::size_t>>{}, 2, 0.1), ConfigError);
}

TEST_CASE("lambda zero removes the variance term exactly") {
  std::mt19937_64 rng(13);
  const Tensor2 Z = random_tensor(9, 3, rng);
  const auto y = random_labels(9, rng);
  const std::vector<std::size_t> a{0, 1, 1, 0, 1, 0, 0, 1, 1};
  const auto b = unfair_objective_hard(Z, y, a, 2, 0.5, 0.0);
  CHECK(std::abs(b.objective - b.total) < 1e-12);
}

// Analytic gradients against central differences; 20 randomized cases each.
TEST_CASE("gradient checks") {
  std::mt19937_64 rng(2024);
  const double eps = 1e-5;
  auto as_group = [](const Tensor2& t) { return std::vector<ParamGroup>{{"x", {t}, false}}; };

  SUBCASE("cross_entropy") {
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor2 L = random_tensor(1 + rng() % 8, 2, rng, 2.0);
      const auto y = random_labels(L.rows(), rng);
      const auto fd = finite_diff_grad([&](auto p) { return cross_entropy(p[0].tensors[0], y); }, as_group(L), eps);
      CHECK(test::max_rel_error(cross_entropy_grad(L, y).d_logits, fd[0][0]) < 1e-4);
    }
  }
  SUBCASE("hard supcon w.r.t. features") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 7;
      const Tensor2 Z = random_tensor(n, 1 + rng() % 5, rng);
      const auto y = random_labels(n, rng);
      std::vector<double> w(n);
      for (auto& x : w) x = rng() % 4 ? 1.0 : 0.0;
      const auto fd = finite_diff_grad([&](auto p) { return supcon_subset(p[0].tensors[0], y, w, 0.5).loss; },
                                       as_group(Z), eps);
      CHECK(test::max_rel_error(supcon_subset_grad(Z, y, w, 0.5).d_features, fd[0][0]) < 1e-4);
    }
  }
  SUBCASE("supcon w.r.t. weights") {
    std::uniform_real_distribution<double> u(0.1, 0.9);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 7;
      const Tensor2 Z = random_tensor(n, 3, rng);
      const auto y = random_labels(n, rng);
      std::vector<double> w(n);
      for (auto& x : w) x = u(rng);
      const auto fd = finite_diff_grad(
          [&](auto p) {
            const auto wv = p[0].tensors[0].values();
            return supcon_subset(Z, y, std::vector<double>(wv.begin(), wv.end()), 0.5).loss;
          },
          as_group(Tensor2::row_vector(w)), eps);
      const auto g = supcon_subset_grad(Z, y, w, 0.5, false);
      CHECK(test::max_rel_error(Tensor2::row_vector(g.d_weights), fd[0][0]) < 1e-4);
    }
  }
  SUBCASE("soft unfair objective w.r.t. P") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 7;
      const std::size_t k = 2 + rng() % 2;
      const Tensor2 Z = random_tensor(n, 3, rng);
      const auto y = random_labels(n, rng);
      const Tensor2 P = random_stochastic(n, k, rng);
      // P is perturbed entry by entry, so rows leave the simplex; the
      // objective is evaluated on the unnormalized weights directly.
      auto raw = [&](const Tensor2& Q) {
        std::vector<double> per(k);
        std::vector<bool> act(k);
        for (std::size_t e = 0; e < k; ++e) {
          std::vector<double> w(n);
          for (std::size_t i = 0; i < n; ++i) w[i] = Q(i, e);
          const auto v = supcon_subset(Z, y, w, 0.5);
          per[e] = v.loss;
          act[e] = v.active;
        }
        return combine_subsets(per, act, 0.1).objective;
      };
      const auto fd = finite_diff_grad([&](auto p) { return raw(p[0].tensors[0]); }, as_group(P), eps);
      const auto soft = unfair_objective_soft(Z, y, P, 0.5, 0.1);
      CHECK(std::abs(soft.breakdown.objective - raw(P)) < 1e-12);
      CHECK(test::max_rel_error(soft.d_assign, fd[0][0]) < 1e-4);
    }
  }
  SUBCASE("soft CE partition objective w.r.t. P") {
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 7;
      std::vector<double> ce(n);
      for (auto& c : ce) c = u(rng);
      const Tensor2 P = random_stochastic(n, 2, rng);
      const auto fd = finite_diff_grad(
          [&](auto p) {
            const Tensor2& Q = p[0].tensors[0];
            std::vector<double> per(2);
            for (std::size_t e = 0; e < 2; ++e) {
              double num = 0.0, den = 0.0;
              for (std::size_t i = 0; i < n; ++i) num += Q(i, e) * ce[i], den += Q(i, e);
              per[e] = num / den;
            }
            return combine_subsets(per, {true, true}, 0.1).objective;
          },
          as_group(P), eps);
      CHECK(test::max_rel_error(soft_ce_partition_objective(ce, P, 0.1).d_assign, fd[0][0]) < 1e-4);
    }
  }
  SUBCASE("invariant objective") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + rng() % 7;
      const Tensor2 L = random_tensor(n, 2, rng, 2.0);
      const auto y = random_labels(n, rng);
      std::vector<std::size_t> m(n);
      for (auto& v : m) v = rng() % 2;
      const auto fd = finite_diff_grad([&](auto p) { return invariant_objective(p[0].tensors[0], y, m, 2, 0.1).objective; },
                                       as_group(L), eps);
      CHECK(test::max_rel_error(invariant_objective_grad(L, y, m, 2, 0.1).d_logits, fd[0][0]) < 1e-4);

      const std::vector<std::vector<std::size_t>> parts{m, std::vector<std::size_t>(n, 0)};
      const auto fd2 = finite_diff_grad(
          [&](auto p) { return multi_partition_objective(p[0].tensors[0], y, parts, 2, 0.1); }, as_group(L), eps);
      CHECK(test::max_rel_error(multi_partition_objective_grad(L, y, parts, 2, 0.1).d_logits, fd2[0][0]) < 1e-4);
    }
  }
}
