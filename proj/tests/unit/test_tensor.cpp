#include <doctest.h>

#include <cmath>
#include <random>

#include "support.hpp"
#include "upil/errors.hpp"
#include "upil/kernels.hpp"
#include "upil/tensor.hpp"

using namespace upil;
using upil::test::bitwise_equal;
using upil::test::random_tensor;

TEST_CASE("affine_forward hand cases") {
  const Tensor2 I = Tensor2::from_rows({{1, 0}, {0, 1}});
  CHECK(affine_forward(I, Tensor2(1, 2), Tensor2::from_rows({{3, 4}})) == Tensor2::from_rows({{3, 4}}));

  const Tensor2 y = affine_forward(Tensor2::from_rows({{1}, {1}}), Tensor2::from_rows({{1}}), Tensor2::from_rows({{2, 3}}));
  CHECK(y == Tensor2::from_rows({{6}}));

  std::mt19937_64 rng(3);
  const Tensor2 X = random_tensor(4, 3, rng);
  const Tensor2 Y = affine_forward(Tensor2(3, 2), Tensor2::from_rows({{5, 5}}), X);
  for (std::size_t r = 0; r < Y.rows(); ++r) CHECK(Y.row(r)[0] == 5.0);
}

TEST_CASE("affine_forward shape mismatch names both shapes") {
  try {
    affine_forward(Tensor2(3, 2), Tensor2(1, 2), Tensor2(1, 4));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x4]") != std::string::npos);
    CHECK(msg.find("[3x2]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows") {
  auto P = softmax_rows(Tensor2::from_rows({{0, 0}}));
  CHECK(P(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  P = softmax_rows(Tensor2::from_rows({{1000, 1000}}));
  CHECK(P(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(P.all_finite());
  P = softmax_rows(Tensor2::from_rows({{std::log(1.0), std::log(3.0)}}));
  CHECK(std::abs(P(0, 0) - 0.25) < 1e-12);
  CHECK(std::abs(P(0, 1) - 0.75) < 1e-12);
}

TEST_CASE("softmax_rows rows sum to one and ignore per-row shifts") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor2 X = random_tensor(5, 4, rng, 3.0);
    const Tensor2 P = softmax_rows(X);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (double v : P.row(r)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    for (std::size_t r = 0; r < 5; ++r)
      for (double& v : X.row(r)) v += 7.0 * static_cast<double>(r) - 3.0;
    CHECK(test::max_rel_error(softmax_rows(X), P, 1.0) < 1e-12);
  }
}

TEST_CASE("l2_normalize_rows") {
  const Tensor2 Y = l2_normalize_rows(Tensor2::from_rows({{3, 4}}));
  CHECK(std::abs(Y(0, 0) - 0.6) < 1e-15);
  CHECK(std::abs(Y(0, 1) - 0.8) < 1e-15);
  CHECK(l2_normalize_rows(Tensor2::from_rows({{0, 0}}), 1e-12) == Tensor2::from_rows({{0, 0}}));
  const Tensor2 unit = Tensor2::from_rows({{0.6, 0.8}});
  CHECK(test::max_rel_error(l2_normalize_rows(unit), unit, 1.0) < 1e-12);
}

namespace {
ParamGroup scalar_group(double v) { return {"theta", {Tensor2::from_rows({{v}})}, false}; }
}  // namespace

TEST_CASE("finite_diff_grad closed forms") {
  const std::vector<ParamGroup> theta{scalar_group(3.0)};
  auto sq = [](std::span<const ParamGroup> p) {
    const double t = p[0].tensors[0](0, 0);
    return t * t;
  };
  CHECK(std::abs(finite_diff_grad(sq, theta, 1e-5)[0][0](0, 0) - 6.0) < 1e-6);

  std::mt19937_64 rng(5);
  const std::vector<ParamGroup> many{{"a", {random_tensor(2, 3, rng), random_tensor(1, 3, rng)}, false},
                                     {"b", {random_tensor(3, 1, rng)}, true}};
  const auto zero = finite_diff_grad([](std::span<const ParamGroup>) { return 4.2; }, many, 1e-5);
  const auto ones = finite_diff_grad(
      [](std::span<const ParamGroup> p) {
        double s = 0.0;
        for (const auto& g : p)
          for (const auto& t : g.tensors)
            for (double v : t.values()) s += v;
        return s;
      },
      many, 1e-5);
  for (std::size_t g = 0; g < many.size(); ++g)
    for (std::size_t t = 0; t < many[g].tensors.size(); ++t) {
      for (double v : zero[g][t].values()) CHECK(std::abs(v) < 1e-9);
      for (double v : ones[g][t].values()) CHECK(std::abs(v - 1.0) < 1e-9);
    }
}

TEST_CASE("finite_diff_grad rejects non-finite objectives") {
  const std::vector<ParamGroup> theta{scalar_group(1.0)};
  CHECK_THROWS_AS(finite_diff_grad([](std::span<const ParamGroup>) { return std::nan(""); }, theta, 1e-5),
                  EvaluationError);
  CHECK_THROWS_AS(finite_diff_grad([](std::span<const ParamGroup>) { return 0.0; }, theta, 0.0), ConfigError);
}

TEST_CASE("layer gradients match finite differences") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor2 X = random_tensor(5, 4, rng);
    const Tensor2 G = random_tensor(5, 3, rng);  // upstream weights of a linear read-out
    const std::vector<ParamGroup> params{{"layer", {random_tensor(4, 3, rng), random_tensor(1, 3, rng)}, false}};
    auto objective = [&](std::span<const ParamGroup> p) {
      const Tensor2 pre = affine_forward(p[0].tensors[0], p[0].tensors[1], X);
      const Tensor2 out = l2_normalize_rows(softmax_rows(relu(pre)));
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * G.values()[i];
      return s;
    };
    const auto fd = finite_diff_grad(objective, params, 1e-5);

    const Tensor2 pre = affine_forward(params[0].tensors[0], params[0].tensors[1], X);
    const Tensor2 act = relu(pre);
    const Tensor2 P = softmax_rows(act);
    const Tensor2 dP = l2_normalize_rows_backward(P, G);
    const Tensor2 dAct = softmax_rows_backward(P, dP);
    const Tensor2 dPre = relu_backward(pre, dAct);
    const AffineGrads g = affine_backward(params[0].tensors[0], X, dPre);
    CHECK(test::max_rel_error(g.dW, fd[0][0]) < 1e-4);
    CHECK(test::max_rel_error(g.db, fd[0][1]) < 1e-4);
  }
}

TEST_CASE("sgd_step skips frozen groups and clips the global norm") {
  std::vector<ParamGroup> groups{{"a", {Tensor2::from_rows({{1, 1}})}, false},
                                 {"b", {Tensor2::from_rows({{2}})}, true}};
  const ParamGroup frozen_before = groups[1];
  GroupGrads grads{{Tensor2::from_rows({{30, 40}})}, {Tensor2::from_rows({{100}})}};
  const double norm = sgd_step(groups, grads, {0.1, 5.0});
  CHECK(norm == doctest::Approx(50.0));
  // Clipped to norm 5: step = 0.1 * (3, 4).
  CHECK(groups[0].tensors[0](0, 0) == doctest::Approx(1.0 - 0.3));
  CHECK(groups[0].tensors[0](0, 1) == doctest::Approx(1.0 - 0.4));
  CHECK(bitwise_equal(groups[1], frozen_before));

  sgd_step(groups, grads, {0.01, std::nullopt}, StepDirection::ascend);
  CHECK(groups[0].tensors[0](0, 0) == doctest::Approx(0.7 + 0.3));
}

TEST_CASE("parallel kernels agree bitwise with the serial reference") {
  std::mt19937_64 rng(99);
  for (auto [m, k, n] : {std::tuple{1, 1, 1}, {7, 5, 3}, {64, 33, 17}, {300, 16, 32}}) {
    const Tensor2 A = random_tensor(m, k, rng);
    const Tensor2 B = random_tensor(k, n, rng);
    Tensor2 C1(m, n), C2(m, n);
    kernels::matmul(A, B, C1);
    kernels::serial::matmul(A, B, C2);
    CHECK(bitwise_equal(C1, C2));

    const Tensor2 At = random_tensor(k, m, rng);
    Tensor2 D1(m, n), D2(m, n);
    kernels::matmul_tn(At, B, D1);
    kernels::serial::matmul_tn(At, B, D2);
    CHECK(bitwise_equal(D1, D2));

    const Tensor2 Bt = random_tensor(n, k, rng);
    Tensor2 E1(m, n), E2(m, n);
    kernels::matmul_nt(A, Bt, E1);
    kernels::serial::matmul_nt(A, Bt, E2);
    CHECK(bitwise_equal(E1, E2));

    // Against a naive triple loop.
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) {
        double s = 0.0;
        for (int i = 0; i < k; ++i) s += A(r, i) * B(i, c);
        CHECK(std::abs(C1(r, c) - s) <= 1e-12 * (1.0 + std::abs(s)));
      }
  }
}

TEST_CASE("parallel mask argmax matches serial, including ties") {
  auto score = [](std::uint64_t mask) { return static_cast<double>(std::popcount(mask) % 5); };
  for (std::uint64_t count : {1ULL, 7ULL, 1024ULL, 5000ULL, 1ULL << 15}) {
    const auto a = kernels::argmax_over_masks(count, score);
    const auto b = kernels::serial::argmax_over_masks(count, score);
    CHECK(a.mask == b.mask);
    CHECK(a.score == b.score);
    std::uint64_t first = 0;
    double best = -1.0;
    for (std::uint64_t m = 0; m < count; ++m)
      if (score(m) > best) best = score(m), first = m;
    CHECK(a.mask == first);
  }
}
