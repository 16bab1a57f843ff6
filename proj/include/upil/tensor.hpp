#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace upil {

// Dense row-major matrix of doubles.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2 row_vector(std::span<const double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::string shape_str() const;
  bool all_finite() const;

  // Rows `indices` gathered into a new tensor, in the given order.
  Tensor2 gather_rows(std::span<const std::size_t> indices) const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A named set of parameter tensors that an optimizer updates together.
struct ParamGroup {
  std::string name;
  std::vector<Tensor2> tensors;
  bool frozen = false;

  std::size_t scalar_count() const;
  friend bool operator==(const ParamGroup&, const ParamGroup&) = default;
};

// Per-group, per-tensor gradients aligned with a list of ParamGroups.
using GroupGrads = std::vector<std::vector<Tensor2>>;

GroupGrads zeros_like(std::span<const ParamGroup> groups);

// Y = X·W + b, b broadcast across rows (b is 1 × W.cols).
Tensor2 affine_forward(const Tensor2& W, const Tensor2& b, const Tensor2& X);

struct AffineGrads {
  Tensor2 dX;
  Tensor2 dW;
  Tensor2 db;
};

// Gradients of an affine layer given upstream dY. dX is skipped when `want_dx` is false.
AffineGrads affine_backward(const Tensor2& W, const Tensor2& X, const Tensor2& dY, bool want_dx = true);

Tensor2 relu(const Tensor2& X);
// dY masked by the sign of the pre-activation.
Tensor2 relu_backward(const Tensor2& pre, const Tensor2& dY);

// Row-wise softmax with max subtraction.
Tensor2 softmax_rows(const Tensor2& X);
// Vector-Jacobian product through softmax_rows, given its output P.
Tensor2 softmax_rows_backward(const Tensor2& P, const Tensor2& dP);

// Rows scaled to unit L2 norm; rows with norm < eps are copied unchanged.
Tensor2 l2_normalize_rows(const Tensor2& X, double eps = 1e-12);
Tensor2 l2_normalize_rows_backward(const Tensor2& X, const Tensor2& dY, double eps = 1e-12);

// Central finite differences of `objective` with respect to every scalar in `params`.
// Frozen groups are differentiated too; freezing is an optimizer concept.
GroupGrads finite_diff_grad(const std::function<double(std::span<const ParamGroup>)>& objective,
                            std::span<const ParamGroup> params, double epsilon);

struct SgdConfig {
  double lr = 0.05;
  std::optional<double> clip_norm = 5.0;
};

enum class StepDirection { descend, ascend };

// One SGD update of the non-frozen groups. Gradient clipping uses the global
// L2 norm over the non-frozen gradients. Returns the pre-clip norm.
double sgd_step(std::span<ParamGroup* const> groups, const GroupGrads& grads, const SgdConfig& cfg,
                StepDirection direction = StepDirection::descend);
double sgd_step(std::span<ParamGroup> groups, const GroupGrads& grads, const SgdConfig& cfg,
                StepDirection direction = StepDirection::descend);

}  // namespace upil
