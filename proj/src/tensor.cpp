#include "upil/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "upil/errors.hpp"
#include "upil/kernels.hpp"

namespace upil {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols)
    throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         std::to_string(rows) + "x" + std::to_string(cols));
}

Tensor2 Tensor2::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged rows in Tensor2::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor2(r, c, std::move(data));
}

Tensor2 Tensor2::row_vector(std::span<const double> values) {
  return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

std::string Tensor2::shape_str() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor2 Tensor2::gather_rows(std::span<const std::size_t> indices) const {
  Tensor2 out(indices.size(), cols_);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

std::size_t ParamGroup::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

GroupGrads zeros_like(std::span<const ParamGroup> groups) {
  GroupGrads grads;
  grads.reserve(groups.size());
  for (const auto& g : groups) {
    auto& per = grads.emplace_back();
    for (const auto& t : g.tensors) per.emplace_back(t.rows(), t.cols());
  }
  return grads;
}

Tensor2 affine_forward(const Tensor2& W, const Tensor2& b, const Tensor2& X) {
  if (X.cols() != W.rows() || b.rows() != 1 || b.cols() != W.cols())
    throw DimensionError("affine_forward: X" + X.shape_str() + " W" + W.shape_str() + " b" + b.shape_str());
  Tensor2 Y(X.rows(), W.cols());
  kernels::matmul(X, W, Y);
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    auto row = Y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b(0, c);
  }
  return Y;
}

AffineGrads affine_backward(const Tensor2& W, const Tensor2& X, const Tensor2& dY, bool want_dx) {
  if (X.cols() != W.rows() || dY.cols() != W.cols() || dY.rows() != X.rows())
    throw DimensionError("affine_backward: X" + X.shape_str() + " W" + W.shape_str() + " dY" + dY.shape_str());
  AffineGrads g;
  g.dW = Tensor2(W.rows(), W.cols());
  kernels::matmul_tn(X, dY, g.dW);
  g.db = Tensor2(1, W.cols());
  for (std::size_t r = 0; r < dY.rows(); ++r)
    for (std::size_t c = 0; c < dY.cols(); ++c) g.db(0, c) += dY(r, c);
  if (want_dx) {
    g.dX = Tensor2(X.rows(), X.cols());
    kernels::matmul_nt(dY, W, g.dX);
  }
  return g;
}

Tensor2 relu(const Tensor2& X) {
  Tensor2 Y = X;
  for (double& v : Y.values()) v = v > 0.0 ? v : 0.0;
  return Y;
}

Tensor2 relu_backward(const Tensor2& pre, const Tensor2& dY) {
  Tensor2 dX = dY;
  auto p = pre.values();
  auto d = dX.values();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!(p[i] > 0.0)) d[i] = 0.0;
  return dX;
}

Tensor2 softmax_rows(const Tensor2& X) {
  Tensor2 P(X.rows(), X.cols());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto in = X.row(r);
    auto out = P.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - mx);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return P;
}

Tensor2 softmax_rows_backward(const Tensor2& P, const Tensor2& dP) {
  Tensor2 dX(P.rows(), P.cols());
  for (std::size_t r = 0; r < P.rows(); ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < P.cols(); ++c) dot += P(r, c) * dP(r, c);
    for (std::size_t c = 0; c < P.cols(); ++c) dX(r, c) = P(r, c) * (dP(r, c) - dot);
  }
  return dX;
}

namespace {
double row_norm(std::span<const double> row) {
  double s = 0.0;
  for (double v : row) s += v * v;
  return std::sqrt(s);
}
}  // namespace

Tensor2 l2_normalize_rows(const Tensor2& X, double eps) {
  Tensor2 Y = X;
  for (std::size_t r = 0; r < Y.rows(); ++r) {
    auto row = Y.row(r);
    const double n = row_norm(row);
    if (n < eps) continue;
    for (double& v : row) v /= n;
  }
  return Y;
}

Tensor2 l2_normalize_rows_backward(const Tensor2& X, const Tensor2& dY, double eps) {
  Tensor2 dX = dY;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    const auto x = X.row(r);
    const double n = row_norm(x);
    if (n < eps) continue;
    const auto g = dY.row(r);
    double dot = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) dot += x[c] * g[c];
    auto out = dX.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) out[c] = (g[c] - x[c] * dot / (n * n)) / n;
  }
  return dX;
}

GroupGrads finite_diff_grad(const std::function<double(std::span<const ParamGroup>)>& objective,
                            std::span<const ParamGroup> params, double epsilon) {
  if (!(epsilon > 0.0)) throw ConfigError("finite_diff_grad: epsilon must be positive");
  std::vector<ParamGroup> work(params.begin(), params.end());
  GroupGrads grads = zeros_like(params);
  auto eval = [&]() {
    const double v = objective(work);
    if (!std::isfinite(v)) throw EvaluationError("finite_diff_grad: objective returned a non-finite value");
    return v;
  };
  for (std::size_t g = 0; g < work.size(); ++g) {
    for (std::size_t t = 0; t < work[g].tensors.size(); ++t) {
      auto vals = work[g].tensors[t].values();
      auto out = grads[g][t].values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        const double orig = vals[i];
        vals[i] = orig + epsilon;
        const double up = eval();
        vals[i] = orig - epsilon;
        const double down = eval();
        vals[i] = orig;
        out[i] = (up - down) / (2.0 * epsilon);
      }
    }
  }
  return grads;
}

double sgd_step(std::span<ParamGroup* const> groups, const GroupGrads& grads, const SgdConfig& cfg,
                StepDirection direction) {
  if (grads.size() != groups.size()) throw DimensionError("sgd_step: gradient/group count mismatch");
  double sq = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const ParamGroup& group = *groups[g];
    if (group.frozen) continue;
    if (grads[g].size() != group.tensors.size()) throw DimensionError("sgd_step: tensor count mismatch in " + group.name);
    for (std::size_t t = 0; t < grads[g].size(); ++t) {
      if (grads[g][t].rows() != group.tensors[t].rows() || grads[g][t].cols() != group.tensors[t].cols())
        throw DimensionError("sgd_step: gradient " + grads[g][t].shape_str() + " vs parameter " +
                             group.tensors[t].shape_str() + " in group " + group.name);
      for (double v : grads[g][t].values()) sq += v * v;
    }
  }
  const double norm = std::sqrt(sq);
  double scale = cfg.lr;
  if (cfg.clip_norm && norm > *cfg.clip_norm) scale *= *cfg.clip_norm / norm;
  if (direction == StepDirection::descend) scale = -scale;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g]->frozen) continue;
    for (std::size_t t = 0; t < grads[g].size(); ++t) {
      auto p = groups[g]->tensors[t].values();
      auto d = grads[g][t].values();
      for (std::size_t i = 0; i < p.size(); ++i) p[i] += scale * d[i];
    }
  }
  return norm;
}

double sgd_step(std::span<ParamGroup> groups, const GroupGrads& grads, const SgdConfig& cfg,
                StepDirection direction) {
  std::vector<ParamGroup*> ptrs;
  ptrs.reserve(groups.size());
  for (auto& g : groups) ptrs.push_back(&g);
  return sgd_step(std::span<ParamGroup* const>(ptrs), grads, cfg, direction);
}

}  // namespace upil
