#include "upil/models.hpp"

#include <cmath>
#include <random>

#include "upil/digest.hpp"
#include "upil/errors.hpp"

namespace upil {

void ModelConfig::validate() const {
  if (feature_dim == 0) throw ConfigError("model config: feature_dim must be positive");
  for (auto w : phi_widths)
    if (w == 0) throw ConfigError("model config: layer widths must be positive");
  if (k < 2) throw ConfigError("model config: k must be >= 2");
}

std::string config_hash(const ModelConfig& config) {
  std::string text = "upil-model;d=" + std::to_string(config.feature_dim) + ";k=" + std::to_string(config.k) + ";phi=";
  for (auto w : config.phi_widths) text += std::to_string(w) + ",";
  return sha256_hex(text).substr(0, 16);
}

namespace {

void push_affine(ParamGroup& group, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor2 W(fan_in, fan_out);
  for (double& v : W.values()) v = dist(rng);
  group.tensors.push_back(std::move(W));
  group.tensors.emplace_back(1, fan_out);
}

void check_input(const char* what, const Tensor2& X, std::size_t expected) {
  if (X.cols() != expected)
    throw DimensionError(std::string(what) + ": input " + X.shape_str() + " expects " + std::to_string(expected) +
                         " columns");
}

}  // namespace

ModelBundle init_bundle(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle b;
  b.config = config;
  b.config_hash = config_hash(config);
  b.phi.name = "phi";
  b.classifier.name = "classifier";
  b.partition_head.name = "partition_head";
  std::mt19937_64 rng(seed);
  std::size_t in = config.feature_dim;
  for (auto w : config.phi_widths) {
    push_affine(b.phi, in, w, rng);
    in = w;
  }
  push_affine(b.classifier, in, kNumClasses, rng);
  push_affine(b.partition_head, in, config.k, rng);
  return b;
}

ExtractTrace extract_traced(const ModelBundle& bundle, const Tensor2& X) {
  check_input("extract", X, bundle.config.feature_dim);
  ExtractTrace trace;
  Tensor2 h = X;
  const std::size_t layers = bundle.phi.tensors.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    Tensor2 pre = affine_forward(bundle.phi.tensors[2 * l], bundle.phi.tensors[2 * l + 1], h);
    trace.inputs.push_back(std::move(h));
    h = (l + 1 < layers) ? relu(pre) : pre;
    trace.pre.push_back(std::move(pre));
  }
  trace.output = std::move(h);
  return trace;
}

Tensor2 extract(const ModelBundle& bundle, const Tensor2& X) { return extract_traced(bundle, X).output; }

std::vector<Tensor2> extract_backward(const ModelBundle& bundle, const ExtractTrace& trace, const Tensor2& dZ) {
  const std::size_t layers = bundle.phi.tensors.size() / 2;
  std::vector<Tensor2> grads(bundle.phi.tensors.size());
  Tensor2 d = dZ;
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) d = relu_backward(trace.pre[l], d);
    AffineGrads g = affine_backward(bundle.phi.tensors[2 * l], trace.inputs[l], d, l > 0);
    grads[2 * l] = std::move(g.dW);
    grads[2 * l + 1] = std::move(g.db);
    d = std::move(g.dX);
  }
  return grads;
}

Tensor2 classify(const ModelBundle& bundle, const Tensor2& Z) {
  check_input("classify", Z, bundle.config.rep_dim());
  return affine_forward(bundle.classifier.tensors[0], bundle.classifier.tensors[1], Z);
}

Tensor2 partition_logits(const ModelBundle& bundle, const Tensor2& Z) {
  check_input("partition_logits", Z, bundle.config.rep_dim());
  return affine_forward(bundle.partition_head.tensors[0], bundle.partition_head.tensors[1], Z);
}

std::vector<std::size_t> argmax_rows(const Tensor2& logits) {
  std::vector<std::size_t> out(logits.rows(), 0);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[r] = best;
  }
  return out;
}

std::vector<int> predict_labels(const Tensor2& logits) {
  if (logits.cols() != kNumClasses) throw DimensionError("predict_labels: logits " + logits.shape_str());
  std::vector<int> out;
  out.reserve(logits.rows());
  for (auto c : argmax_rows(logits)) out.push_back(static_cast<int>(c));
  return out;
}

}  // namespace upil
