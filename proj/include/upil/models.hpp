#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "upil/tensor.hpp"

namespace upil {

struct ModelConfig {
  std::size_t feature_dim = 0;
  // Output width of each affine layer of the feature extractor, ReLU between
  // layers and none after the last. Empty means the identity extractor.
  std::vector<std::size_t> phi_widths{32, 16};
  std::size_t k = 2;

  std::size_t rep_dim() const { return phi_widths.empty() ? feature_dim : phi_widths.back(); }
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline constexpr std::size_t kNumClasses = 2;

// Feature extractor, classifier and partition head. Each group stores its
// tensors as [W0, b0, W1, b1, ...].
struct ModelBundle {
  ModelConfig config;
  ParamGroup phi;
  ParamGroup classifier;
  ParamGroup partition_head;
  std::string config_hash;

  std::array<ParamGroup*, 3> groups() { return {&phi, &classifier, &partition_head}; }
  std::array<const ParamGroup*, 3> groups() const { return {&phi, &classifier, &partition_head}; }

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

// Stable digest of the architecture; stored in checkpoints.
std::string config_hash(const ModelConfig& config);

// Glorot-uniform weights, zero biases.
ModelBundle init_bundle(const ModelConfig& config, std::uint64_t seed);

// Layer inputs and pre-activations kept for backprop through the extractor.
struct ExtractTrace {
  std::vector<Tensor2> inputs;
  std::vector<Tensor2> pre;
  Tensor2 output;
};

Tensor2 extract(const ModelBundle& bundle, const Tensor2& X);
ExtractTrace extract_traced(const ModelBundle& bundle, const Tensor2& X);
// Gradients for bundle.phi.tensors given dL/dZ.
std::vector<Tensor2> extract_backward(const ModelBundle& bundle, const ExtractTrace& trace, const Tensor2& dZ);

Tensor2 classify(const ModelBundle& bundle, const Tensor2& Z);
Tensor2 partition_logits(const ModelBundle& bundle, const Tensor2& Z);

// Row-wise argmax, ties to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor2& logits);
std::vector<int> predict_labels(const Tensor2& logits);

}  // namespace upil
