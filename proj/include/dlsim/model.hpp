#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dlsim/matrix.hpp"
#include "dlsim/param_vec.hpp"
#include "dlsim/rng.hpp"

namespace dlsim {

enum class ModelKind { kLinearSoftmax, kMlp1Hidden };
enum class Activation { kRelu, kTanh };

// Small differentiable classifier.
//
// Parameter layout (part of the public contract, indexed by the inversion
// attack and the override payloads):
//   linear-softmax: W[num_classes x input_dim] row-major, then b[num_classes]
//   mlp-1-hidden:   W1[hidden x input_dim], b1[hidden],
//                   W2[num_classes x hidden], b2[num_classes]
struct ModelSpec {
  ModelKind kind = ModelKind::kLinearSoftmax;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden_dim = 0;  // mlp only
  Activation activation = Activation::kRelu;

  std::size_t param_count() const;
  void validate() const;

  static ModelSpec linear(std::size_t input_dim, std::size_t num_classes);
  static ModelSpec mlp(std::size_t input_dim, std::size_t hidden_dim,
                       std::size_t num_classes, Activation act = Activation::kTanh);
};

std::string to_string(ModelKind kind);
std::string to_string(Activation act);

// Offsets of the parameter blocks inside a flat ParamVec.
struct ParamLayout {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;  // w2/b2 unused for linear
  static ParamLayout of(const ModelSpec& spec);
};

// A mini-batch: one input row per sample, hard class labels.
struct Batch {
  Matrix inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

// Common initialization: per-coordinate uniform in [-s, s], s = 1/sqrt(fan_in)
// of the layer the coordinate belongs to.
ParamVec init_params(const ModelSpec& spec, Rng& rng);

std::vector<double> logits(const ModelSpec& spec, const ParamVec& params,
                           std::span<const double> x);
std::vector<double> predict_proba(const ModelSpec& spec, const ParamVec& params,
                                  std::span<const double> x);
std::vector<double> softmax(std::span<const double> z);

// Mean cross-entropy over the batch.
double loss(const ModelSpec& spec, const ParamVec& params, const Batch& batch);
double sample_loss(const ModelSpec& spec, const ParamVec& params,
                   std::span<const double> x, std::size_t label);

// Analytic gradient of the mean cross-entropy.
ParamVec gradient(const ModelSpec& spec, const ParamVec& params, const Batch& batch);

// Gradient of mean soft-label cross-entropy -sum_k t_k log p_k. `targets` has
// one probability row per input row.
ParamVec gradient_soft(const ModelSpec& spec, const ParamVec& params,
                       const Matrix& inputs, const Matrix& targets);

using BatchSampler = std::function<Batch()>;

// `steps` successive gradient steps on the same batch.
ParamVec sgd_step(const ModelSpec& spec, const ParamVec& params, const Batch& batch,
                  double lr, std::size_t steps = 1);

// `steps` successive gradient steps, drawing a fresh batch from `sampler`
// before each one.
ParamVec sgd_step(const ModelSpec& spec, const ParamVec& params,
                  const BatchSampler& sampler, double lr, std::size_t steps);

double accuracy(const ModelSpec& spec, const ParamVec& params, const Matrix& inputs,
                std::span<const std::size_t> labels);

}  // namespace dlsim
