#include "dlsim/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dlsim/errors.hpp"
#include "dlsim/kernels.hpp"

namespace dlsim {
namespace {

void check_params(const ModelSpec& spec, const ParamVec& params) {
  if (params.size() != spec.param_count()) {
    throw DimensionError("model expects " + std::to_string(spec.param_count()) +
                         " parameters, got " + std::to_string(params.size()));
  }
}

void check_inputs(const ModelSpec& spec, const Matrix& inputs, std::size_t rows) {
  if (inputs.cols() != spec.input_dim) {
    throw DimensionError("input width " + std::to_string(inputs.cols()) +
                         " does not match model input_dim " +
                         std::to_string(spec.input_dim));
  }
  if (inputs.rows() != rows || rows == 0) {
    throw DimensionError("batch must have at least one row and one label per row");
  }
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
  check_inputs(spec, batch.inputs, batch.labels.size());
  for (std::size_t y : batch.labels) {
    if (y >= spec.num_classes) {
      throw DimensionError("label " + std::to_string(y) + " out of range for " +
                           std::to_string(spec.num_classes) + " classes");
    }
  }
}

double activate(Activation act, double a) {
  return act == Activation::kRelu ? std::max(0.0, a) : std::tanh(a);
}

// Derivative expressed through the pre-activation a and output h.
double activate_grad(Activation act, double a, double h) {
  return act == Activation::kRelu ? (a > 0.0 ? 1.0 : 0.0) : 1.0 - h * h;
}

// Dense layer: out[r] = dot(W[r], x) + b[r].
void dense(const double* w, const double* b, std::span<const double> x,
           std::span<double> out) {
  const auto& k = kernels::active();
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = k.dot(w + r * x.size(), x.data(), x.size()) + b[r];
  }
}

struct Forward {
  std::vector<double> pre;     // hidden pre-activation (mlp)
  std::vector<double> hidden;  // hidden activation (mlp)
  std::vector<double> logits;
};

Forward forward(const ModelSpec& spec, const ParamVec& params,
                std::span<const double> x) {
  const ParamLayout L = ParamLayout::of(spec);
  const double* p = params.data();
  Forward f;
  f.logits.resize(spec.num_classes);
  if (spec.kind == ModelKind::kLinearSoftmax) {
    dense(p + L.w1, p + L.b1, x, f.logits);
    return f;
  }
  f.pre.resize(spec.hidden_dim);
  f.hidden.resize(spec.hidden_dim);
  dense(p + L.w1, p + L.b1, x, f.pre);
  for (std::size_t j = 0; j < spec.hidden_dim; ++j) {
    f.hidden[j] = activate(spec.activation, f.pre[j]);
  }
  dense(p + L.w2, p + L.b2, f.hidden, f.logits);
  return f;
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// Accumulates the gradient of one sample whose logit gradient is dz (already
// divided by the batch size) into grad.
void backward(const ModelSpec& spec, const ParamVec& params, std::span<const double> x,
              const Forward& f, std::span<const double> dz, double* grad) {
  const ParamLayout L = ParamLayout::of(spec);
  const auto& k = kernels::active();
  const double* p = params.data();
  if (spec.kind == ModelKind::kLinearSoftmax) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      k.axpy(dz[c], x.data(), grad + L.w1 + c * spec.input_dim, spec.input_dim);
      grad[L.b1 + c] += dz[c];
    }
    return;
  }
  const std::size_t H = spec.hidden_dim;
  std::vector<double> dh(H, 0.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    k.axpy(dz[c], f.hidden.data(), grad + L.w2 + c * H, H);
    grad[L.b2 + c] += dz[c];
    k.axpy(dz[c], p + L.w2 + c * H, dh.data(), H);
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double da = dh[j] * activate_grad(spec.activation, f.pre[j], f.hidden[j]);
    if (da == 0.0) continue;
    k.axpy(da, x.data(), grad + L.w1 + j * spec.input_dim, spec.input_dim);
    grad[L.b1 + j] += da;
  }
}

}  // namespace

std::size_t ModelSpec::param_count() const {
  if (kind == ModelKind::kLinearSoftmax) return num_classes * input_dim + num_classes;
  return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw DimensionError("model input_dim must be positive");
  if (num_classes < 2) throw DimensionError("model needs at least two classes");
  if (kind == ModelKind::kMlp1Hidden && hidden_dim == 0) {
    throw DimensionError("mlp-1-hidden needs a positive hidden_dim");
  }
}

ModelSpec ModelSpec::linear(std::size_t input_dim, std::size_t num_classes) {
  ModelSpec s;
  s.kind = ModelKind::kLinearSoftmax;
  s.input_dim = input_dim;
  s.num_classes = num_classes;
  s.validate();
  return s;
}

ModelSpec ModelSpec::mlp(std::size_t input_dim, std::size_t hidden_dim,
                         std::size_t num_classes, Activation act) {
  ModelSpec s;
  s.kind = ModelKind::kMlp1Hidden;
  s.input_dim = input_dim;
  s.hidden_dim = hidden_dim;
  s.num_classes = num_classes;
  s.activation = act;
  s.validate();
  return s;
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::kLinearSoftmax ? "linear-softmax" : "mlp-1-hidden";
}

std::string to_string(Activation act) {
  return act == Activation::kRelu ? "relu" : "tanh";
}

ParamLayout ParamLayout::of(const ModelSpec& spec) {
  ParamLayout L;
  if (spec.kind == ModelKind::kLinearSoftmax) {
    L.w1 = 0;
    L.b1 = spec.num_classes * spec.input_dim;
    L.w2 = L.b2 = L.b1 + spec.num_classes;
    return L;
  }
  L.w1 = 0;
  L.b1 = spec.hidden_dim * spec.input_dim;
  L.w2 = L.b1 + spec.hidden_dim;
  L.b2 = L.w2 + spec.num_classes * spec.hidden_dim;
  return L;
}

ParamVec init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParamVec params(spec.param_count());
  auto v = params.mutable_values();
  const ParamLayout L = ParamLayout::of(spec);
  const double s_in = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  if (spec.kind == ModelKind::kLinearSoftmax) {
    for (double& x : v) x = rng.uniform(-s_in, s_in);
    return params;
  }
  const double s_hidden = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = i < L.w2 ? s_in : s_hidden;
    v[i] = rng.uniform(-s, s);
  }
  return params;
}

std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

std::vector<double> logits(const ModelSpec& spec, const ParamVec& params,
                           std::span<const double> x) {
  check_params(spec, params);
  if (x.size() != spec.input_dim) throw DimensionError("input width mismatch");
  return forward(spec, params, x).logits;
}

std::vector<double> predict_proba(const ModelSpec& spec, const ParamVec& params,
                                  std::span<const double> x) {
  return softmax(logits(spec, params, x));
}

double sample_loss(const ModelSpec& spec, const ParamVec& params,
                   std::span<const double> x, std::size_t label) {
  const auto z = logits(spec, params, x);
  if (label >= spec.num_classes) throw DimensionError("label out of range");
  return log_sum_exp(z) - z[label];
}

double loss(const ModelSpec& spec, const ParamVec& params, const Batch& batch) {
  check_params(spec, params);
  check_batch(spec, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto f = forward(spec, params, batch.inputs.row(i));
    total += log_sum_exp(f.logits) - f.logits[batch.labels[i]];
  }
  return total / static_cast<double>(batch.size());
}

ParamVec gradient(const ModelSpec& spec, const ParamVec& params, const Batch& batch) {
  check_params(spec, params);
  check_batch(spec, batch);
  std::vector<double> grad(spec.param_count(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto x = batch.inputs.row(i);
    const auto f = forward(spec, params, x);
    auto dz = softmax(f.logits);
    dz[batch.labels[i]] -= 1.0;
    for (double& v : dz) v *= inv_b;
    backward(spec, params, x, f, dz, grad.data());
  }
  return ParamVec(std::move(grad));
}

ParamVec gradient_soft(const ModelSpec& spec, const ParamVec& params,
                       const Matrix& inputs, const Matrix& targets) {
  check_params(spec, params);
  check_inputs(spec, inputs, targets.rows());
  if (targets.cols() != spec.num_classes) {
    throw DimensionError("soft targets need one column per class");
  }
  std::vector<double> grad(spec.param_count(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(inputs.rows());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto x = inputs.row(i);
    const auto f = forward(spec, params, x);
    auto dz = softmax(f.logits);
    const auto t = targets.row(i);
    double mass = 0.0;
    for (double v : t) mass += v;
    // d/dz of -sum_k t_k log p_k is mass * p - t.
    for (std::size_t c = 0; c < dz.size(); ++c) dz[c] = (mass * dz[c] - t[c]) * inv_b;
    backward(spec, params, x, f, dz, grad.data());
  }
  return ParamVec(std::move(grad));
}

ParamVec sgd_step(const ModelSpec& spec, const ParamVec& params, const Batch& batch,
                  double lr, std::size_t steps) {
  return sgd_step(spec, params, [&batch] { return batch; }, lr, steps);
}

ParamVec sgd_step(const ModelSpec& spec, const ParamVec& params,
                  const BatchSampler& sampler, double lr, std::size_t steps) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step requires lr > 0");
  if (steps == 0) throw std::invalid_argument("sgd_step requires steps >= 1");
  ParamVec theta = params;
  for (std::size_t s = 0; s < steps; ++s) {
    theta.add_scaled(-lr, gradient(spec, theta, sampler()));
  }
  return theta;
}

double accuracy(const ModelSpec& spec, const ParamVec& params, const Matrix& inputs,
                std::span<const std::size_t> labels) {
  check_params(spec, params);
  check_inputs(spec, inputs, labels.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto z = forward(spec, params, inputs.row(i)).logits;
    const auto best = static_cast<std::size_t>(
        std::max_element(z.begin(), z.end()) - z.begin());
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace dlsim
