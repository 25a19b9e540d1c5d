#pragma once

#include <cstdint>
#include <vector>

#include "loldu/matrix.hpp"
#include "loldu/rng.hpp"

namespace loldu::harness {

enum class Activation { Tanh, Relu };
enum class LossKind { Mse, SoftmaxCrossEntropy };

struct LinearLayer {
  DenseMatrix weight;        // out x in
  std::vector<double> bias;  // out
};

// Fixed-vocabulary feedforward net: linear layers with an elementwise
// nonlinearity between them (none after the last). Gradients are
// hand-derived reverse mode; no general autodiff.
struct ToyModel {
  std::vector<LinearLayer> layers;
  Activation activation = Activation::Tanh;
  LossKind loss = LossKind::Mse;
  // Layers flagged for adapter attachment during fine-tuning.
  std::vector<std::size_t> adapted_layers;

  std::size_t in_dim() const { return layers.front().weight.cols(); }
  std::size_t out_dim() const { return layers.back().weight.rows(); }
};

struct ModelSpec {
  std::vector<std::size_t> dims;  // d_in, hidden..., d_out
  Activation activation = Activation::Tanh;
  LossKind loss = LossKind::Mse;
  std::vector<std::size_t> adapted_layers;  // default: all but last
};

// Weights ~ N(0, 1/sqrt(fan_in)), biases zero.
ToyModel make_model(const ModelSpec& spec, SplitMix64& rng);

// Batched forward (rows are samples). Caches per-layer inputs and
// pre-activations for the backward pass.
struct ForwardTrace {
  std::vector<DenseMatrix> inputs;    // input to each layer
  std::vector<DenseMatrix> preacts;   // pre-activation of each layer
  DenseMatrix output;                 // final layer output (no activation)
};

ForwardTrace model_forward(const ToyModel& model, const DenseMatrix& x);
DenseMatrix model_predict(const ToyModel& model, const DenseMatrix& x);

DenseMatrix apply_activation(Activation act, const DenseMatrix& z);
void add_bias_rows(DenseMatrix& z, const std::vector<double>& bias);

double loss_value(LossKind kind, const DenseMatrix& pred,
                  const DenseMatrix& target);
// dL/dpred for the mean-over-batch loss.
DenseMatrix loss_grad(LossKind kind, const DenseMatrix& pred,
                      const DenseMatrix& target);
// Fraction of rows where argmax(pred) == argmax(target).
double accuracy(const DenseMatrix& pred, const DenseMatrix& target);

// Dense-parameter gradients for one layer given dL/d(preact).
struct LayerGradients {
  DenseMatrix weight;
  std::vector<double> bias;
};

LayerGradients layer_gradients(const DenseMatrix& input,
                               const DenseMatrix& dz);
// dL/d(input) = dz * W.
DenseMatrix layer_input_gradients(const LinearLayer& layer,
                                  const DenseMatrix& dz);
// Pull dL/d(activation output) back through the nonlinearity.
DenseMatrix activation_backward(Activation act, const DenseMatrix& preact,
                                const DenseMatrix& dact);

// Adam over a flat parameter buffer; used for dense weights/biases in
// full fine-tuning, linear probing, LoRA factors and heads.
struct AdamBuffer {
  std::vector<double> m, v;
  std::uint64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void apply(std::span<double> params, std::span<const double> grads,
             double lr);
};

// Plain SGD on a flat buffer.
void sgd_apply(std::span<double> params, std::span<const double> grads,
               double lr);

std::uint64_t model_checksum(const ToyModel& model);

}  // namespace loldu::harness
