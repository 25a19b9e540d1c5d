#include "loldu/model.hpp"

#include <cmath>

#include "loldu/hash.hpp"

namespace loldu::harness {

void add_bias_rows(DenseMatrix& z, const std::vector<double>& bias) {
  for (std::size_t b = 0; b < z.rows(); ++b) {
    auto row = z.row(b);
    for (std::size_t j = 0; j < bias.size(); ++j) row[j] += bias[j];
  }
}

DenseMatrix apply_activation(Activation act, const DenseMatrix& z) {
  DenseMatrix out = z;
  if (act == Activation::Tanh) {
    for (double& v : out.data()) v = std::tanh(v);
  } else {
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  }
  return out;
}

ToyModel make_model(const ModelSpec& spec, SplitMix64& rng) {
  if (spec.dims.size() < 2) throw ShapeMismatch("model needs >= 2 dims");
  ToyModel model;
  model.activation = spec.activation;
  model.loss = spec.loss;
  for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
    LinearLayer layer;
    const std::size_t fan_in = spec.dims[l];
    layer.weight = DenseMatrix(spec.dims[l + 1], fan_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : layer.weight.data()) v = rng.normal(0.0, scale);
    layer.bias.assign(spec.dims[l + 1], 0.0);
    model.layers.push_back(std::move(layer));
  }
  if (spec.adapted_layers.empty()) {
    for (std::size_t l = 0; l + 1 < model.layers.size(); ++l)
      model.adapted_layers.push_back(l);
  } else {
    model.adapted_layers = spec.adapted_layers;
  }
  return model;
}

ForwardTrace model_forward(const ToyModel& model, const DenseMatrix& x) {
  ForwardTrace trace;
  DenseMatrix current = x;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    trace.inputs.push_back(current);
    DenseMatrix z = matmul_nt(current, model.layers[l].weight);
    add_bias_rows(z, model.layers[l].bias);
    trace.preacts.push_back(z);
    if (l + 1 < model.layers.size())
      current = apply_activation(model.activation, z);
    else
      current = std::move(z);
  }
  trace.output = std::move(current);
  return trace;
}

DenseMatrix model_predict(const ToyModel& model, const DenseMatrix& x) {
  return model_forward(model, x).output;
}

double loss_value(LossKind kind, const DenseMatrix& pred,
                  const DenseMatrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ShapeMismatch("loss: prediction/target shapes");
  const double batch = static_cast<double>(pred.rows());
  if (kind == LossKind::Mse) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.data().size(); ++i) {
      const double d = pred.data()[i] - target.data()[i];
      s += d * d;
    }
    return s / (batch * static_cast<double>(pred.cols()));
  }
  // softmax cross entropy, targets one-hot
  double s = 0.0;
  for (std::size_t b = 0; b < pred.rows(); ++b) {
    auto row = pred.row(b);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : row) denom += std::exp(v - mx);
    for (std::size_t j = 0; j < pred.cols(); ++j)
      if (target(b, j) != 0.0)
        s -= target(b, j) * (row[j] - mx - std::log(denom));
  }
  return s / batch;
}

DenseMatrix loss_grad(LossKind kind, const DenseMatrix& pred,
                      const DenseMatrix& target) {
  DenseMatrix g(pred.rows(), pred.cols());
  const double batch = static_cast<double>(pred.rows());
  if (kind == LossKind::Mse) {
    const double scale = 2.0 / (batch * static_cast<double>(pred.cols()));
    for (std::size_t i = 0; i < g.data().size(); ++i)
      g.data()[i] = scale * (pred.data()[i] - target.data()[i]);
    return g;
  }
  for (std::size_t b = 0; b < pred.rows(); ++b) {
    auto row = pred.row(b);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t j = 0; j < pred.cols(); ++j)
      denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < pred.cols(); ++j)
      g(b, j) = (std::exp(row[j] - mx) / denom - target(b, j)) / batch;
  }
  return g;
}

double accuracy(const DenseMatrix& pred, const DenseMatrix& target) {
  std::size_t hits = 0;
  for (std::size_t b = 0; b < pred.rows(); ++b) {
    std::size_t pi = 0, ti = 0;
    for (std::size_t j = 1; j < pred.cols(); ++j) {
      if (pred(b, j) > pred(b, pi)) pi = j;
      if (target(b, j) > target(b, ti)) ti = j;
    }
    hits += pi == ti;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.rows());
}

LayerGradients layer_gradients(const DenseMatrix& input,
                               const DenseMatrix& dz) {
  LayerGradients g;
  g.weight = matmul_tn(dz, input);  // out x in
  g.bias.assign(dz.cols(), 0.0);
  for (std::size_t b = 0; b < dz.rows(); ++b)
    for (std::size_t j = 0; j < dz.cols(); ++j) g.bias[j] += dz(b, j);
  return g;
}

DenseMatrix layer_input_gradients(const LinearLayer& layer,
                                  const DenseMatrix& dz) {
  return matmul(dz, layer.weight);
}

DenseMatrix activation_backward(Activation act, const DenseMatrix& preact,
                                const DenseMatrix& dact) {
  DenseMatrix dz = dact;
  if (act == Activation::Tanh) {
    for (std::size_t i = 0; i < dz.data().size(); ++i) {
      const double t = std::tanh(preact.data()[i]);
      dz.data()[i] *= 1.0 - t * t;
    }
  } else {
    for (std::size_t i = 0; i < dz.data().size(); ++i)
      if (preact.data()[i] <= 0.0) dz.data()[i] = 0.0;
  }
  return dz;
}

void AdamBuffer::apply(std::span<double> params, std::span<const double> grads,
                       double lr) {
  if (params.size() != grads.size())
    throw ShapeMismatch("AdamBuffer: param/grad length");
  if (m.size() != params.size()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

void sgd_apply(std::span<double> params, std::span<const double> grads,
               double lr) {
  if (params.size() != grads.size())
    throw ShapeMismatch("sgd_apply: param/grad length");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

std::uint64_t model_checksum(const ToyModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& layer : model.layers) {
    h = hash_doubles(layer.weight.data(), h);
    h = hash_doubles(layer.bias, h);
  }
  return h;
}

}  // namespace loldu::harness
