#include "doctest.h"
#include "loldu/model.hpp"
#include "support.hpp"

using namespace loldu;
using namespace loldu::harness;
using namespace testsupport;

namespace {

ToyModel tiny_model(SplitMix64& rng, LossKind loss,
                    Activation act = Activation::Tanh) {
  ModelSpec spec;
  spec.dims = {3, 4, 2};
  spec.activation = act;
  spec.loss = loss;
  return make_model(spec, rng);
}

double model_loss(const ToyModel& m, const DenseMatrix& x,
                  const DenseMatrix& y) {
  return loss_value(m.loss, model_predict(m, x), y);
}

}  // namespace

TEST_CASE("make_model shapes and determinism") {
  SplitMix64 rng1(1), rng2(1);
  auto m1 = tiny_model(rng1, LossKind::Mse);
  auto m2 = tiny_model(rng2, LossKind::Mse);
  CHECK(m1.layers.size() == 2);
  CHECK(m1.layers[0].weight.rows() == 4);
  CHECK(m1.layers[0].weight.cols() == 3);
  CHECK(m1.adapted_layers == std::vector<std::size_t>{0});
  CHECK(model_checksum(m1) == model_checksum(m2));
}

TEST_CASE("mse loss and gradient hand values") {
  DenseMatrix pred(1, 2, {1.0, 2.0});
  DenseMatrix target(1, 2, {0.0, 0.0});
  CHECK(loss_value(LossKind::Mse, pred, target) ==
        doctest::Approx((1.0 + 4.0) / 2.0));
  auto g = loss_grad(LossKind::Mse, pred, target);
  CHECK(g(0, 0) == doctest::Approx(1.0));  // 2*(1-0)/(1*2)
  CHECK(g(0, 1) == doctest::Approx(2.0));
}

TEST_CASE("cross entropy matches a hand-computed softmax") {
  DenseMatrix pred(1, 3, {1.0, 0.0, -1.0});
  DenseMatrix target(1, 3, {1.0, 0.0, 0.0});
  const double denom = std::exp(1.0) + 1.0 + std::exp(-1.0);
  CHECK(loss_value(LossKind::SoftmaxCrossEntropy, pred, target) ==
        doctest::Approx(-std::log(std::exp(1.0) / denom)));
  auto g = loss_grad(LossKind::SoftmaxCrossEntropy, pred, target);
  CHECK(g(0, 0) == doctest::Approx(std::exp(1.0) / denom - 1.0));
  CHECK(g(0, 1) == doctest::Approx(1.0 / denom));
}

TEST_CASE("accuracy counts argmax matches") {
  DenseMatrix pred(2, 2, {0.9, 0.1, 0.2, 0.8});
  DenseMatrix target(2, 2, {1.0, 0.0, 1.0, 0.0});
  CHECK(accuracy(pred, target) == doctest::Approx(0.5));
}

TEST_CASE("backprop matches finite differences on every parameter") {
  SplitMix64 rng(5);
  for (LossKind loss : {LossKind::Mse, LossKind::SoftmaxCrossEntropy}) {
    auto model = tiny_model(rng, loss);
    DenseMatrix x = random_matrix(rng, 6, 3);
    DenseMatrix y = loss == LossKind::Mse ? random_matrix(rng, 6, 2)
                                          : DenseMatrix(6, 2);
    if (loss == LossKind::SoftmaxCrossEntropy)
      for (std::size_t b = 0; b < 6; ++b) y(b, rng.below(2)) = 1.0;

    // analytic gradients via the hand-written backward pass
    ForwardTrace trace = model_forward(model, x);
    DenseMatrix d = loss_grad(loss, trace.output, y);
    std::vector<LayerGradients> grads(model.layers.size());
    for (std::size_t l = model.layers.size(); l-- > 0;) {
      DenseMatrix dz =
          l + 1 == model.layers.size()
              ? d
              : activation_backward(model.activation, trace.preacts[l], d);
      grads[l] = layer_gradients(trace.inputs[l], dz);
      if (l > 0) d = layer_input_gradients(model.layers[l], dz);
    }

    double worst = 0.0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      std::vector<double> analytic = grads[l].weight.data();
      analytic.insert(analytic.end(), grads[l].bias.begin(),
                      grads[l].bias.end());
      std::vector<double> numeric;
      auto objective = [&] { return model_loss(model, x, y); };
      for (double& p : model.layers[l].weight.data())
        numeric.push_back(central_difference(objective, p));
      for (double& p : model.layers[l].bias)
        numeric.push_back(central_difference(objective, p));
      worst = std::max(worst, gradient_gap(analytic, numeric));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("relu backward zeroes gradients at non-positive preactivations") {
  DenseMatrix preact(1, 3, {-1.0, 0.0, 2.0});
  DenseMatrix dact(1, 3, {1.0, 1.0, 1.0});
  auto dz = activation_backward(Activation::Relu, preact, dact);
  CHECK(dz(0, 0) == 0.0);
  CHECK(dz(0, 1) == 0.0);
  CHECK(dz(0, 2) == 1.0);
}

TEST_CASE("adam on a quadratic reaches the minimum") {
  // minimize (p - 3)^2; gradient 2(p - 3)
  std::vector<double> p{0.0};
  AdamBuffer buf;
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> g{2.0 * (p[0] - 3.0)};
    buf.apply(p, g, 0.05);
  }
  CHECK(p[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("sgd_apply is plain descent") {
  std::vector<double> p{1.0, 2.0};
  sgd_apply(p, std::vector<double>{0.5, -0.5}, 0.1);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(2.05));
}
