#include "loldu/task.hpp"

#include <cmath>

#include "loldu/hash.hpp"

namespace loldu::harness {

namespace {

// Stream ids for seed derivation; adding one must not renumber others
// or previously generated data changes.
enum Stream : std::uint64_t {
  kTeacher = 1,
  kShift = 2,
  kPretrainData = 3,
  kFinetuneData = 4,
  kEvalBase = 5,
  kEvalShifted = 6,
  kModelInit = 7,
  kCenters = 8,
};

DenseMatrix gaussian_inputs(SplitMix64& rng, std::size_t n, std::size_t d) {
  DenseMatrix x(n, d);
  for (double& v : x.data()) v = rng.normal();
  return x;
}

ToyModel base_teacher(const SyntheticTask& task) {
  ModelSpec spec;
  spec.dims = task.dims;
  spec.activation = Activation::Tanh;
  spec.loss = LossKind::Mse;
  SplitMix64 rng(mix_seed(task.seed, kTeacher));
  return make_model(spec, rng);
}

// W += delta * G with G Gaussian normalized to unit Frobenius norm.
void perturb_weights(ToyModel& teacher, double delta, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (auto& layer : teacher.layers) {
    DenseMatrix g(layer.weight.rows(), layer.weight.cols());
    for (double& v : g.data()) v = rng.normal();
    const double norm = frobenius_norm(g);
    for (std::size_t i = 0; i < g.data().size(); ++i)
      layer.weight.data()[i] += delta * g.data()[i] / norm;
  }
}

double population_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size()));
}

Dataset regression_dataset(const SyntheticTask& task, Split split) {
  const bool shifted =
      split == Split::Finetune || split == Split::EvalShifted;
  std::uint64_t stream = split == Split::Pretrain      ? kPretrainData
                         : split == Split::Finetune    ? kFinetuneData
                         : split == Split::EvalBase    ? kEvalBase
                                                       : kEvalShifted;
  const std::size_t n = split == Split::Pretrain     ? task.pretrain_samples
                        : split == Split::Finetune   ? task.finetune_samples
                                                     : task.eval_samples;
  SplitMix64 rng(mix_seed(task.seed, stream));
  Dataset d;
  d.inputs = gaussian_inputs(rng, n, task.d_in());
  ToyModel teacher = task_teacher(task, shifted);
  DenseMatrix clean = model_predict(teacher, d.inputs);
  const double noise_std = task.noise_level * population_std(clean.data());
  d.targets = std::move(clean);
  for (double& v : d.targets.data()) v += rng.normal(0.0, noise_std);
  return d;
}

// Cluster centers, optionally rotated in a seeded random plane.
std::vector<std::vector<double>> cluster_centers(const SyntheticTask& task,
                                                 bool shifted) {
  SplitMix64 rng(mix_seed(task.seed, kCenters));
  std::vector<std::vector<double>> centers(task.clusters);
  for (auto& c : centers) {
    c.resize(task.d_in());
    for (double& v : c) v = task.center_scale * rng.normal();
  }
  if (!shifted) return centers;

  // Orthonormal plane (u, w) from the shift stream.
  SplitMix64 srng(mix_seed(task.seed, kShift));
  std::vector<double> u(task.d_in()), w(task.d_in());
  for (double& v : u) v = srng.normal();
  for (double& v : w) v = srng.normal();
  double nu = vec_norm(u);
  for (double& v : u) v /= nu;
  const double proj = dot(w, u);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= proj * u[i];
  double nw = vec_norm(w);
  for (double& v : w) v /= nw;

  const double c = std::cos(task.rotation_angle);
  const double s = std::sin(task.rotation_angle);
  for (auto& center : centers) {
    const double cu = dot(center, u);
    const double cw = dot(center, w);
    for (std::size_t i = 0; i < center.size(); ++i)
      center[i] += (c - 1.0) * (cu * u[i] + cw * w[i]) +
                   s * (cu * w[i] - cw * u[i]);
  }
  return centers;
}

Dataset classification_dataset(const SyntheticTask& task, Split split) {
  const bool shifted =
      split == Split::Finetune || split == Split::EvalShifted;
  std::uint64_t stream = split == Split::Pretrain      ? kPretrainData
                         : split == Split::Finetune    ? kFinetuneData
                         : split == Split::EvalBase    ? kEvalBase
                                                       : kEvalShifted;
  const std::size_t n = split == Split::Pretrain     ? task.pretrain_samples
                        : split == Split::Finetune   ? task.finetune_samples
                                                     : task.eval_samples;
  auto centers = cluster_centers(task, shifted);
  SplitMix64 rng(mix_seed(task.seed, stream));
  Dataset d;
  d.inputs = DenseMatrix(n, task.d_in());
  d.targets = DenseMatrix(n, task.clusters);
  for (std::size_t b = 0; b < n; ++b) {
    const std::size_t label = rng.below(task.clusters);
    for (std::size_t j = 0; j < task.d_in(); ++j)
      d.inputs(b, j) = centers[label][j] + task.cluster_std * rng.normal();
    d.targets(b, label) = 1.0;
  }
  return d;
}

}  // namespace

ToyModel task_teacher(const SyntheticTask& task, bool shifted) {
  ToyModel teacher = base_teacher(task);
  if (shifted)
    perturb_weights(teacher, task.shift_delta, mix_seed(task.seed, kShift));
  return teacher;
}

Dataset make_dataset(const SyntheticTask& task, Split split) {
  return task.kind == TaskKind::TeacherRegression
             ? regression_dataset(task, split)
             : classification_dataset(task, split);
}

ModelSpec default_model_spec(const SyntheticTask& task) {
  ModelSpec spec;
  spec.dims = task.dims;
  if (task.kind == TaskKind::ClusterClassification) {
    spec.dims.back() = task.clusters;
    spec.activation = Activation::Relu;
    spec.loss = LossKind::SoftmaxCrossEntropy;
  } else {
    spec.activation = Activation::Tanh;
    spec.loss = LossKind::Mse;
  }
  return spec;
}

std::uint64_t model_init_seed(const SyntheticTask& task) {
  return mix_seed(task.seed, kModelInit);
}

std::uint64_t dataset_checksum(const Dataset& d) {
  std::uint64_t h = hash_doubles(d.inputs.data());
  return hash_doubles(d.targets.data(), h);
}

}  // namespace loldu::harness
