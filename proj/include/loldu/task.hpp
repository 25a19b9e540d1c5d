#pragma once

#include <cstdint>
#include <vector>

#include "loldu/model.hpp"

namespace loldu::harness {

enum class TaskKind { TeacherRegression, ClusterClassification };

// Desk-scale synthetic tasks. Everything derives deterministically from
// `seed`; pre-train, fine-tune and eval splits use disjoint derived
// streams, so regeneration is bit-identical and splits never overlap.
struct SyntheticTask {
  TaskKind kind = TaskKind::TeacherRegression;
  std::vector<std::size_t> dims = {16, 32, 24, 8};  // d_in ... d_out
  std::size_t pretrain_samples = 4096;
  std::size_t finetune_samples = 2048;
  std::size_t eval_samples = 2048;
  std::uint64_t seed = 42;

  // regression: observation noise as a fraction of the clean output std;
  // shift perturbs each teacher weight matrix by delta * G, ||G||_F = 1.
  double noise_level = 0.15;
  double shift_delta = 0.3;

  // classification: Gaussian clusters; shift rotates the centers by
  // `rotation_angle` radians in a seeded random plane.
  std::size_t clusters = 4;
  double cluster_std = 0.6;
  double center_scale = 2.0;
  double rotation_angle = 0.5;

  std::size_t d_in() const { return dims.front(); }
  std::size_t d_out() const {
    return kind == TaskKind::ClusterClassification ? clusters : dims.back();
  }
};

struct Dataset {
  DenseMatrix inputs;   // samples x d_in
  DenseMatrix targets;  // samples x d_out (one-hot for classification)
};

enum class Split { Pretrain, Finetune, EvalBase, EvalShifted };

// The generating model for TeacherRegression (shifted or not);
// exposed so tests can inspect what the data came from.
ToyModel task_teacher(const SyntheticTask& task, bool shifted);

Dataset make_dataset(const SyntheticTask& task, Split split);

// Model spec matching the task: same dims as the teacher for
// regression, tanh/MSE; relu/cross-entropy for classification.
ModelSpec default_model_spec(const SyntheticTask& task);

// Seed stream for student model initialization; exposed so training
// code draws it from the same derivation tree as the data splits.
std::uint64_t model_init_seed(const SyntheticTask& task);

std::uint64_t dataset_checksum(const Dataset& d);

}  // namespace loldu::harness
