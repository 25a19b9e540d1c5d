#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loldu/adapter.hpp"

namespace loldu::optim {

// Feasible region for training: ||diag_r|| <= epsilon and
// sigma in [sigma_min, sigma_max]. The sigma constraint is open below
// in principle; it is realized as a closed clamp at sigma_min.
struct ProjectionSpec {
  double epsilon = 1.0;
  double sigma_min = 1e-6;
  double sigma_max = 1.0;
};

enum class OptMethod { Sgd, Adam };

// State for one training run over a single adapter's (diag_r, sigma).
struct OptimState {
  OptMethod method = OptMethod::Adam;
  double lr = 3e-3;
  std::size_t warmup_steps = 0;  // linear warmup; 0 disables
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::vector<double> m;  // first moments, length r+1 (index r is sigma)
  std::vector<double> v;  // second moments
  ProjectionSpec projection;
};

// Euclidean projection onto the epsilon-ball. Idempotent bit-exactly:
// a projected vector projects to itself.
std::vector<double> project_z(std::vector<double> z, double epsilon);

double project_sigma(double sigma, const ProjectionSpec& spec);

// One projected step: gradient (or Adam-corrected) descent on diag_r and
// sigma, then projection onto the feasible region. Throws
// NonFiniteGradient on NaN/Inf gradients. Feasibility is re-checked after
// every step, in release builds too.
void step(LolduAdapter& adapter, std::span<const double> g_diag,
          double g_sigma, OptimState& state);

}  // namespace loldu::optim
