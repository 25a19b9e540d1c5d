#include "loldu/optim.hpp"

#include <cmath>

namespace loldu::optim {

std::vector<double> project_z(std::vector<double> z, double epsilon) {
  if (!(epsilon > 0.0)) throw Error("projection epsilon must be positive");
  const double e2 = epsilon * epsilon;
  double n2 = dot(z, z);
  if (n2 <= e2) return z;
  double s = epsilon / std::sqrt(n2);
  for (double& v : z) v *= s;
  // Rounding can leave the norm a few ulps outside the ball; nudge until
  // the interior test holds so a second projection is the identity.
  while (dot(z, z) > e2) {
    const double shrink = std::nextafter(1.0, 0.0);
    for (double& v : z) v *= shrink;
  }
  return z;
}

double project_sigma(double sigma, const ProjectionSpec& spec) {
  if (sigma < spec.sigma_min) return spec.sigma_min;
  if (sigma > spec.sigma_max) return spec.sigma_max;
  return sigma;
}

void step(LolduAdapter& adapter, std::span<const double> g_diag,
          double g_sigma, OptimState& state) {
  const std::size_t r = adapter.rank;
  if (g_diag.size() != r) throw ShapeMismatch("step: gradient length");
  if (!all_finite(g_diag) || !std::isfinite(g_sigma))
    throw NonFiniteGradient("step: non-finite gradient");
  if (!(state.lr > 0.0)) throw Error("step: lr must be positive");

  const std::uint64_t t = ++state.step_count;
  double lr = state.lr;
  if (state.warmup_steps > 0 && t <= state.warmup_steps)
    lr *= static_cast<double>(t) / static_cast<double>(state.warmup_steps);

  if (state.method == OptMethod::Adam) {
    if (state.m.size() != r + 1) {
      state.m.assign(r + 1, 0.0);
      state.v.assign(r + 1, 0.0);
    }
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
    auto adam_delta = [&](std::size_t i, double g) {
      state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
      state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = state.m[i] / bc1;
      const double vhat = state.v[i] / bc2;
      return lr * mhat / (std::sqrt(vhat) + state.adam_eps);
    };
    for (std::size_t i = 0; i < r; ++i)
      adapter.diag_r[i] -= adam_delta(i, g_diag[i]);
    adapter.sigma -= adam_delta(r, g_sigma);
  } else {
    for (std::size_t i = 0; i < r; ++i) adapter.diag_r[i] -= lr * g_diag[i];
    adapter.sigma -= lr * g_sigma;
  }

  adapter.diag_r =
      project_z(std::move(adapter.diag_r), state.projection.epsilon);
  adapter.sigma = project_sigma(adapter.sigma, state.projection);

  // Feasibility invariant; violations here are library bugs, not user error.
  const double n = vec_norm(adapter.diag_r);
  if (n > state.projection.epsilon || adapter.sigma < state.projection.sigma_min ||
      adapter.sigma > state.projection.sigma_max)
    throw std::logic_error("optim::step: projection failed to enforce feasibility");
}

}  // namespace loldu::optim
