#include "doctest.h"
#include "loldu/hash.hpp"
#include "loldu/optim.hpp"
#include "support.hpp"

using namespace loldu;
using namespace testsupport;

namespace {

LolduAdapter small_adapter(SplitMix64& rng, std::size_t r = 3) {
  DenseMatrix w0 = random_matrix(rng, 6, 6);
  return init_adapter(w0, r, static_cast<double>(r), {});
}

}  // namespace

TEST_CASE("project_z basics") {
  CHECK(optim::project_z({0.0, 0.0}, 1.0) == std::vector<double>{0.0, 0.0});

  // interior points pass through bit-identically
  std::vector<double> interior{0.3, 0.4};  // norm 0.5, epsilon 1
  CHECK(optim::project_z(interior, 1.0) == interior);

  // boundary rescale: [3,4] with epsilon 1 lands on [0.6, 0.8]
  auto projected = optim::project_z({3.0, 4.0}, 1.0);
  CHECK(projected[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(projected[1] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(vec_norm(projected) <= 1.0);
}

TEST_CASE("project_z is idempotent bit-exactly") {
  SplitMix64 rng(3);
  for (int t = 0; t < 200; ++t) {
    auto v = random_vector(rng, 1 + rng.below(8), 2.0);
    const double eps = 0.1 + rng.uniform();
    auto once = optim::project_z(v, eps);
    auto twice = optim::project_z(once, eps);
    CHECK(hash_doubles(once) == hash_doubles(twice));
  }
}

TEST_CASE("project_z is non-expansive on random pairs") {
  SplitMix64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(8);
    auto a = random_vector(rng, n, 2.0);
    auto b = random_vector(rng, n, 2.0);
    const double eps = 0.1 + rng.uniform();
    auto pa = optim::project_z(a, eps);
    auto pb = optim::project_z(b, eps);
    double dp = 0.0, d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dp += (pa[i] - pb[i]) * (pa[i] - pb[i]);
      d += (a[i] - b[i]) * (a[i] - b[i]);
    }
    // allow rounding slack at the boundary
    CHECK(std::sqrt(dp) <= std::sqrt(d) * (1.0 + 1e-12));
  }
}

TEST_CASE("project_sigma clamps to [sigma_min, 1]") {
  optim::ProjectionSpec spec;
  CHECK(optim::project_sigma(0.5, spec) == 0.5);
  CHECK(optim::project_sigma(1.7, spec) == 1.0);
  CHECK(optim::project_sigma(-0.2, spec) == 1e-6);
}

TEST_CASE("step: zero gradients leave parameters unchanged") {
  SplitMix64 rng(7);
  for (auto method : {optim::OptMethod::Sgd, optim::OptMethod::Adam}) {
    auto a = small_adapter(rng);
    const auto z_before = a.diag_r;
    const double sigma_before = a.sigma;
    optim::OptimState st;
    st.method = method;
    st.projection.epsilon = 10.0 * a.frozen_diag_norm;
    std::vector<double> zero(a.rank, 0.0);
    optim::step(a, zero, 0.0, st);
    CHECK(a.diag_r == z_before);
    CHECK(a.sigma == sigma_before);
    CHECK(st.step_count == 1);
  }
}

TEST_CASE("step: one sgd step is plain descent inside the ball") {
  SplitMix64 rng(11);
  auto a = small_adapter(rng, 1);
  a.diag_r = {0.0};
  optim::OptimState st;
  st.method = optim::OptMethod::Sgd;
  st.lr = 1.0;
  st.projection.epsilon = 10.0;
  optim::step(a, std::vector<double>{0.3}, 0.0, st);
  CHECK(a.diag_r[0] == doctest::Approx(-0.3).epsilon(1e-15));
}

TEST_CASE("step: non-finite gradients raise") {
  SplitMix64 rng(13);
  auto a = small_adapter(rng);
  optim::OptimState st;
  st.projection.epsilon = 1.0;
  std::vector<double> g(a.rank, 0.0);
  g[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(optim::step(a, g, 0.0, st), NonFiniteGradient);
  std::vector<double> ok(a.rank, 0.1);
  CHECK_THROWS_AS(
      optim::step(a, ok, std::numeric_limits<double>::infinity(), st),
      NonFiniteGradient);
}

TEST_CASE("property: feasibility holds after every random step") {
  SplitMix64 rng(17);
  auto a = small_adapter(rng, 4);
  optim::OptimState st;
  st.method = optim::OptMethod::Adam;
  st.lr = 0.05;
  st.projection.epsilon = 0.8;  // tight: the constraint binds often
  a.diag_r = optim::project_z(a.diag_r, st.projection.epsilon);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> g(a.rank);
    for (auto& v : g) v = 5.0 * rng.normal();
    optim::step(a, g, 5.0 * rng.normal(), st);
    CHECK(vec_norm(a.diag_r) <= st.projection.epsilon);
    CHECK(a.sigma >= st.projection.sigma_min);
    CHECK(a.sigma <= st.projection.sigma_max);
  }
  CHECK(st.step_count == 1000);
}

TEST_CASE("step: sigma above 1 is clamped by the first projection") {
  SplitMix64 rng(19);
  DenseMatrix w0 = random_matrix(rng, 5, 5);
  // alpha > r puts sigma at 2.0, outside the feasible region
  auto a = init_adapter(w0, 2, 4.0, {});
  CHECK(a.sigma == 2.0);
  optim::OptimState st;
  st.projection.epsilon = 10.0 * a.frozen_diag_norm;
  std::vector<double> zero(a.rank, 0.0);
  optim::step(a, zero, 0.0, st);
  CHECK(a.sigma == 1.0);
}

TEST_CASE("warmup scales the first steps") {
  SplitMix64 rng(23);
  auto a = small_adapter(rng, 1);
  a.diag_r = {0.0};
  optim::OptimState st;
  st.method = optim::OptMethod::Sgd;
  st.lr = 1.0;
  st.warmup_steps = 4;
  st.projection.epsilon = 100.0;
  optim::step(a, std::vector<double>{1.0}, 0.0, st);
  // first step runs at lr * 1/4
  CHECK(a.diag_r[0] == doctest::Approx(-0.25).epsilon(1e-15));
}
