#include <numeric>

#include "doctest.h"
#include "loldu/adapter.hpp"
#include "loldu/hash.hpp"
#include "support.hpp"

using namespace loldu;
using namespace testsupport;

namespace {

DenseMatrix diag_matrix(std::initializer_list<double> d) {
  DenseMatrix m(d.size(), d.size());
  std::size_t i = 0;
  for (double v : d) m(i, i) = v, ++i;
  return m;
}

LolduAdapter random_adapter(SplitMix64& rng, std::size_t m, std::size_t n,
                            std::size_t r) {
  DenseMatrix w0 = random_matrix(rng, m, n);
  LolduAdapter a = init_adapter(w0, r, static_cast<double>(r),
                                InitMethod{InitKind::RegularLdu, 0});
  for (double& z : a.diag_r) z += 0.25 * rng.normal();
  a.sigma = 0.2 + 0.7 * rng.uniform();
  return a;
}

}  // namespace

TEST_CASE("init_adapter: identity gives unit diagonal and zero residual") {
  auto a = init_adapter(DenseMatrix::identity(4), 4, 4.0, {});
  CHECK(a.diag_r == std::vector<double>{1.0, 1.0, 1.0, 1.0});
  CHECK(a.sigma == 1.0);
  CHECK(frobenius_norm(a.residual) == 0.0);
  CHECK(trainable_param_count(a) == 5);
}

TEST_CASE("init_adapter: diagonal truncation leaves the tail in the residual") {
  // diag(2,3,4) pivots in place, so the top-2 split keeps (2,3) and the
  // residual carries the remaining diag(0,0,4)
  auto a = init_adapter(diag_matrix({2, 3, 4}), 2, 2.0, {});
  CHECK(a.perm == std::vector<std::size_t>{0, 1, 2});
  CHECK(a.diag_r == std::vector<double>{2.0, 3.0});
  CHECK(a.residual == diag_matrix({0, 0, 4}));
}

TEST_CASE("init_adapter: rank bounds and alpha validation") {
  auto w = DenseMatrix::identity(3);
  CHECK_THROWS_AS(init_adapter(w, 0, 1.0, {}), RankOutOfRange);
  CHECK_THROWS_AS(init_adapter(w, 4, 4.0, {}), RankOutOfRange);
  CHECK_THROWS_AS(init_adapter(w, 2, 0.0, {}), BadInput);
}

TEST_CASE("exact split: residual plus delta reconstructs w0 for RegularLdu") {
  SplitMix64 rng(7);
  auto w0 = random_matrix(rng, 8, 8);
  auto a = init_adapter(w0, 3, 3.0, {});
  DenseMatrix merged = merged_weight(a);
  CHECK(rel_frobenius_error(merged, w0) <= 1e-10);

  // property over shapes and ranks
  for (int t = 0; t < 20; ++t) {
    const std::size_t m = 2 + rng.below(12);
    const std::size_t n = 2 + rng.below(12);
    const std::size_t r = 1 + rng.below(std::min(m, n));
    auto w = random_matrix(rng, m, n);
    auto ad = init_adapter(w, r, static_cast<double>(r), {});
    CHECK(rel_frobenius_error(merged_weight(ad), w) <= 1e-10);
  }
}

TEST_CASE("delta_w: zero diagonal and zero sigma give exactly zero") {
  SplitMix64 rng(11);
  auto a = random_adapter(rng, 6, 5, 3);
  a.diag_r.assign(a.rank, 0.0);
  CHECK(frobenius_norm(delta_w(a)) == 0.0);

  auto b = random_adapter(rng, 6, 5, 3);
  b.sigma = 0.0;
  CHECK(frobenius_norm(delta_w(b)) == 0.0);
}

TEST_CASE("delta_w: factored product matches explicit-diagonal oracle") {
  SplitMix64 rng(13);
  auto a = random_adapter(rng, 7, 5, 4);
  // oracle materializes diag(z_r) and the permutation matrix
  DenseMatrix diag(a.rank, a.rank);
  for (std::size_t i = 0; i < a.rank; ++i) diag(i, i) = a.diag_r[i];
  DenseMatrix prod = naive_matmul(a.lower_r, naive_matmul(diag, a.upper_r));
  DenseMatrix expected(prod.rows(), prod.cols());
  for (std::size_t i = 0; i < prod.rows(); ++i)
    for (std::size_t j = 0; j < prod.cols(); ++j)
      expected(a.perm[i], j) = a.sigma * prod(i, j);
  CHECK(rel_frobenius_error(delta_w(a), expected) <= 1e-13);
}

TEST_CASE("forward: exact split means forward equals w0 x") {
  SplitMix64 rng(17);
  auto w0 = random_matrix(rng, 6, 9);
  auto a = init_adapter(w0, 4, 4.0, {});
  for (int t = 0; t < 10; ++t) {
    auto x = random_vector(rng, 9);
    CHECK(rel_vec_error(forward(a, x), naive_matvec(w0, x)) <= 1e-8);
  }
}

TEST_CASE("forward: zero input gives zero output") {
  SplitMix64 rng(19);
  auto a = random_adapter(rng, 5, 4, 2);
  std::vector<double> zero(4, 0.0);
  auto h = forward(a, zero);
  for (double v : h) CHECK(v == 0.0);
}

TEST_CASE("forward agrees with the merged-matrix oracle") {
  SplitMix64 rng(23);
  for (int t = 0; t < 10; ++t) {
    auto a = random_adapter(rng, 4 + rng.below(6), 4 + rng.below(6),
                            1 + rng.below(4));
    DenseMatrix merged = merged_weight(a);
    auto x = random_vector(rng, a.in_dim());
    CHECK(rel_vec_error(forward(a, x), naive_matvec(merged, x)) <= 1e-12);
  }
}

TEST_CASE("merged_weight: zero diagonal collapses to the residual") {
  SplitMix64 rng(29);
  auto a = random_adapter(rng, 6, 6, 3);
  a.diag_r.assign(a.rank, 0.0);
  CHECK(merged_weight(a) == a.residual);
}

TEST_CASE("merged matvec tracks adapter forward after parameter updates") {
  SplitMix64 rng(31);
  auto a = random_adapter(rng, 8, 7, 4);
  // crude training stand-in: move the trainables around
  for (int step = 0; step < 5; ++step) {
    for (double& z : a.diag_r) z += 0.05 * rng.normal();
    a.sigma = std::min(1.0, std::max(1e-6, a.sigma + 0.1 * rng.normal()));
  }
  DenseMatrix merged = merged_weight(a);
  for (int t = 0; t < 50; ++t) {
    auto x = random_vector(rng, a.in_dim());
    CHECK(rel_vec_error(forward(a, x), naive_matvec(merged, x)) <= 1e-12);
  }
}

TEST_CASE("gradients: zero upstream gives exactly zero gradients") {
  SplitMix64 rng(37);
  auto a = random_adapter(rng, 5, 6, 3);
  auto x = random_vector(rng, 6);
  std::vector<double> zero(5, 0.0);
  auto g = gradients(a, x, zero);
  for (double v : g.diag) CHECK(v == 0.0);
  CHECK(g.sigma == 0.0);
}

TEST_CASE("gradients: zero diagonal kills g_sigma but not g_z") {
  SplitMix64 rng(41);
  auto a = random_adapter(rng, 5, 6, 3);
  a.diag_r.assign(a.rank, 0.0);
  auto x = random_vector(rng, 6);
  auto up = random_vector(rng, 5);
  auto g = gradients(a, x, up);
  CHECK(g.sigma == 0.0);
  CHECK(vec_norm(g.diag) > 0.0);
}

TEST_CASE("gradients match central finite differences over random adapters") {
  SplitMix64 rng(43);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    auto a = random_adapter(rng, 3 + rng.below(8), 3 + rng.below(8),
                            1 + rng.below(3));
    auto x = random_vector(rng, a.in_dim());
    auto up = random_vector(rng, a.out_dim());
    auto g = gradients(a, x, up);

    auto objective = [&] {
      auto h = forward(a, x);
      return dot(std::span<const double>(h), std::span<const double>(up));
    };
    std::vector<double> analytic = g.diag;
    analytic.push_back(g.sigma);
    std::vector<double> numeric;
    for (std::size_t i = 0; i < a.rank; ++i)
      numeric.push_back(central_difference(objective, a.diag_r[i]));
    numeric.push_back(central_difference(objective, a.sigma));
    worst = std::max(worst, gradient_gap(analytic, numeric));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("parameter count is r + 1 regardless of shape") {
  SplitMix64 rng(47);
  auto a = random_adapter(rng, 12, 9, 1);
  CHECK(trainable_param_count(a) == 2);

  // paper-scale arithmetic: 24 adapted matrices
  CHECK(24 * (768 + 1) == 18456);
  CHECK(24 * (64 + 1) == 1560);  // the "1.5k" configuration
}

TEST_CASE("init methods are deterministic and follow their definitions") {
  SplitMix64 rng(53);
  auto w0 = random_matrix(rng, 10, 10);

  auto regular = init_adapter(w0, 6, 6.0, {InitKind::RegularLdu, 9});
  const std::vector<double> pre = regular.diag_r;
  const double mean =
      std::accumulate(pre.begin(), pre.end(), 0.0) / double(pre.size());

  auto constant = init_adapter(w0, 6, 6.0, {InitKind::Constant, 9});
  for (double v : constant.diag_r) CHECK(v == doctest::Approx(mean));

  auto zeros = init_adapter(w0, 6, 6.0, {InitKind::Zeros, 9});
  for (double v : zeros.diag_r) CHECK(v == 0.0);
  auto ones = init_adapter(w0, 6, 6.0, {InitKind::Ones, 9});
  for (double v : ones.diag_r) CHECK(v == 1.0);

  auto uniform = init_adapter(w0, 6, 6.0, {InitKind::UniformSym1, 9});
  for (double v : uniform.diag_r) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }

  // stochastic inits reproduce bit-exactly from the seed
  for (InitKind kind : {InitKind::UniformSym1, InitKind::UniformMeanHalf,
                        InitKind::NormalStd, InitKind::NormalMatched}) {
    auto a1 = init_adapter(w0, 6, 6.0, {kind, 1234});
    auto a2 = init_adapter(w0, 6, 6.0, {kind, 1234});
    CHECK(hash_doubles(a1.diag_r) == hash_doubles(a2.diag_r));
    auto a3 = init_adapter(w0, 6, 6.0, {kind, 1235});
    CHECK(hash_doubles(a1.diag_r) != hash_doubles(a3.diag_r));
  }

  // residual is computed before the init overwrite, so non-regular inits
  // shift the step-0 function
  auto shifted = init_adapter(w0, 6, 6.0, {InitKind::NormalStd, 9});
  CHECK(shifted.residual == regular.residual);
  CHECK(rel_frobenius_error(merged_weight(shifted), w0) > 1e-6);
}

TEST_CASE("normal_matched with rank 1 degenerates to the mean") {
  SplitMix64 rng(59);
  auto w0 = random_matrix(rng, 5, 5);
  auto regular = init_adapter(w0, 1, 1.0, {});
  auto matched = init_adapter(w0, 1, 1.0, {InitKind::NormalMatched, 3});
  // sample std of a single value is taken as zero
  CHECK(matched.diag_r[0] == regular.diag_r[0]);
}

TEST_CASE("batched adapter ops agree with per-sample ops") {
  SplitMix64 rng(61);
  auto a = random_adapter(rng, 7, 6, 3);
  DenseMatrix x = random_matrix(rng, 9, 6);
  DenseMatrix up = random_matrix(rng, 9, 7);

  DenseMatrix h = forward_batch(a, x);
  AdapterGradients sum{std::vector<double>(a.rank, 0.0), 0.0};
  DenseMatrix xbar_expected(9, 6);
  DenseMatrix merged = merged_weight(a);
  for (std::size_t b = 0; b < 9; ++b) {
    std::vector<double> xb(x.row(b).begin(), x.row(b).end());
    std::vector<double> ub(up.row(b).begin(), up.row(b).end());
    auto hb = forward(a, xb);
    for (std::size_t j = 0; j < hb.size(); ++j)
      CHECK(h(b, j) == doctest::Approx(hb[j]).epsilon(1e-12));
    auto gb = gradients(a, xb, ub);
    for (std::size_t i = 0; i < a.rank; ++i) sum.diag[i] += gb.diag[i];
    sum.sigma += gb.sigma;
    auto xbar = naive_matvec(transpose(merged), ub);
    for (std::size_t j = 0; j < 6; ++j) xbar_expected(b, j) = xbar[j];
  }
  auto g = gradients_batch(a, x, up);
  CHECK(rel_vec_error(g.diag, sum.diag) <= 1e-12);
  CHECK(g.sigma == doctest::Approx(sum.sigma).epsilon(1e-12));
  CHECK(rel_frobenius_error(input_gradients_batch(a, up), xbar_expected) <=
        1e-12);
}

TEST_CASE("lora: zero-init B makes the initial forward exactly the base") {
  SplitMix64 rng(67);
  auto w0 = random_matrix(rng, 6, 8);
  auto l = init_lora(w0, 3, 3.0, 99);
  auto x = random_vector(rng, 8);
  CHECK(lora_forward(l, x) == naive_matvec(w0, x));
  CHECK(lora_merged_weight(l) == w0);
  CHECK(lora_trainable_param_count(l) == 3 * (6 + 8));
}

TEST_CASE("lora gradients match finite differences") {
  SplitMix64 rng(71);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    auto w0 = random_matrix(rng, 3 + rng.below(5), 3 + rng.below(5));
    auto l = init_lora(w0, 1 + rng.below(3), 2.0, rng.next_u64());
    for (double& v : l.b.data()) v = 0.1 * rng.normal();
    auto x = random_vector(rng, l.in_dim());
    auto up = random_vector(rng, l.out_dim());
    auto g = lora_gradients(l, x, up);
    auto objective = [&] {
      auto h = lora_forward(l, x);
      return dot(std::span<const double>(h), std::span<const double>(up));
    };
    std::vector<double> analytic = g.b.data();
    analytic.insert(analytic.end(), g.a.data().begin(), g.a.data().end());
    std::vector<double> numeric;
    for (double& p : l.b.data())
      numeric.push_back(central_difference(objective, p));
    for (double& p : l.a.data())
      numeric.push_back(central_difference(objective, p));
    worst = std::max(worst, gradient_gap(analytic, numeric));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("lora batched ops agree with per-sample ops") {
  SplitMix64 rng(73);
  auto w0 = random_matrix(rng, 5, 7);
  auto l = init_lora(w0, 2, 2.0, 5);
  for (double& v : l.b.data()) v = 0.1 * rng.normal();
  DenseMatrix x = random_matrix(rng, 6, 7);
  DenseMatrix up = random_matrix(rng, 6, 5);

  DenseMatrix h = lora_forward_batch(l, x);
  DenseMatrix gb_sum(5, 2), ga_sum(2, 7);
  for (std::size_t b = 0; b < 6; ++b) {
    std::vector<double> xb(x.row(b).begin(), x.row(b).end());
    std::vector<double> ub(up.row(b).begin(), up.row(b).end());
    auto hb = lora_forward(l, xb);
    for (std::size_t j = 0; j < hb.size(); ++j)
      CHECK(h(b, j) == doctest::Approx(hb[j]).epsilon(1e-12));
    auto g = lora_gradients(l, xb, ub);
    for (std::size_t i = 0; i < gb_sum.data().size(); ++i)
      gb_sum.data()[i] += g.b.data()[i];
    for (std::size_t i = 0; i < ga_sum.data().size(); ++i)
      ga_sum.data()[i] += g.a.data()[i];
  }
  auto g = lora_gradients_batch(l, x, up);
  CHECK(rel_frobenius_error(g.b, gb_sum) <= 1e-12);
  CHECK(rel_frobenius_error(g.a, ga_sum) <= 1e-12);
}
