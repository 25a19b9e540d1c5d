#pragma once

#include <cstdint>
#include <vector>

#include "loldu/matrix.hpp"

namespace loldu {

// Output of lu_decompose: P*W = lower * upper_raw, with `lower` unit
// lower trapezoidal (m x k) and `upper_raw` upper trapezoidal (k x n),
// k = min(m, n). `perm` encodes P: row i of P*W is row perm[i] of W.
struct LuRaw {
  std::vector<std::size_t> perm;
  DenseMatrix lower;
  DenseMatrix upper_raw;
};

// Normalized factors: W = P^T * lower * diag(diag) * upper, both
// triangular factors carry exact unit diagonals.
struct LduFactors {
  std::vector<std::size_t> perm;
  DenseMatrix lower;          // m x k, unit lower trapezoidal
  std::vector<double> diag;   // length k
  DenseMatrix upper;          // k x n, unit upper trapezoidal
};

// Relative pivot tolerance: pivots below pivot_tol_scale * max|W| raise
// SingularPivot instead of being silently perturbed.
inline constexpr double kPivotTolScale = 1e-12;

// Partial (row) pivoting, max-|entry| pivot, ties broken by lowest row
// index. Deterministic: identical input gives bit-identical factors.
LuRaw lu_decompose(const DenseMatrix& w);

// Splits upper_raw into diag(z) * U with U unit upper trapezoidal.
LduFactors ldu_normalize(LuRaw raw);

// lu_decompose followed by ldu_normalize.
LduFactors ldu_factorize(const DenseMatrix& w);

// P^T * (L * diag(z) * U); inverse of ldu_factorize up to rounding.
DenseMatrix reconstruct(const LduFactors& f);

// Running count of lu_decompose calls on the calling thread. Training
// code asserts "one factorization per adapted matrix" against this.
std::uint64_t decompose_call_count();

}  // namespace loldu
