#include "loldu/ldu.hpp"

#include <cmath>
#include <numeric>

namespace loldu {

namespace {
thread_local std::uint64_t tl_decompose_calls = 0;
}

std::uint64_t decompose_call_count() { return tl_decompose_calls; }

LuRaw lu_decompose(const DenseMatrix& w) {
  ++tl_decompose_calls;
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  if (m < 1 || n < 1) throw ShapeMismatch("lu_decompose: empty matrix");
  const std::size_t k = std::min(m, n);

  const double scale = max_abs(w);
  if (scale == 0.0) throw SingularPivot("lu_decompose: zero matrix");
  const double tol = kPivotTolScale * scale;

  DenseMatrix a = w;  // working copy, eliminated in place
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});

  for (std::size_t j = 0; j < k; ++j) {
    // strict > keeps the lowest row index on ties
    std::size_t piv = j;
    double best = std::abs(a(j, j));
    for (std::size_t i = j + 1; i < m; ++i) {
      const double v = std::abs(a(i, j));
      if (v > best) {
        best = v;
        piv = i;
      }
    }
    if (best < tol) throw SingularPivot("lu_decompose: pivot below tolerance");
    if (piv != j) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(j, c), a(piv, c));
      std::swap(perm[j], perm[piv]);
    }
    const double d = a(j, j);
    for (std::size_t i = j + 1; i < m; ++i) {
      const double f = a(i, j) / d;
      a(i, j) = f;  // multiplier stored in the eliminated slot
      if (f == 0.0) continue;
      for (std::size_t c = j + 1; c < n; ++c) a(i, c) -= f * a(j, c);
    }
  }

  // Split the in-place result; unit diagonals and trapezoidal zeros are
  // written, not computed, so the structural invariants hold bit-exactly.
  LuRaw out;
  out.perm = std::move(perm);
  out.lower = DenseMatrix(m, k);
  out.upper_raw = DenseMatrix(k, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j)
      out.lower(i, j) = i == j ? 1.0 : (j < i ? a(i, j) : 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out.upper_raw(i, j) = j >= i ? a(i, j) : 0.0;
  return out;
}

LduFactors ldu_normalize(LuRaw raw) {
  const std::size_t k = raw.upper_raw.rows();
  const std::size_t n = raw.upper_raw.cols();

  const double tol = kPivotTolScale * max_abs(raw.upper_raw);
  LduFactors f;
  f.perm = std::move(raw.perm);
  f.lower = std::move(raw.lower);
  f.diag.resize(k);
  f.upper = DenseMatrix(k, n);
  for (std::size_t i = 0; i < k; ++i) {
    const double z = raw.upper_raw(i, i);
    if (std::abs(z) < tol)
      throw SingularPivot("ldu_normalize: diagonal entry below tolerance");
    f.diag[i] = z;
    f.upper(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j)
      f.upper(i, j) = raw.upper_raw(i, j) / z;
  }
  return f;
}

LduFactors ldu_factorize(const DenseMatrix& w) {
  return ldu_normalize(lu_decompose(w));
}

DenseMatrix reconstruct(const LduFactors& f) {
  const std::size_t m = f.lower.rows();
  const std::size_t k = f.lower.cols();
  if (f.diag.size() != k || f.upper.rows() != k || f.perm.size() != m)
    throw ShapeMismatch("reconstruct: inconsistent factor shapes");
  // L * diag(z) * U without materializing diag(z)
  DenseMatrix scaled = f.upper;
  for (std::size_t i = 0; i < k; ++i) {
    auto r = scaled.row(i);
    for (double& v : r) v *= f.diag[i];
  }
  return unpermute_rows(matmul(f.lower, scaled), f.perm);
}

}  // namespace loldu
