#pragma once

// Shared helpers for the test suites. The oracles here are deliberately
// naive and independent of the library code paths they are used to check.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "loldu/matrix.hpp"
#include "loldu/rng.hpp"

namespace testsupport {

using loldu::DenseMatrix;
using loldu::SplitMix64;

inline DenseMatrix random_matrix(SplitMix64& rng, std::size_t m,
                                 std::size_t n, double stddev = 1.0) {
  DenseMatrix out(m, n);
  for (auto& v : out.data()) v = rng.normal(0.0, stddev);
  return out;
}

inline std::vector<double> random_vector(SplitMix64& rng, std::size_t n,
                                         double stddev = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return v;
}

// Plain triple-loop product; the oracle for matmul/matvec.
inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline std::vector<double> naive_matvec(const DenseMatrix& a,
                                        const std::vector<double>& x) {
  std::vector<double> out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out[i] += a(i, j) * x[j];
  return out;
}

inline double rel_frobenius_error(const DenseMatrix& got,
                                  const DenseMatrix& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.data().size(); ++i) {
    const double d = got.data()[i] - want.data()[i];
    num += d * d;
    den += want.data()[i] * want.data()[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double rel_vec_error(const std::vector<double>& got,
                            const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = got[i] - want[i];
    num += d * d;
    den += want[i] * want[i];
  }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

// Central finite differences of a scalar functional with respect to one
// coordinate of an externally owned parameter. Step pinned to 1e-5.
inline double central_difference(const std::function<double()>& evaluate,
                                 double& param, double step = 1e-5) {
  const double saved = param;
  param = saved + step;
  const double up = evaluate();
  param = saved - step;
  const double down = evaluate();
  param = saved;
  return (up - down) / (2.0 * step);
}

// Relative gap between two gradient vectors, measured norm-to-norm so
// that coordinates with tiny true gradients do not dominate.
inline double gradient_gap(const std::vector<double>& analytic,
                           const std::vector<double>& numeric) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nb += numeric[i] * numeric[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  if (scale == 0.0) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

}  // namespace testsupport
