#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "loldu/errors.hpp"

namespace loldu {

// Row-major dense real matrix, 64-bit storage. The universal numeric
// carrier of the project; all heavier structure (factors, adapters)
// is built from these plus plain vectors.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  // Zero-filled.
  DenseMatrix(std::size_t rows, std::size_t cols);

  // Takes ownership of `data` (row-major, length rows*cols). Rejects
  // non-finite entries: NaN/Inf never enter through this door.
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static DenseMatrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// --- products -----------------------------------------------------------

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
// a * b^T and a^T * b; avoids materializing transposes in backprop.
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);

std::vector<double> matvec(const DenseMatrix& a, std::span<const double> x);
// a^T * y.
std::vector<double> matvec_t(const DenseMatrix& a, std::span<const double> y);

DenseMatrix transpose(const DenseMatrix& a);

// --- norms and small vector helpers --------------------------------------

double frobenius_norm(const DenseMatrix& a);
double dot(std::span<const double> a, std::span<const double> b);
double vec_norm(std::span<const double> v);
bool all_finite(std::span<const double> v);
double max_abs(const DenseMatrix& a);

// --- row permutations -----------------------------------------------------
// Convention: perm is a bijection on {0..m-1}. permute_rows gathers
// (out.row(i) = in.row(perm[i]), i.e. P*A for the factorization's P);
// unpermute_rows scatters (out.row(perm[i]) = in.row(i), i.e. P^T*A).

DenseMatrix permute_rows(const DenseMatrix& a,
                         const std::vector<std::size_t>& perm);
DenseMatrix unpermute_rows(const DenseMatrix& a,
                           const std::vector<std::size_t>& perm);

}  // namespace loldu
