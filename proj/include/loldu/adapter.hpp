#pragma once

#include <cstdint>
#include <vector>

#include "loldu/ldu.hpp"
#include "loldu/matrix.hpp"

namespace loldu {

// Heuristic initialization policies for the trainable diagonal. Values
// are part of the adapter file format; do not renumber.
enum class InitKind : std::uint8_t {
  RegularLdu = 0,       // keep the truncated factorization diagonal
  Constant = 1,         // fill with mean of the truncated diagonal
  UniformSym1 = 2,      // U(-1, 1)
  UniformMeanHalf = 3,  // U(-mean/2, mean/2)
  NormalStd = 4,        // N(0, 1)
  NormalMatched = 5,    // N(mean, sample std of the truncated diagonal)
  Zeros = 6,
  Ones = 7,
};

struct InitMethod {
  InitKind kind = InitKind::RegularLdu;
  std::uint64_t seed = 0;
};

const char* init_kind_name(InitKind k);
InitKind init_kind_from_name(const std::string& name);

// A LoLDU adapter for one weight matrix W0 (m x n):
//   effective weight = residual + sigma * P^T * L_r * diag(diag_r) * U_r
// Only diag_r (r values) and sigma train; everything else is frozen at
// construction.
struct LolduAdapter {
  std::vector<std::size_t> perm;  // frozen
  DenseMatrix lower_r;            // m x r, frozen
  DenseMatrix upper_r;            // r x n, frozen
  DenseMatrix residual;           // m x n, frozen
  std::vector<double> diag_r;     // trainable
  double sigma = 1.0;             // trainable
  std::size_t rank = 0;
  double alpha = 0.0;
  InitMethod init;
  // Norm of the truncated diagonal before the heuristic overwrite; the
  // reference scale for the training-time projection radius.
  double frozen_diag_norm = 0.0;

  std::size_t out_dim() const { return residual.rows(); }
  std::size_t in_dim() const { return residual.cols(); }
};

// Factorizes W0 once, truncates to rank r, computes the frozen residual
// with the pre-init diagonal and sigma = alpha/r, then applies the
// heuristic init to diag_r. Note the residual is computed before the
// init overwrite, so any init other than RegularLdu changes the
// effective function at step zero.
LolduAdapter init_adapter(const DenseMatrix& w0, std::size_t rank,
                          double alpha, InitMethod init);

// sigma * P^T * L_r * diag(diag_r) * U_r via factored products; the
// diagonal is never materialized as a matrix.
DenseMatrix delta_w(const LolduAdapter& a);

// residual + delta_w.
DenseMatrix merged_weight(const LolduAdapter& a);

// h = residual*x + sigma * P^T * (L_r * (diag_r ⊙ (U_r * x))).
std::vector<double> forward(const LolduAdapter& a, std::span<const double> x);

struct AdapterGradients {
  std::vector<double> diag;  // length r
  double sigma = 0.0;
};

// Partials of a loss with dL/dh = upstream, with respect to diag_r and
// sigma.
AdapterGradients gradients(const LolduAdapter& a, std::span<const double> x,
                           std::span<const double> upstream);

// Always r + 1.
std::size_t trainable_param_count(const LolduAdapter& a);

// --- batched variants (rows are samples) ----------------------------------

DenseMatrix forward_batch(const LolduAdapter& a, const DenseMatrix& x);
AdapterGradients gradients_batch(const LolduAdapter& a, const DenseMatrix& x,
                                 const DenseMatrix& upstream);
// dL/dX given dL/dH; needed to keep backpropagating below an adapted layer.
DenseMatrix input_gradients_batch(const LolduAdapter& a,
                                  const DenseMatrix& upstream);

// --- LoRA baseline ---------------------------------------------------------
// delta = (alpha/r) * B * A with B zero-init and A ~ N(0, 0.02).

struct LoraAdapter {
  DenseMatrix base;  // W0, frozen
  DenseMatrix b;     // m x r, trainable
  DenseMatrix a;     // r x n, trainable
  std::size_t rank = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;

  double scaling() const { return alpha / static_cast<double>(rank); }
  std::size_t out_dim() const { return base.rows(); }
  std::size_t in_dim() const { return base.cols(); }
};

LoraAdapter init_lora(const DenseMatrix& w0, std::size_t rank, double alpha,
                      std::uint64_t seed);
DenseMatrix lora_delta_w(const LoraAdapter& l);
DenseMatrix lora_merged_weight(const LoraAdapter& l);
std::vector<double> lora_forward(const LoraAdapter& l,
                                 std::span<const double> x);

struct LoraGradients {
  DenseMatrix b;  // m x r
  DenseMatrix a;  // r x n
};

LoraGradients lora_gradients(const LoraAdapter& l, std::span<const double> x,
                             std::span<const double> upstream);
std::size_t lora_trainable_param_count(const LoraAdapter& l);

DenseMatrix lora_forward_batch(const LoraAdapter& l, const DenseMatrix& x);
LoraGradients lora_gradients_batch(const LoraAdapter& l, const DenseMatrix& x,
                                   const DenseMatrix& upstream);
DenseMatrix lora_input_gradients_batch(const LoraAdapter& l,
                                       const DenseMatrix& upstream);

}  // namespace loldu
