#include "loldu/adapter.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "loldu/rng.hpp"

namespace loldu {

namespace {

// Names double as CLI/config spellings and inspect output.
constexpr const char* kInitNames[] = {
    "regular_ldu",    "constant", "uniform_sym1", "uniform_mean_half",
    "normal_std",     "normal_matched", "zeros",  "ones"};

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

// Sample standard deviation (n-1 denominator); 0 when n == 1.
double sample_std(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> apply_init(const InitMethod& init,
                               const std::vector<double>& pre) {
  const std::size_t r = pre.size();
  if (init.kind == InitKind::RegularLdu) return pre;
  std::vector<double> z(r);
  SplitMix64 rng(init.seed);
  const double mean = mean_of(pre);
  switch (init.kind) {
    case InitKind::Constant:
      std::fill(z.begin(), z.end(), mean);
      break;
    case InitKind::UniformSym1:
      for (auto& v : z) v = rng.uniform(-1.0, 1.0);
      break;
    case InitKind::UniformMeanHalf:
      for (auto& v : z) v = rng.uniform(-mean / 2.0, mean / 2.0);
      break;
    case InitKind::NormalStd:
      for (auto& v : z) v = rng.normal();
      break;
    case InitKind::NormalMatched: {
      const double sd = sample_std(pre);
      for (auto& v : z) v = rng.normal(mean, sd);
      break;
    }
    case InitKind::Zeros:
      break;
    case InitKind::Ones:
      std::fill(z.begin(), z.end(), 1.0);
      break;
    case InitKind::RegularLdu:
      break;
  }
  return z;
}

// delta with an explicit diagonal vector; shared by init (pre-init diag)
// and delta_w (trainable diag).
DenseMatrix factored_delta(const LolduAdapter& a,
                           std::span<const double> diag, double sigma) {
  DenseMatrix scaled = a.upper_r;
  for (std::size_t i = 0; i < a.rank; ++i) {
    auto row = scaled.row(i);
    for (double& v : row) v *= diag[i];
  }
  DenseMatrix prod = matmul(a.lower_r, scaled);
  for (double& v : prod.data()) v *= sigma;
  return unpermute_rows(prod, a.perm);
}

}  // namespace

const char* init_kind_name(InitKind k) {
  return kInitNames[static_cast<std::size_t>(k)];
}

InitKind init_kind_from_name(const std::string& name) {
  for (std::size_t i = 0; i < std::size(kInitNames); ++i)
    if (name == kInitNames[i]) return static_cast<InitKind>(i);
  throw BadInput("unknown init method: " + name);
}

LolduAdapter init_adapter(const DenseMatrix& w0, std::size_t rank,
                          double alpha, InitMethod init) {
  const std::size_t k = std::min(w0.rows(), w0.cols());
  if (rank < 1 || rank > k)
    throw RankOutOfRange("rank " + std::to_string(rank) +
                         " outside [1, " + std::to_string(k) + "]");
  if (!(alpha > 0.0)) throw BadInput("alpha must be positive");

  LduFactors f = ldu_factorize(w0);

  LolduAdapter a;
  a.perm = std::move(f.perm);
  a.rank = rank;
  a.alpha = alpha;
  a.init = init;
  a.lower_r = DenseMatrix(w0.rows(), rank);
  for (std::size_t i = 0; i < w0.rows(); ++i)
    for (std::size_t j = 0; j < rank; ++j) a.lower_r(i, j) = f.lower(i, j);
  a.upper_r = DenseMatrix(rank, w0.cols());
  for (std::size_t i = 0; i < rank; ++i)
    for (std::size_t j = 0; j < w0.cols(); ++j) a.upper_r(i, j) = f.upper(i, j);

  std::vector<double> pre(f.diag.begin(), f.diag.begin() + rank);
  a.sigma = alpha / static_cast<double>(rank);
  a.frozen_diag_norm = vec_norm(pre);

  // Residual uses the pre-init diagonal; the heuristic overwrite below
  // therefore shifts the effective function for any init != RegularLdu.
  DenseMatrix approx = factored_delta(a, pre, a.sigma);
  a.residual = w0;
  for (std::size_t i = 0; i < a.residual.data().size(); ++i)
    a.residual.data()[i] -= approx.data()[i];

  a.diag_r = apply_init(init, pre);
  return a;
}

DenseMatrix delta_w(const LolduAdapter& a) {
  return factored_delta(a, a.diag_r, a.sigma);
}

DenseMatrix merged_weight(const LolduAdapter& a) {
  DenseMatrix out = delta_w(a);
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] += a.residual.data()[i];
  return out;
}

std::vector<double> forward(const LolduAdapter& a, std::span<const double> x) {
  if (x.size() != a.in_dim()) throw ShapeMismatch("forward: input length");
  std::vector<double> h = matvec(a.residual, x);
  std::vector<double> u = matvec(a.upper_r, x);
  for (std::size_t i = 0; i < a.rank; ++i) u[i] *= a.diag_r[i];
  std::vector<double> w = matvec(a.lower_r, u);
  for (std::size_t j = 0; j < w.size(); ++j) h[a.perm[j]] += a.sigma * w[j];
  return h;
}

AdapterGradients gradients(const LolduAdapter& a, std::span<const double> x,
                           std::span<const double> upstream) {
  if (x.size() != a.in_dim() || upstream.size() != a.out_dim())
    throw ShapeMismatch("gradients: input/upstream length");
  const std::size_t m = a.out_dim();
  // gp = P * upstream: gp[j] pairs with row j of the pivoted factors
  std::vector<double> gp(m);
  for (std::size_t j = 0; j < m; ++j) gp[j] = upstream[a.perm[j]];
  std::vector<double> t = matvec_t(a.lower_r, gp);   // L_r^T gp, length r
  std::vector<double> u = matvec(a.upper_r, x);      // U_r x, length r
  AdapterGradients g;
  g.diag.resize(a.rank);
  for (std::size_t i = 0; i < a.rank; ++i) {
    g.diag[i] = a.sigma * t[i] * u[i];
    g.sigma += t[i] * a.diag_r[i] * u[i];
  }
  return g;
}

std::size_t trainable_param_count(const LolduAdapter& a) { return a.rank + 1; }

DenseMatrix forward_batch(const LolduAdapter& a, const DenseMatrix& x) {
  if (x.cols() != a.in_dim()) throw ShapeMismatch("forward_batch: input dim");
  DenseMatrix h = matmul_nt(x, a.residual);  // B x m
  DenseMatrix u = matmul_nt(x, a.upper_r);   // B x r
  for (std::size_t b = 0; b < u.rows(); ++b)
    for (std::size_t i = 0; i < a.rank; ++i) u(b, i) *= a.diag_r[i];
  DenseMatrix w = matmul_nt(u, a.lower_r);   // B x m, pivoted order
  for (std::size_t b = 0; b < h.rows(); ++b)
    for (std::size_t j = 0; j < w.cols(); ++j)
      h(b, a.perm[j]) += a.sigma * w(b, j);
  return h;
}

AdapterGradients gradients_batch(const LolduAdapter& a, const DenseMatrix& x,
                                 const DenseMatrix& upstream) {
  if (x.cols() != a.in_dim() || upstream.cols() != a.out_dim() ||
      x.rows() != upstream.rows())
    throw ShapeMismatch("gradients_batch: shapes");
  const std::size_t batch = x.rows();
  DenseMatrix gp(batch, a.out_dim());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < a.out_dim(); ++j)
      gp(b, j) = upstream(b, a.perm[j]);
  DenseMatrix t = matmul(gp, a.lower_r);   // B x r
  DenseMatrix u = matmul_nt(x, a.upper_r); // B x r
  AdapterGradients g;
  g.diag.assign(a.rank, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a.rank; ++i) {
      const double tu = t(b, i) * u(b, i);
      g.diag[i] += a.sigma * tu;
      g.sigma += a.diag_r[i] * tu;
    }
  return g;
}

DenseMatrix input_gradients_batch(const LolduAdapter& a,
                                  const DenseMatrix& upstream) {
  if (upstream.cols() != a.out_dim())
    throw ShapeMismatch("input_gradients_batch: upstream dim");
  const std::size_t batch = upstream.rows();
  DenseMatrix xbar = matmul(upstream, a.residual);  // B x n
  DenseMatrix gp(batch, a.out_dim());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < a.out_dim(); ++j)
      gp(b, j) = upstream(b, a.perm[j]);
  DenseMatrix t = matmul(gp, a.lower_r);  // B x r
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < a.rank; ++i)
      t(b, i) *= a.sigma * a.diag_r[i];
  DenseMatrix adj = matmul(t, a.upper_r);  // B x n
  for (std::size_t i = 0; i < xbar.data().size(); ++i)
    xbar.data()[i] += adj.data()[i];
  return xbar;
}

// --- LoRA -------------------------------------------------------------------

LoraAdapter init_lora(const DenseMatrix& w0, std::size_t rank, double alpha,
                      std::uint64_t seed) {
  const std::size_t k = std::min(w0.rows(), w0.cols());
  if (rank < 1 || rank > k)
    throw RankOutOfRange("lora rank " + std::to_string(rank) +
                         " outside [1, " + std::to_string(k) + "]");
  if (!(alpha > 0.0)) throw BadInput("alpha must be positive");
  LoraAdapter l;
  l.base = w0;
  l.rank = rank;
  l.alpha = alpha;
  l.seed = seed;
  l.b = DenseMatrix(w0.rows(), rank);  // zeros: delta starts at 0
  l.a = DenseMatrix(rank, w0.cols());
  SplitMix64 rng(seed);
  for (auto& v : l.a.data()) v = rng.normal(0.0, 0.02);
  return l;
}

DenseMatrix lora_delta_w(const LoraAdapter& l) {
  DenseMatrix d = matmul(l.b, l.a);
  const double s = l.scaling();
  for (double& v : d.data()) v *= s;
  return d;
}

DenseMatrix lora_merged_weight(const LoraAdapter& l) {
  DenseMatrix out = lora_delta_w(l);
  for (std::size_t i = 0; i < out.data().size(); ++i)
    out.data()[i] += l.base.data()[i];
  return out;
}

std::vector<double> lora_forward(const LoraAdapter& l,
                                 std::span<const double> x) {
  if (x.size() != l.in_dim()) throw ShapeMismatch("lora_forward: input");
  std::vector<double> h = matvec(l.base, x);
  std::vector<double> u = matvec(l.a, x);
  std::vector<double> w = matvec(l.b, u);
  const double s = l.scaling();
  for (std::size_t i = 0; i < h.size(); ++i) h[i] += s * w[i];
  return h;
}

LoraGradients lora_gradients(const LoraAdapter& l, std::span<const double> x,
                             std::span<const double> upstream) {
  if (x.size() != l.in_dim() || upstream.size() != l.out_dim())
    throw ShapeMismatch("lora_gradients: shapes");
  const double s = l.scaling();
  LoraGradients g;
  g.b = DenseMatrix(l.out_dim(), l.rank);
  g.a = DenseMatrix(l.rank, l.in_dim());
  std::vector<double> u = matvec(l.a, x);            // r
  std::vector<double> bt = matvec_t(l.b, upstream);  // r
  for (std::size_t i = 0; i < l.out_dim(); ++i)
    for (std::size_t j = 0; j < l.rank; ++j)
      g.b(i, j) = s * upstream[i] * u[j];
  for (std::size_t i = 0; i < l.rank; ++i)
    for (std::size_t j = 0; j < l.in_dim(); ++j)
      g.a(i, j) = s * bt[i] * x[j];
  return g;
}

std::size_t lora_trainable_param_count(const LoraAdapter& l) {
  return l.rank * (l.out_dim() + l.in_dim());
}

DenseMatrix lora_forward_batch(const LoraAdapter& l, const DenseMatrix& x) {
  DenseMatrix h = matmul_nt(x, l.base);
  DenseMatrix u = matmul_nt(x, l.a);
  DenseMatrix w = matmul_nt(u, l.b);
  const double s = l.scaling();
  for (std::size_t i = 0; i < h.data().size(); ++i)
    h.data()[i] += s * w.data()[i];
  return h;
}

LoraGradients lora_gradients_batch(const LoraAdapter& l, const DenseMatrix& x,
                                   const DenseMatrix& upstream) {
  const double s = l.scaling();
  LoraGradients g;
  DenseMatrix u = matmul_nt(x, l.a);          // B x r
  g.b = matmul_tn(upstream, u);               // m x r
  for (double& v : g.b.data()) v *= s;
  DenseMatrix gb = matmul(upstream, l.b);     // B x r
  g.a = matmul_tn(gb, x);                     // r x n
  for (double& v : g.a.data()) v *= s;
  return g;
}

DenseMatrix lora_input_gradients_batch(const LoraAdapter& l,
                                       const DenseMatrix& upstream) {
  DenseMatrix xbar = matmul(upstream, l.base);
  DenseMatrix gb = matmul(upstream, l.b);
  DenseMatrix adj = matmul(gb, l.a);
  const double s = l.scaling();
  for (std::size_t i = 0; i < xbar.data().size(); ++i)
    xbar.data()[i] += s * adj.data()[i];
  return xbar;
}

}  // namespace loldu
