#include "loldu/harness.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <thread>

#include "loldu/hash.hpp"

namespace loldu::harness {

namespace {

// Run-level seed streams; disjoint from the task data streams.
enum RunStream : std::uint64_t {
  kFinetuneShuffle = 101,
  kAdapterInit = 102,
  kPretrainShuffle = 103,
};

struct Trainables {
  std::vector<std::size_t> dense;  // layers whose weight+bias train
  std::map<std::size_t, LolduAdapter> loldu;
  std::map<std::size_t, LoraAdapter> lora;
  bool sigma_trainable = true;
};

ForwardTrace adapted_forward(const ToyModel& net, const Trainables& tr,
                             const DenseMatrix& x) {
  ForwardTrace trace;
  DenseMatrix current = x;
  const std::size_t last = net.layers.size() - 1;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    trace.inputs.push_back(current);
    DenseMatrix z;
    if (auto it = tr.loldu.find(l); it != tr.loldu.end())
      z = forward_batch(it->second, current);
    else if (auto jt = tr.lora.find(l); jt != tr.lora.end())
      z = lora_forward_batch(jt->second, current);
    else
      z = matmul_nt(current, net.layers[l].weight);
    add_bias_rows(z, net.layers[l].bias);
    trace.preacts.push_back(z);
    current = l < last ? apply_activation(net.activation, z) : std::move(z);
  }
  trace.output = std::move(current);
  return trace;
}

DenseMatrix gather_rows(const DenseMatrix& src,
                        std::span<const std::size_t> idx) {
  DenseMatrix out(idx.size(), src.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto from = src.row(idx[i]);
    auto to = out.row(i);
    std::copy(from.begin(), from.end(), to.begin());
  }
  return out;
}

// Minibatch training over a model plus its trainable bindings. One
// instance per run; everything it touches is owned by that run.
class Engine {
 public:
  Engine(ToyModel& net, Trainables& tr, const TrainConfig& cfg, double lr,
         std::uint64_t shuffle_seed)
      : net_(net), tr_(tr), cfg_(cfg), lr_(lr), shuffle_rng_(shuffle_seed) {
    dense_w_.resize(net.layers.size());
    dense_b_.resize(net.layers.size());
    for (auto& [layer, adapter] : tr_.loldu) {
      optim::OptimState st;
      st.method = cfg.optimizer;
      st.lr = lr;
      st.warmup_steps = cfg.warmup_steps;
      st.projection.sigma_min = cfg.sigma_min;
      st.projection.epsilon =
          cfg.epsilon.value_or(cfg.epsilon_factor * adapter.frozen_diag_norm);
      loldu_states_.emplace(layer, st);
    }
  }

  // Returns false on divergence (non-finite loss or gradient).
  bool train_epoch(const Dataset& train, double& train_loss_out) {
    const std::size_t n = train.inputs.rows();
    if (order_.size() != n) {
      order_.resize(n);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
    for (std::size_t i = n; i > 1; --i)
      std::swap(order_[i - 1], order_[shuffle_rng_.below(i)]);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
      const std::size_t size = std::min(cfg_.batch_size, n - start);
      std::span<const std::size_t> idx(order_.data() + start, size);
      DenseMatrix bx = gather_rows(train.inputs, idx);
      DenseMatrix by = gather_rows(train.targets, idx);
      ForwardTrace trace = adapted_forward(net_, tr_, bx);
      const double loss = loss_value(net_.loss, trace.output, by);
      if (!std::isfinite(loss)) return false;
      loss_sum += loss * static_cast<double>(size);
      if (!backward_and_step(trace, by)) return false;
    }
    train_loss_out = loss_sum / static_cast<double>(n);
    return true;
  }

  EpochStats evaluate(const Dataset& eval) const {
    EpochStats s;
    DenseMatrix pred = adapted_forward(net_, tr_, eval.inputs).output;
    s.eval_loss = loss_value(net_.loss, pred, eval.targets);
    if (net_.loss == LossKind::SoftmaxCrossEntropy)
      s.eval_accuracy = accuracy(pred, eval.targets);
    return s;
  }

 private:
  bool backward_and_step(const ForwardTrace& trace, const DenseMatrix& by) {
    const std::size_t last = net_.layers.size() - 1;
    DenseMatrix d = loss_grad(net_.loss, trace.output, by);
    const double lr = warmed_lr();
    try {
      for (std::size_t l = last + 1; l-- > 0;) {
        DenseMatrix dz =
            l == last
                ? std::move(d)
                : activation_backward(net_.activation, trace.preacts[l], d);
        if (auto it = tr_.loldu.find(l); it != tr_.loldu.end()) {
          LolduAdapter& a = it->second;
          if (l > 0) d = input_gradients_batch(a, dz);
          AdapterGradients g = gradients_batch(a, trace.inputs[l], dz);
          // frozen sigma trains as a zero gradient: fresh Adam moments
          // stay zero, so the update is exactly zero
          optim::step(a, g.diag, tr_.sigma_trainable ? g.sigma : 0.0,
                      loldu_states_.at(l));
        } else if (auto jt = tr_.lora.find(l); jt != tr_.lora.end()) {
          LoraAdapter& lo = jt->second;
          if (l > 0) d = lora_input_gradients_batch(lo, dz);
          LoraGradients g = lora_gradients_batch(lo, trace.inputs[l], dz);
          if (!all_finite(g.b.data()) || !all_finite(g.a.data()))
            throw NonFiniteGradient("lora gradients non-finite");
          apply_dense(lora_w_[l].first, lo.b.data(), g.b.data(), lr);
          apply_dense(lora_w_[l].second, lo.a.data(), g.a.data(), lr);
        } else {
          const bool trains =
              std::find(tr_.dense.begin(), tr_.dense.end(), l) !=
              tr_.dense.end();
          if (l > 0) d = layer_input_gradients(net_.layers[l], dz);
          if (trains) {
            LayerGradients g = layer_gradients(trace.inputs[l], dz);
            if (!all_finite(g.weight.data()) || !all_finite(g.bias))
              throw NonFiniteGradient("dense gradients non-finite");
            apply_dense(dense_w_[l], net_.layers[l].weight.data(),
                        g.weight.data(), lr);
            apply_dense(dense_b_[l], net_.layers[l].bias, g.bias, lr);
          }
        }
      }
    } catch (const NonFiniteGradient&) {
      return false;
    }
    ++step_;
    return true;
  }

  double warmed_lr() const {
    if (cfg_.warmup_steps == 0 || step_ >= cfg_.warmup_steps) return lr_;
    return lr_ * static_cast<double>(step_ + 1) /
           static_cast<double>(cfg_.warmup_steps);
  }

  void apply_dense(AdamBuffer& buf, std::span<double> params,
                   std::span<const double> grads, double lr) {
    if (cfg_.optimizer == optim::OptMethod::Adam)
      buf.apply(params, grads, lr);
    else
      sgd_apply(params, grads, lr);
  }

  ToyModel& net_;
  Trainables& tr_;
  const TrainConfig& cfg_;
  double lr_;
  SplitMix64 shuffle_rng_;
  std::vector<std::size_t> order_;
  std::uint64_t step_ = 0;
  std::vector<AdamBuffer> dense_w_, dense_b_;
  std::map<std::size_t, std::pair<AdamBuffer, AdamBuffer>> lora_w_;
  std::map<std::size_t, optim::OptimState> loldu_states_;
};

std::uint64_t layer_checksum(const LinearLayer& layer) {
  std::uint64_t h = hash_doubles(layer.weight.data());
  return hash_doubles(layer.bias, h);
}

std::size_t resolve_rank(const Method& method, const DenseMatrix& w) {
  const std::size_t k = std::min(w.rows(), w.cols());
  return method.rank == 0 ? k : method.rank;
}

}  // namespace

std::string Method::name() const {
  switch (kind) {
    case Kind::FullFt:
      return "full_ft";
    case Kind::LinearProbe:
      return "linear_probe";
    case Kind::Lora:
      return "lora_r" + (rank == 0 ? std::string("full")
                                   : std::to_string(rank));
    case Kind::Loldu: {
      std::string n = "loldu_r" +
                      (rank == 0 ? std::string("full") : std::to_string(rank));
      n += std::string("_") + init_kind_name(init);
      if (!sigma_trainable) n += "_frozen_sigma";
      return n;
    }
  }
  return "unknown";
}

ToyModel pretrain(const SyntheticTask& task, const ModelSpec& spec,
                  const TrainConfig& cfg, RunMetrics* metrics) {
  SplitMix64 init_rng(model_init_seed(task));
  ToyModel model = make_model(spec, init_rng);

  RunMetrics local;
  RunMetrics& m = metrics ? *metrics : local;
  m.run_id = "pretrain_seed" + std::to_string(task.seed);
  m.trainable_params = 0;
  for (const auto& layer : model.layers)
    m.trainable_params += layer.weight.size() + layer.bias.size();

  Trainables tr;
  for (std::size_t l = 0; l < model.layers.size(); ++l) tr.dense.push_back(l);

  TrainConfig pcfg = cfg;
  pcfg.warmup_steps = 0;
  Engine engine(model, tr, pcfg, cfg.pretrain_lr,
                mix_seed(task.seed, kPretrainShuffle));

  Dataset train = make_dataset(task, Split::Pretrain);
  Dataset eval = make_dataset(task, Split::EvalBase);
  m.epochs.push_back(engine.evaluate(eval));
  for (std::size_t e = 0; e < cfg.pretrain_epochs; ++e) {
    double train_loss = 0.0;
    if (!engine.train_epoch(train, train_loss))
      throw Divergence("pretraining diverged at epoch " + std::to_string(e));
    EpochStats s = engine.evaluate(eval);
    s.train_loss = train_loss;
    m.epochs.push_back(s);
  }
  m.merged_checksum = model_checksum(model);
  return model;
}

FinetuneResult finetune(const ToyModel& pretrained, const Method& method,
                        const SyntheticTask& task, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  FinetuneResult result;
  result.model = pretrained;
  ToyModel& net = result.model;
  const std::size_t head = net.layers.size() - 1;

  RunMetrics& m = result.metrics;
  m.run_id = method.name() + "_seed" + std::to_string(task.seed);

  // Build the trainable bindings. The decomposition counter pins the
  // one-factorization-per-adapted-matrix contract over the whole run.
  const std::uint64_t decompositions_before = decompose_call_count();
  Trainables tr;
  tr.sigma_trainable = method.sigma_trainable;
  switch (method.kind) {
    case Method::Kind::FullFt:
      for (std::size_t l = 0; l < net.layers.size(); ++l)
        tr.dense.push_back(l);
      break;
    case Method::Kind::LinearProbe:
      tr.dense.push_back(head);
      break;
    case Method::Kind::Lora:
    case Method::Kind::Loldu: {
      bool head_adapted = false;
      for (std::size_t l : net.adapted_layers) {
        const DenseMatrix& w = net.layers[l].weight;
        const std::size_t r = resolve_rank(method, w);
        const double alpha =
            method.alpha.value_or(static_cast<double>(r));
        const std::uint64_t seed = mix_seed(task.seed, kAdapterInit + l);
        if (method.kind == Method::Kind::Lora) {
          tr.lora.emplace(l, init_lora(w, r, alpha, seed));
        } else {
          if (alpha > static_cast<double>(r))
            std::fprintf(stderr,
                         "warning: alpha %g > rank %zu; sigma starts outside "
                         "(0,1] and the first projection clamps it\n",
                         alpha, r);
          tr.loldu.emplace(
              l, init_adapter(w, r, alpha, InitMethod{method.init, seed}));
        }
        head_adapted |= l == head;
      }
      if (!head_adapted) tr.dense.push_back(head);
      break;
    }
  }
  m.decompositions = decompose_call_count() - decompositions_before;

  // Parameter accounting follows the comparison-table convention: the
  // head is excluded for adapter methods and linear probing because
  // every method trains it.
  switch (method.kind) {
    case Method::Kind::FullFt:
      for (const auto& layer : net.layers)
        m.trainable_params += layer.weight.size() + layer.bias.size();
      break;
    case Method::Kind::LinearProbe:
      break;
    case Method::Kind::Lora:
      for (const auto& [l, lo] : tr.lora)
        m.trainable_params += lora_trainable_param_count(lo);
      break;
    case Method::Kind::Loldu:
      for (const auto& [l, a] : tr.loldu)
        m.trainable_params += trainable_param_count(a);
      break;
  }

  // Frozen-state snapshot for the isolation proof.
  std::vector<std::uint64_t> layer_sums(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l)
    layer_sums[l] = layer_checksum(net.layers[l]);
  std::map<std::size_t, std::uint64_t> frozen_adapter_sums;
  for (const auto& [l, a] : tr.loldu)
    frozen_adapter_sums[l] = adapter_frozen_checksum(a);

  Dataset train = make_dataset(task, Split::Finetune);
  Dataset eval = make_dataset(task, Split::EvalShifted);

  Engine engine(net, tr, cfg, cfg.lr, mix_seed(task.seed, kFinetuneShuffle));
  m.epochs.push_back(engine.evaluate(eval));
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    double train_loss = 0.0;
    if (!engine.train_epoch(train, train_loss)) {
      m.diverged = true;
      m.epochs.push_back(engine.evaluate(eval));
      break;
    }
    EpochStats s = engine.evaluate(eval);
    s.train_loss = train_loss;
    m.epochs.push_back(s);
    if (!std::isfinite(s.eval_loss)) {
      m.diverged = true;
      break;
    }
  }

  // Isolation: anything not declared trainable must be bit-identical.
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const bool dense_trained =
        std::find(tr.dense.begin(), tr.dense.end(), l) != tr.dense.end();
    if (!dense_trained && layer_checksum(net.layers[l]) != layer_sums[l])
      throw std::logic_error("finetune mutated a frozen layer");
  }
  for (const auto& [l, a] : tr.loldu)
    if (adapter_frozen_checksum(a) != frozen_adapter_sums.at(l))
      throw std::logic_error("finetune mutated frozen adapter factors");

  // Merged-weight checksum over the effective weights.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (auto it = tr.loldu.find(l); it != tr.loldu.end())
      h = hash_doubles(merged_weight(it->second).data(), h);
    else if (auto jt = tr.lora.find(l); jt != tr.lora.end())
      h = hash_doubles(lora_merged_weight(jt->second).data(), h);
    else
      h = hash_doubles(net.layers[l].weight.data(), h);
    h = hash_doubles(net.layers[l].bias, h);
  }
  m.merged_checksum = h;

  for (auto& [l, a] : tr.loldu)
    result.loldu_adapters.emplace_back(l, std::move(a));
  for (auto& [l, lo] : tr.lora)
    result.lora_adapters.emplace_back(l, std::move(lo));

  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return result;
}

double CellResult::median_final_eval_loss() const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (!r.diverged && std::isfinite(r.final_eval_loss()))
      v.push_back(r.final_eval_loss());
  return median(std::move(v));
}

double CellResult::median_final_eval_accuracy() const {
  std::vector<double> v;
  for (const auto& r : runs)
    if (!r.diverged && std::isfinite(r.final_eval_accuracy()))
      v.push_back(r.final_eval_accuracy());
  return median(std::move(v));
}

AblationResult ablate(const AblationSpec& spec, const SyntheticTask& base_task,
                      const ModelSpec& mspec, const TrainConfig& cfg,
                      std::size_t jobs) {
  if (spec.methods.empty() || spec.seeds.empty())
    throw ConfigError("ablation grid is empty");

  struct Cell {
    Method method;
    double lr;
    std::string label;
  };
  std::vector<Cell> cells;
  const std::vector<double> lrs = spec.lrs.empty()
                                      ? std::vector<double>{cfg.lr}
                                      : spec.lrs;
  for (const Method& base : spec.methods) {
    const bool has_rank = base.kind == Method::Kind::Lora ||
                          base.kind == Method::Kind::Loldu;
    const bool is_loldu = base.kind == Method::Kind::Loldu;
    const auto ranks = has_rank && !spec.ranks.empty()
                           ? spec.ranks
                           : std::vector<std::size_t>{base.rank};
    const auto inits = is_loldu && !spec.inits.empty()
                           ? spec.inits
                           : std::vector<InitKind>{base.init};
    const auto sigmas = is_loldu && !spec.sigma_modes.empty()
                            ? spec.sigma_modes
                            : std::vector<bool>{base.sigma_trainable};
    for (std::size_t rank : ranks)
      for (InitKind init : inits)
        for (bool sigma : sigmas)
          for (double lr : lrs) {
            Method method = base;
            method.rank = rank;
            method.init = init;
            method.sigma_trainable = sigma;
            char buf[64];
            std::snprintf(buf, sizeof buf, "%g", lr);
            std::string label = "method=" + method.name();
            if (has_rank)
              label += "|rank=" + (rank == 0 ? std::string("full")
                                             : std::to_string(rank));
            if (is_loldu) {
              label += std::string("|init=") + init_kind_name(init);
              label += std::string("|sigma=") +
                       (sigma ? "trainable" : "frozen");
            }
            label += std::string("|lr=") + buf;
            cells.push_back({method, lr, label});
          }
  }

  // Rank axes must fit every adapted matrix; catch this before any
  // threads start instead of failing mid-grid.
  std::vector<std::size_t> adapted = mspec.adapted_layers;
  if (adapted.empty())
    for (std::size_t l = 0; l + 2 < mspec.dims.size(); ++l)
      adapted.push_back(l);
  std::size_t max_rank = std::numeric_limits<std::size_t>::max();
  for (std::size_t l : adapted) {
    if (l + 1 >= mspec.dims.size())
      throw ConfigError("adapted layer index out of range");
    max_rank = std::min(max_rank, std::min(mspec.dims[l], mspec.dims[l + 1]));
  }
  for (const Cell& cell : cells) {
    const bool has_rank = cell.method.kind == Method::Kind::Lora ||
                          cell.method.kind == Method::Kind::Loldu;
    if (has_rank && cell.method.rank > max_rank)
      throw ConfigError("rank " + std::to_string(cell.method.rank) +
                        " exceeds min adapted dimension " +
                        std::to_string(max_rank));
  }

  // One pretrained model per repetition seed, shared across cells.
  std::map<std::uint64_t, ToyModel> pretrained;
  for (std::uint64_t seed : spec.seeds) {
    if (pretrained.count(seed)) continue;
    SyntheticTask task = base_task;
    task.seed = seed;
    pretrained.emplace(seed, pretrain(task, mspec, cfg));
  }

  AblationResult result;
  result.cells.resize(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    result.cells[c].label = cells[c].label;
    result.cells[c].method = cells[c].method;
    result.cells[c].lr = cells[c].lr;
    result.cells[c].runs.resize(spec.seeds.size());
  }

  struct Job {
    std::size_t cell;
    std::size_t seed_index;
  };
  std::vector<Job> queue;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) queue.push_back({c, s});

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= queue.size()) return;
      const Job job = queue[i];
      try {
        SyntheticTask task = base_task;
        task.seed = spec.seeds[job.seed_index];
        TrainConfig run_cfg = cfg;
        run_cfg.lr = cells[job.cell].lr;
        FinetuneResult run = finetune(pretrained.at(task.seed),
                                      cells[job.cell].method, task, run_cfg);
        result.cells[job.cell].runs[job.seed_index] = std::move(run.metrics);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  jobs = std::max<std::size_t>(1, jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return result;
}

namespace {

double fd_scalar(const std::function<double()>& evaluate, double& param) {
  constexpr double kStep = 1e-5;
  const double saved = param;
  param = saved + kStep;
  const double up = evaluate();
  param = saved - kStep;
  const double down = evaluate();
  param = saved;
  return (up - down) / (2.0 * kStep);
}

// Norm-to-norm relative gap; exactly zero when both sides vanish.
double gradient_gap(std::span<const double> analytic,
                    std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff += d * d;
    na += analytic[i] * analytic[i];
    nb += numeric[i] * numeric[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nb));
  return scale == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace

GradcheckReport gradcheck_suite(std::size_t count, std::uint64_t seed,
                                bool corrupt_sign) {
  GradcheckReport report;
  SplitMix64 rng(seed);
  auto note_case = [&](double err, const std::string& label) {
    ++report.cases;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_case = label;
    }
  };

  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t m = 3 + rng.below(8);
    const std::size_t n = 3 + rng.below(8);
    const std::size_t k = std::min(m, n);
    const std::size_t r = 1 + rng.below(k);

    DenseMatrix w0(m, n);
    for (;;) {
      for (double& v : w0.data()) v = rng.normal();
      try {
        lu_decompose(w0);
        break;
      } catch (const SingularPivot&) {
      }
    }
    InitMethod init{static_cast<InitKind>(rng.below(8)), rng.next_u64()};
    LolduAdapter a = init_adapter(w0, r, static_cast<double>(r), init);
    // generic trainable state, away from the init point
    for (double& z : a.diag_r) z += 0.3 * rng.normal();
    a.sigma = 0.3 + 0.6 * rng.uniform();

    std::vector<double> x(n), up(m);
    for (double& v : x) v = rng.normal();
    for (double& v : up) v = rng.normal();

    AdapterGradients g = gradients(a, x, up);
    if (corrupt_sign)
      for (double& v : g.diag) v = -v;

    auto objective = [&] { return dot(forward(a, x), up); };
    std::vector<double> analytic = g.diag;
    analytic.push_back(g.sigma);
    std::vector<double> numeric(r + 1);
    for (std::size_t i = 0; i < r; ++i)
      numeric[i] = fd_scalar(objective, a.diag_r[i]);
    numeric[r] = fd_scalar(objective, a.sigma);
    note_case(gradient_gap(analytic, numeric),
              "loldu m=" + std::to_string(m) + " n=" + std::to_string(n) +
                  " r=" + std::to_string(r));

    // LoRA baseline on the same shapes.
    LoraAdapter lo = init_lora(w0, r, static_cast<double>(r), rng.next_u64());
    for (double& v : lo.b.data()) v = 0.1 * rng.normal();
    auto lora_objective = [&] { return dot(lora_forward(lo, x), up); };
    LoraGradients lg = lora_gradients(lo, x, up);
    std::vector<double> lora_analytic = lg.b.data();
    lora_analytic.insert(lora_analytic.end(), lg.a.data().begin(),
                         lg.a.data().end());
    std::vector<double> lora_numeric;
    lora_numeric.reserve(lora_analytic.size());
    for (double& p : lo.b.data())
      lora_numeric.push_back(fd_scalar(lora_objective, p));
    for (double& p : lo.a.data())
      lora_numeric.push_back(fd_scalar(lora_objective, p));
    note_case(gradient_gap(lora_analytic, lora_numeric),
              "lora m=" + std::to_string(m) + " n=" + std::to_string(n) +
                  " r=" + std::to_string(r));
  }

  report.pass = report.max_rel_err <= 1e-5;
  return report;
}

std::uint64_t adapter_frozen_checksum(const LolduAdapter& a) {
  std::uint64_t h =
      fnv1a64(a.perm.data(), a.perm.size() * sizeof(a.perm[0]));
  h = hash_doubles(a.lower_r.data(), h);
  h = hash_doubles(a.upper_r.data(), h);
  h = hash_doubles(a.residual.data(), h);
  const double alpha = a.alpha;
  h = fnv1a64(&alpha, sizeof alpha, h);
  return h;
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid]
                           : 0.5 * (values[mid - 1] + values[mid]);
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ShapeMismatch("spearman needs two equal series, length >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> rank(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = avg;
      i = j + 1;
    }
    return rank;
  };
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

std::vector<io::MetricsRecord> to_records(const RunMetrics& run,
                                          const std::string& cell) {
  std::vector<io::MetricsRecord> records;
  auto push = [&](long epoch, const std::string& metric, double value) {
    if (!std::isfinite(value)) return;  // the diverged flag carries the event
    records.push_back({run.run_id, cell, epoch, metric, value});
  };
  for (std::size_t e = 0; e < run.epochs.size(); ++e) {
    const auto& s = run.epochs[e];
    push(static_cast<long>(e), "train_loss", s.train_loss);
    push(static_cast<long>(e), "eval_loss", s.eval_loss);
    push(static_cast<long>(e), "eval_accuracy", s.eval_accuracy);
  }
  push(-1, "trainable_params", static_cast<double>(run.trainable_params));
  push(-1, "diverged", run.diverged ? 1.0 : 0.0);
  push(-1, "decompositions", static_cast<double>(run.decompositions));
  // 52 low bits fit a double exactly
  push(-1, "merged_checksum",
       static_cast<double>(run.merged_checksum & ((1ull << 52) - 1)));
  return records;
}

}  // namespace loldu::harness
