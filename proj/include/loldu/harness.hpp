#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "loldu/adapter.hpp"
#include "loldu/io.hpp"
#include "loldu/optim.hpp"
#include "loldu/task.hpp"

namespace loldu::harness {

// Shared training knobs. Fine-tune runs and the pre-training phase use
// the same optimizer family so method comparisons stay apples-to-apples.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  double lr = 3e-3;
  optim::OptMethod optimizer = optim::OptMethod::Adam;
  std::size_t warmup_steps = 0;
  // Projection radius for diag_r: epsilon_factor times the norm of the
  // truncated factorization diagonal, unless `epsilon` overrides it.
  double epsilon_factor = 10.0;
  std::optional<double> epsilon;
  double sigma_min = 1e-6;
  std::size_t pretrain_epochs = 200;
  double pretrain_lr = 3e-3;
};

// A fine-tuning method. For adapter methods the final (head) layer stays
// fully trainable unless it is itself in the adapted set -- every method
// must be able to move the readout, mirroring common practice; the
// reported parameter counts exclude the head for adapter methods.
struct Method {
  enum class Kind { FullFt, LinearProbe, Lora, Loldu };
  Kind kind = Kind::Loldu;
  std::size_t rank = 0;  // 0 = full rank per adapted matrix
  std::optional<double> alpha;  // empty = alpha equals the resolved rank
  InitKind init = InitKind::RegularLdu;
  bool sigma_trainable = true;

  static Method full_ft() {
    Method m;
    m.kind = Kind::FullFt;
    return m;
  }
  static Method linear_probe() {
    Method m;
    m.kind = Kind::LinearProbe;
    return m;
  }
  static Method lora(std::size_t rank) {
    Method m;
    m.kind = Kind::Lora;
    m.rank = rank;
    return m;
  }
  static Method loldu(std::size_t rank, InitKind init = InitKind::RegularLdu,
                      bool sigma_trainable = true) {
    Method m;
    m.kind = Kind::Loldu;
    m.rank = rank;
    m.init = init;
    m.sigma_trainable = sigma_trainable;
    return m;
  }

  std::string name() const;
};

struct EpochStats {
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double eval_loss = std::numeric_limits<double>::quiet_NaN();
  double eval_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct RunMetrics {
  std::string run_id;
  // epochs[0] is the pre-step evaluation; train_loss there is NaN.
  std::vector<EpochStats> epochs;
  std::size_t trainable_params = 0;
  double wall_seconds = 0.0;  // never written to metrics files
  bool diverged = false;
  std::uint64_t merged_checksum = 0;
  std::uint64_t decompositions = 0;

  double final_eval_loss() const { return epochs.back().eval_loss; }
  double final_eval_accuracy() const { return epochs.back().eval_accuracy; }
};

// Trains a fresh model on the pre-train split until it tracks the task;
// the returned model is the frozen W0 snapshot fine-tuning starts from.
ToyModel pretrain(const SyntheticTask& task, const ModelSpec& spec,
                  const TrainConfig& cfg, RunMetrics* metrics = nullptr);

struct FinetuneResult {
  RunMetrics metrics;
  ToyModel model;  // dense weights after the run (frozen ones unchanged)
  std::vector<std::pair<std::size_t, LolduAdapter>> loldu_adapters;
  std::vector<std::pair<std::size_t, LoraAdapter>> lora_adapters;
};

// Fine-tunes on the shifted task. Only the method's declared parameters
// move; everything else is checksum-verified unchanged. Divergence is
// recorded in the metrics, not thrown.
FinetuneResult finetune(const ToyModel& pretrained, const Method& method,
                        const SyntheticTask& task, const TrainConfig& cfg);

// --- ablation grids --------------------------------------------------------

struct AblationSpec {
  std::vector<Method> methods;
  // Axes; an empty axis means "use the method's own value". rank/init/
  // sigma axes apply to the methods that have those knobs.
  std::vector<std::size_t> ranks;
  std::vector<InitKind> inits;
  std::vector<bool> sigma_modes;  // true = trainable sigma
  std::vector<double> lrs;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct CellResult {
  std::string label;
  Method method;
  double lr = 0.0;
  std::vector<RunMetrics> runs;  // one per seed, in spec order

  double median_final_eval_loss() const;
  double median_final_eval_accuracy() const;
};

struct AblationResult {
  std::vector<CellResult> cells;
};

// One fine-tune run per (cell, seed). Pre-trained models are shared per
// seed; cells are independent and may run on `jobs` threads without
// changing any result.
AblationResult ablate(const AblationSpec& spec, const SyntheticTask& base_task,
                      const ModelSpec& mspec, const TrainConfig& cfg,
                      std::size_t jobs = 1);

// --- gradient checking -------------------------------------------------

struct GradcheckReport {
  double max_rel_err = 0.0;
  std::size_t cases = 0;
  bool pass = false;
  std::string worst_case;
};

// Compares analytic adapter and LoRA gradients against central finite
// differences (step 1e-5) on random instances. `corrupt_sign` flips the
// analytic diag gradient -- the negative control the suite must catch.
GradcheckReport gradcheck_suite(std::size_t count, std::uint64_t seed,
                                bool corrupt_sign = false);

// --- helpers shared by the CLI and the acceptance suite -----------------

std::uint64_t adapter_frozen_checksum(const LolduAdapter& a);
double median(std::vector<double> values);
// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// Flattens run metrics into io records. Per-epoch rows carry epoch
// numbers; run-level rows (trainable_params, diverged, merged_checksum
// truncated to 52 bits so the double holds it exactly) use epoch -1.
std::vector<io::MetricsRecord> to_records(const RunMetrics& run,
                                          const std::string& cell);

}  // namespace loldu::harness
