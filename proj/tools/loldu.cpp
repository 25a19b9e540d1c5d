// loldu: command-line front end for LDU-based adapter construction,
// training, ablation grids, merging and inspection.
//
// Exit codes (stable contract for scripting):
//   0 success, 1 check failure, 2 numeric/domain error, 3 bad input,
//   4 bad config.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "loldu/config.hpp"
#include "loldu/harness.hpp"
#include "loldu/io.hpp"

namespace fs = std::filesystem;
using namespace loldu;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitBadInput = 3;
constexpr int kExitBadConfig = 4;

struct DiagStats {
  double min, max, mean, std;
};

DiagStats diag_stats(std::span<const double> z) {
  DiagStats s{z[0], z[0], 0.0, 0.0};
  for (double v : z) {
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    s.mean += v;
  }
  s.mean /= static_cast<double>(z.size());
  for (double v : z) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / static_cast<double>(z.size()));
  return s;
}

std::uint64_t env_or_flag_seed(const CLI::App* cmd, std::uint64_t flag_value) {
  if (cmd->count("--seed") > 0) return flag_value;
  if (const char* env = std::getenv("LOLDU_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("LOLDU_SEED is not an unsigned integer");
    }
  }
  return flag_value;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoFailure("write failed: " + path);
}

void write_metrics_files(const std::string& dir,
                         const std::vector<io::MetricsRecord>& records) {
  std::ofstream jsonl(dir + "/metrics.jsonl");
  if (!jsonl) throw IoFailure("cannot open metrics.jsonl");
  io::write_metrics_jsonl(jsonl, records);
  std::ofstream csv(dir + "/metrics.csv");
  if (!csv) throw IoFailure("cannot open metrics.csv");
  io::write_metrics_csv(csv, records);
}

int cmd_decompose(const std::string& input, const std::string& output,
                  std::size_t rank, double alpha, bool alpha_set,
                  const std::string& init_name, std::uint64_t seed,
                  const std::string& mode, bool f32, bool jitter,
                  bool binary_in) {
  DenseMatrix w = io::read_matrix_file(input, binary_in);
  const std::size_t k = std::min(w.rows(), w.cols());
  const std::size_t r = rank == 0 ? k : rank;
  const double a = alpha_set ? alpha : static_cast<double>(r);
  InitMethod init{init_kind_from_name(init_name), seed};

  LolduAdapter adapter;
  try {
    adapter = init_adapter(w, r, a, init);
  } catch (const SingularPivot&) {
    if (!jitter) throw;
    // escape hatch for rank-deficient inputs: tiny uniform noise, one retry
    const double mag = 1e-10 * max_abs(w);
    SplitMix64 jrng(seed ^ 0x6a09e667f3bcc909ull);
    for (double& v : w.data()) v += mag * jrng.uniform(-1.0, 1.0);
    std::fprintf(stderr, "warning: singular pivot; retrying with jitter %g\n",
                 mag);
    adapter = init_adapter(w, r, a, init);
  }

  io::SaveOptions opts;
  opts.mode = mode == "compact" ? io::SaveMode::Compact : io::SaveMode::Full;
  opts.f32 = f32;
  io::write_file_bytes(output, io::save_adapter(adapter, opts));

  const DiagStats zs = diag_stats(adapter.diag_r);
  std::printf("wrote %s (%s mode, %zu bytes)\n", output.c_str(), mode.c_str(),
              io::adapter_file_size(w.rows(), w.cols(), r, opts));
  std::printf("shape %zu x %zu, rank %zu, alpha %g, sigma %g, init %s\n",
              w.rows(), w.cols(), r, a, adapter.sigma,
              init_kind_name(init.kind));
  std::printf("residual frobenius norm %.17g\n",
              frobenius_norm(adapter.residual));
  std::printf("z_r min %.6g max %.6g mean %.6g std %.6g\n", zs.min, zs.max,
              zs.mean, zs.std);
  return kExitOk;
}

int cmd_merge(const std::string& adapter_path, const std::string& base_path,
              const std::string& output, bool binary_in, bool binary_out) {
  auto bytes = io::read_file_bytes(adapter_path);
  LolduAdapter adapter;
  if (base_path.empty()) {
    adapter = io::load_adapter(bytes);
  } else {
    DenseMatrix base = io::read_matrix_file(base_path, binary_in);
    adapter = io::load_adapter(bytes, &base);
  }
  DenseMatrix merged = merged_weight(adapter);
  io::write_matrix_file(output, merged, binary_out);
  std::printf("wrote %s (%zu x %zu), frobenius norm %.17g\n", output.c_str(),
              merged.rows(), merged.cols(), frobenius_norm(merged));
  return kExitOk;
}

int cmd_inspect(const std::string& adapter_path) {
  auto bytes = io::read_file_bytes(adapter_path);
  io::AdapterInfo info = io::inspect_adapter(bytes);  // throws on bad CRC
  std::printf("adapter file %s\n", adapter_path.c_str());
  std::printf("  version %u, crc ok\n", info.version);
  std::printf("  mode %s, storage %s\n",
              info.factors_included ? "full" : "compact",
              info.f32 ? "f32" : "f64");
  std::printf("  shape %zu x %zu, rank %zu\n", info.m, info.n, info.r);
  std::printf("  alpha %.17g, sigma %.17g\n", info.alpha, info.sigma);
  std::printf("  init %s, seed %llu\n", init_kind_name(info.init.kind),
              static_cast<unsigned long long>(info.init.seed));
  const DiagStats zs = diag_stats(info.diag_r);
  std::printf("  z_r min %.6g max %.6g mean %.6g std %.6g\n", zs.min, zs.max,
              zs.mean, zs.std);
  return kExitOk;
}

int cmd_gradcheck(std::size_t count, std::uint64_t seed,
                  bool negative_control) {
  harness::GradcheckReport report =
      harness::gradcheck_suite(count, seed, negative_control);
  std::printf("gradcheck: %zu cases, max relative error %.3e (%s)\n",
              report.cases, report.max_rel_err,
              report.worst_case.c_str());
  if (negative_control) {
    // corrupted gradients must be caught; the check fails if they pass
    if (report.pass) {
      std::printf("FAIL: sign-flipped gradients were not detected\n");
      return kExitCheckFailure;
    }
    std::printf("PASS: corrupted gradients detected\n");
    return kExitOk;
  }
  std::printf("%s: threshold 1e-5\n", report.pass ? "PASS" : "FAIL");
  return report.pass ? kExitOk : kExitCheckFailure;
}

int cmd_train(const std::string& config_path, const std::string& dir_override) {
  cli::RunConfig cfg = cli::load_config_file(config_path);
  cli::apply_env_seed(cfg);
  if (!dir_override.empty()) cfg.output_dir = dir_override;
  fs::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/resolved.ini", cli::render_config(cfg));

  harness::SyntheticTask task = cli::build_task(cfg, cfg.seeds.front());
  harness::ModelSpec mspec = cli::build_model_spec(cfg);

  harness::RunMetrics pre_metrics;
  harness::ToyModel model =
      harness::pretrain(task, mspec, cfg.train, &pre_metrics);
  harness::FinetuneResult run =
      harness::finetune(model, cfg.method, task, cfg.train);

  std::vector<io::MetricsRecord> records =
      harness::to_records(pre_metrics, "pretrain");
  auto rows = harness::to_records(run.metrics, "method=" + cfg.method.name());
  records.insert(records.end(), rows.begin(), rows.end());
  write_metrics_files(cfg.output_dir, records);

  io::SaveOptions opts;
  opts.mode = cfg.adapter_mode == "compact" ? io::SaveMode::Compact
                                            : io::SaveMode::Full;
  opts.f32 = cfg.adapter_f32;
  for (const auto& [layer, adapter] : run.loldu_adapters)
    io::write_file_bytes(
        cfg.output_dir + "/adapter_layer" + std::to_string(layer) + ".loldu",
        io::save_adapter(adapter, opts));

  char timing[128];
  std::snprintf(timing, sizeof timing, "wall_seconds %.3f\n",
                run.metrics.wall_seconds);
  write_text_file(cfg.output_dir + "/timing.txt", timing);

  std::printf("%s: final eval loss %.6g%s, %zu trainable params\n",
              run.metrics.run_id.c_str(), run.metrics.final_eval_loss(),
              run.metrics.diverged ? " (diverged)" : "",
              run.metrics.trainable_params);
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& dir_override,
               std::size_t jobs_override) {
  cli::RunConfig cfg = cli::load_config_file(config_path);
  cli::apply_env_seed(cfg);
  if (!dir_override.empty()) cfg.output_dir = dir_override;
  if (jobs_override > 0) cfg.jobs = jobs_override;
  fs::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/resolved.ini", cli::render_config(cfg));

  harness::SyntheticTask base_task = cli::build_task(cfg, cfg.seeds.front());
  harness::ModelSpec mspec = cli::build_model_spec(cfg);
  harness::AblationSpec spec = cli::build_ablation_spec(cfg);

  const auto t0 = std::chrono::steady_clock::now();
  harness::AblationResult result =
      harness::ablate(spec, base_task, mspec, cfg.train, cfg.jobs);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  std::vector<io::MetricsRecord> records;
  std::size_t diverged = 0;
  for (const auto& cell : result.cells)
    for (const auto& run : cell.runs) {
      auto rows = harness::to_records(run, cell.label);
      records.insert(records.end(), rows.begin(), rows.end());
      diverged += run.diverged;
    }
  write_metrics_files(cfg.output_dir, records);

  char timing[128];
  std::snprintf(timing, sizeof timing, "wall_seconds %.3f\n", wall);
  write_text_file(cfg.output_dir + "/timing.txt", timing);

  for (const auto& cell : result.cells)
    std::printf("%s: median final eval loss %.6g\n", cell.label.c_str(),
                cell.median_final_eval_loss());
  std::printf("%zu cells x %zu seeds, %zu diverged runs\n",
              result.cells.size(), spec.seeds.size(), diverged);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoLDU: LDU-based low-rank adapters, training and ablation"};
  app.require_subcommand(1);
  int rc = kExitOk;

  // decompose
  auto* dec = app.add_subcommand("decompose",
                                 "factorize a weight matrix into an adapter");
  std::string dec_in, dec_out = "adapter.loldu", dec_init = "regular_ldu";
  std::string dec_mode = "full";
  std::size_t dec_rank = 0;
  double dec_alpha = 0.0;
  std::uint64_t dec_seed = 42;
  bool dec_f32 = false, dec_jitter = false, dec_binary = false;
  dec->add_option("input", dec_in, "matrix file")->required();
  dec->add_option("-o,--output", dec_out, "adapter file path");
  dec->add_option("-r,--rank", dec_rank, "rank (0 = full)");
  auto* alpha_opt = dec->add_option("-a,--alpha", dec_alpha,
                                    "scaling numerator (default: rank)");
  dec->add_option("--init", dec_init,
                  "regular_ldu|constant|uniform_sym1|uniform_mean_half|"
                  "normal_std|normal_matched|zeros|ones");
  dec->add_option("--seed", dec_seed, "init seed");
  dec->add_option("--mode", dec_mode, "full|compact")
      ->check(CLI::IsMember({"full", "compact"}));
  dec->add_flag("--f32", dec_f32, "store arrays in 32-bit");
  dec->add_flag("--jitter", dec_jitter,
                "on singular pivot, add 1e-10*max|W| noise and retry once");
  dec->add_flag("--binary", dec_binary, "input matrix is binary format");
  dec->callback([&] {
    rc = cmd_decompose(dec_in, dec_out, dec_rank, dec_alpha,
                       alpha_opt->count() > 0, dec_init,
                       env_or_flag_seed(dec, dec_seed), dec_mode, dec_f32,
                       dec_jitter, dec_binary);
  });

  // train
  auto* train = app.add_subcommand("train", "pretrain + fine-tune one run");
  std::string train_cfg, train_dir;
  train->add_option("-c,--config", train_cfg, "run config (ini)")->required();
  train->add_option("--output-dir", train_dir, "override [output] dir");
  train->callback([&] { rc = cmd_train(train_cfg, train_dir); });

  // ablate
  auto* abl = app.add_subcommand("ablate", "run an ablation grid");
  std::string abl_cfg, abl_dir;
  std::size_t abl_jobs = 0;
  abl->add_option("-c,--config", abl_cfg, "run config (ini)")->required();
  abl->add_option("--output-dir", abl_dir, "override [output] dir");
  abl->add_option("--jobs", abl_jobs, "parallel cells (default from config)");
  abl->callback([&] { rc = cmd_ablate(abl_cfg, abl_dir, abl_jobs); });

  // merge
  auto* merge = app.add_subcommand("merge", "merge adapter into a weight file");
  std::string merge_adapter, merge_base, merge_out = "merged.mat";
  bool merge_bin_in = false, merge_bin_out = false;
  merge->add_option("adapter", merge_adapter, "adapter file")->required();
  merge->add_option("-b,--base", merge_base,
                    "base matrix (required for compact adapters)");
  merge->add_option("-o,--output", merge_out, "output matrix file");
  merge->add_flag("--binary-base", merge_bin_in, "base matrix is binary");
  merge->add_flag("--binary", merge_bin_out, "write binary output");
  merge->callback([&] {
    rc = cmd_merge(merge_adapter, merge_base, merge_out, merge_bin_in,
                   merge_bin_out);
  });

  // inspect
  auto* ins = app.add_subcommand("inspect", "dump adapter file metadata");
  std::string ins_path;
  ins->add_option("adapter", ins_path, "adapter file")->required();
  ins->callback([&] { rc = cmd_inspect(ins_path); });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "finite-difference gradient verification");
  std::size_t gc_count = 20;
  std::uint64_t gc_seed = 42;
  bool gc_negative = false;
  gc->add_option("--count", gc_count, "random cases per family");
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_flag("--negative-control", gc_negative,
               "verify that sign-flipped gradients are caught");
  gc->callback([&] {
    rc = cmd_gradcheck(gc_count, env_or_flag_seed(gc, gc_seed), gc_negative);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitBadInput;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitBadConfig;
  } catch (const SingularPivot& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const MissingBase& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const BaseMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const NonFiniteGradient& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Divergence& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    // remaining library errors are malformed inputs (parse failures,
    // bad magic/CRC/version, shape and rank violations)
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitBadInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return kExitNumeric;
  }
  return rc;
}
