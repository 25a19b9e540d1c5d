#pragma once

#include <string>
#include <vector>

#include "loldu/harness.hpp"

namespace loldu::cli {

// Fully-typed run configuration backing the `train` and `ablate`
// commands. Parsed from INI-style text (sections, key = value, '#'
// comments); unknown sections or keys are rejected. render_config
// writes every key explicitly, so the echoed file re-runs the exact
// same configuration.
struct RunConfig {
  // [task]
  harness::SyntheticTask task;  // .seed is overwritten per run from `seeds`

  // [model]
  std::string activation = "auto";          // auto | tanh | relu
  std::vector<std::size_t> adapted_layers;  // empty = all but the head

  // [method]
  harness::Method method;

  // [train]
  harness::TrainConfig train;
  std::vector<std::uint64_t> seeds{42};

  // [ablate]
  std::vector<std::string> ablate_methods{"loldu"};
  std::vector<std::size_t> ablate_ranks;        // empty = method's rank
  std::vector<std::string> ablate_inits;        // empty = method's init
  std::vector<std::string> ablate_sigma_modes;  // empty = method's mode
  std::vector<double> ablate_lrs;               // empty = train lr
  std::size_t jobs = 1;

  // [output]
  std::string output_dir = "out";
  std::string adapter_mode = "full";  // full | compact
  bool adapter_f32 = false;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// LOLDU_SEED environment override: replaces the seed list for quick
// experiments. Pass nullptr to read the process environment.
void apply_env_seed(RunConfig& cfg, const char* value = nullptr);

std::string render_config(const RunConfig& cfg);

harness::SyntheticTask build_task(const RunConfig& cfg, std::uint64_t seed);
harness::ModelSpec build_model_spec(const RunConfig& cfg);
harness::AblationSpec build_ablation_spec(const RunConfig& cfg);

}  // namespace loldu::cli
