#include "doctest.h"
#include "loldu/config.hpp"

using namespace loldu;
using namespace loldu::cli;

TEST_CASE("empty config yields the documented defaults") {
  RunConfig cfg = parse_config_text("");
  CHECK(cfg.task.kind == harness::TaskKind::TeacherRegression);
  CHECK(cfg.task.dims == std::vector<std::size_t>{16, 32, 24, 8});
  CHECK(cfg.method.kind == harness::Method::Kind::Loldu);
  CHECK(cfg.method.rank == 0);  // full
  CHECK_FALSE(cfg.method.alpha.has_value());  // alpha = r
  CHECK(cfg.train.lr == 3e-3);
  CHECK(cfg.train.epochs == 10);
  CHECK(cfg.train.sigma_min == 1e-6);
  CHECK(cfg.train.epsilon_factor == 10.0);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
  CHECK(cfg.output_dir == "out");
}

TEST_CASE("sections and values parse") {
  RunConfig cfg = parse_config_text(R"(
# comment
[task]
kind = cluster_classification
d_in = 12
hidden = 20
clusters = 3

[method]
name = lora
rank = 4
alpha = 8

[train]
lr = 1e-2
seeds = 1, 2, 3

[ablate]
ranks = 1,2,full
lrs = 0.1,0.003

[output]
dir = results
)");
  CHECK(cfg.task.kind == harness::TaskKind::ClusterClassification);
  CHECK(cfg.task.dims == std::vector<std::size_t>{12, 20, 8});
  CHECK(cfg.task.clusters == 3);
  CHECK(cfg.method.kind == harness::Method::Kind::Lora);
  CHECK(cfg.method.rank == 4);
  CHECK(cfg.method.alpha == 8.0);
  CHECK(cfg.train.lr == 1e-2);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(cfg.ablate_ranks == std::vector<std::size_t>{1, 2, 0});
  CHECK(cfg.ablate_lrs == std::vector<double>{0.1, 0.003});
  CHECK(cfg.output_dir == "results");
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_AS(parse_config_text("[task]\nshape = 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[experiment]\nlr = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[train]\nlr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[method]\nname = dreambooth\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text("[method]\nsigma = maybe\n"), ConfigError);
}

TEST_CASE("render_config echoes a re-parseable, equivalent config") {
  RunConfig cfg = parse_config_text(R"(
[task]
noise_level = 0.125
shift_delta = 0.25
[method]
name = loldu
rank = 5
init = uniform_sym1
sigma = frozen
[train]
epochs = 33
lr = 0.0123456789012345678
seeds = 7,8
[ablate]
inits = zeros,ones
sigma_modes = trainable,frozen
[output]
adapter_mode = compact
)");
  const std::string echoed = render_config(cfg);
  RunConfig round = parse_config_text(echoed);
  CHECK(render_config(round) == echoed);
  CHECK(round.task.noise_level == cfg.task.noise_level);
  CHECK(round.train.lr == cfg.train.lr);  // 17 digits survive the echo
  CHECK(round.method.rank == 5);
  CHECK_FALSE(round.method.sigma_trainable);
  CHECK(round.ablate_inits == cfg.ablate_inits);
  CHECK(round.adapter_mode == "compact");
}

TEST_CASE("env seed override replaces the seed list") {
  RunConfig cfg = parse_config_text("[train]\nseeds = 1,2,3\n");
  apply_env_seed(cfg, "99");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{99});
  CHECK_THROWS_AS(apply_env_seed(cfg, "not-a-seed"), ConfigError);
}

TEST_CASE("builders map config onto harness types") {
  RunConfig cfg = parse_config_text(R"(
[task]
kind = teacher_regression
[model]
activation = relu
adapted_layers = 0
[ablate]
methods = loldu,full_ft
sigma_modes = trainable,frozen
)");
  auto task = build_task(cfg, 17);
  CHECK(task.seed == 17);
  auto spec = build_model_spec(cfg);
  CHECK(spec.activation == harness::Activation::Relu);
  CHECK(spec.adapted_layers == std::vector<std::size_t>{0});
  auto grid = build_ablation_spec(cfg);
  CHECK(grid.methods.size() == 2);
  CHECK(grid.methods[0].kind == harness::Method::Kind::Loldu);
  CHECK(grid.methods[1].kind == harness::Method::Kind::FullFt);
  CHECK(grid.sigma_modes == std::vector<bool>{true, false});
}
