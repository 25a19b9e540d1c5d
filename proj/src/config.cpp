#include "loldu/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace loldu::cli {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

// Raw sectioned key/value view of the file, with consumption tracking
// so leftovers can be reported as unknown keys.
class IniView {
 public:
  explicit IniView(const std::string& text) {
    std::stringstream ss(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("line " + std::to_string(lineno) +
                            ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        sections_.insert(section);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError("line " + std::to_string(lineno) +
                          ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      values_[section + "." + key] = trim(line.substr(eq + 1));
    }
  }

  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) {
    const std::string full = section + "." + key;
    consumed_.insert(full);
    auto it = values_.find(full);
    return it == values_.end() ? fallback : it->second;
  }

  void expect_sections(const std::set<std::string>& known) const {
    for (const auto& s : sections_)
      if (!known.count(s)) throw ConfigError("unknown section [" + s + "]");
  }

  void expect_all_consumed() const {
    for (const auto& [key, value] : values_)
      if (!consumed_.count(key)) throw ConfigError("unknown key: " + key);
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
  std::set<std::string> sections_;
};

double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a number: " + s);
  }
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(what + ": not a non-negative integer: " + s);
  }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": not an unsigned integer: " + s);
  }
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(what + ": expected true or false: " + s);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

harness::Method::Kind method_kind_from_name(const std::string& name) {
  if (name == "loldu") return harness::Method::Kind::Loldu;
  if (name == "lora") return harness::Method::Kind::Lora;
  if (name == "full_ft") return harness::Method::Kind::FullFt;
  if (name == "linear_probe") return harness::Method::Kind::LinearProbe;
  throw ConfigError("unknown method: " + name);
}

std::string method_kind_name(harness::Method::Kind kind) {
  switch (kind) {
    case harness::Method::Kind::Loldu:
      return "loldu";
    case harness::Method::Kind::Lora:
      return "lora";
    case harness::Method::Kind::FullFt:
      return "full_ft";
    case harness::Method::Kind::LinearProbe:
      return "linear_probe";
  }
  return "loldu";
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  IniView ini(text);
  ini.expect_sections(
      {"", "task", "model", "method", "train", "ablate", "output"});

  RunConfig cfg;
  auto& task = cfg.task;

  const std::string kind = ini.get("task", "kind", "teacher_regression");
  if (kind == "teacher_regression")
    task.kind = harness::TaskKind::TeacherRegression;
  else if (kind == "cluster_classification")
    task.kind = harness::TaskKind::ClusterClassification;
  else
    throw ConfigError("task.kind: unknown task: " + kind);

  const std::size_t d_in = parse_size(ini.get("task", "d_in", "16"), "task.d_in");
  const std::size_t d_out =
      parse_size(ini.get("task", "d_out", "8"), "task.d_out");
  task.dims = {d_in};
  for (const auto& h : split_list(ini.get("task", "hidden", "32,24")))
    task.dims.push_back(parse_size(h, "task.hidden"));
  task.dims.push_back(d_out);
  task.pretrain_samples = parse_size(
      ini.get("task", "pretrain_samples", "4096"), "task.pretrain_samples");
  task.finetune_samples = parse_size(
      ini.get("task", "finetune_samples", "2048"), "task.finetune_samples");
  task.eval_samples =
      parse_size(ini.get("task", "eval_samples", "2048"), "task.eval_samples");
  task.noise_level = parse_double(ini.get("task", "noise_level", "0.15"),
                                  "task.noise_level");
  task.shift_delta =
      parse_double(ini.get("task", "shift_delta", "0.3"), "task.shift_delta");
  task.clusters =
      parse_size(ini.get("task", "clusters", "4"), "task.clusters");
  task.cluster_std = parse_double(ini.get("task", "cluster_std", "0.6"),
                                  "task.cluster_std");
  task.center_scale = parse_double(ini.get("task", "center_scale", "2"),
                                   "task.center_scale");
  task.rotation_angle = parse_double(ini.get("task", "rotation_angle", "0.5"),
                                     "task.rotation_angle");

  cfg.activation = ini.get("model", "activation", "auto");
  if (cfg.activation != "auto" && cfg.activation != "tanh" &&
      cfg.activation != "relu")
    throw ConfigError("model.activation: unknown value: " + cfg.activation);
  const std::string adapted = ini.get("model", "adapted_layers", "auto");
  if (adapted != "auto")
    for (const auto& l : split_list(adapted))
      cfg.adapted_layers.push_back(parse_size(l, "model.adapted_layers"));

  cfg.method.kind = method_kind_from_name(ini.get("method", "name", "loldu"));
  const std::string rank = ini.get("method", "rank", "full");
  cfg.method.rank = rank == "full" ? 0 : parse_size(rank, "method.rank");
  const std::string alpha = ini.get("method", "alpha", "r");
  if (alpha == "r")
    cfg.method.alpha.reset();
  else
    cfg.method.alpha = parse_double(alpha, "method.alpha");
  try {
    cfg.method.init =
        init_kind_from_name(ini.get("method", "init", "regular_ldu"));
  } catch (const BadInput& e) {
    throw ConfigError(std::string("method.init: ") + e.what());
  }
  const std::string sigma = ini.get("method", "sigma", "trainable");
  if (sigma == "trainable")
    cfg.method.sigma_trainable = true;
  else if (sigma == "frozen")
    cfg.method.sigma_trainable = false;
  else
    throw ConfigError("method.sigma: expected trainable or frozen: " + sigma);

  auto& train = cfg.train;
  const std::string opt = ini.get("train", "optimizer", "adam");
  if (opt == "adam")
    train.optimizer = optim::OptMethod::Adam;
  else if (opt == "sgd")
    train.optimizer = optim::OptMethod::Sgd;
  else
    throw ConfigError("train.optimizer: expected adam or sgd: " + opt);
  train.lr = parse_double(ini.get("train", "lr", "3e-3"), "train.lr");
  train.epochs = parse_size(ini.get("train", "epochs", "10"), "train.epochs");
  train.batch_size =
      parse_size(ini.get("train", "batch_size", "256"), "train.batch_size");
  train.warmup_steps = parse_size(ini.get("train", "warmup_steps", "0"),
                                  "train.warmup_steps");
  const std::string eps = ini.get("train", "epsilon", "auto");
  if (eps == "auto")
    train.epsilon.reset();
  else
    train.epsilon = parse_double(eps, "train.epsilon");
  train.epsilon_factor = parse_double(
      ini.get("train", "epsilon_factor", "10"), "train.epsilon_factor");
  train.sigma_min =
      parse_double(ini.get("train", "sigma_min", "1e-6"), "train.sigma_min");
  train.pretrain_epochs = parse_size(ini.get("train", "pretrain_epochs", "200"),
                                     "train.pretrain_epochs");
  train.pretrain_lr = parse_double(ini.get("train", "pretrain_lr", "3e-3"),
                                   "train.pretrain_lr");
  cfg.seeds.clear();
  for (const auto& s : split_list(ini.get("train", "seeds", "42")))
    cfg.seeds.push_back(parse_u64(s, "train.seeds"));
  if (cfg.seeds.empty()) throw ConfigError("train.seeds: empty seed list");

  cfg.ablate_methods = split_list(ini.get("ablate", "methods", "loldu"));
  for (const auto& name : cfg.ablate_methods) method_kind_from_name(name);
  cfg.ablate_ranks.clear();
  for (const auto& r : split_list(ini.get("ablate", "ranks", "")))
    cfg.ablate_ranks.push_back(r == "full" ? 0
                                           : parse_size(r, "ablate.ranks"));
  cfg.ablate_inits = split_list(ini.get("ablate", "inits", ""));
  for (const auto& i : cfg.ablate_inits) {
    try {
      init_kind_from_name(i);
    } catch (const BadInput& e) {
      throw ConfigError(std::string("ablate.inits: ") + e.what());
    }
  }
  cfg.ablate_sigma_modes = split_list(ini.get("ablate", "sigma_modes", ""));
  for (const auto& s : cfg.ablate_sigma_modes)
    if (s != "trainable" && s != "frozen")
      throw ConfigError("ablate.sigma_modes: expected trainable or frozen: " +
                        s);
  for (const auto& l : split_list(ini.get("ablate", "lrs", "")))
    cfg.ablate_lrs.push_back(parse_double(l, "ablate.lrs"));
  cfg.jobs = parse_size(ini.get("ablate", "jobs", "1"), "ablate.jobs");
  if (cfg.jobs == 0) cfg.jobs = 1;

  cfg.output_dir = ini.get("output", "dir", "out");
  cfg.adapter_mode = ini.get("output", "adapter_mode", "full");
  if (cfg.adapter_mode != "full" && cfg.adapter_mode != "compact")
    throw ConfigError("output.adapter_mode: expected full or compact: " +
                      cfg.adapter_mode);
  cfg.adapter_f32 =
      parse_bool(ini.get("output", "adapter_f32", "false"), "output.adapter_f32");

  ini.expect_all_consumed();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void apply_env_seed(RunConfig& cfg, const char* value) {
  if (value == nullptr) value = std::getenv("LOLDU_SEED");
  if (value == nullptr) return;
  cfg.seeds = {parse_u64(value, "LOLDU_SEED")};
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  const auto& task = cfg.task;
  auto join_sizes = [](const std::vector<std::size_t>& v,
                       bool full_sentinel = false) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ",";
      s += full_sentinel && v[i] == 0 ? "full" : std::to_string(v[i]);
    }
    return s;
  };

  out << "[task]\n";
  out << "kind = "
      << (task.kind == harness::TaskKind::TeacherRegression
              ? "teacher_regression"
              : "cluster_classification")
      << "\n";
  out << "d_in = " << task.dims.front() << "\n";
  out << "d_out = " << task.dims.back() << "\n";
  std::vector<std::size_t> hidden(task.dims.begin() + 1, task.dims.end() - 1);
  out << "hidden = " << join_sizes(hidden) << "\n";
  out << "pretrain_samples = " << task.pretrain_samples << "\n";
  out << "finetune_samples = " << task.finetune_samples << "\n";
  out << "eval_samples = " << task.eval_samples << "\n";
  out << "noise_level = " << format_double(task.noise_level) << "\n";
  out << "shift_delta = " << format_double(task.shift_delta) << "\n";
  out << "clusters = " << task.clusters << "\n";
  out << "cluster_std = " << format_double(task.cluster_std) << "\n";
  out << "center_scale = " << format_double(task.center_scale) << "\n";
  out << "rotation_angle = " << format_double(task.rotation_angle) << "\n";

  out << "\n[model]\n";
  out << "activation = " << cfg.activation << "\n";
  out << "adapted_layers = "
      << (cfg.adapted_layers.empty() ? "auto" : join_sizes(cfg.adapted_layers))
      << "\n";

  out << "\n[method]\n";
  out << "name = " << method_kind_name(cfg.method.kind) << "\n";
  out << "rank = "
      << (cfg.method.rank == 0 ? "full" : std::to_string(cfg.method.rank))
      << "\n";
  out << "alpha = "
      << (cfg.method.alpha ? format_double(*cfg.method.alpha)
                           : std::string("r"))
      << "\n";
  out << "init = " << init_kind_name(cfg.method.init) << "\n";
  out << "sigma = " << (cfg.method.sigma_trainable ? "trainable" : "frozen")
      << "\n";

  const auto& train = cfg.train;
  out << "\n[train]\n";
  out << "optimizer = "
      << (train.optimizer == optim::OptMethod::Adam ? "adam" : "sgd") << "\n";
  out << "lr = " << format_double(train.lr) << "\n";
  out << "epochs = " << train.epochs << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "warmup_steps = " << train.warmup_steps << "\n";
  out << "epsilon = "
      << (train.epsilon ? format_double(*train.epsilon) : std::string("auto"))
      << "\n";
  out << "epsilon_factor = " << format_double(train.epsilon_factor) << "\n";
  out << "sigma_min = " << format_double(train.sigma_min) << "\n";
  out << "pretrain_epochs = " << train.pretrain_epochs << "\n";
  out << "pretrain_lr = " << format_double(train.pretrain_lr) << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
    out << (i ? "," : "") << cfg.seeds[i];
  out << "\n";

  out << "\n[ablate]\n";
  out << "methods = ";
  for (std::size_t i = 0; i < cfg.ablate_methods.size(); ++i)
    out << (i ? "," : "") << cfg.ablate_methods[i];
  out << "\n";
  out << "ranks = " << join_sizes(cfg.ablate_ranks, true) << "\n";
  out << "inits = ";
  for (std::size_t i = 0; i < cfg.ablate_inits.size(); ++i)
    out << (i ? "," : "") << cfg.ablate_inits[i];
  out << "\n";
  out << "sigma_modes = ";
  for (std::size_t i = 0; i < cfg.ablate_sigma_modes.size(); ++i)
    out << (i ? "," : "") << cfg.ablate_sigma_modes[i];
  out << "\n";
  out << "lrs = ";
  for (std::size_t i = 0; i < cfg.ablate_lrs.size(); ++i)
    out << (i ? "," : "") << format_double(cfg.ablate_lrs[i]);
  out << "\n";
  out << "jobs = " << cfg.jobs << "\n";

  out << "\n[output]\n";
  out << "dir = " << cfg.output_dir << "\n";
  out << "adapter_mode = " << cfg.adapter_mode << "\n";
  out << "adapter_f32 = " << (cfg.adapter_f32 ? "true" : "false") << "\n";
  return out.str();
}

harness::SyntheticTask build_task(const RunConfig& cfg, std::uint64_t seed) {
  harness::SyntheticTask task = cfg.task;
  task.seed = seed;
  return task;
}

harness::ModelSpec build_model_spec(const RunConfig& cfg) {
  harness::ModelSpec spec = harness::default_model_spec(cfg.task);
  if (cfg.activation == "tanh") spec.activation = harness::Activation::Tanh;
  if (cfg.activation == "relu") spec.activation = harness::Activation::Relu;
  spec.adapted_layers = cfg.adapted_layers;
  return spec;
}

harness::AblationSpec build_ablation_spec(const RunConfig& cfg) {
  harness::AblationSpec spec;
  for (const auto& name : cfg.ablate_methods) {
    harness::Method m = cfg.method;
    m.kind = method_kind_from_name(name);
    spec.methods.push_back(m);
  }
  spec.ranks = cfg.ablate_ranks;
  for (const auto& i : cfg.ablate_inits)
    spec.inits.push_back(init_kind_from_name(i));
  for (const auto& s : cfg.ablate_sigma_modes)
    spec.sigma_modes.push_back(s == "trainable");
  spec.lrs = cfg.ablate_lrs;
  spec.seeds = cfg.seeds;
  return spec;
}

}  // namespace loldu::cli
