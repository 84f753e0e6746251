#include "planforge/config.hpp"

#include <fstream>
#include <set>

namespace planforge {

namespace {

using nlohmann::json;

// Every object in the document must contain only known keys.
void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigError("config: " + where + " must be a JSON object");
  for (const auto& item : j.items())
    if (allowed.find(item.key()) == allowed.end())
      throw ConfigError("config: unknown key \"" + item.key() + "\" in " +
                        where);
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for \"") + key +
                      "\": " + e.what());
  }
}

}  // namespace

std::string to_string(RegistryMode mode) {
  switch (mode) {
    case RegistryMode::Auto: return "auto";
    case RegistryMode::Full: return "full";
    case RegistryMode::Reduced: return "reduced";
  }
  throw ConfigError("unknown registry mode");
}

RegistryMode registry_mode_from_string(const std::string& s) {
  if (s == "auto") return RegistryMode::Auto;
  if (s == "full") return RegistryMode::Full;
  if (s == "reduced") return RegistryMode::Reduced;
  throw ConfigError("config: registry mode must be auto, full, or reduced");
}

void RunConfig::validate() const {
  if (phantom_template != "hnc" && phantom_template != "tiny")
    throw ConfigError("config: phantom template must be \"hnc\" or \"tiny\"");
  grid.validate();
  if (prescription_gy <= 0.0)
    throw ConfigError("config: prescription must be positive");
  if (train_cases < 1) throw ConfigError("config: training requires >= 1 case");
  if (test_cases < 0) throw ConfigError("config: test case count negative");
  solver.validate();
  if (trunk_dim <= 0 || hidden_dim <= 0 || mixer_embed_dim <= 0)
    throw ConfigError("config: network sizes must be positive");
  hyper.validate();
  if (horizon <= 0) throw ConfigError("config: horizon must be positive");
  if (workers < 1) throw ConfigError("config: need at least one worker");
  if (episodes < 1) throw ConfigError("config: need at least one episode");
  if (bank_capacity == 0)
    throw ConfigError("config: bank capacity must be positive");
  if (out_dir.empty()) throw ConfigError("config: output directory empty");
  if (checkpoint_every_rounds < 1)
    throw ConfigError("config: checkpoint cadence must be positive");
}

nlohmann::json config_to_json(const RunConfig& c) {
  json j;
  j["phantom"] = {{"template", c.phantom_template},
                  {"grid_nx", c.grid.nx},
                  {"grid_ny", c.grid.ny},
                  {"voxel_size_mm", c.grid.voxel_size_mm},
                  {"prescription_gy", c.prescription_gy},
                  {"train_cases", c.train_cases},
                  {"test_cases", c.test_cases}};
  j["registry"] = {{"mode", to_string(c.registry_mode)}};
  j["solver"] = {{"max_iters", c.solver.max_iters},
                 {"grad_tol", c.solver.grad_tol},
                 {"armijo_sigma", c.solver.armijo_sigma},
                 {"step_shrink", c.solver.step_shrink},
                 {"step_grow", c.solver.step_grow},
                 {"initial_step", c.solver.initial_step},
                 {"max_backtracks", c.solver.max_backtracks}};
  j["network"] = {{"shared_trunk", c.shared_trunk},
                  {"trunk_dim", c.trunk_dim},
                  {"hidden_dim", c.hidden_dim},
                  {"mixer_embed_dim", c.mixer_embed_dim}};
  j["hyper"] = {{"gamma", c.hyper.gamma},
                {"batch_episodes", c.hyper.batch_episodes},
                {"lr", c.hyper.lr},
                {"target_sync_period", c.hyper.target_sync_period},
                {"updates_per_round", c.hyper.updates_per_round},
                {"epsilon_initial", c.hyper.epsilon_initial},
                {"epsilon_decay", c.hyper.epsilon_decay},
                {"epsilon_decay_every", c.hyper.epsilon_decay_every},
                {"done_mask_final", c.hyper.done_mask_final}};
  j["rollout"] = {{"horizon", c.horizon},
                  {"workers", c.workers},
                  {"episodes", c.episodes},
                  {"bank_capacity", c.bank_capacity}};
  j["base_seed"] = c.base_seed;
  j["out_dir"] = c.out_dir;
  j["checkpoint_every_rounds"] = c.checkpoint_every_rounds;
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  require_keys(j, "document root",
               {"phantom", "registry", "solver", "network", "hyper", "rollout",
                "base_seed", "out_dir", "checkpoint_every_rounds"});
  RunConfig c;
  if (j.contains("phantom")) {
    const json& p = j.at("phantom");
    require_keys(p, "phantom",
                 {"template", "grid_nx", "grid_ny", "voxel_size_mm",
                  "prescription_gy", "train_cases", "test_cases"});
    read_into(p, "template", c.phantom_template);
    read_into(p, "grid_nx", c.grid.nx);
    read_into(p, "grid_ny", c.grid.ny);
    read_into(p, "voxel_size_mm", c.grid.voxel_size_mm);
    read_into(p, "prescription_gy", c.prescription_gy);
    read_into(p, "train_cases", c.train_cases);
    read_into(p, "test_cases", c.test_cases);
  }
  if (j.contains("registry")) {
    const json& r = j.at("registry");
    require_keys(r, "registry", {"mode"});
    std::string mode = to_string(c.registry_mode);
    read_into(r, "mode", mode);
    c.registry_mode = registry_mode_from_string(mode);
  }
  if (j.contains("solver")) {
    const json& s = j.at("solver");
    require_keys(s, "solver",
                 {"max_iters", "grad_tol", "armijo_sigma", "step_shrink",
                  "step_grow", "initial_step", "max_backtracks"});
    read_into(s, "max_iters", c.solver.max_iters);
    read_into(s, "grad_tol", c.solver.grad_tol);
    read_into(s, "armijo_sigma", c.solver.armijo_sigma);
    read_into(s, "step_shrink", c.solver.step_shrink);
    read_into(s, "step_grow", c.solver.step_grow);
    read_into(s, "initial_step", c.solver.initial_step);
    read_into(s, "max_backtracks", c.solver.max_backtracks);
  }
  if (j.contains("network")) {
    const json& n = j.at("network");
    require_keys(n, "network",
                 {"shared_trunk", "trunk_dim", "hidden_dim", "mixer_embed_dim"});
    read_into(n, "shared_trunk", c.shared_trunk);
    read_into(n, "trunk_dim", c.trunk_dim);
    read_into(n, "hidden_dim", c.hidden_dim);
    read_into(n, "mixer_embed_dim", c.mixer_embed_dim);
  }
  if (j.contains("hyper")) {
    const json& h = j.at("hyper");
    require_keys(h, "hyper",
                 {"gamma", "batch_episodes", "lr", "target_sync_period",
                  "updates_per_round", "epsilon_initial", "epsilon_decay",
                  "epsilon_decay_every", "done_mask_final"});
    read_into(h, "gamma", c.hyper.gamma);
    read_into(h, "batch_episodes", c.hyper.batch_episodes);
    read_into(h, "lr", c.hyper.lr);
    read_into(h, "target_sync_period", c.hyper.target_sync_period);
    read_into(h, "updates_per_round", c.hyper.updates_per_round);
    read_into(h, "epsilon_initial", c.hyper.epsilon_initial);
    read_into(h, "epsilon_decay", c.hyper.epsilon_decay);
    read_into(h, "epsilon_decay_every", c.hyper.epsilon_decay_every);
    read_into(h, "done_mask_final", c.hyper.done_mask_final);
  }
  if (j.contains("rollout")) {
    const json& r = j.at("rollout");
    require_keys(r, "rollout",
                 {"horizon", "workers", "episodes", "bank_capacity"});
    read_into(r, "horizon", c.horizon);
    read_into(r, "workers", c.workers);
    read_into(r, "episodes", c.episodes);
    read_into(r, "bank_capacity", c.bank_capacity);
  }
  read_into(j, "base_seed", c.base_seed);
  read_into(j, "out_dir", c.out_dir);
  read_into(j, "checkpoint_every_rounds", c.checkpoint_every_rounds);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write " + path);
  out << config_to_json(config).dump(2) << "\n";
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return config_to_json(a) == config_to_json(b);
}

}  // namespace planforge
