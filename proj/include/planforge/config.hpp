#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "planforge/fmo.hpp"
#include "planforge/marl.hpp"
#include "planforge/phantom.hpp"
#include "planforge/rollout.hpp"

namespace planforge {

// Everything a run needs, loadable from one JSON document.  Parsing rejects
// unknown keys at every nesting level; all values are validated against the
// owning module's invariants.
struct RunConfig {
  // Phantom generation.
  std::string phantom_template = "hnc";  // "hnc" or "tiny"
  GridSpec grid;
  double prescription_gy = 60.0;
  int train_cases = 10;
  int test_cases = 10;

  // Parameter registry selection.
  RegistryMode registry_mode = RegistryMode::Auto;

  // Dose optimization.
  SolverOptions solver;

  // Network sizes.
  bool shared_trunk = true;
  Index trunk_dim = 128;
  Index hidden_dim = 64;
  Index mixer_embed_dim = 32;

  // Learning.
  Hyper hyper;

  // Collection.
  int horizon = kEpisodeHorizon;
  int workers = 10;
  int episodes = 500;
  std::size_t bank_capacity = 500;

  // Run identity and layout.
  std::uint64_t base_seed = 1;
  std::string out_dir = "runs/default";
  int checkpoint_every_rounds = 5;

  void validate() const;
};

std::string to_string(RegistryMode mode);
RegistryMode registry_mode_from_string(const std::string& s);

nlohmann::json config_to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::string& path);
void save_config(const RunConfig& config, const std::string& path);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace planforge
