#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "planforge/config.hpp"
#include "planforge/neural.hpp"
#include "planforge/phantom.hpp"
#include "planforge/planeval.hpp"
#include "planforge/rollout.hpp"

namespace planforge {

// ---------------------------------------------------------------------------
// Filesystem helpers
// ---------------------------------------------------------------------------

void ensure_dir(const std::string& path);  // recursive mkdir
std::string path_join(const std::string& a, const std::string& b);
bool file_exists(const std::string& path);
// Files named <prefix>*<suffix> in a directory, lexicographically sorted.
std::vector<std::string> list_files(const std::string& dir,
                                    const std::string& prefix,
                                    const std::string& suffix);

// ---------------------------------------------------------------------------
// CSV plumbing shared by every text artifact
// ---------------------------------------------------------------------------

// Shortest decimal form that parses back to exactly the same double.
std::string format_double(double v);
std::vector<std::string> split_csv(const std::string& line);
// Full-token number parse with a file:line diagnostic on failure.
double parse_csv_double(const std::string& field, const std::string& path,
                        int line_no);

// ---------------------------------------------------------------------------
// Case files: JSON description plus a raw float64 influence sidecar
// (<name>.json + <name>.bin, column-major, little-endian)
// ---------------------------------------------------------------------------

void save_case(const Case& c, const std::string& json_path);
Case load_case(const std::string& json_path);

// ---------------------------------------------------------------------------
// Episode files: one self-contained JSON document per episode
// ---------------------------------------------------------------------------

void save_episode(const EpisodeRecord& rec, const std::string& path);
EpisodeRecord load_episode(const std::string& path);

// Refills a bank from an episode directory (files ep_<index>.json) in index
// order, skipping failed records; reproduces the FIFO state of the run that
// wrote them.
void reload_bank(DataBank& bank, const std::string& episodes_dir);

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest plus a raw float64 tensor sidecar; reload is
// bit-exact
// ---------------------------------------------------------------------------

struct Checkpoint {
  RunConfig config;
  long update_count = 0;
  long episode_count = 0;  // global episodes collected so far
  long last_sync_step = 0;
  Rng::State sampler_state{};  // batch-sampling generator
  ParamSet online_agent, online_mixer, target_agent, target_mixer;
  ParamSet adam_agent_m, adam_agent_v, adam_mixer_m, adam_mixer_v;
  long adam_agent_t = 0;
  long adam_mixer_t = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& json_path);
Checkpoint load_checkpoint(const std::string& json_path);

// ---------------------------------------------------------------------------
// DVH tables as CSV (header: structure,volume_cc,<edge doses...>)
// ---------------------------------------------------------------------------

void save_dvh_csv(const DVHTable& table, const std::string& path);
// Malformed input raises ConfigError naming the offending line.
DVHTable load_dvh_csv(const std::string& path);

// Builds the standard table (all case structures plus a BODY row) from a
// dose distribution.
DVHTable dvh_table_for(const Vector& dose, const Case& c);

// Fluence vectors as JSON ({"fluence": [...]}).
void save_fluence(const Vector& fluence, const std::string& path);
Vector load_fluence(const std::string& path);

}  // namespace planforge
