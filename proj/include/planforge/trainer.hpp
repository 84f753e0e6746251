#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "planforge/config.hpp"
#include "planforge/io.hpp"
#include "planforge/report.hpp"
#include "planforge/rollout.hpp"

namespace planforge {

// Seed streams: disjoint high-bit offsets keep derived case/network/sampler
// seeds away from the per-episode indices (plain 0,1,2,...).
constexpr std::uint64_t kTrainCaseStream = 1ULL << 32;
constexpr std::uint64_t kTestCaseStream = 2ULL << 32;
constexpr std::uint64_t kNetInitStream = 3ULL << 32;
constexpr std::uint64_t kSamplerStream = 4ULL << 32;
constexpr std::uint64_t kEvalStream = 5ULL << 32;

// Deterministic case sets: everything follows from config alone.
std::vector<Case> make_train_cases(const RunConfig& config);
std::vector<Case> make_test_cases(const RunConfig& config);

// Environments sharing the config's solver and registry choices; all must
// agree on agent count and state dimension.
std::vector<Environment> make_environments(const std::vector<Case>& cases,
                                           const RunConfig& config);

// Fresh policy sized for the environment family.
Policy make_policy(const RunConfig& config, const Environment& probe, Rng& rng);

// Online policy stored in a checkpoint, rebound to this environment family;
// names and shapes are validated against the checkpoint's own config.
Policy policy_from_checkpoint(const Checkpoint& ck, const Environment& probe);

struct TrainOutcome {
  std::vector<TelemetryRow> telemetry;
  long episodes_collected = 0;
  long updates_done = 0;
  std::string final_checkpoint;  // last checkpoint written (may predate abort)
  bool aborted = false;
  std::string abort_reason;
};

// Runs training in config.out_dir: alternates synchronous collection rounds
// with learner updates, persisting every episode, periodic checkpoints, the
// telemetry CSV, and the training-curve figure.  A non-finite loss aborts the
// run; the last good checkpoint stays on disk.  `resume_from` continues
// bit-exactly from a checkpoint written by an earlier run with this config.
TrainOutcome train_run(const RunConfig& config,
                       const std::string& resume_from = "");

}  // namespace planforge
