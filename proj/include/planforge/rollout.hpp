#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "planforge/fmo.hpp"
#include "planforge/marl.hpp"
#include "planforge/phantom.hpp"
#include "planforge/planeval.hpp"
#include "planforge/tppspace.hpp"

namespace planforge {

constexpr int kEpisodeHorizon = 10;

enum class RegistryMode { Auto, Full, Reduced };

// A case bundled with the pieces the environment loop needs: its parameter
// registry, scoring system, and solver settings.
struct Environment {
  Case plan_case;
  ParameterRegistry registry;
  ScoringSystem scoring;
  SolverOptions solver;

  // Auto mode uses the full registry for the complete structure layout and
  // the reduced registry for small phantoms.
  static Environment make(const Case& c, const SolverOptions& solver = {},
                          RegistryMode mode = RegistryMode::Auto);

  Index state_dim() const;
  int n_agents() const { return static_cast<int>(registry.size()); }
};

// Full trace of one episode: states s_1..s_{T+1} with their scores, tuner
// snapshots, and parameter values (index 0 is the initial x = 0 plan), plus
// the T joint actions and rewards in between.
struct EpisodeRecord {
  std::string case_id;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  std::vector<Matrix> states;
  std::vector<ScoreBreakdown> scores;
  std::vector<TunerState> tuner;
  std::vector<Vector> parameters;
  std::vector<ActionVector> actions;
  Vector rewards;
  double episode_return = 0.0;
  double best_relative = 0.0;  // max_t score(s_t) / max score
  bool failed = false;
  std::string failure_reason;

  int horizon() const { return static_cast<int>(actions.size()); }
  // Internal consistency: lengths, reward-vs-score agreement, the return
  // and best-relative summaries.
  void validate(int expected_horizon = kEpisodeHorizon) const;
  // Strips the trace down to what the learner consumes.
  TDEpisode to_td() const;
};

// Runs one full episode against the dose environment.  Deterministic in
// (case, policy parameters, epsilon, seed).  Solver failures produce a
// record with failed = true rather than throwing.
EpisodeRecord run_episode(const Environment& env, const Policy& policy,
                          double epsilon, std::uint64_t seed,
                          int horizon = kEpisodeHorizon);

// Bounded FIFO of successful episodes; eviction is strictly oldest-first.
class DataBank {
 public:
  explicit DataBank(std::size_t capacity = 500);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return records_.size(); }
  std::uint64_t total_pushed() const { return total_pushed_; }
  const EpisodeRecord& at(std::size_t i) const;  // 0 = oldest

  void push(EpisodeRecord rec);  // rejects failed records

 private:
  std::size_t capacity_;
  std::uint64_t total_pushed_ = 0;
  std::deque<EpisodeRecord> records_;
};

struct WorkerPool {
  int workers = 10;

  void validate() const;
};

// Runs one synchronous collection round: K episodes, one per worker slot.
// Episode k of the round has global index first_episode + k, which alone
// determines its case (round-robin), exploration rate (epsilon schedule),
// and derived seed — so the records are identical for any worker count.
// Successes are appended to the bank in global-index order; the returned
// list additionally includes failed records for logging.
std::vector<EpisodeRecord> collect_round(const WorkerPool& pool,
                                         const std::vector<Environment>& cases,
                                         const Policy& policy, const Hyper& hyper,
                                         std::uint64_t base_seed,
                                         long first_episode, DataBank& bank,
                                         int horizon = kEpisodeHorizon);

// Uniform sample of `batch_episodes` distinct whole episodes.
TDBatch sample_batch(const DataBank& bank, int batch_episodes, Rng& rng);

}  // namespace planforge
