#pragma once

#include <functional>
#include <vector>

#include "planforge/neural.hpp"
#include "planforge/rng.hpp"
#include "planforge/types.hpp"

namespace planforge {

// Column-major flattening of a DVH matrix into the feature vector fed to the
// agent trunks and the mixer generators.
Vector state_features(const Matrix& dvh);

// Learning hyperparameters.  Only gamma and the epsilon schedule are fixed by
// the problem definition; the rest are conventional defaults kept in config.
struct Hyper {
  double gamma = 0.9;
  int batch_episodes = 8;
  double lr = 5e-4;
  int target_sync_period = 50;   // learner updates between hard target copies
  int updates_per_round = 4;     // gradient steps after each collection round
  double epsilon_initial = 0.9;
  double epsilon_decay = 0.9;
  int epsilon_decay_every = 5;   // episodes
  bool done_mask_final = false;  // ablation: drop the bootstrap at step T

  void validate() const;
};

// epsilon = initial * decay^floor(episode / every).
double epsilon_at(int episode, double initial = 0.9, double decay = 0.9,
                  int every = 5);

// Online behaviour: agent utility networks, the mixing network, and the
// exploration rate used during collection.
struct Policy {
  AgentNet net;
  HyperMixer mixer;
  double epsilon = 0.9;

  static Policy init(const AgentNetConfig& net_cfg, const MixerConfig& mixer_cfg,
                     Rng& rng);
  void validate() const;
};

// Delayed copies used for TD targets.
struct TargetPolicy {
  AgentNet net;
  HyperMixer mixer;
  long last_sync_step = 0;

  static TargetPolicy from(const Policy& policy);
};

// Hard-copies all online parameters into the target and records the step.
void sync_target(const Policy& policy, TargetPolicy& target, long step);

// A history is the sequence of per-step state features from the episode
// start; the recurrent trunk consumes it in order.
using History = std::vector<Vector>;

// Utility values for one agent after unrolling the full history.
Vector agent_q(const Policy& policy, const History& history, int agent);

// Index of the largest entry; ties go to the smallest index.
int argmax_q(const Vector& q);

// Per agent independently: with probability epsilon a uniform action from
// {-1,0,+1}, otherwise the argmax of its utilities.  Draw order is fixed
// (agents in index order; exploration coin before the uniform action) so a
// seeded generator reproduces selections exactly.
IntVector select_actions(const Policy& policy, const History& history, Rng& rng);

// Same, with an explicit exploration rate overriding policy.epsilon.
IntVector select_actions(const Policy& policy, const History& history,
                         double epsilon, Rng& rng);

// One episode's worth of training data: states s_1..s_{T+1} (feature
// vectors), joint actions a_1..a_T in {-1,0,+1}, rewards r_1..r_T.
struct TDEpisode {
  std::vector<Vector> states;
  std::vector<IntVector> actions;
  Vector rewards;

  int horizon() const { return static_cast<int>(actions.size()); }
  void validate(int n_agents, Index state_dim) const;
};

struct TDBatch {
  std::vector<TDEpisode> episodes;

  void validate(int n_agents, Index state_dim) const;  // equal horizons
};

// Double-estimator target for one transition: action indices come from the
// online utilities at the next step, the values from the target utilities,
// mixed by the target mixer.  y = r + gamma * mix_tar(q_selected).
double td_target(const Matrix& online_next_q, const Matrix& target_next_q,
                 const std::function<double(const Vector&)>& target_mix,
                 double reward, double gamma);

struct UpdateStats {
  double loss = 0.0;
  double mean_q_tot = 0.0;
};

// Mean squared TD error over every (episode, step) pair — recurrent states
// unrolled from each episode's start — and its gradients, accumulated into
// `agent_grads`/`mixer_grads` (which must mirror the parameter shapes).
// Throws NumericError if the loss is non-finite.
UpdateStats td_loss_and_grads(const Policy& policy, const TargetPolicy& target,
                              const TDBatch& batch, const Hyper& hyper,
                              GradSet& agent_grads, GradSet& mixer_grads);

// One optimizer step on that loss.  Mutates policy parameters through the
// optimizer states; the target stays fixed.
UpdateStats learner_update(Policy& policy, const TargetPolicy& target,
                           const TDBatch& batch, const Hyper& hyper,
                           AdamState& agent_opt, AdamState& mixer_opt);

}  // namespace planforge
