#pragma once

#include <functional>
#include <string>
#include <vector>

#include "planforge/rng.hpp"
#include "planforge/types.hpp"

namespace planforge {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Activation { Linear, Relu, Elu, Tanh, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

double activate(Activation a, double x);
Vector activate(Activation a, const Vector& pre);
// Elementwise derivative evaluated at the pre-activation values.
Vector activation_deriv(Activation a, const Vector& pre);

// ---------------------------------------------------------------------------
// Flat named parameter storage
// ---------------------------------------------------------------------------

// One trainable tensor.  Matrices are stored column-major in `data`;
// vectors use cols == 1.
struct Tensor {
  std::string name;
  Index rows = 0;
  Index cols = 1;
  Vector data;

  Eigen::Map<Matrix> mat() { return {data.data(), rows, cols}; }
  Eigen::Map<const Matrix> mat() const { return {data.data(), rows, cols}; }
};

// Ordered collection of named tensors.  Gradients, Adam moments, and
// checkpoints all reuse this shape so names line up one-to-one.
struct ParamSet {
  std::vector<Tensor> tensors;

  Tensor& add(const std::string& name, Index rows, Index cols = 1);
  int index_of(const std::string& name) const;  // -1 if absent
  Tensor& at(int i) { return tensors[static_cast<size_t>(i)]; }
  const Tensor& at(int i) const { return tensors[static_cast<size_t>(i)]; }
  Index total_size() const;
  // Unique names, consistent shapes, finite values.
  void validate() const;
};

using GradSet = ParamSet;

// Same names and shapes, all-zero values.
GradSet zero_like(const ParamSet& params);
// Elementwise copy; requires identical names and shapes.
void copy_values(const ParamSet& src, ParamSet& dst);
// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per tensor; biases zero.
void init_uniform(ParamSet& params, Rng& rng);

// ---------------------------------------------------------------------------
// Standalone layers
// ---------------------------------------------------------------------------

struct DenseLayer {
  Matrix weights;  // out x in
  Vector biases;   // out
  Activation activation = Activation::Linear;

  void validate() const;
};

Vector forward_dense(const DenseLayer& layer, const Vector& input);

// Gated recurrent cell (long short-term memory).
struct RecurrentCell {
  Matrix wi, wf, wo, wc;  // H x D input weights per gate
  Matrix ui, uf, uo, uc;  // H x H recurrent weights per gate
  Vector bi, bf, bo, bc;  // H biases per gate

  Index hidden_size() const { return bi.size(); }
  void validate() const;
};

struct RecurrentState {
  Vector h;  // hidden
  Vector c;  // cell
};

RecurrentState zero_state(Index hidden);

// Advances `state` in place and returns the new hidden vector.
Vector forward_recurrent(const RecurrentCell& cell, const Vector& input,
                         RecurrentState& state);

// Q_a = V + A_a - mean(A).
Vector dueling_combine(double value, const Vector& advantages);

// ---------------------------------------------------------------------------
// Agent network: trunk -> recurrent -> dueling heads
// ---------------------------------------------------------------------------

struct AgentNetConfig {
  Index state_dim = 0;  // flattened DVH length
  int n_agents = 0;
  bool shared = true;   // one trunk + one-hot identity vs. disjoint nets
  Index trunk_dim = 128;
  Index hidden_dim = 64;
  int n_actions = 3;

  Index input_dim() const { return state_dim + (shared ? n_agents : 0); }
  void validate() const;
};

// Indices into ParamSet::tensors for one agent's slice of the parameters.
struct AgentSlots {
  int trunk_w, trunk_b;
  int wi, wf, wo, wc, ui, uf, uo, uc, bi, bf, bo, bc;
  int value_w, value_b, adv_w, adv_b;
};

struct AgentNet {
  AgentNetConfig cfg;
  ParamSet params;
  std::vector<AgentSlots> slots;  // size 1 when shared, n_agents otherwise

  static AgentNet init(const AgentNetConfig& cfg, Rng& rng);
  // Rebuilds slot indices after params were reloaded by name.
  void bind();
  const AgentSlots& slots_for(int agent) const;
};

// Everything the backward pass needs from one forward step.
struct AgentStepCache {
  Vector input;      // state features (+ one-hot when shared)
  Vector trunk_pre;  // before relu
  Vector trunk_out;
  Vector gate_i, gate_f, gate_o, gate_g;  // post-nonlinearity gate values
  Vector h_prev, c_prev, c, tanh_c, h;
  Vector advantages;  // n_actions
  double value = 0.0;
  Vector q;  // n_actions
};

// Single-step forward for one agent; advances `rec` in place.  When `cache`
// is non-null the step is recorded for backpropagation through time.
Vector agent_forward(const AgentNet& net, int agent, const Vector& state_features,
                     RecurrentState& rec, AgentStepCache* cache = nullptr);

// Backpropagation through time over one recorded sequence.  `dq[t]` is
// dLoss/dQ for step t (zero rows contribute nothing); gradients accumulate
// into `grads`, which must mirror net.params.
void agent_backward_sequence(const AgentNet& net, int agent,
                             const std::vector<AgentStepCache>& caches,
                             const std::vector<Vector>& dq, GradSet& grads);

// ---------------------------------------------------------------------------
// Hypernetwork-generated monotone mixer
// ---------------------------------------------------------------------------

struct MixerConfig {
  Index state_dim = 0;
  int n_agents = 0;
  Index embed_dim = 32;

  void validate() const;
};

// State-conditioned two-layer mixing function.  All four generators read the
// flattened current state; the final bias generator is itself two layers.
// Mixing uses elementwise |W| so dQ_tot/dq_i >= 0 for every parameter value.
struct HyperMixer {
  MixerConfig cfg;
  ParamSet params;
  // Tensor indices.
  int w1_w, w1_b;        // -> embed*n_agents
  int b1_w, b1_b;        // -> embed
  int w2_w, w2_b;        // -> embed
  int b2h_w, b2h_b;      // -> embed (relu)
  int b2o_w, b2o_b;      // embed -> 1

  static HyperMixer init(const MixerConfig& cfg, Rng& rng);
  void bind();
};

struct MixCache {
  Vector state;      // generator input
  Vector q;          // agent utilities
  Vector w1;         // embed*n_agents, generated (pre |.|)
  Vector b1;         // embed
  Vector w2;         // embed, generated (pre |.|)
  Vector b2_hidden_pre, b2_hidden;  // embed
  double b2 = 0.0;
  Vector hidden_pre, hidden;  // embed, elu
  double q_tot = 0.0;
};

double mix(const HyperMixer& mixer, const Vector& q, const Vector& state_features,
           MixCache* cache = nullptr);

// Accumulates parameter gradients and returns dLoss/dq for chaining into the
// agent networks.
Vector mix_backward(const HyperMixer& mixer, const MixCache& cache,
                    double upstream, GradSet& grads);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ParamSet m, v;
  long t = 0;

  static AdamState like(const ParamSet& params);
};

void adam_step(ParamSet& params, const GradSet& grads, AdamState& state,
               const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

// Central differences (step h) on every coordinate of `params`; returns the
// max relative error against `analytic`.  The loss closure must be pure.
double grad_check(const std::function<double(const ParamSet&)>& loss,
                  const ParamSet& params, const GradSet& analytic,
                  double h = 1e-5);

}  // namespace planforge
