#include "planforge/neural.hpp"

#include <cmath>
#include <unordered_set>

namespace planforge {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::Relu: return "relu";
    case Activation::Elu: return "elu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  throw ConfigError("unknown activation");
}

Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::Linear;
  if (s == "relu") return Activation::Relu;
  if (s == "elu") return Activation::Elu;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw ConfigError("unknown activation: " + s);
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Linear: return x;
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Elu: return x > 0.0 ? x : std::expm1(x);
    case Activation::Tanh: return std::tanh(x);
    case Activation::Sigmoid: return sigmoid(x);
  }
  throw ConfigError("unknown activation");
}

Vector activate(Activation a, const Vector& pre) {
  return pre.unaryExpr([a](double x) { return activate(a, x); });
}

Vector activation_deriv(Activation a, const Vector& pre) {
  switch (a) {
    case Activation::Linear:
      return Vector::Ones(pre.size());
    case Activation::Relu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::Elu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
    case Activation::Tanh:
      return pre.unaryExpr([](double x) {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      });
    case Activation::Sigmoid:
      return pre.unaryExpr([](double x) {
        const double s = sigmoid(x);
        return s * (1.0 - s);
      });
  }
  throw ConfigError("unknown activation");
}

// ---------------------------------------------------------------------------
// ParamSet
// ---------------------------------------------------------------------------

Tensor& ParamSet::add(const std::string& name, Index rows, Index cols) {
  if (rows <= 0 || cols <= 0)
    throw ConfigError("tensor " + name + " must have positive shape");
  if (index_of(name) >= 0) throw ConfigError("duplicate tensor name: " + name);
  Tensor t;
  t.name = name;
  t.rows = rows;
  t.cols = cols;
  t.data = Vector::Zero(rows * cols);
  tensors.push_back(std::move(t));
  return tensors.back();
}

int ParamSet::index_of(const std::string& name) const {
  for (size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return static_cast<int>(i);
  return -1;
}

Index ParamSet::total_size() const {
  Index n = 0;
  for (const auto& t : tensors) n += t.data.size();
  return n;
}

void ParamSet::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& t : tensors) {
    if (t.name.empty()) throw ConfigError("unnamed tensor");
    if (!seen.insert(t.name).second)
      throw ConfigError("duplicate tensor name: " + t.name);
    if (t.rows <= 0 || t.cols <= 0 || t.data.size() != t.rows * t.cols)
      throw ConfigError("tensor " + t.name + " has inconsistent shape");
    if (!t.data.allFinite())
      throw NumericError("tensor " + t.name + " has non-finite values");
  }
}

GradSet zero_like(const ParamSet& params) {
  GradSet g;
  g.tensors.reserve(params.tensors.size());
  for (const auto& t : params.tensors) g.add(t.name, t.rows, t.cols);
  return g;
}

void copy_values(const ParamSet& src, ParamSet& dst) {
  if (src.tensors.size() != dst.tensors.size())
    throw ConfigError("parameter sets differ in tensor count");
  for (size_t i = 0; i < src.tensors.size(); ++i) {
    const Tensor& s = src.tensors[i];
    Tensor& d = dst.tensors[i];
    if (s.name != d.name || s.rows != d.rows || s.cols != d.cols)
      throw ConfigError("parameter sets differ at tensor " + s.name);
    d.data = s.data;
  }
}

void init_uniform(ParamSet& params, Rng& rng) {
  for (auto& t : params.tensors) {
    if (t.cols == 1) {
      t.data.setZero();  // biases
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.cols));
    for (Index i = 0; i < t.data.size(); ++i)
      t.data[i] = rng.uniform(-bound, bound);
  }
}

// ---------------------------------------------------------------------------
// Standalone layers
// ---------------------------------------------------------------------------

void DenseLayer::validate() const {
  if (weights.rows() != biases.size())
    throw ConfigError("dense layer: weight rows must match bias length");
  if (!weights.allFinite() || !biases.allFinite())
    throw NumericError("dense layer: non-finite parameters");
}

Vector forward_dense(const DenseLayer& layer, const Vector& input) {
  if (input.size() != layer.weights.cols())
    throw ConfigError("dense layer: input length mismatch");
  return activate(layer.activation, layer.weights * input + layer.biases);
}

void RecurrentCell::validate() const {
  const Index h = hidden_size();
  const Index d = wi.cols();
  auto check_gate = [&](const Matrix& w, const Matrix& u, const Vector& b) {
    if (w.rows() != h || w.cols() != d || u.rows() != h || u.cols() != h ||
        b.size() != h)
      throw ConfigError("recurrent cell: inconsistent gate shapes");
  };
  check_gate(wi, ui, bi);
  check_gate(wf, uf, bf);
  check_gate(wo, uo, bo);
  check_gate(wc, uc, bc);
}

RecurrentState zero_state(Index hidden) {
  return {Vector::Zero(hidden), Vector::Zero(hidden)};
}

Vector forward_recurrent(const RecurrentCell& cell, const Vector& input,
                         RecurrentState& state) {
  if (input.size() != cell.wi.cols())
    throw ConfigError("recurrent cell: input length mismatch");
  if (state.h.size() != cell.hidden_size() || state.c.size() != cell.hidden_size())
    throw ConfigError("recurrent cell: state length mismatch");
  const Vector i = (cell.wi * input + cell.ui * state.h + cell.bi)
                       .unaryExpr([](double x) { return sigmoid(x); });
  const Vector f = (cell.wf * input + cell.uf * state.h + cell.bf)
                       .unaryExpr([](double x) { return sigmoid(x); });
  const Vector o = (cell.wo * input + cell.uo * state.h + cell.bo)
                       .unaryExpr([](double x) { return sigmoid(x); });
  const Vector g = (cell.wc * input + cell.uc * state.h + cell.bc)
                       .unaryExpr([](double x) { return std::tanh(x); });
  state.c = f.cwiseProduct(state.c) + i.cwiseProduct(g);
  state.h = o.cwiseProduct(state.c.unaryExpr([](double x) { return std::tanh(x); }));
  return state.h;
}

Vector dueling_combine(double value, const Vector& advantages) {
  if (advantages.size() == 0)
    throw ConfigError("dueling combine: empty advantage vector");
  return Vector::Constant(advantages.size(), value) + advantages.array().matrix() -
         Vector::Constant(advantages.size(), advantages.mean());
}

// ---------------------------------------------------------------------------
// Agent network
// ---------------------------------------------------------------------------

void AgentNetConfig::validate() const {
  if (state_dim <= 0 || n_agents <= 0 || trunk_dim <= 0 || hidden_dim <= 0 ||
      n_actions <= 0)
    throw ConfigError("agent network: all dimensions must be positive");
}

namespace {

void add_agent_tensors(ParamSet& p, const std::string& prefix,
                       const AgentNetConfig& cfg) {
  const Index d = cfg.input_dim();
  const Index t = cfg.trunk_dim;
  const Index h = cfg.hidden_dim;
  p.add(prefix + ".trunk.w", t, d);
  p.add(prefix + ".trunk.b", t);
  for (const char* g : {"i", "f", "o", "c"}) {
    p.add(prefix + ".lstm.w" + std::string(g), h, t);
    p.add(prefix + ".lstm.u" + std::string(g), h, h);
    p.add(prefix + ".lstm.b" + std::string(g), h);
  }
  p.add(prefix + ".value.w", 1, h);
  p.add(prefix + ".value.b", 1);
  p.add(prefix + ".adv.w", cfg.n_actions, h);
  p.add(prefix + ".adv.b", cfg.n_actions);
}

AgentSlots bind_agent(const ParamSet& p, const std::string& prefix) {
  auto need = [&](const std::string& name) {
    const int i = p.index_of(prefix + name);
    if (i < 0) throw ConfigError("missing tensor: " + prefix + name);
    return i;
  };
  AgentSlots s{};
  s.trunk_w = need(".trunk.w");
  s.trunk_b = need(".trunk.b");
  s.wi = need(".lstm.wi");
  s.wf = need(".lstm.wf");
  s.wo = need(".lstm.wo");
  s.wc = need(".lstm.wc");
  s.ui = need(".lstm.ui");
  s.uf = need(".lstm.uf");
  s.uo = need(".lstm.uo");
  s.uc = need(".lstm.uc");
  s.bi = need(".lstm.bi");
  s.bf = need(".lstm.bf");
  s.bo = need(".lstm.bo");
  s.bc = need(".lstm.bc");
  s.value_w = need(".value.w");
  s.value_b = need(".value.b");
  s.adv_w = need(".adv.w");
  s.adv_b = need(".adv.b");
  return s;
}

std::string agent_prefix(const AgentNetConfig& cfg, int agent) {
  return cfg.shared ? "agent" : "agent" + std::to_string(agent);
}

}  // namespace

AgentNet AgentNet::init(const AgentNetConfig& cfg, Rng& rng) {
  cfg.validate();
  AgentNet net;
  net.cfg = cfg;
  if (cfg.shared) {
    add_agent_tensors(net.params, "agent", cfg);
  } else {
    for (int a = 0; a < cfg.n_agents; ++a)
      add_agent_tensors(net.params, "agent" + std::to_string(a), cfg);
  }
  init_uniform(net.params, rng);
  net.bind();
  return net;
}

void AgentNet::bind() {
  cfg.validate();
  slots.clear();
  const int copies = cfg.shared ? 1 : cfg.n_agents;
  for (int a = 0; a < copies; ++a)
    slots.push_back(bind_agent(params, agent_prefix(cfg, a)));
}

const AgentSlots& AgentNet::slots_for(int agent) const {
  if (agent < 0 || agent >= cfg.n_agents)
    throw ConfigError("agent index out of range");
  return slots[static_cast<size_t>(cfg.shared ? 0 : agent)];
}

Vector agent_forward(const AgentNet& net, int agent, const Vector& state_features,
                     RecurrentState& rec, AgentStepCache* cache) {
  const AgentNetConfig& cfg = net.cfg;
  if (state_features.size() != cfg.state_dim)
    throw ConfigError("agent forward: state feature length mismatch");
  if (rec.h.size() != cfg.hidden_dim || rec.c.size() != cfg.hidden_dim)
    throw ConfigError("agent forward: recurrent state length mismatch");
  const AgentSlots& s = net.slots_for(agent);
  const ParamSet& p = net.params;

  Vector input(cfg.input_dim());
  input.head(cfg.state_dim) = state_features;
  if (cfg.shared) {
    input.tail(cfg.n_agents).setZero();
    input[cfg.state_dim + agent] = 1.0;
  }

  const Vector trunk_pre = p.at(s.trunk_w).mat() * input + p.at(s.trunk_b).data;
  const Vector trunk_out = activate(Activation::Relu, trunk_pre);

  auto gate = [&](int w, int u, int b, bool is_tanh) -> Vector {
    const Vector pre =
        p.at(w).mat() * trunk_out + p.at(u).mat() * rec.h + p.at(b).data;
    if (is_tanh) return pre.unaryExpr([](double x) { return std::tanh(x); });
    return pre.unaryExpr([](double x) { return sigmoid(x); });
  };
  const Vector gi = gate(s.wi, s.ui, s.bi, false);
  const Vector gf = gate(s.wf, s.uf, s.bf, false);
  const Vector go = gate(s.wo, s.uo, s.bo, false);
  const Vector gg = gate(s.wc, s.uc, s.bc, true);

  const Vector c_prev = rec.c;
  const Vector h_prev = rec.h;
  const Vector c = gf.cwiseProduct(c_prev) + gi.cwiseProduct(gg);
  const Vector tanh_c = c.unaryExpr([](double x) { return std::tanh(x); });
  const Vector h = go.cwiseProduct(tanh_c);

  const double value = (p.at(s.value_w).mat() * h)(0) + p.at(s.value_b).data[0];
  const Vector adv = p.at(s.adv_w).mat() * h + p.at(s.adv_b).data;
  Vector q = dueling_combine(value, adv);

  rec.h = h;
  rec.c = c;

  if (cache != nullptr) {
    cache->input = input;
    cache->trunk_pre = trunk_pre;
    cache->trunk_out = trunk_out;
    cache->gate_i = gi;
    cache->gate_f = gf;
    cache->gate_o = go;
    cache->gate_g = gg;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->c = c;
    cache->tanh_c = tanh_c;
    cache->h = h;
    cache->advantages = adv;
    cache->value = value;
    cache->q = q;
  }
  return q;
}

void agent_backward_sequence(const AgentNet& net, int agent,
                             const std::vector<AgentStepCache>& caches,
                             const std::vector<Vector>& dq, GradSet& grads) {
  if (caches.size() != dq.size())
    throw ConfigError("backward: cache/gradient length mismatch");
  const AgentSlots& s = net.slots_for(agent);
  const ParamSet& p = net.params;
  const Index h_dim = net.cfg.hidden_dim;

  Vector dh_next = Vector::Zero(h_dim);
  Vector dc_next = Vector::Zero(h_dim);
  for (int t = static_cast<int>(caches.size()) - 1; t >= 0; --t) {
    const AgentStepCache& k = caches[static_cast<size_t>(t)];
    const Vector& dqt = dq[static_cast<size_t>(t)];
    if (dqt.size() != net.cfg.n_actions)
      throw ConfigError("backward: dq length mismatch");

    // Dueling heads: Q_a = V + A_a - mean(A).
    const double dvalue = dqt.sum();
    const Vector dadv =
        dqt - Vector::Constant(dqt.size(), dqt.mean());

    grads.at(s.value_w).mat() += dvalue * k.h.transpose();
    grads.at(s.value_b).data[0] += dvalue;
    grads.at(s.adv_w).mat() += dadv * k.h.transpose();
    grads.at(s.adv_b).data += dadv;

    Vector dh = p.at(s.value_w).mat().transpose() * Vector::Constant(1, dvalue) +
                p.at(s.adv_w).mat().transpose() * dadv + dh_next;

    // Recurrent cell.
    const Vector d_o = dh.cwiseProduct(k.tanh_c);
    Vector dc = dh.cwiseProduct(k.gate_o)
                    .cwiseProduct(Vector::Ones(h_dim) -
                                  k.tanh_c.cwiseProduct(k.tanh_c)) +
                dc_next;
    const Vector d_f = dc.cwiseProduct(k.c_prev);
    const Vector d_i = dc.cwiseProduct(k.gate_g);
    const Vector d_g = dc.cwiseProduct(k.gate_i);

    auto sig_back = [](const Vector& d, const Vector& act) {
      return d.cwiseProduct(act)
          .cwiseProduct(Vector::Ones(act.size()) - act)
          .eval();
    };
    const Vector dpre_i = sig_back(d_i, k.gate_i);
    const Vector dpre_f = sig_back(d_f, k.gate_f);
    const Vector dpre_o = sig_back(d_o, k.gate_o);
    const Vector dpre_g = d_g.cwiseProduct(
        Vector::Ones(h_dim) - k.gate_g.cwiseProduct(k.gate_g));

    grads.at(s.wi).mat() += dpre_i * k.trunk_out.transpose();
    grads.at(s.wf).mat() += dpre_f * k.trunk_out.transpose();
    grads.at(s.wo).mat() += dpre_o * k.trunk_out.transpose();
    grads.at(s.wc).mat() += dpre_g * k.trunk_out.transpose();
    grads.at(s.ui).mat() += dpre_i * k.h_prev.transpose();
    grads.at(s.uf).mat() += dpre_f * k.h_prev.transpose();
    grads.at(s.uo).mat() += dpre_o * k.h_prev.transpose();
    grads.at(s.uc).mat() += dpre_g * k.h_prev.transpose();
    grads.at(s.bi).data += dpre_i;
    grads.at(s.bf).data += dpre_f;
    grads.at(s.bo).data += dpre_o;
    grads.at(s.bc).data += dpre_g;

    const Vector dx = p.at(s.wi).mat().transpose() * dpre_i +
                      p.at(s.wf).mat().transpose() * dpre_f +
                      p.at(s.wo).mat().transpose() * dpre_o +
                      p.at(s.wc).mat().transpose() * dpre_g;
    dh_next = p.at(s.ui).mat().transpose() * dpre_i +
              p.at(s.uf).mat().transpose() * dpre_f +
              p.at(s.uo).mat().transpose() * dpre_o +
              p.at(s.uc).mat().transpose() * dpre_g;
    dc_next = dc.cwiseProduct(k.gate_f);

    // Trunk.
    const Vector dpre0 =
        dx.cwiseProduct(activation_deriv(Activation::Relu, k.trunk_pre));
    grads.at(s.trunk_w).mat() += dpre0 * k.input.transpose();
    grads.at(s.trunk_b).data += dpre0;
  }
}

// ---------------------------------------------------------------------------
// HyperMixer
// ---------------------------------------------------------------------------

void MixerConfig::validate() const {
  if (state_dim <= 0 || n_agents <= 0 || embed_dim <= 0)
    throw ConfigError("mixer: all dimensions must be positive");
}

HyperMixer HyperMixer::init(const MixerConfig& cfg, Rng& rng) {
  cfg.validate();
  HyperMixer m;
  m.cfg = cfg;
  const Index e = cfg.embed_dim;
  const Index n = cfg.n_agents;
  const Index sd = cfg.state_dim;
  m.params.add("mix.w1.w", e * n, sd);
  m.params.add("mix.w1.b", e * n);
  m.params.add("mix.b1.w", e, sd);
  m.params.add("mix.b1.b", e);
  m.params.add("mix.w2.w", e, sd);
  m.params.add("mix.w2.b", e);
  m.params.add("mix.b2h.w", e, sd);
  m.params.add("mix.b2h.b", e);
  m.params.add("mix.b2o.w", 1, e);
  m.params.add("mix.b2o.b", 1);
  init_uniform(m.params, rng);
  m.bind();
  return m;
}

void HyperMixer::bind() {
  cfg.validate();
  auto need = [&](const char* name) {
    const int i = params.index_of(name);
    if (i < 0) throw ConfigError(std::string("missing tensor: ") + name);
    return i;
  };
  w1_w = need("mix.w1.w");
  w1_b = need("mix.w1.b");
  b1_w = need("mix.b1.w");
  b1_b = need("mix.b1.b");
  w2_w = need("mix.w2.w");
  w2_b = need("mix.w2.b");
  b2h_w = need("mix.b2h.w");
  b2h_b = need("mix.b2h.b");
  b2o_w = need("mix.b2o.w");
  b2o_b = need("mix.b2o.b");
}

double mix(const HyperMixer& mixer, const Vector& q, const Vector& state_features,
           MixCache* cache) {
  const MixerConfig& cfg = mixer.cfg;
  if (q.size() != cfg.n_agents)
    throw ConfigError("mix: expected one utility per agent");
  if (state_features.size() != cfg.state_dim)
    throw ConfigError("mix: state feature length mismatch");
  const ParamSet& p = mixer.params;
  const Index e = cfg.embed_dim;
  const Index n = cfg.n_agents;

  const Vector w1 = p.at(mixer.w1_w).mat() * state_features + p.at(mixer.w1_b).data;
  const Vector b1 = p.at(mixer.b1_w).mat() * state_features + p.at(mixer.b1_b).data;
  const Vector w2 = p.at(mixer.w2_w).mat() * state_features + p.at(mixer.w2_b).data;
  const Vector b2_hidden_pre =
      p.at(mixer.b2h_w).mat() * state_features + p.at(mixer.b2h_b).data;
  const Vector b2_hidden = activate(Activation::Relu, b2_hidden_pre);
  const double b2 =
      (p.at(mixer.b2o_w).mat() * b2_hidden)(0) + p.at(mixer.b2o_b).data[0];

  const Eigen::Map<const Matrix> w1_mat(w1.data(), e, n);
  const Vector hidden_pre = w1_mat.cwiseAbs() * q + b1;
  const Vector hidden = activate(Activation::Elu, hidden_pre);
  const double q_tot = w2.cwiseAbs().dot(hidden) + b2;

  if (cache != nullptr) {
    cache->state = state_features;
    cache->q = q;
    cache->w1 = w1;
    cache->b1 = b1;
    cache->w2 = w2;
    cache->b2_hidden_pre = b2_hidden_pre;
    cache->b2_hidden = b2_hidden;
    cache->b2 = b2;
    cache->hidden_pre = hidden_pre;
    cache->hidden = hidden;
    cache->q_tot = q_tot;
  }
  return q_tot;
}

Vector mix_backward(const HyperMixer& mixer, const MixCache& cache,
                    double upstream, GradSet& grads) {
  const MixerConfig& cfg = mixer.cfg;
  const ParamSet& p = mixer.params;
  const Index e = cfg.embed_dim;
  const Index n = cfg.n_agents;

  const Vector w2_abs = cache.w2.cwiseAbs();
  const Vector dhidden = upstream * w2_abs;
  const Vector dpre =
      dhidden.cwiseProduct(activation_deriv(Activation::Elu, cache.hidden_pre));

  const Eigen::Map<const Matrix> w1_mat(cache.w1.data(), e, n);
  Vector dq = w1_mat.cwiseAbs().transpose() * dpre;

  // Generated-value gradients, then back through the generators.
  const Vector dw2 =
      (upstream * cache.hidden).cwiseProduct(cache.w2.unaryExpr(&sign));
  Vector dw1(e * n);
  Eigen::Map<Matrix> dw1_mat(dw1.data(), e, n);
  dw1_mat = dpre * cache.q.transpose();
  dw1 = dw1.cwiseProduct(cache.w1.unaryExpr(&sign));
  const Vector& db1 = dpre;
  const double db2 = upstream;

  grads.at(mixer.w1_w).mat() += dw1 * cache.state.transpose();
  grads.at(mixer.w1_b).data += dw1;
  grads.at(mixer.b1_w).mat() += db1 * cache.state.transpose();
  grads.at(mixer.b1_b).data += db1;
  grads.at(mixer.w2_w).mat() += dw2 * cache.state.transpose();
  grads.at(mixer.w2_b).data += dw2;

  grads.at(mixer.b2o_w).mat() += db2 * cache.b2_hidden.transpose();
  grads.at(mixer.b2o_b).data[0] += db2;
  const Vector db2_hidden = p.at(mixer.b2o_w).mat().transpose() *
                            Vector::Constant(1, db2);
  const Vector dpre_b2h = db2_hidden.cwiseProduct(
      activation_deriv(Activation::Relu, cache.b2_hidden_pre));
  grads.at(mixer.b2h_w).mat() += dpre_b2h * cache.state.transpose();
  grads.at(mixer.b2h_b).data += dpre_b2h;

  return dq;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState AdamState::like(const ParamSet& params) {
  AdamState s;
  s.m = zero_like(params);
  s.v = zero_like(params);
  s.t = 0;
  return s;
}

void adam_step(ParamSet& params, const GradSet& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.tensors.size() != grads.tensors.size() ||
      params.tensors.size() != state.m.tensors.size())
    throw ConfigError("adam: tensor count mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.tensors.size(); ++i) {
    Tensor& pt = params.tensors[i];
    const Tensor& gt = grads.tensors[i];
    if (pt.name != gt.name || pt.data.size() != gt.data.size())
      throw ConfigError("adam: mismatched tensor " + pt.name);
    if (!gt.data.allFinite())
      throw NumericError("adam: non-finite gradient for " + pt.name);
    Vector& m = state.m.tensors[i].data;
    Vector& v = state.v.tensors[i].data;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * gt.data;
    v = cfg.beta2 * v.array().matrix() +
        (1.0 - cfg.beta2) * gt.data.cwiseProduct(gt.data);
    const Vector m_hat = m / bc1;
    const Vector v_hat = v / bc2;
    pt.data -= cfg.lr * m_hat.cwiseQuotient(
                            v_hat.cwiseSqrt() +
                            Vector::Constant(v_hat.size(), cfg.eps));
  }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<double(const ParamSet&)>& loss,
                  const ParamSet& params, const GradSet& analytic,
                  double h) {
  if (params.tensors.size() != analytic.tensors.size())
    throw ConfigError("grad check: tensor count mismatch");
  ParamSet probe = params;
  double worst = 0.0;
  for (size_t i = 0; i < probe.tensors.size(); ++i) {
    Tensor& t = probe.tensors[i];
    const Tensor& g = analytic.tensors[i];
    if (t.name != g.name || t.data.size() != g.data.size())
      throw ConfigError("grad check: mismatched tensor " + t.name);
    for (Index j = 0; j < t.data.size(); ++j) {
      const double saved = t.data[j];
      t.data[j] = saved + h;
      const double fp = loss(probe);
      t.data[j] = saved - h;
      const double fm = loss(probe);
      t.data[j] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = g.data[j];
      const double err =
          std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace planforge
