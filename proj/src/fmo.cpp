#include "planforge/fmo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

namespace planforge {

void Objective::validate() const {
  if (weight < 0.0) throw ConfigError("objective weight must be >= 0");
  if (obj_value_gy < 0.0 || dvh_dose_gy < 0.0)
    throw ConfigError("objective dose thresholds must be >= 0");
  if (kind == ObjectiveKind::DVHmin &&
      !(dvh_volume_frac > 0.0 && dvh_volume_frac <= 1.0))
    throw ConfigError("DVHmin volume fraction must lie in (0, 1]");
}

void ObjectiveSet::validate(const StructureSet& structures) const {
  if (objectives.empty()) throw ConfigError("objective set is empty");
  for (const auto& o : objectives) {
    o.validate();
    if (o.organ_index < 0 || o.organ_index >= structures.size())
      throw ConfigError("objective organ index out of range");
  }
}

ObjectiveSet ObjectiveSet::from_parameters(const ParameterRegistry& registry,
                                           const Vector& params) {
  if (params.size() != registry.size())
    throw ConfigError("parameter vector length does not match registry");
  ObjectiveSet set;
  Objective* cur = nullptr;
  int cur_organ = -1;
  ObjectiveKind cur_kind{};
  for (Index i = 0; i < registry.size(); ++i) {
    const auto& spec = registry.specs[static_cast<size_t>(i)];
    if (cur == nullptr || spec.organ_index != cur_organ ||
        spec.objective != cur_kind) {
      set.objectives.push_back({});
      cur = &set.objectives.back();
      cur->organ_index = spec.organ_index;
      cur->kind = spec.objective;
      cur_organ = spec.organ_index;
      cur_kind = spec.objective;
    }
    const double v = params[i];
    switch (spec.role) {
      case ScalarRole::ObjValue: cur->obj_value_gy = v; break;
      case ScalarRole::Dose: cur->dvh_dose_gy = v; break;
      case ScalarRole::Volume: cur->dvh_volume_frac = v; break;
      case ScalarRole::Weight: cur->weight = v; break;
    }
  }
  return set;
}

nlohmann::json objective_set_to_json(const ObjectiveSet& set,
                                     const StructureSet& structures) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : set.objectives) {
    nlohmann::json j{{"organ", structures.at(o.organ_index).name},
                     {"kind", to_string(o.kind)},
                     {"weight", o.weight}};
    if (o.kind == ObjectiveKind::DVHmin) {
      j["dose_gy"] = o.dvh_dose_gy;
      j["volume_frac"] = o.dvh_volume_frac;
    } else {
      j["obj_value_gy"] = o.obj_value_gy;
    }
    arr.push_back(std::move(j));
  }
  return arr;
}

ObjectiveSet objective_set_from_json(const nlohmann::json& j,
                                     const StructureSet& structures) {
  ObjectiveSet set;
  for (const auto& item : j) {
    Objective o;
    const std::string organ = item.at("organ").get<std::string>();
    const int idx = structures.find(organ);
    if (idx < 0) throw ConfigError("objective names unknown organ " + organ);
    o.organ_index = idx;
    o.kind = objective_kind_from_string(item.at("kind").get<std::string>());
    o.weight = item.at("weight").get<double>();
    if (o.kind == ObjectiveKind::DVHmin) {
      o.dvh_dose_gy = item.at("dose_gy").get<double>();
      o.dvh_volume_frac = item.at("volume_frac").get<double>();
    } else {
      o.obj_value_gy = item.at("obj_value_gy").get<double>();
    }
    set.objectives.push_back(o);
  }
  return set;
}

namespace {

// Indices of the m hottest organ voxels under the current dose.
std::vector<int> hottest(const Vector& dose, const std::vector<int>& organ,
                         size_t m) {
  std::vector<int> idx = organ;
  std::nth_element(idx.begin(), idx.begin() + (m - 1), idx.end(),
                   [&](int a, int b) {
                     if (dose[a] != dose[b]) return dose[a] > dose[b];
                     return a < b;  // deterministic tie-break
                   });
  idx.resize(m);
  return idx;
}

// Curvature of this objective along a dose-space direction p: the active
// quadratic pieces contribute (2w/n) * p_i^2 each.
double directional_curvature(const Objective& obj, const Vector& dose,
                             const StructureSet& structures, const Vector& p) {
  const auto organ = structures.at(obj.organ_index).voxel_indices();
  const double n = static_cast<double>(organ.size());
  double c = 0.0;
  switch (obj.kind) {
    case ObjectiveKind::Max:
      for (int i : organ)
        if (dose[i] > obj.obj_value_gy) c += p[i] * p[i];
      return 2.0 * obj.weight * c / n;
    case ObjectiveKind::Min:
      for (int i : organ)
        if (dose[i] < obj.obj_value_gy) c += p[i] * p[i];
      return 2.0 * obj.weight * c / n;
    case ObjectiveKind::Uniform:
      for (int i : organ) c += p[i] * p[i];
      return 2.0 * obj.weight * c / n;
    case ObjectiveKind::DVHmin: {
      const auto m = static_cast<size_t>(
          std::ceil(obj.dvh_volume_frac * n - 1e-12));
      for (int i : hottest(dose, organ, std::max<size_t>(m, 1)))
        if (dose[i] < obj.dvh_dose_gy) c += p[i] * p[i];
      return 2.0 * obj.weight * c / static_cast<double>(std::max<size_t>(m, 1));
    }
  }
  throw ConfigError("unhandled objective kind");
}

// Adds this objective's value and (optionally) its dose-space gradient.
double accumulate_objective(const Objective& obj, const Vector& dose,
                            const StructureSet& structures,
                            Vector* dose_gradient) {
  const auto organ = structures.at(obj.organ_index).voxel_indices();
  const double n = static_cast<double>(organ.size());
  double value = 0.0;
  switch (obj.kind) {
    case ObjectiveKind::Max: {
      for (int i : organ) {
        const double over = dose[i] - obj.obj_value_gy;
        if (over > 0.0) {
          value += over * over;
          if (dose_gradient)
            (*dose_gradient)[i] += obj.weight * 2.0 * over / n;
        }
      }
      return obj.weight * value / n;
    }
    case ObjectiveKind::Min: {
      for (int i : organ) {
        const double under = obj.obj_value_gy - dose[i];
        if (under > 0.0) {
          value += under * under;
          if (dose_gradient)
            (*dose_gradient)[i] -= obj.weight * 2.0 * under / n;
        }
      }
      return obj.weight * value / n;
    }
    case ObjectiveKind::Uniform: {
      for (int i : organ) {
        const double diff = dose[i] - obj.obj_value_gy;
        value += diff * diff;
        if (dose_gradient)
          (*dose_gradient)[i] += obj.weight * 2.0 * diff / n;
      }
      return obj.weight * value / n;
    }
    case ObjectiveKind::DVHmin: {
      const auto m = static_cast<size_t>(
          std::ceil(obj.dvh_volume_frac * n - 1e-12));
      const auto hot = hottest(dose, organ, std::max<size_t>(m, 1));
      const double mm = static_cast<double>(hot.size());
      for (int i : hot) {
        const double under = obj.dvh_dose_gy - dose[i];
        if (under > 0.0) {
          value += under * under;
          if (dose_gradient)
            (*dose_gradient)[i] -= obj.weight * 2.0 * under / mm;
        }
      }
      return obj.weight * value / mm;
    }
  }
  throw ConfigError("unhandled objective kind");
}

}  // namespace

double objective_value(const Objective& obj, const Vector& dose,
                       const StructureSet& structures) {
  obj.validate();
  return accumulate_objective(obj, dose, structures, nullptr);
}

Vector objective_gradient(const Objective& obj, const Vector& dose,
                          const InfluenceMatrix& influence,
                          const StructureSet& structures) {
  obj.validate();
  if (dose.size() != influence.rows())
    throw ConfigError("dose length does not match influence rows");
  Vector dose_grad = Vector::Zero(dose.size());
  accumulate_objective(obj, dose, structures, &dose_grad);
  return influence.transpose() * dose_grad;
}

double total_objective(const ObjectiveSet& set, const Vector& dose,
                       const StructureSet& structures, Vector* dose_gradient) {
  if (dose_gradient) dose_gradient->setZero(dose.size());
  double total = 0.0;
  for (const auto& o : set.objectives)
    total += accumulate_objective(o, dose, structures, dose_gradient);
  return total;
}

void SolverOptions::validate() const {
  if (max_iters < 1) throw ConfigError("solver max_iters must be >= 1");
  if (grad_tol <= 0.0) throw ConfigError("solver grad_tol must be > 0");
  if (!(armijo_sigma > 0.0 && armijo_sigma < 1.0))
    throw ConfigError("armijo_sigma must lie in (0, 1)");
  if (!(step_shrink > 0.0 && step_shrink < 1.0))
    throw ConfigError("step_shrink must lie in (0, 1)");
  if (step_grow < 1.0) throw ConfigError("step_grow must be >= 1");
  if (initial_step <= 0.0) throw ConfigError("initial_step must be > 0");
  if (max_backtracks < 1) throw ConfigError("max_backtracks must be >= 1");
}

SolveResult solve_fmo(const InfluenceMatrix& influence,
                      const StructureSet& structures,
                      const ObjectiveSet& objectives, const Vector& warm_start,
                      const SolverOptions& opts) {
  opts.validate();
  objectives.validate(structures);
  if (warm_start.size() != influence.cols())
    throw ConfigError("warm start length does not match beamlet count");

  SolveResult res;
  res.fluence = warm_start.cwiseMax(0.0);
  Vector dose = influence * res.fluence;
  Vector dose_grad(dose.size());
  res.objective = total_objective(objectives, dose, structures, &dose_grad);
  if (!std::isfinite(res.objective))
    throw NumericError("non-finite objective at warm start");

  double fallback_step = opts.initial_step;
  for (int it = 0; it < opts.max_iters; ++it) {
    const Vector grad = influence.transpose() * dose_grad;

    // Projected gradient: at the boundary f_i = 0 only descent directions
    // that stay feasible count toward stationarity.
    double pg_norm = 0.0;
    for (Index i = 0; i < grad.size(); ++i) {
      const double pg = res.fluence[i] > 0.0 ? grad[i] : std::min(grad[i], 0.0);
      pg_norm = std::max(pg_norm, std::abs(pg));
    }
    res.projected_grad_norm = pg_norm;
    if (pg_norm <= opts.grad_tol) {
      res.converged = true;
      return res;
    }

    // Exact minimizing step along -grad for the locally active quadratic
    // pieces; the backtracking below guards against active-set changes.
    const Vector dose_dir = influence * grad;
    double curvature = 0.0;
    for (const auto& o : objectives.objectives)
      curvature += directional_curvature(o, dose, structures, dose_dir);
    double step = curvature > 0.0 ? grad.squaredNorm() / curvature
                                  : fallback_step;
    if (!(step > 0.0) || !std::isfinite(step)) step = fallback_step;

    // Backtracking along the projection arc.
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      Vector trial = (res.fluence - step * grad).cwiseMax(0.0);
      Vector trial_dose = influence * trial;
      Vector trial_grad(dose.size());
      const double trial_obj =
          total_objective(objectives, trial_dose, structures, &trial_grad);
      if (!std::isfinite(trial_obj))
        throw NumericError("non-finite objective during line search");
      const double decrease = grad.dot(res.fluence - trial);
      if (trial_obj <= res.objective - opts.armijo_sigma * decrease) {
        res.fluence = std::move(trial);
        dose = std::move(trial_dose);
        dose_grad = std::move(trial_grad);
        res.objective = trial_obj;
        fallback_step = step * opts.step_grow;
        accepted = true;
        break;
      }
      step *= opts.step_shrink;
    }
    res.iterations = it + 1;
    if (!accepted) {
      // No productive step at any length: numerically stationary.
      return res;
    }
  }

  // Report stationarity at the final point.
  const Vector grad = influence.transpose() * dose_grad;
  double pg_norm = 0.0;
  for (Index i = 0; i < grad.size(); ++i) {
    const double pg = res.fluence[i] > 0.0 ? grad[i] : std::min(grad[i], 0.0);
    pg_norm = std::max(pg_norm, std::abs(pg));
  }
  res.projected_grad_norm = pg_norm;
  res.converged = pg_norm <= opts.grad_tol;
  return res;
}

PlanState step_environment(const Case& c, const ParameterRegistry& registry,
                           const Vector& params, const Vector& prev_fluence,
                           const SolverOptions& opts) {
  const ObjectiveSet set = ObjectiveSet::from_parameters(registry, params);
  const SolveResult res =
      solve_fmo(c.influence, c.structures, set, prev_fluence, opts);
  PlanState state;
  state.fluence = res.fluence;
  state.dose = c.influence * state.fluence;
  state.dvh = compute_dvh(state.dose, c.structures, c.prescription_gy);
  return state;
}

}  // namespace planforge
